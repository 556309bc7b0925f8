#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "regio/errors.hpp"
#include "regio/functor.hpp"
#include "regio/gbp.hpp"
#include "regio/loss.hpp"
#include "regio/solver.hpp"

namespace regio {

/// Column index of a kernel runs over the source (upper) state space, rows
/// over the target: K^a_b(w1 | w) sits at (w1, w).  Logs are floored here
/// when a kernel zero annihilates a message coordinate.
constexpr double kLogFloor = -745.0;

/// Markov kernels K^a_b along the strict pairs of a poset, composing exactly
/// like the maps of a cofunctor on densities (pushforward).  Kernels must be
/// column-stochastic and componentwise non-negative; strict positivity is
/// recorded but not required.
class KernelNetwork {
public:
    KernelNetwork(std::shared_ptr<const Poset> poset, std::vector<int> state_sizes,
                  std::vector<Eigen::MatrixXd> kernels)
        : poset_(std::move(poset)), sizes_(std::move(state_sizes)), kernels_(std::move(kernels)) {
        const int n = poset_->size();
        if (static_cast<int>(sizes_.size()) != n)
            throw ShapeError("need one state-space size per element");
        for (int s : sizes_)
            if (s < 1) throw ValidationError("state spaces need at least one outcome");
        const auto& pairs = poset_->strict_pairs();
        if (kernels_.size() != pairs.size()) throw ShapeError("need one kernel per strict pair");
        strictly_positive_ = true;
        for (size_t k = 0; k < pairs.size(); ++k) {
            auto [a, b] = pairs[k];
            const auto& K = kernels_[k];
            if (K.rows() != sizes_[static_cast<size_t>(b)] || K.cols() != sizes_[static_cast<size_t>(a)])
                throw ShapeError("kernel for pair (" + poset_->id(a) + ", " + poset_->id(b) +
                                 ") has the wrong shape");
            if ((K.array() < 0.0).any())
                throw ValidationError("kernel for pair (" + poset_->id(a) + ", " + poset_->id(b) +
                                      ") has negative entries");
            for (int j = 0; j < K.cols(); ++j) {
                const double s = K.col(j).sum();
                if (std::abs(s - 1.0) > 1e-12)
                    throw ValidationError("kernel for pair (" + poset_->id(a) + ", " + poset_->id(b) +
                                          "), column " + std::to_string(j) + " sums to " +
                                          std::to_string(s) + " instead of 1");
            }
            if ((K.array() <= 0.0).any()) strictly_positive_ = false;
        }
        // Exact composition along every chain, like a cofunctor on densities.
        Cofunctor push(poset_, sizes_, kernels_);
        auto violations = validate_cofunctor(push, 1e-10);
        if (!violations.empty()) {
            const auto& v = violations.front();
            throw FunctorialityError("kernel composition through '" + poset_->id(v.b) +
                                     "' disagrees with the declared kernel (" + poset_->id(v.a) +
                                     " -> " + poset_->id(v.c) + "), max gap " + std::to_string(v.error));
        }
    }

    const Poset& poset() const { return *poset_; }
    std::shared_ptr<const Poset> poset_ptr() const { return poset_; }
    const std::vector<int>& state_sizes() const { return sizes_; }
    const Eigen::MatrixXd& kernel(int pair_idx) const { return kernels_.at(static_cast<size_t>(pair_idx)); }
    bool strictly_positive() const { return strictly_positive_; }

    /// The kernels as a cofunctor acting on densities.
    Cofunctor pushforward_cofunctor() const { return Cofunctor(poset_, sizes_, kernels_); }

private:
    std::shared_ptr<const Poset> poset_;
    std::vector<int> sizes_;
    std::vector<Eigen::MatrixXd> kernels_;
    bool strictly_positive_ = true;
};

/// Conditional expectation along a pair: the adjoint action K^T f, mapping
/// observables on the lower space to observables on the upper space.
inline Eigen::VectorXd conditional_expectation(const KernelNetwork& k, int a, int b,
                                               const Eigen::VectorXd& f) {
    if (a == b) return f;
    return k.kernel(k.poset().pair_index(a, b)).transpose() * f;
}

namespace channel_detail {

/// ln(M exp(w)) with a max-shift guard; exact zeros are floored.
inline Eigen::VectorXd log_apply(const Eigen::MatrixXd& M, const Eigen::VectorXd& w) {
    double s = w.size() > 0 ? w.maxCoeff() : 0.0;
    if (!std::isfinite(s)) s = 0.0;
    Eigen::VectorXd lin = M * (w.array() - s).exp().matrix();
    Eigen::VectorXd out(lin.size());
    for (int i = 0; i < lin.size(); ++i)
        out(i) = lin(i) > 0.0 ? std::max(kLogFloor, s + std::log(lin(i))) : kLogFloor;
    return out;
}

}  // namespace channel_detail

struct ChannelBeliefState {
    SectionVector beliefs;
    PairField lambda;  // log-messages per strict pair, living on the lower element
};

/// Unnormalized log-beliefs from log-messages:
///   ln b_a = -H_a + sum_{b <= a} sum_{c : c > b, c not<= a} ln (K^a_b)^T m_{c->b},
/// i.e. each incoming message is pushed up by conditional expectation before
/// entering the product.  For 0/1 kernels this reduces to the cylindrical
/// extension sums of the region-graph update.
inline SectionVector channel_log_beliefs(const KernelNetwork& k,
                                         const std::vector<Eigen::VectorXd>& H,
                                         const PairField& lambda) {
    const Poset& ps = k.poset();
    const int n = ps.size();
    if (static_cast<int>(H.size()) != n) throw ShapeError("need one energy vector per element");
    SectionVector logs;
    logs.reserve(static_cast<size_t>(n));
    for (int a = 0; a < n; ++a) {
        if (H[static_cast<size_t>(a)].size() != k.state_sizes()[static_cast<size_t>(a)])
            throw ShapeError("energy vector at '" + ps.id(a) + "' has the wrong length");
        Eigen::VectorXd acc = -H[static_cast<size_t>(a)];
        for (int b = 0; b < n; ++b) {
            if (!ps.leq(b, a)) continue;
            for (int c = 0; c < n; ++c) {
                if (c == b || !ps.leq(b, c) || ps.leq(c, a)) continue;
                const Eigen::VectorXd& msg = lambda[ps.pair_index(c, b)];
                if (a == b)
                    acc += msg;
                else
                    acc += channel_detail::log_apply(
                        k.kernel(ps.pair_index(a, b)).transpose(), msg);
            }
        }
        logs.push_back(std::move(acc));
    }
    return logs;
}

/// One damped update in the log domain: for every strict pair (a, b),
///   lambda_{a->b} += damping * ( ln K^a_b b_a - ln b_b ),
/// the pushforward of the upper belief against the lower belief.
inline ChannelBeliefState channel_step(const KernelNetwork& k,
                                       const std::vector<Eigen::VectorXd>& H,
                                       const ChannelBeliefState& s, double damping) {
    SectionVector logs = channel_log_beliefs(k, H, s.lambda);
    const auto& pairs = k.poset().strict_pairs();
    ChannelBeliefState out;
    out.lambda = s.lambda;
    for (size_t t = 0; t < pairs.size(); ++t) {
        auto [a, b] = pairs[t];
        Eigen::VectorXd inc =
            channel_detail::log_apply(k.kernel(static_cast<int>(t)), logs[a]) - logs[b];
        out.lambda[t] += damping * inc;
    }
    out.beliefs = normalize_log_beliefs(channel_log_beliefs(k, H, out.lambda));
    return out;
}

inline ChannelBeliefState init_channel_state(const KernelNetwork& k,
                                             const std::vector<Eigen::VectorXd>& H) {
    ChannelBeliefState s;
    Cofunctor push = k.pushforward_cofunctor();
    s.lambda = zero_pair_field(push);
    s.beliefs = normalize_log_beliefs(channel_log_beliefs(k, H, s.lambda));
    return s;
}

/// Fixed-point iteration of channel_step, certified like gbp_solve: the
/// normalized beliefs must satisfy the pushforward-consistency constraint and
/// the stationarity certificate on the normalized tangent space.
inline SolveReport channel_solve(const KernelNetwork& k, const std::vector<Eigen::VectorXd>& H,
                                 const SolverConfig& cfg) {
    Cofunctor F = k.pushforward_cofunctor();
    const LocalLossFamily L = LocalLossFamily::free_energy(H, 1.0);
    const Eigen::MatrixXd T = normalized_tangent_basis(F);

    ChannelBeliefState state = init_channel_state(k, H);
    SolveReport rep;
    double message_delta = std::numeric_limits<double>::infinity();
    if (state.lambda.empty()) message_delta = 0.0;

    int t = 0;
    while (t < cfg.max_iters && message_delta > cfg.tol_message) {
        ChannelBeliefState next = channel_step(k, H, state, cfg.damping);
        ++t;
        message_delta = 0.0;
        for (size_t i = 0; i < next.lambda.size(); ++i)
            if (next.lambda[i].size() > 0)
                message_delta =
                    std::max(message_delta, (next.lambda[i] - state.lambda[i]).cwiseAbs().maxCoeff());
        state = std::move(next);
        rep.trace.push_back({t, message_delta, sup_norm(delta(F, state.beliefs)),
                             stationarity_residual(F, local_gradients(L, state.beliefs), T),
                             regionalized_value(F.poset(), L, state.beliefs)});
    }

    rep.x_star = state.beliefs;
    rep.l_star = state.lambda;
    for (auto& blk : rep.l_star) blk = -blk;
    rep.iterations = t;
    rep.final_message_delta = message_delta;
    rep.final_constraint_norm = sup_norm(delta(F, state.beliefs));
    rep.final_stationarity = stationarity_residual(F, local_gradients(L, state.beliefs), T);
    rep.converged = message_delta <= cfg.tol_message &&
                    rep.final_constraint_norm <= cfg.tol_residual &&
                    rep.final_stationarity <= cfg.tol_residual;
    return rep;
}

}  // namespace regio
