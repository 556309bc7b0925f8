#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "regio/errors.hpp"
#include "regio/functor.hpp"
#include "regio/loss.hpp"

namespace regio {

enum class SolveMethod { Generic, Newton };

struct SolverConfig {
    int max_iters = 10000;
    double tol_message = 1e-9;    // sup-norm change of the multipliers per step
    double tol_residual = 1e-7;   // constraint and stationarity certificates
    double damping = 0.5;
    unsigned long long seed = 0;  // randomized initialization, 0 keeps l0 as given
    SolveMethod method = SolveMethod::Generic;
};

/// Multiplier state of the fixed-point iteration.
struct MessageState {
    PairField l;
    int t = 0;
};

struct TraceRow {
    int iter;
    double message_delta;
    double constraint_norm;
    double stationarity;
    double loss_value;
};

struct SolveReport {
    SectionVector x_star;
    PairField l_star;
    bool converged = false;
    int iterations = 0;
    double final_message_delta = 0.0;
    double final_constraint_norm = 0.0;
    double final_stationarity = 0.0;
    std::vector<TraceRow> trace;
};

/// Candidate point induced by the multipliers:
///   x_a = g_a( (zeta_dual dual_d l)(a) ).
/// At a fixed point of the iteration this is a critical point of f_R on the
/// limit.
inline SectionVector current_point(const Cofunctor& f, const LocalLossFamily& L,
                                   const PairField& l) {
    DualVector y = zeta_dual(f, dual_d(f, l));
    SectionVector x;
    x.reserve(y.size());
    for (size_t a = 0; a < y.size(); ++a)
        x.push_back(L.inverse_grad(static_cast<int>(a), y[a]));
    return x;
}

inline void check_finite(const SectionVector& x) {
    for (const auto& b : x)
        if (!b.allFinite())
            throw NumericalOverflowError("iterate left the representable range");
}

/// One damped fixed-point update,
///   l(t+1) = l(t) + damping * delta(current_point(l(t)));
/// damping 1 is the plain update, damping 0 leaves the state unchanged.
inline MessageState generic_step(const Cofunctor& f, const LocalLossFamily& L,
                                 const MessageState& s, double damping) {
    SectionVector x = current_point(f, L, s.l);
    check_finite(x);
    PairField inc = delta(f, x);
    MessageState out = s;
    for (size_t k = 0; k < out.l.size(); ++k) out.l[k] += damping * inc[k];
    out.t = s.t + 1;
    return out;
}

/// One Newton iteration on the residual R(l) = delta(g(zeta_dual(dual_d l))),
/// with the analytic Jacobian J = D_delta * Dg * D_(zeta dual_d).  J carries
/// the gauge freedom of the multipliers in its kernel, so the update solves
/// J dl = -R in least squares (minimum-norm solution).
inline MessageState newton_step(const Cofunctor& f, const LocalLossFamily& L,
                                const MessageState& s) {
    const Eigen::MatrixXd B = delta_matrix(f);
    const Eigen::MatrixXd C = (B * zeta_primal_matrix(f)).transpose();  // l -> zeta_dual(dual_d l)
    const auto off = element_offsets(f);

    Eigen::VectorXd y = C * stack_blocks(s.l);
    SectionVector x;
    Eigen::MatrixXd Dg = Eigen::MatrixXd::Zero(y.size(), y.size());
    for (int a = 0; a < f.poset().size(); ++a) {
        Eigen::VectorXd ya = y.segment(off[a], f.dim(a));
        x.push_back(L.inverse_grad(a, ya));
        Dg.block(off[a], off[a], f.dim(a), f.dim(a)) = L.inverse_grad_jacobian(a, ya);
    }
    check_finite(x);

    Eigen::VectorXd R = B * stack_blocks(x);
    Eigen::MatrixXd J = B * Dg * C;
    Eigen::VectorXd dl = J.completeOrthogonalDecomposition().solve(-R);

    MessageState out = s;
    Eigen::VectorXd lv = stack_blocks(s.l) + dl;
    out.l = unstack_like(s.l, lv);
    out.t = s.t + 1;
    return out;
}

/// Gaussian multiplier field for randomized initialization.
inline PairField random_pair_field(const Cofunctor& f, unsigned long long seed,
                                   double scale = 0.1) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, scale);
    PairField l = zero_pair_field(f);
    for (auto& blk : l)
        for (int i = 0; i < blk.size(); ++i) blk(i) = gauss(rng);
    return l;
}

namespace detail {

inline double guarded_loss(const Poset& p, const LocalLossFamily& L, const SectionVector& x) {
    try {
        return regionalized_value(p, L, x);
    } catch (const DomainError&) {
        return std::numeric_limits<double>::quiet_NaN();
    }
}

inline double guarded_stationarity(const Cofunctor& f, const LocalLossFamily& L,
                                   const SectionVector& x, const Eigen::MatrixXd& V) {
    try {
        return stationarity_residual(f, local_gradients(L, x), V);
    } catch (const DomainError&) {
        return std::numeric_limits<double>::infinity();
    }
}

}  // namespace detail

/// Runs the chosen step until the multiplier change drops below
/// cfg.tol_message or max_iters is hit, then certifies the candidate point:
/// converged means the message delta is small AND the constraint residual
/// sup-norm and the stationarity residual are both within cfg.tol_residual.
/// Non-finite iterates raise NumericalOverflowError.
inline SolveReport solve(const Cofunctor& f, const LocalLossFamily& L, const PairField& l0,
                         const SolverConfig& cfg) {
    const Eigen::MatrixXd V = limit_basis_matrix(f);
    MessageState state{l0, 0};
    if (cfg.seed != 0) state.l = random_pair_field(f, cfg.seed);

    SolveReport rep;
    double message_delta = std::numeric_limits<double>::infinity();
    if (state.l.empty()) message_delta = 0.0;  // no constraints, nothing to iterate

    for (int t = 1; t <= cfg.max_iters && message_delta > cfg.tol_message; ++t) {
        MessageState next = cfg.method == SolveMethod::Newton
                                ? newton_step(f, L, state)
                                : generic_step(f, L, state, cfg.damping);
        message_delta = 0.0;
        for (size_t k = 0; k < next.l.size(); ++k)
            if (next.l[k].size() > 0)
                message_delta = std::max(message_delta, (next.l[k] - state.l[k]).cwiseAbs().maxCoeff());
        state = std::move(next);

        SectionVector x = current_point(f, L, state.l);
        rep.trace.push_back({state.t, message_delta, sup_norm(delta(f, x)),
                             detail::guarded_stationarity(f, L, x, V),
                             detail::guarded_loss(f.poset(), L, x)});
    }

    rep.x_star = current_point(f, L, state.l);
    check_finite(rep.x_star);
    rep.l_star = state.l;
    rep.iterations = state.t;
    rep.final_message_delta = message_delta;
    rep.final_constraint_norm = sup_norm(delta(f, rep.x_star));
    rep.final_stationarity = detail::guarded_stationarity(f, L, rep.x_star, V);
    rep.converged = message_delta <= cfg.tol_message &&
                    rep.final_constraint_norm <= cfg.tol_residual &&
                    rep.final_stationarity <= cfg.tol_residual;
    return rep;
}

}  // namespace regio
