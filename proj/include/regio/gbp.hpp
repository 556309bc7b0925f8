#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "regio/config_space.hpp"
#include "regio/errors.hpp"
#include "regio/functor.hpp"
#include "regio/loss.hpp"
#include "regio/solver.hpp"

namespace regio {

/// Regions (subsets of a finite variable set) ordered by inclusion, one
/// energy vector per region over its configuration space.  Region state
/// spaces are indexed row-major over the region's variables in declaration
/// order; a region's id is its comma-joined variable id list in that order.
class RegionGraphProblem {
public:
    RegionGraphProblem(std::vector<std::string> variable_ids, std::vector<int> cards,
                       const std::vector<std::vector<std::string>>& regions_by_id,
                       std::vector<Eigen::VectorXd> hamiltonians)
        : var_ids_(std::move(variable_ids)), cards_(std::move(cards)), H_(std::move(hamiltonians)) {
        if (var_ids_.size() != cards_.size())
            throw ShapeError("need one cardinality per variable");
        for (size_t i = 0; i < var_ids_.size(); ++i)
            if (cards_[i] < 1) throw ValidationError("variable '" + var_ids_[i] + "' needs cardinality >= 1");

        for (const auto& ids : regions_by_id) {
            std::vector<int> r;
            for (const auto& id : ids) r.push_back(var_index(id));
            std::sort(r.begin(), r.end());
            for (size_t i = 1; i < r.size(); ++i)
                if (r[i] == r[i - 1])
                    throw ValidationError("region repeats variable '" + var_ids_[static_cast<size_t>(r[i])] + "'");
            regions_.push_back(std::move(r));
        }
        if (H_.size() != regions_.size()) throw ShapeError("need one energy vector per region");
        for (size_t k = 0; k < regions_.size(); ++k)
            if (H_[k].size() != config_count(region_cards(static_cast<int>(k))))
                throw ShapeError("energy vector of region '" + region_key(static_cast<int>(k)) +
                                 "' has the wrong length");

        // Inclusion order; closure is the identity on an inclusion relation.
        std::vector<std::string> names;
        std::vector<std::pair<std::string, std::string>> rels;
        for (size_t k = 0; k < regions_.size(); ++k) names.push_back(region_key(static_cast<int>(k)));
        for (size_t lo = 0; lo < regions_.size(); ++lo)
            for (size_t hi = 0; hi < regions_.size(); ++hi)
                if (lo != hi && includes(regions_[hi], regions_[lo]))
                    rels.emplace_back(names[lo], names[hi]);
        poset_ = std::make_shared<const Poset>(names, rels);

        build_restrictions();
        build_cofunctor();
    }

    const Poset& poset() const { return *poset_; }
    std::shared_ptr<const Poset> poset_ptr() const { return poset_; }
    int n_regions() const { return static_cast<int>(regions_.size()); }
    const std::vector<std::string>& variable_ids() const { return var_ids_; }
    const std::vector<int>& cards() const { return cards_; }
    const std::vector<std::vector<int>>& regions() const { return regions_; }
    const std::vector<Eigen::VectorXd>& hamiltonians() const { return H_; }

    int var_index(const std::string& id) const {
        for (size_t i = 0; i < var_ids_.size(); ++i)
            if (var_ids_[i] == id) return static_cast<int>(i);
        throw UnknownElementError("unknown variable id '" + id + "'");
    }

    std::vector<int> region_cards(int k) const {
        std::vector<int> c;
        for (int v : regions_.at(static_cast<size_t>(k))) c.push_back(cards_[static_cast<size_t>(v)]);
        return c;
    }

    long long region_dim(int k) const { return config_count(region_cards(k)); }

    std::string region_key(int k) const {
        std::string s;
        for (size_t i = 0; i < regions_.at(static_cast<size_t>(k)).size(); ++i) {
            if (i) s += ",";
            s += var_ids_[static_cast<size_t>(regions_[static_cast<size_t>(k)][i])];
        }
        return s;
    }

    /// Configuration restriction along a strict pair: entry i gives the
    /// config of the lower region obtained by restricting config i of the
    /// upper region.
    const std::vector<int>& restriction(int pair_idx) const {
        return restrict_.at(static_cast<size_t>(pair_idx));
    }

    /// 0/1 summation cofunctor: F^a_b sums each fiber of the restriction,
    /// so sections in its limit are marginal-consistent families.
    const Cofunctor& marginalization_cofunctor() const { return *marg_; }

private:
    static bool includes(const std::vector<int>& sup, const std::vector<int>& sub) {
        return std::includes(sup.begin(), sup.end(), sub.begin(), sub.end());
    }

    void build_restrictions() {
        for (auto [a, b] : poset_->strict_pairs()) {
            const auto& va = regions_[static_cast<size_t>(a)];
            const auto& vb = regions_[static_cast<size_t>(b)];
            std::vector<int> ca = region_cards(a), cb = region_cards(b);
            std::vector<int> pos;  // position of each lower variable inside the upper list
            for (int v : vb)
                pos.push_back(static_cast<int>(std::find(va.begin(), va.end(), v) - va.begin()));
            std::vector<int> map(static_cast<size_t>(config_count(ca)));
            for (long long i = 0; i < static_cast<long long>(map.size()); ++i) {
                std::vector<int> xa = decode_config(i, ca);
                std::vector<int> xb;
                xb.reserve(pos.size());
                for (int p : pos) xb.push_back(xa[static_cast<size_t>(p)]);
                map[static_cast<size_t>(i)] = static_cast<int>(encode_config(xb, cb));
            }
            restrict_.push_back(std::move(map));
        }
    }

    void build_cofunctor() {
        std::vector<int> dims;
        for (int k = 0; k < n_regions(); ++k) dims.push_back(static_cast<int>(region_dim(k)));
        std::vector<Eigen::MatrixXd> maps;
        const auto& pairs = poset_->strict_pairs();
        for (size_t k = 0; k < pairs.size(); ++k) {
            auto [a, b] = pairs[k];
            Eigen::MatrixXd M = Eigen::MatrixXd::Zero(dims[static_cast<size_t>(b)], dims[static_cast<size_t>(a)]);
            const auto& res = restrict_[k];
            for (size_t i = 0; i < res.size(); ++i) M(res[i], static_cast<Eigen::Index>(i)) = 1.0;
            maps.push_back(std::move(M));
        }
        marg_ = std::make_shared<const Cofunctor>(poset_, dims, maps);
    }

    std::vector<std::string> var_ids_;
    std::vector<int> cards_;
    std::vector<std::vector<int>> regions_;
    std::vector<Eigen::VectorXd> H_;
    std::shared_ptr<const Poset> poset_;
    std::vector<std::vector<int>> restrict_;
    std::shared_ptr<const Cofunctor> marg_;
};

inline LocalLossFamily free_energy_family(const RegionGraphProblem& p) {
    return LocalLossFamily::free_energy(p.hamiltonians(), 1.0);
}

/// Region-based free energy sum_b c(b) ( <q_b, H_b> - S(q_b) ).
inline double region_free_energy(const RegionGraphProblem& p, const SectionVector& q) {
    return regionalized_value(p.poset(), free_energy_family(p), q);
}

/// Messages in the log domain plus the beliefs they induce (normalized).
struct BeliefState {
    SectionVector beliefs;
    PairField lambda;  // lambda_{a->b} = ln m_{a->b}, one block per strict pair
};

namespace gbp_detail {

inline double lse(const std::vector<double>& v) {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : v) m = std::max(m, x);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

/// Log-domain marginalization of lb (over the upper region of the pair).
inline Eigen::VectorXd log_marginal(const RegionGraphProblem& p, int pair_idx,
                                    const Eigen::VectorXd& lb) {
    auto [a, b] = p.poset().strict_pairs()[static_cast<size_t>(pair_idx)];
    (void)a;
    std::vector<std::vector<double>> fibers(static_cast<size_t>(p.region_dim(b)));
    const auto& res = p.restriction(pair_idx);
    for (size_t i = 0; i < res.size(); ++i)
        fibers[static_cast<size_t>(res[i])].push_back(lb(static_cast<Eigen::Index>(i)));
    Eigen::VectorXd out(static_cast<Eigen::Index>(fibers.size()));
    for (size_t j = 0; j < fibers.size(); ++j) out(static_cast<Eigen::Index>(j)) = lse(fibers[j]);
    return out;
}

}  // namespace gbp_detail

/// Unnormalized log-beliefs assembled from log-messages:
///   ln b_a = -H_a + sum_{b <= a} ext^a_b( nu_{b->a} ),
///   nu_{b->a} = sum_{c : c > b, c not<= a} lambda_{c->b}.
inline SectionVector assemble_log_beliefs(const RegionGraphProblem& p, const PairField& lambda) {
    const Poset& ps = p.poset();
    const Cofunctor& F = p.marginalization_cofunctor();
    const int n = ps.size();
    SectionVector logs;
    logs.reserve(static_cast<size_t>(n));
    for (int a = 0; a < n; ++a) {
        Eigen::VectorXd acc = -p.hamiltonians()[static_cast<size_t>(a)];
        for (int b = 0; b < n; ++b) {
            if (!ps.leq(b, a)) continue;
            Eigen::VectorXd nu = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.region_dim(b)));
            bool any = false;
            for (int c = 0; c < n; ++c) {
                if (c == b || !ps.leq(b, c) || ps.leq(c, a)) continue;
                nu += lambda[ps.pair_index(c, b)];
                any = true;
            }
            if (!any) continue;
            acc += F.apply_transpose(a, b, nu);  // cylindrical extension
        }
        logs.push_back(std::move(acc));
    }
    return logs;
}

inline double log_sum_exp_vec(const Eigen::VectorXd& v) {
    double m = v.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((v.array() - m).exp().sum());
}

inline SectionVector normalize_log_beliefs(const SectionVector& logs) {
    SectionVector q;
    q.reserve(logs.size());
    for (const auto& lb : logs) {
        double lz = log_sum_exp_vec(lb);
        q.push_back((lb.array() - lz).exp());
    }
    return q;
}

inline BeliefState init_belief_state(const RegionGraphProblem& p) {
    BeliefState s;
    s.lambda = zero_pair_field(p.marginalization_cofunctor());
    s.beliefs = normalize_log_beliefs(assemble_log_beliefs(p, s.lambda));
    return s;
}

/// One damped log-domain update: for every strict pair (a, b),
///   lambda_{a->b} += damping * ( ln sum_{fiber} b_a - ln b_b ),
/// with the beliefs assembled from the incoming state's messages.  The new
/// state's beliefs are re-assembled from the updated messages and normalized.
inline BeliefState gbp_step(const RegionGraphProblem& p, const BeliefState& s, double damping) {
    SectionVector logs = assemble_log_beliefs(p, s.lambda);
    const auto& pairs = p.poset().strict_pairs();
    BeliefState out;
    out.lambda = s.lambda;
    for (size_t k = 0; k < pairs.size(); ++k) {
        auto [a, b] = pairs[k];
        Eigen::VectorXd inc = gbp_detail::log_marginal(p, static_cast<int>(k), logs[a]) - logs[b];
        out.lambda[k] += damping * inc;
    }
    out.beliefs = normalize_log_beliefs(assemble_log_beliefs(p, out.lambda));
    return out;
}

/// Orthonormal basis of ker delta intersected with the per-element zero-sum
/// directions; the tangent space of the normalized consistent sections.
inline Eigen::MatrixXd normalized_tangent_basis(const Cofunctor& f) {
    Eigen::MatrixXd B = delta_matrix(f);
    const int N = total_dim(f);
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(f.poset().size(), N);
    const auto off = element_offsets(f);
    for (int a = 0; a < f.poset().size(); ++a) S.block(a, off[a], 1, f.dim(a)).setOnes();
    Eigen::MatrixXd M(B.rows() + S.rows(), N);
    M << B, S;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    const double cut = sv.size() > 0 ? 1e-10 * sv(0) : 0.0;
    int rank = 0;
    for (int i = 0; i < sv.size(); ++i)
        if (sv(i) > cut) ++rank;
    return svd.matrixV().rightCols(N - rank);
}

/// Fixed-point iteration of gbp_step with the same certification contract as
/// solve(): converged requires a small message delta plus the constraint and
/// stationarity certificates at the normalized beliefs (stationarity is
/// measured on the normalized tangent space).  x_star holds the beliefs and
/// l_star the multipliers l = -lambda.
inline SolveReport gbp_solve(const RegionGraphProblem& p, const SolverConfig& cfg) {
    const Cofunctor& F = p.marginalization_cofunctor();
    const Eigen::MatrixXd T = normalized_tangent_basis(F);
    const std::vector<long long>& counting = p.poset().counting();

    // Residuals and the loss value are read off the normalized log-beliefs, so
    // a coordinate whose belief underflows to zero during a diverging run still
    // yields finite numbers instead of ln(0).
    auto residuals = [&](const BeliefState& s) {
        SectionVector nlogs = assemble_log_beliefs(p, s.lambda);
        DualVector grads;
        grads.reserve(nlogs.size());
        double value = 0.0;
        for (size_t a = 0; a < nlogs.size(); ++a) {
            Eigen::VectorXd& lb = nlogs[a];
            lb.array() -= log_sum_exp_vec(lb);
            const Eigen::VectorXd& H = p.hamiltonians()[a];
            grads.push_back(H + lb + Eigen::VectorXd::Ones(lb.size()));
            value += static_cast<double>(counting[a]) *
                     (lb.array().exp() * (H.array() + lb.array())).sum();
        }
        return std::array<double, 3>{sup_norm(delta(F, s.beliefs)),
                                     stationarity_residual(F, grads, T), value};
    };

    BeliefState state = init_belief_state(p);
    SolveReport rep;
    double message_delta = std::numeric_limits<double>::infinity();
    if (state.lambda.empty()) message_delta = 0.0;

    int t = 0;
    while (t < cfg.max_iters && message_delta > cfg.tol_message) {
        BeliefState next = gbp_step(p, state, cfg.damping);
        ++t;
        message_delta = 0.0;
        for (size_t k = 0; k < next.lambda.size(); ++k)
            if (next.lambda[k].size() > 0)
                message_delta =
                    std::max(message_delta, (next.lambda[k] - state.lambda[k]).cwiseAbs().maxCoeff());
        state = std::move(next);
        const std::array<double, 3> res = residuals(state);
        rep.trace.push_back({t, message_delta, res[0], res[1], res[2]});
    }

    rep.x_star = state.beliefs;
    rep.l_star = state.lambda;
    for (auto& blk : rep.l_star) blk = -blk;
    rep.iterations = t;
    rep.final_message_delta = message_delta;
    const std::array<double, 3> res = residuals(state);
    rep.final_constraint_norm = res[0];
    rep.final_stationarity = res[1];
    rep.converged = message_delta <= cfg.tol_message &&
                    rep.final_constraint_norm <= cfg.tol_residual &&
                    rep.final_stationarity <= cfg.tol_residual;
    return rep;
}

/// Sup-norm gap between one generic-update increment read in log coordinates
/// and one gbp_step increment at the matching messages lambda = -l, after
/// centering each pair's increment (the per-region normalization constant).
/// The two sides are computed through disjoint machinery, so a near-zero gap
/// checks the identity  zeta_dual(dual_d(-lambda))(a) = sum of incoming
/// message sums, i.e. that the multiplicative update is the generic one.
inline double gbp_equivalence_check(const RegionGraphProblem& p, const PairField& l) {
    const Cofunctor& F = p.marginalization_cofunctor();
    const LocalLossFamily L = free_energy_family(p);
    const auto& pairs = p.poset().strict_pairs();

    // Generic route: x from the multipliers, increments as log ratios.
    SectionVector x = current_point(F, L, l);
    // GBP route: beliefs from messages.
    PairField lambda = l;
    for (auto& blk : lambda) blk = -blk;
    SectionVector logs = assemble_log_beliefs(p, lambda);

    double gap = 0.0;
    for (size_t k = 0; k < pairs.size(); ++k) {
        auto [a, b] = pairs[k];
        Eigen::VectorXd generic =
            (F.pair_map(static_cast<int>(k)) * x[a]).array().log().matrix() -
            x[b].array().log().matrix();
        Eigen::VectorXd gbp = gbp_detail::log_marginal(p, static_cast<int>(k), logs[a]) - logs[b];
        generic.array() -= generic.mean();
        gbp.array() -= gbp.mean();
        if (generic.size() > 0) gap = std::max(gap, (generic - gbp).cwiseAbs().maxCoeff());
    }
    return gap;
}

}  // namespace regio
