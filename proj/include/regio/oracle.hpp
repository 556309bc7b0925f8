#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "regio/config_space.hpp"
#include "regio/errors.hpp"
#include "regio/functor.hpp"
#include "regio/loss.hpp"

// Reference implementations used to pin down expected values in tests and in
// the oracle-compare CLI command.  Deliberately simple and independent of the
// message-passing solvers: nothing here touches multiplier or message state.

namespace regio {

struct ExactDistribution {
    Eigen::VectorXd p;  // probabilities over the full configuration space
    double log_z;       // ln sum_x e^{-beta H(x)}
};

inline double log_sum_exp(const Eigen::VectorXd& v) {
    if (v.size() == 0) throw ShapeError("log_sum_exp of an empty vector");
    double m = v.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((v.array() - m).exp().sum());
}

/// Exact Gibbs distribution p(x) = e^{-beta H(x)} / Z by direct enumeration.
inline ExactDistribution exact_gibbs(const Eigen::VectorXd& hamiltonian, double beta = 1.0,
                                     long long cap = 1000000) {
    if (hamiltonian.size() > cap)
        throw SizeError("configuration space of size " + std::to_string(hamiltonian.size()) +
                        " exceeds the enumeration cap of " + std::to_string(cap));
    Eigen::VectorXd neg = -beta * hamiltonian;
    double lz = log_sum_exp(neg);
    return {(neg.array() - lz).exp(), lz};
}

/// Marginals of a joint distribution over the listed variable subsets.
/// `joint` is indexed over the product of all cardinalities in variable
/// order; each region is a sorted list of variable indices.
inline std::vector<Eigen::VectorXd> exact_marginals(const std::vector<int>& cards,
                                                    const std::vector<std::vector<int>>& regions,
                                                    const Eigen::VectorXd& joint) {
    long long total = config_count(cards);
    if (joint.size() != total) throw ShapeError("joint has the wrong number of configurations");
    std::vector<Eigen::VectorXd> out;
    out.reserve(regions.size());
    for (const auto& region : regions) {
        std::vector<int> sub_cards;
        for (int v : region) sub_cards.push_back(cards.at(static_cast<size_t>(v)));
        Eigen::VectorXd m = Eigen::VectorXd::Zero(config_count(sub_cards));
        for (long long i = 0; i < total; ++i) {
            std::vector<int> x = decode_config(i, cards);
            std::vector<int> xr;
            xr.reserve(region.size());
            for (int v : region) xr.push_back(x[static_cast<size_t>(v)]);
            m(encode_config(xr, sub_cards)) += joint(i);
        }
        out.push_back(std::move(m));
    }
    return out;
}

// ---- projected gradient descent over the limit ----

struct BruteForceOptions {
    bool simplex = false;   // additionally require unit mass per element
    unsigned seed = 0;
    int restarts = 20;
    int max_steps = 50000;
    double init_step = 0.1;
    int dim_cap = 20;       // SizeError beyond this many free coordinates
};

struct BruteForceResult {
    SectionVector x;
    double value;
};

namespace detail {

/// Per-element row-sum matrix (one row per element, summing its block).
inline Eigen::MatrixXd mass_matrix(const Cofunctor& f) {
    const auto off = element_offsets(f);
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(f.poset().size(), off.back());
    for (int a = 0; a < f.poset().size(); ++a)
        S.block(a, off[a], 1, f.dim(a)).setOnes();
    return S;
}

inline double loss_or_inf(const Poset& p, const LocalLossFamily& L, const Cofunctor& f,
                          const Eigen::VectorXd& stacked, bool positive_domain) {
    if (positive_domain && !(stacked.array() > 0.0).all())
        return std::numeric_limits<double>::infinity();
    SectionVector x = unstack_like(zero_section(f), stacked);
    return regionalized_value(p, L, x);
}

}  // namespace detail

/// Minimizes f_R over ker delta (optionally intersected with the per-element
/// probability simplices) by gradient descent in the limit-basis coordinates:
/// fixed restart count, step halving on non-decrease.  Intended as a slow,
/// trustworthy reference, not a solver.
inline BruteForceResult brute_force_min(const Cofunctor& f, const LocalLossFamily& L,
                                        const BruteForceOptions& opt = {}) {
    const Poset& p = f.poset();
    const Eigen::MatrixXd V = limit_basis_matrix(f);
    const bool positive_domain = L.kind() == LossKind::FreeEnergy;

    // Coordinates: x = base + P s with P spanning the feasible directions.
    Eigen::VectorXd base = Eigen::VectorXd::Zero(total_dim(f));
    Eigen::MatrixXd P;
    if (opt.simplex) {
        Eigen::MatrixXd SV = detail::mass_matrix(f) * V;
        Eigen::VectorXd ones = Eigen::VectorXd::Ones(SV.rows());
        Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(SV);
        Eigen::VectorXd t0 = cod.solve(ones);
        if ((SV * t0 - ones).cwiseAbs().maxCoeff() > 1e-8)
            throw DomainError("no section with unit mass on every element");
        base = V * t0;
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(SV, Eigen::ComputeFullV);
        int rank = 0;
        const auto& sv = svd.singularValues();
        for (int i = 0; i < sv.size(); ++i)
            if (sv(i) > 1e-12 * std::max(1.0, sv(0))) ++rank;
        P = V * svd.matrixV().rightCols(SV.cols() - rank);
    } else if (positive_domain) {
        // Start inside the positive orthant: aim the base point at all-ones.
        Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(V);
        base = V * cod.solve(Eigen::VectorXd::Ones(V.rows()));
        P = V;
    } else {
        P = V;
    }
    if (P.cols() > opt.dim_cap)
        throw SizeError("limit has " + std::to_string(P.cols()) +
                        " free coordinates, above the brute-force cap of " +
                        std::to_string(opt.dim_cap));

    std::mt19937_64 rng(opt.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    double best_value = std::numeric_limits<double>::infinity();
    Eigen::VectorXd best_x = base;

    for (int r = 0; r < std::max(1, opt.restarts); ++r) {
        Eigen::VectorXd s = Eigen::VectorXd::Zero(P.cols());
        if (r > 0) {
            for (int i = 0; i < s.size(); ++i) s(i) = 0.5 * gauss(rng);
            // Shrink the offset until the start point is admissible.
            for (int tries = 0; tries < 80; ++tries) {
                if (std::isfinite(detail::loss_or_inf(p, L, f, base + P * s, positive_domain))) break;
                s *= 0.5;
            }
        }
        Eigen::VectorXd xs = base + P * s;
        double value = detail::loss_or_inf(p, L, f, xs, positive_domain);
        if (!std::isfinite(value)) continue;

        double step = opt.init_step;
        for (int it = 0; it < opt.max_steps; ++it) {
            SectionVector xb = unstack_like(zero_section(f), xs);
            Eigen::VectorXd g_full(total_dim(f));
            {
                int at = 0;
                for (int a = 0; a < p.size(); ++a) {
                    double c = static_cast<double>(p.counting()[a]);
                    Eigen::VectorXd ga = c == 0.0 ? Eigen::VectorXd::Zero(f.dim(a))
                                                  : Eigen::VectorXd(c * L.grad(a, xb[a]));
                    g_full.segment(at, f.dim(a)) = ga;
                    at += f.dim(a);
                }
            }
            Eigen::VectorXd g = P.transpose() * g_full;
            if (g.norm() <= 1e-12) break;
            Eigen::VectorXd cand = s - step * g;
            Eigen::VectorXd xc = base + P * cand;
            double cv = detail::loss_or_inf(p, L, f, xc, positive_domain);
            if (cv < value) {
                s = cand;
                xs = xc;
                value = cv;
            } else {
                step *= 0.5;
                if (step < 1e-16) break;
            }
        }
        if (value < best_value) {
            best_value = value;
            best_x = xs;
        }
    }
    if (!std::isfinite(best_value)) throw DomainError("no admissible start point found");
    return {unstack_like(zero_section(f), best_x), best_value};
}

// ---- closed-form reference for quadratic losses ----

struct KktResult {
    SectionVector x;
    PairField multipliers;
};

/// Stationary point of sum_a c(a) (x_a^T A_a x_a / 2 - b_a^T x_a) over
/// ker delta, via the reduced system in limit-basis coordinates (robust to
/// c(a) = 0 blocks), plus least-squares multipliers for the full first-order
/// system  c A x - c b + delta^T nu = 0.
inline KktResult kkt_solve_quadratic(const Cofunctor& f, const LocalLossFamily& L) {
    if (L.kind() != LossKind::Quadratic)
        throw DomainError("kkt_solve_quadratic needs a quadratic loss family");
    const Poset& p = f.poset();
    const auto off = element_offsets(f);
    const int N = total_dim(f);

    Eigen::MatrixXd cA = Eigen::MatrixXd::Zero(N, N);
    Eigen::VectorXd cb = Eigen::VectorXd::Zero(N);
    for (int a = 0; a < p.size(); ++a) {
        double c = static_cast<double>(p.counting()[a]);
        cA.block(off[a], off[a], f.dim(a), f.dim(a)) = c * L.quadratic_matrix(a);
        cb.segment(off[a], f.dim(a)) = c * L.quadratic_offset(a);
    }

    Eigen::MatrixXd V = limit_basis_matrix(f);
    Eigen::MatrixXd Q = V.transpose() * cA * V;
    Eigen::VectorXd r = V.transpose() * cb;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(Q);
    lu.setThreshold(1e-10);
    // isInvertible() compares pivots against a threshold relative to the largest
    // pivot, so an all-tiny matrix still reports full rank; add an absolute floor.
    const double q_scale = std::max(1.0, Q.size() > 0 ? Q.cwiseAbs().maxCoeff() : 0.0);
    if (Q.cols() > 0 && (!lu.isInvertible() || lu.maxPivot() <= 1e-10 * q_scale))
        throw SingularSystemError("reduced stationarity system is singular");
    Eigen::VectorXd x = V * lu.solve(r);

    Eigen::MatrixXd B = delta_matrix(f);
    Eigen::VectorXd rhs = cb - cA * x;
    Eigen::VectorXd nu = B.rows() > 0
                             ? Eigen::VectorXd(B.transpose()
                                                   .completeOrthogonalDecomposition()
                                                   .solve(rhs))
                             : Eigen::VectorXd(0);

    KktResult out;
    out.x = unstack_like(zero_section(f), x);
    out.multipliers = unstack_like(zero_pair_field(f), nu);
    return out;
}

/// Central finite differences, gradient of a scalar function.
inline Eigen::VectorXd finite_diff_grad(const std::function<double(const Eigen::VectorXd&)>& fn,
                                        const Eigen::VectorXd& x, double h = 1e-5) {
    Eigen::VectorXd g(x.size());
    for (int i = 0; i < x.size(); ++i) {
        Eigen::VectorXd hi = x, lo = x;
        hi(i) += h;
        lo(i) -= h;
        g(i) = (fn(hi) - fn(lo)) / (2.0 * h);
    }
    return g;
}

}  // namespace regio
