#pragma once

// Shared random instance generators and independent cross-check helpers for
// the test suite.  Everything here is deliberately simple and avoids the
// library's own derivations wherever an independent route exists.

#include <Eigen/Dense>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "regio/channels.hpp"
#include "regio/functor.hpp"
#include "regio/gbp.hpp"
#include "regio/loss.hpp"
#include "regio/oracle.hpp"
#include "regio/poset.hpp"
#include "regio/solver.hpp"

namespace regiotest {

using Rng = std::mt19937_64;

inline Eigen::MatrixXd randn(Rng& rng, int r, int c, double scale = 1.0) {
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::MatrixXd m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = scale * g(rng);
    return m;
}

inline Eigen::VectorXd randu_vec(Rng& rng, int n, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = u(rng);
    return v;
}

// ---------------------------------------------------------------------------
// Posets

/// Random order on ids e0..e{n-1}; generating edges only point from lower to
/// higher index, so the relation is always acyclic.
inline std::shared_ptr<const regio::Poset> random_poset(Rng& rng, int n, double edge_prob = 0.3) {
    std::vector<std::string> ids;
    for (int i = 0; i < n; ++i) ids.push_back("e" + std::to_string(i));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<std::pair<std::string, std::string>> rels;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (u(rng) < edge_prob) rels.emplace_back(ids[static_cast<size_t>(i)], ids[static_cast<size_t>(j)]);
    return std::make_shared<const regio::Poset>(ids, rels);
}

/// A linear extension computed from scratch (Kahn on the comparability
/// relation), independent of the library's internal ordering.
inline std::vector<int> linear_extension(const regio::Poset& p) {
    const int n = p.size();
    std::vector<int> below(static_cast<size_t>(n), 0);
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b)
            if (a != b && p.leq(b, a)) ++below[static_cast<size_t>(a)];
    std::vector<int> order;
    std::vector<bool> done(static_cast<size_t>(n), false);
    while (static_cast<int>(order.size()) < n)
        for (int a = 0; a < n; ++a)
            if (!done[static_cast<size_t>(a)] && below[static_cast<size_t>(a)] == 0) {
                done[static_cast<size_t>(a)] = true;
                order.push_back(a);
                for (int c = 0; c < n; ++c)
                    if (c != a && p.leq(a, c)) --below[static_cast<size_t>(c)];
            }
    return order;
}

/// Independent Möbius oracle: fixes the lower argument and recurses over the
/// lower part of the interval, mu(a,b) = -sum_{b <= c < a} mu(c,b).  The
/// library recurses over the upper part instead.
inline long long mobius_by_lower_recursion(const regio::Poset& p, int a, int b) {
    std::vector<long long> mu(static_cast<size_t>(p.size()), 0);
    mu[static_cast<size_t>(b)] = 1;
    for (int c : linear_extension(p)) {
        if (c == b || !p.leq(b, c) || !p.leq(c, a)) continue;
        long long s = 0;
        for (int d = 0; d < p.size(); ++d)
            if (d != c && p.leq(b, d) && p.leq(d, c)) s += mu[static_cast<size_t>(d)];
        mu[static_cast<size_t>(c)] = -s;
    }
    return mu[static_cast<size_t>(a)];
}

// ---------------------------------------------------------------------------
// Cofunctors

struct CofunctorInstance {
    std::shared_ptr<const regio::Poset> poset;
    std::shared_ptr<const regio::Cofunctor> functor;
};

/// Poset whose Hasse diagram descends through at most one cover per element,
/// so intervals are chains and any choice of cover maps composes freely.
inline CofunctorInstance random_forest_cofunctor(Rng& rng, int n, int max_dim = 3) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<int> down(static_cast<size_t>(n), -1);
    std::vector<std::string> ids;
    std::vector<std::pair<std::string, std::string>> rels;
    for (int i = 0; i < n; ++i) ids.push_back("e" + std::to_string(i));
    for (int i = 1; i < n; ++i)
        if (u(rng) < 0.75) {
            std::uniform_int_distribution<int> pick(0, i - 1);
            down[static_cast<size_t>(i)] = pick(rng);
            rels.emplace_back(ids[static_cast<size_t>(down[static_cast<size_t>(i)])],
                              ids[static_cast<size_t>(i)]);
        }
    auto poset = std::make_shared<const regio::Poset>(ids, rels);

    std::uniform_int_distribution<int> dim_pick(1, max_dim);
    std::vector<int> dims;
    for (int i = 0; i < n; ++i) dims.push_back(dim_pick(rng));
    std::vector<Eigen::MatrixXd> cover(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        if (down[static_cast<size_t>(i)] >= 0)
            cover[static_cast<size_t>(i)] =
                randn(rng, dims[static_cast<size_t>(down[static_cast<size_t>(i)])],
                      dims[static_cast<size_t>(i)], 0.8);

    std::vector<Eigen::MatrixXd> maps;
    for (auto [a, b] : poset->strict_pairs()) {
        Eigen::MatrixXd M = Eigen::MatrixXd::Identity(dims[static_cast<size_t>(a)],
                                                      dims[static_cast<size_t>(a)]);
        int c = a;
        while (c != b) {
            M = cover[static_cast<size_t>(c)] * M;
            c = down[static_cast<size_t>(c)];
        }
        maps.push_back(std::move(M));
    }
    return {poset, std::make_shared<const regio::Cofunctor>(poset, dims, maps)};
}

/// Equal-dimension cofunctor F^a_b = G_b G_a^{-1}: functorial on any poset.
inline CofunctorInstance random_coboundary_cofunctor(Rng& rng,
                                                     std::shared_ptr<const regio::Poset> poset,
                                                     int d = 2) {
    const int n = poset->size();
    std::vector<Eigen::MatrixXd> G;
    for (int i = 0; i < n; ++i)
        G.push_back(Eigen::MatrixXd::Identity(d, d) + randn(rng, d, d, 0.3));
    std::vector<Eigen::MatrixXd> maps;
    for (auto [a, b] : poset->strict_pairs())
        maps.push_back(G[static_cast<size_t>(b)] *
                       G[static_cast<size_t>(a)].partialPivLu().inverse());
    std::vector<int> dims(static_cast<size_t>(n), d);
    return {poset, std::make_shared<const regio::Cofunctor>(poset, dims, maps)};
}

// ---------------------------------------------------------------------------
// Losses

inline regio::LocalLossFamily random_quadratic(Rng& rng, const regio::Cofunctor& f) {
    std::uniform_real_distribution<double> u(0.5, 1.5);
    std::vector<Eigen::MatrixXd> A;
    std::vector<Eigen::VectorXd> b;
    for (int a = 0; a < f.poset().size(); ++a) {
        const int d = f.dim(a);
        Eigen::MatrixXd R = randn(rng, d, d, 0.5);
        A.push_back(R.transpose() * R + u(rng) * Eigen::MatrixXd::Identity(d, d));
        b.push_back(randn(rng, d, 1));
    }
    return regio::LocalLossFamily::quadratic(A, b);
}

inline regio::LocalLossFamily random_free_energy(Rng& rng, const regio::Cofunctor& f,
                                                 double hmax = 2.0, double beta = 1.0) {
    std::vector<Eigen::VectorXd> H;
    for (int a = 0; a < f.poset().size(); ++a) H.push_back(randu_vec(rng, f.dim(a), -hmax, hmax));
    return regio::LocalLossFamily::free_energy(H, beta);
}

inline regio::PairField random_multipliers(Rng& rng, const regio::Cofunctor& f,
                                           double scale = 0.5) {
    regio::PairField l = regio::zero_pair_field(f);
    for (size_t k = 0; k < l.size(); ++k) l[k] = randn(rng, static_cast<int>(l[k].size()), 1, scale);
    return l;
}

inline regio::SectionVector random_section(Rng& rng, const regio::Cofunctor& f, double scale = 1.0) {
    regio::SectionVector x = regio::zero_section(f);
    for (size_t a = 0; a < x.size(); ++a) x[a] = randn(rng, static_cast<int>(x[a].size()), 1, scale);
    return x;
}

inline double section_gap(const regio::SectionVector& x, const regio::SectionVector& y) {
    double g = 0.0;
    for (size_t a = 0; a < x.size(); ++a)
        if (x[a].size() > 0) g = std::max(g, (x[a] - y[a]).cwiseAbs().maxCoeff());
    return g;
}

// ---------------------------------------------------------------------------
// Region graph instances

/// Two regions {1,2} > {1}; energies random on both levels.
inline regio::RegionGraphProblem two_region_problem(Rng& rng, int card, double hmax = 2.0) {
    std::vector<Eigen::VectorXd> H{randu_vec(rng, card * card, -hmax, hmax),
                                   randu_vec(rng, card, -hmax, hmax)};
    return regio::RegionGraphProblem({"1", "2"}, {card, card}, {{"1", "2"}, {"1"}}, H);
}

/// All seven nonempty subsets of three binary variables; energy on the top
/// region only.
inline regio::RegionGraphProblem powerset3_problem(Rng& rng, double hmax = 5.0) {
    std::vector<std::vector<std::string>> regions = {{"1", "2", "3"}, {"1", "2"}, {"1", "3"},
                                                     {"2", "3"},      {"1"},      {"2"},
                                                     {"3"}};
    std::vector<Eigen::VectorXd> H;
    H.push_back(randu_vec(rng, 8, -hmax, hmax));
    for (size_t k = 1; k < regions.size(); ++k)
        H.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(1)
                                          << regions[k].size()));
    return regio::RegionGraphProblem({"1", "2", "3"}, {2, 2, 2}, regions, H);
}

/// Diamond of regions {1,2,3} > {1,2}, {1,3} > {1} with random top energy.
inline regio::RegionGraphProblem diamond_problem(Rng& rng, double hmax = 2.0,
                                                 bool random_lower = false) {
    std::vector<std::vector<std::string>> regions = {{"1", "2", "3"}, {"1", "2"}, {"1", "3"}, {"1"}};
    std::vector<Eigen::VectorXd> H;
    H.push_back(randu_vec(rng, 8, -hmax, hmax));
    for (int k = 1; k < 4; ++k) {
        const int n = k < 3 ? 4 : 2;
        H.push_back(random_lower ? Eigen::VectorXd(randu_vec(rng, n, -hmax, hmax))
                                 : Eigen::VectorXd(Eigen::VectorXd::Zero(n)));
    }
    return regio::RegionGraphProblem({"1", "2", "3"}, {2, 2, 2}, regions, H);
}

/// Chain of regions {1,2,3} > {1,2} > {1}.
inline regio::RegionGraphProblem chain3_problem(Rng& rng, double hmax = 2.0) {
    std::vector<Eigen::VectorXd> H{randu_vec(rng, 8, -hmax, hmax), randu_vec(rng, 4, -hmax, hmax),
                                   randu_vec(rng, 2, -hmax, hmax)};
    return regio::RegionGraphProblem({"1", "2", "3"}, {2, 2, 2},
                                     {{"1", "2", "3"}, {"1", "2"}, {"1"}}, H);
}

// ---------------------------------------------------------------------------
// Kernel networks

inline Eigen::MatrixXd random_stochastic(Rng& rng, int rows, int cols, double lo = 0.1) {
    std::uniform_real_distribution<double> u(lo, 1.0);
    Eigen::MatrixXd K(rows, cols);
    for (int j = 0; j < cols; ++j) {
        double s = 0.0;
        for (int i = 0; i < rows; ++i) {
            K(i, j) = u(rng);
            s += K(i, j);
        }
        K.col(j) /= s;
    }
    return K;
}

/// Strictly positive chain a0 > a1 > ... with free cover kernels; composites
/// are the path products.
inline regio::KernelNetwork random_chain_kernels(Rng& rng, const std::vector<int>& sizes) {
    const int n = static_cast<int>(sizes.size());
    std::vector<std::string> ids;
    std::vector<std::pair<std::string, std::string>> rels;
    for (int i = 0; i < n; ++i) ids.push_back("a" + std::to_string(i));
    for (int i = 0; i + 1 < n; ++i) rels.emplace_back(ids[static_cast<size_t>(i + 1)], ids[static_cast<size_t>(i)]);
    auto poset = std::make_shared<const regio::Poset>(ids, rels);

    std::vector<Eigen::MatrixXd> cover;  // cover[i]: a_i -> a_{i+1}
    for (int i = 0; i + 1 < n; ++i)
        cover.push_back(random_stochastic(rng, sizes[static_cast<size_t>(i + 1)], sizes[static_cast<size_t>(i)]));
    std::vector<Eigen::MatrixXd> kernels;
    for (auto [a, b] : poset->strict_pairs()) {
        Eigen::MatrixXd K = Eigen::MatrixXd::Identity(sizes[static_cast<size_t>(a)], sizes[static_cast<size_t>(a)]);
        for (int i = a; i < b; ++i) K = cover[static_cast<size_t>(i)] * K;
        kernels.push_back(std::move(K));
    }
    return regio::KernelNetwork(poset, sizes, kernels);
}

/// Strictly positive diamond T > M1, M2 > B.  Three kernels are free draws;
/// the fourth is solved so both composite paths T -> B agree exactly, with
/// every entry kept inside the open simplex.  Throws after too many redraws.
inline regio::KernelNetwork random_diamond_kernels(Rng& rng, int retries = 500) {
    const int nT = 3, nM = 3, nB = 2;
    for (int attempt = 0; attempt < retries; ++attempt) {
        Eigen::MatrixXd Km1b = random_stochastic(rng, nB, nM);
        Eigen::MatrixXd Ktm1 = random_stochastic(rng, nM, nT);
        Eigen::MatrixXd Km2b = random_stochastic(rng, nB, nM);
        Eigen::MatrixXd C = Km1b * Ktm1;  // target composite T -> B

        // Solve Km2b * Ktm2 = C column by column, starting from the uniform
        // column and correcting minimally; any solution automatically has
        // unit column sums because Km2b is column-stochastic.
        Eigen::MatrixXd Ktm2(nM, nT);
        bool ok = true;
        Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(Km2b);
        for (int j = 0; j < nT && ok; ++j) {
            Eigen::VectorXd u = Eigen::VectorXd::Constant(nM, 1.0 / nM);
            Eigen::VectorXd y = u + cod.solve(C.col(j) - Km2b * u);
            if (y.minCoeff() < 5e-3) ok = false;
            Ktm2.col(j) = y;
        }
        if (!ok) continue;

        std::vector<std::string> ids = {"T", "M1", "M2", "B"};
        std::vector<std::pair<std::string, std::string>> rels = {
            {"M1", "T"}, {"M2", "T"}, {"B", "M1"}, {"B", "M2"}};
        auto poset = std::make_shared<const regio::Poset>(ids, rels);
        std::vector<int> sizes = {nT, nM, nM, nB};
        std::vector<Eigen::MatrixXd> kernels;
        for (auto [a, b] : poset->strict_pairs()) {
            const std::string ka = poset->id(a), kb = poset->id(b);
            if (ka == "T" && kb == "M1") kernels.push_back(Ktm1);
            else if (ka == "T" && kb == "M2") kernels.push_back(Ktm2);
            else if (ka == "T" && kb == "B") kernels.push_back(C);
            else if (ka == "M1" && kb == "B") kernels.push_back(Km1b);
            else kernels.push_back(Km2b);
        }
        return regio::KernelNetwork(poset, sizes, kernels);
    }
    throw std::runtime_error("could not draw a strictly positive diamond kernel network");
}

inline std::vector<Eigen::VectorXd> random_energies(Rng& rng, const std::vector<int>& sizes,
                                                    double hmax) {
    std::vector<Eigen::VectorXd> H;
    for (int s : sizes) H.push_back(randu_vec(rng, s, -hmax, hmax));
    return H;
}

/// Energy over the full configuration space that the region decomposition
/// represents: E(x) = sum_k c(k) H_k(x restricted to region k), with c the
/// counting numbers.  Exact-marginal references enumerate Gibbs(E).
inline Eigen::VectorXd joint_energy(const regio::RegionGraphProblem& p) {
    const std::vector<int>& cards = p.cards();
    const long long total = regio::config_count(cards);
    Eigen::VectorXd E = Eigen::VectorXd::Zero(total);
    const auto& c = p.poset().counting();
    for (int k = 0; k < p.n_regions(); ++k) {
        if (c[static_cast<size_t>(k)] == 0) continue;
        const std::vector<int>& region = p.regions()[static_cast<size_t>(k)];
        std::vector<int> sub;
        for (int v : region) sub.push_back(cards[static_cast<size_t>(v)]);
        const Eigen::VectorXd& H = p.hamiltonians()[static_cast<size_t>(k)];
        for (long long i = 0; i < total; ++i) {
            std::vector<int> x = regio::decode_config(i, cards);
            std::vector<int> xr;
            xr.reserve(region.size());
            for (int v : region) xr.push_back(x[static_cast<size_t>(v)]);
            E(i) += static_cast<double>(c[static_cast<size_t>(k)]) *
                    H(regio::encode_config(xr, sub));
        }
    }
    return E;
}

/// Smallest eigenvalue of the counting-weighted quadratic form restricted to
/// the limit subspace.  Positive means the constrained problem has a unique
/// minimum; instance generators use it to reject saddles and near-singular
/// draws.
inline double reduced_hessian_min_eig(const regio::Cofunctor& f,
                                      const regio::LocalLossFamily& L) {
    const Eigen::MatrixXd V = regio::limit_basis_matrix(f);
    if (V.cols() == 0) return std::numeric_limits<double>::infinity();
    const auto off = regio::element_offsets(f);
    const auto& c = f.poset().counting();
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(regio::total_dim(f), regio::total_dim(f));
    for (int a = 0; a < f.poset().size(); ++a)
        M.block(off[a], off[a], f.dim(a), f.dim(a)) =
            static_cast<double>(c[a]) * L.quadratic_matrix(a);
    Eigen::MatrixXd Q = V.transpose() * M * V;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (Q + Q.transpose()));
    return es.eigenvalues().minCoeff();
}

/// Draws forest cofunctor + quadratic pairs until the reduced problem is a
/// well-conditioned minimum.
inline std::pair<CofunctorInstance, regio::LocalLossFamily> random_convex_instance(
    Rng& rng, int n, int max_dim = 3, double min_eig = 5e-2) {
    for (int attempt = 0; attempt < 200; ++attempt) {
        CofunctorInstance inst = random_forest_cofunctor(rng, n, max_dim);
        regio::LocalLossFamily L = random_quadratic(rng, *inst.functor);
        if (reduced_hessian_min_eig(*inst.functor, L) >= min_eig)
            return {std::move(inst), std::move(L)};
    }
    throw std::runtime_error("could not draw a well-conditioned quadratic instance");
}

}  // namespace regiotest
