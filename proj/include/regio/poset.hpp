#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "regio/errors.hpp"

namespace regio {

using IntMatrix = Eigen::Matrix<long long, Eigen::Dynamic, Eigen::Dynamic>;

/// Finite poset over opaque string ids.
///
/// The order is the reflexive-transitive closure of the declared generating
/// relations; elements are indexed by declaration order and all per-element
/// data in the library follows that order.  The Moebius function is computed
/// once, in exact integer arithmetic, via the interval recursion
///   mu(a,a) = 1,   sum_{b <= c <= a} mu(a,c) = 0   for b < a,
/// so that the zeta and Moebius matrices are exact integer inverses.
/// Immutable after construction; safe to share across threads.
class Poset {
public:
    /// Builds a poset from declared elements and (lower, upper) relation pairs.
    Poset(std::vector<std::string> elements,
          const std::vector<std::pair<std::string, std::string>>& relations) {
        ids_ = std::move(elements);
        n_ = static_cast<int>(ids_.size());
        for (int i = 0; i < n_; ++i) {
            if (!index_.emplace(ids_[i], i).second)
                throw ValidationError("duplicate element id '" + ids_[i] + "'");
        }

        // ---- reflexive-transitive closure ----
        leq_.assign(static_cast<size_t>(n_) * n_, 0);
        for (int i = 0; i < n_; ++i) set_leq(i, i);
        for (const auto& [lo, hi] : relations) set_leq(index_of(lo), index_of(hi));
        for (int k = 0; k < n_; ++k)
            for (int i = 0; i < n_; ++i) {
                if (!leq_at(i, k)) continue;
                for (int j = 0; j < n_; ++j)
                    if (leq_at(k, j)) set_leq(i, j);
            }
        for (int i = 0; i < n_; ++i)
            for (int j = i + 1; j < n_; ++j)
                if (leq_at(i, j) && leq_at(j, i))
                    throw CycleError("elements '" + ids_[i] + "' and '" + ids_[j] +
                                     "' are comparable in both directions");

        topo_ = topological_order();
        compute_mobius();
        compute_counting();
        compute_pairs();
    }

    int size() const { return n_; }
    const std::vector<std::string>& elements() const { return ids_; }
    const std::string& id(int i) const { return ids_.at(static_cast<size_t>(i)); }

    int index_of(const std::string& id) const {
        auto it = index_.find(id);
        if (it == index_.end()) throw UnknownElementError("unknown element id '" + id + "'");
        return it->second;
    }

    /// True iff x <= y in the closure.
    bool leq(int x, int y) const { return leq_at(x, y) != 0; }

    /// mu(a, b) for b <= a; NotComparableError otherwise.
    long long mobius(int a, int b) const {
        if (!leq(b, a))
            throw NotComparableError("mu(" + ids_[a] + ", " + ids_[b] +
                                     ") requested but '" + ids_[b] + "' is not below '" + ids_[a] + "'");
        return mob_[flat(a, b)];
    }

    /// Counting coefficients c(a) = sum_{b >= a} mu(b, a).
    const std::vector<long long>& counting() const { return counting_; }

    /// Zeta matrix, Z(a, b) = 1 iff b <= a.
    IntMatrix zeta_matrix() const {
        IntMatrix z = IntMatrix::Zero(n_, n_);
        for (int a = 0; a < n_; ++a)
            for (int b = 0; b < n_; ++b)
                if (leq(b, a)) z(a, b) = 1;
        return z;
    }

    /// Moebius matrix, M(a, b) = mu(a, b) for b <= a and 0 otherwise.
    IntMatrix mobius_matrix() const {
        IntMatrix m = IntMatrix::Zero(n_, n_);
        for (int a = 0; a < n_; ++a)
            for (int b = 0; b < n_; ++b)
                if (leq(b, a)) m(a, b) = mob_[flat(a, b)];
        return m;
    }

    /// Strict comparable pairs (a, b) with b < a, in canonical order
    /// (lexicographic by element index of a, then b).  All pairwise data
    /// (multipliers, messages, functor maps) is indexed by this list.
    const std::vector<std::pair<int, int>>& strict_pairs() const { return pairs_; }

    /// Index of (a, b) in strict_pairs(); NotComparableError if b is not
    /// strictly below a.
    int pair_index(int a, int b) const {
        auto it = pair_index_.find(pair_key(a, b));
        if (it == pair_index_.end())
            throw NotComparableError("'" + ids_[b] + "' is not strictly below '" + ids_[a] + "'");
        return it->second;
    }

    bool is_strict_pair(int a, int b) const {
        return pair_index_.find(pair_key(a, b)) != pair_index_.end();
    }

    /// Poset with the order reversed.  mu_op(b, a) = mu(a, b).
    Poset opposite() const {
        Poset op;
        op.ids_ = ids_;
        op.index_ = index_;
        op.n_ = n_;
        op.leq_.assign(static_cast<size_t>(n_) * n_, 0);
        for (int x = 0; x < n_; ++x)
            for (int y = 0; y < n_; ++y)
                if (leq(y, x)) op.set_leq(x, y);
        op.topo_ = op.topological_order();
        op.compute_mobius();
        op.compute_counting();
        op.compute_pairs();
        return op;
    }

private:
    Poset() = default;

    size_t flat(int a, int b) const { return static_cast<size_t>(a) * n_ + b; }
    uint8_t leq_at(int x, int y) const { return leq_[flat(y, x)]; }  // row y holds its down-set
    void set_leq(int x, int y) { leq_[flat(y, x)] = 1; }
    static long long pair_key(int a, int b) { return (static_cast<long long>(a) << 32) | static_cast<unsigned>(b); }

    std::vector<int> topological_order() const {
        // Kahn's algorithm on the strict order; deterministic because
        // candidates are scanned in declaration order.
        std::vector<int> indeg(n_, 0);
        for (int x = 0; x < n_; ++x)
            for (int y = 0; y < n_; ++y)
                if (x != y && leq(x, y)) ++indeg[y];
        std::vector<int> order;
        std::vector<uint8_t> done(n_, 0);
        order.reserve(n_);
        while (static_cast<int>(order.size()) < n_) {
            for (int x = 0; x < n_; ++x) {
                if (done[x] || indeg[x] != 0) continue;
                done[x] = 1;
                order.push_back(x);
                for (int y = 0; y < n_; ++y)
                    if (y != x && leq(x, y)) --indeg[y];
            }
        }
        return order;
    }

    void compute_mobius() {
        mob_.assign(static_cast<size_t>(n_) * n_, 0);
        std::vector<int> topo_pos(n_);
        for (int i = 0; i < n_; ++i) topo_pos[topo_[i]] = i;
        for (int a = 0; a < n_; ++a) {
            mob_[flat(a, a)] = 1;
            // Walk the down-set of a from a downwards; every c in (b, a]
            // comes later in topological order than b, so mu(a, c) is ready.
            for (int i = topo_pos[a] - 1; i >= 0; --i) {
                int b = topo_[i];
                if (!leq(b, a) || b == a) continue;
                long long s = 0;
                for (int c = 0; c < n_; ++c)
                    if (c != b && leq(b, c) && leq(c, a)) s += mob_[flat(a, c)];
                mob_[flat(a, b)] = -s;
            }
        }
    }

    void compute_counting() {
        counting_.assign(n_, 0);
        for (int a = 0; a < n_; ++a)
            for (int b = 0; b < n_; ++b)
                if (leq(a, b)) counting_[a] += mob_[flat(b, a)];
    }

    void compute_pairs() {
        pairs_.clear();
        pair_index_.clear();
        for (int a = 0; a < n_; ++a)
            for (int b = 0; b < n_; ++b)
                if (a != b && leq(b, a)) {
                    pair_index_[pair_key(a, b)] = static_cast<int>(pairs_.size());
                    pairs_.emplace_back(a, b);
                }
    }

    int n_ = 0;
    std::vector<std::string> ids_;
    std::unordered_map<std::string, int> index_;
    std::vector<uint8_t> leq_;      // row y: down-set indicator of y
    std::vector<long long> mob_;    // mu(a, b) at flat(a, b)
    std::vector<long long> counting_;
    std::vector<int> topo_;
    std::vector<std::pair<int, int>> pairs_;
    std::unordered_map<long long, int> pair_index_;
};

}  // namespace regio
