#pragma once

#include <Eigen/Dense>
#include <memory>
#include <vector>

#include "regio/errors.hpp"
#include "regio/poset.hpp"

namespace regio {

/// One coordinate block per poset element, in declaration order.
struct SectionVector : std::vector<Eigen::VectorXd> {
    using std::vector<Eigen::VectorXd>::vector;
    SectionVector() = default;
    SectionVector(std::vector<Eigen::VectorXd> v) : std::vector<Eigen::VectorXd>(std::move(v)) {}
};

/// Dual coordinates; same block layout as SectionVector under the standard
/// identification of each block space with its dual.
struct DualVector : std::vector<Eigen::VectorXd> {
    using std::vector<Eigen::VectorXd>::vector;
    DualVector() = default;
    DualVector(std::vector<Eigen::VectorXd> v) : std::vector<Eigen::VectorXd>(std::move(v)) {}
};

/// One block per strict pair (a, b) in the poset's canonical pair order;
/// block (a, b) lives on the lower element b.
struct PairField : std::vector<Eigen::VectorXd> {
    using std::vector<Eigen::VectorXd>::vector;
    PairField() = default;
    PairField(std::vector<Eigen::VectorXd> v) : std::vector<Eigen::VectorXd>(std::move(v)) {}
};

struct FunctorialityViolation {
    int a, b, c;   // chain c < b < a
    double error;  // max-norm gap between the composite and the declared map
};

/// Contravariant assignment of vector spaces to poset elements: a space of
/// dimension dim(a) per element and a map F^a_b : F(a) -> F(b), stored as a
/// dim(b) x dim(a) matrix, per strict pair b < a.  F^a_a is the identity and
/// is kept implicit.  Immutable after construction; safe to share.
class Cofunctor {
public:
    Cofunctor(std::shared_ptr<const Poset> poset, std::vector<int> dims,
              std::vector<Eigen::MatrixXd> pair_maps)
        : poset_(std::move(poset)), dims_(std::move(dims)), maps_(std::move(pair_maps)) {
        const int n = poset_->size();
        if (static_cast<int>(dims_.size()) != n)
            throw ShapeError("expected one dimension per element");
        for (int i = 0; i < n; ++i)
            if (dims_[i] < 0) throw ShapeError("negative dimension at element '" + poset_->id(i) + "'");
        const auto& pairs = poset_->strict_pairs();
        if (maps_.size() != pairs.size())
            throw ShapeError("expected one map per strict pair");
        for (size_t k = 0; k < pairs.size(); ++k) {
            auto [a, b] = pairs[k];
            if (maps_[k].rows() != dims_[b] || maps_[k].cols() != dims_[a])
                throw ShapeError("map for pair (" + poset_->id(a) + ", " + poset_->id(b) +
                                 ") must be " + std::to_string(dims_[b]) + "x" + std::to_string(dims_[a]));
        }
    }

    const Poset& poset() const { return *poset_; }
    std::shared_ptr<const Poset> poset_ptr() const { return poset_; }
    int dim(int a) const { return dims_.at(static_cast<size_t>(a)); }
    const std::vector<int>& dims() const { return dims_; }

    /// Map attached to the k-th strict pair.
    const Eigen::MatrixXd& pair_map(int k) const { return maps_.at(static_cast<size_t>(k)); }

    /// F^a_b applied to v; identity when a == b.
    Eigen::VectorXd apply(int a, int b, const Eigen::VectorXd& v) const {
        if (a == b) return v;
        return maps_[poset_->pair_index(a, b)] * v;
    }

    /// (F^a_b)^T applied to y; identity when a == b.
    Eigen::VectorXd apply_transpose(int a, int b, const Eigen::VectorXd& y) const {
        if (a == b) return y;
        return maps_[poset_->pair_index(a, b)].transpose() * y;
    }

private:
    std::shared_ptr<const Poset> poset_;
    std::vector<int> dims_;
    std::vector<Eigen::MatrixXd> maps_;
};

/// All chains c < b < a where F^b_c F^a_b differs from F^a_c by more than tol
/// in max-norm.  Empty result means the assignment is a genuine cofunctor.
inline std::vector<FunctorialityViolation> validate_cofunctor(const Cofunctor& f,
                                                              double tol = 1e-12) {
    std::vector<FunctorialityViolation> out;
    const Poset& p = f.poset();
    const int n = p.size();
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
            if (a == b || !p.leq(b, a)) continue;
            for (int c = 0; c < n; ++c) {
                if (c == b || c == a || !p.leq(c, b)) continue;
                Eigen::MatrixXd composite =
                    f.pair_map(p.pair_index(b, c)) * f.pair_map(p.pair_index(a, b));
                double err = (composite - f.pair_map(p.pair_index(a, c))).cwiseAbs().maxCoeff();
                if (!(err <= tol)) out.push_back({a, b, c, err});
            }
        }
    return out;
}

// ---- block vector helpers ----

inline int total_dim(const Cofunctor& f) {
    int n = 0;
    for (int d : f.dims()) n += d;
    return n;
}

inline std::vector<int> element_offsets(const Cofunctor& f) {
    std::vector<int> off(f.dims().size() + 1, 0);
    for (size_t i = 0; i < f.dims().size(); ++i) off[i + 1] = off[i] + f.dims()[i];
    return off;
}

inline int pair_total_dim(const Cofunctor& f) {
    int n = 0;
    for (auto [a, b] : f.poset().strict_pairs()) { (void)a; n += f.dim(b); }
    return n;
}

inline std::vector<int> pair_offsets(const Cofunctor& f) {
    const auto& pairs = f.poset().strict_pairs();
    std::vector<int> off(pairs.size() + 1, 0);
    for (size_t k = 0; k < pairs.size(); ++k) off[k + 1] = off[k] + f.dim(pairs[k].second);
    return off;
}

inline SectionVector zero_section(const Cofunctor& f) {
    SectionVector v;
    for (int d : f.dims()) v.push_back(Eigen::VectorXd::Zero(d));
    return v;
}

inline PairField zero_pair_field(const Cofunctor& f) {
    PairField l;
    for (auto [a, b] : f.poset().strict_pairs()) { (void)a; l.push_back(Eigen::VectorXd::Zero(f.dim(b))); }
    return l;
}

template <typename Blocks>
inline Eigen::VectorXd stack_blocks(const Blocks& v) {
    int n = 0;
    for (const auto& b : v) n += static_cast<int>(b.size());
    Eigen::VectorXd out(n);
    int at = 0;
    for (const auto& b : v) {
        out.segment(at, b.size()) = b;
        at += static_cast<int>(b.size());
    }
    return out;
}

template <typename Blocks>
inline Blocks unstack_like(const Blocks& shape, const Eigen::VectorXd& x) {
    Blocks out = shape;
    int at = 0;
    for (auto& b : out) {
        b = x.segment(at, b.size());
        at += static_cast<int>(b.size());
    }
    return out;
}

template <typename Blocks>
inline double sup_norm(const Blocks& v) {
    double m = 0.0;
    for (const auto& b : v)
        if (b.size() > 0) m = std::max(m, b.cwiseAbs().maxCoeff());
    return m;
}

template <typename A, typename B>
inline double block_dot(const A& x, const B& y) {
    double s = 0.0;
    for (size_t i = 0; i < x.size(); ++i) s += x[i].dot(y[i]);
    return s;
}

// ---- the constraint map and its adjoint ----

/// delta(v)(a, b) = F^a_b(v_a) - v_b over strict pairs.  ker delta is the
/// space of sections compatible with every map (the limit).
inline PairField delta(const Cofunctor& f, const SectionVector& v) {
    PairField out;
    const auto& pairs = f.poset().strict_pairs();
    out.reserve(pairs.size());
    for (size_t k = 0; k < pairs.size(); ++k) {
        auto [a, b] = pairs[k];
        out.push_back(f.pair_map(static_cast<int>(k)) * v[a] - v[b]);
    }
    return out;
}

/// Adjoint of delta:
///   d(l)(a) = sum_{b < a} (F^a_b)^T l_{a->b}  -  sum_{b > a} l_{b->a}.
inline DualVector dual_d(const Cofunctor& f, const PairField& l) {
    DualVector out;
    for (int d : f.dims()) out.push_back(Eigen::VectorXd::Zero(d));
    const auto& pairs = f.poset().strict_pairs();
    for (size_t k = 0; k < pairs.size(); ++k) {
        auto [a, b] = pairs[k];
        out[a] += f.pair_map(static_cast<int>(k)).transpose() * l[k];
        out[b] -= l[k];
    }
    return out;
}

/// zeta transport on dual coordinates: (zeta y)(a) = sum_{b <= a} (F^a_b)^T y_b.
inline DualVector zeta_dual(const Cofunctor& f, const DualVector& y) {
    const int n = f.poset().size();
    DualVector out;
    out.reserve(n);
    for (int a = 0; a < n; ++a) {
        Eigen::VectorXd acc = y[a];
        for (int b = 0; b < n; ++b)
            if (b != a && f.poset().leq(b, a))
                acc += f.apply_transpose(a, b, y[b]);
        out.push_back(std::move(acc));
    }
    return out;
}

/// Moebius transport on dual coordinates:
///   (mu y)(a) = sum_{b <= a} mu(a, b) (F^a_b)^T y_b.
/// Mutual inverse of zeta_dual.
inline DualVector mobius_dual(const Cofunctor& f, const DualVector& y) {
    const int n = f.poset().size();
    DualVector out;
    out.reserve(n);
    for (int a = 0; a < n; ++a) {
        Eigen::VectorXd acc = y[a];  // mu(a, a) = 1
        for (int b = 0; b < n; ++b)
            if (b != a && f.poset().leq(b, a))
                acc += static_cast<double>(f.poset().mobius(a, b)) * f.apply_transpose(a, b, y[b]);
        out.push_back(std::move(acc));
    }
    return out;
}

// ---- stacked matrix forms (used by the Newton step and the oracles) ----

/// Matrix of delta on stacked coordinates, pair blocks by element blocks.
inline Eigen::MatrixXd delta_matrix(const Cofunctor& f) {
    const auto eoff = element_offsets(f);
    const auto poff = pair_offsets(f);
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(poff.back(), eoff.back());
    const auto& pairs = f.poset().strict_pairs();
    for (size_t k = 0; k < pairs.size(); ++k) {
        auto [a, b] = pairs[k];
        B.block(poff[k], eoff[a], f.dim(b), f.dim(a)) = f.pair_map(static_cast<int>(k));
        B.block(poff[k], eoff[b], f.dim(b), f.dim(b)) -= Eigen::MatrixXd::Identity(f.dim(b), f.dim(b));
    }
    return B;
}

/// Matrix of the primal zeta transport W(v)(b) = sum_{a >= b} F^a_b v_a.
/// zeta_dual acts on stacked coordinates as W^T, and dual_d as delta_matrix^T,
/// so the composite l -> zeta_dual(dual_d(l)) is (delta_matrix * W)^T.
inline Eigen::MatrixXd zeta_primal_matrix(const Cofunctor& f) {
    const auto eoff = element_offsets(f);
    const int n = f.poset().size();
    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(eoff.back(), eoff.back());
    for (int b = 0; b < n; ++b)
        for (int a = 0; a < n; ++a) {
            if (!f.poset().leq(b, a)) continue;
            if (a == b)
                W.block(eoff[b], eoff[a], f.dim(b), f.dim(a)).setIdentity();
            else
                W.block(eoff[b], eoff[a], f.dim(b), f.dim(a)) = f.pair_map(f.poset().pair_index(a, b));
        }
    return W;
}

/// Orthonormal basis of ker delta (the limit) as columns of an N x K matrix
/// on stacked coordinates.  Rank is cut at 1e-10 * sigma_max.
inline Eigen::MatrixXd limit_basis_matrix(const Cofunctor& f) {
    const int N = total_dim(f);
    Eigen::MatrixXd B = delta_matrix(f);
    if (B.rows() == 0) return Eigen::MatrixXd::Identity(N, N);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(B, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    const double cut = sv.size() > 0 ? 1e-10 * sv(0) : 0.0;
    int rank = 0;
    for (int i = 0; i < sv.size(); ++i)
        if (sv(i) > cut) ++rank;
    return svd.matrixV().rightCols(N - rank);
}

/// Columns of a limit-basis matrix as block sections.
inline std::vector<SectionVector> limit_basis_sections(const Cofunctor& f,
                                                       const Eigen::MatrixXd& V) {
    std::vector<SectionVector> out;
    SectionVector shape = zero_section(f);
    for (int k = 0; k < V.cols(); ++k) out.push_back(unstack_like(shape, V.col(k)));
    return out;
}

inline std::vector<SectionVector> limit_basis(const Cofunctor& f) {
    return limit_basis_sections(f, limit_basis_matrix(f));
}

/// Norm of the projection of mobius_dual(y) onto the limit.  Zero exactly
/// when the linear form y annihilates every direction tangent to ker delta
/// after Moebius inversion, i.e. at critical points when y is the collection
/// of local gradients.
inline double stationarity_residual(const Cofunctor& f, const DualVector& y,
                                    const Eigen::MatrixXd& V) {
    Eigen::VectorXd m = stack_blocks(mobius_dual(f, y));
    return (V.transpose() * m).norm();
}

inline double stationarity_residual(const Cofunctor& f, const DualVector& y) {
    return stationarity_residual(f, y, limit_basis_matrix(f));
}

}  // namespace regio
