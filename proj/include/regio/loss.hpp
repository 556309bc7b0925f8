#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <vector>

#include "regio/errors.hpp"
#include "regio/functor.hpp"
#include "regio/poset.hpp"

namespace regio {

enum class LossKind { FreeEnergy, Quadratic, Custom };

/// One smooth local loss per poset element.
///
/// free_energy: f_a(x) = beta * <x, H_a> + sum_i x_i ln x_i on x > 0,
///   with inverse gradient g_a(y) = exp(y - beta * H_a - 1) coordinatewise.
/// quadratic:   f_a(x) = x^T A_a x / 2 - b_a^T x with A_a symmetric positive
///   definite, inverse gradient g_a(y) = A_a^{-1} (y + b_a).
/// custom:      caller-supplied value/gradient and optional inverse gradient.
class LocalLossFamily {
public:
    using ValueFn = std::function<double(int, const Eigen::VectorXd&)>;
    using VecFn = std::function<Eigen::VectorXd(int, const Eigen::VectorXd&)>;

    static LocalLossFamily free_energy(std::vector<Eigen::VectorXd> hamiltonians,
                                       double beta = 1.0) {
        LocalLossFamily L;
        L.kind_ = LossKind::FreeEnergy;
        L.H_ = std::move(hamiltonians);
        L.beta_ = beta;
        return L;
    }

    static LocalLossFamily quadratic(std::vector<Eigen::MatrixXd> A,
                                     std::vector<Eigen::VectorXd> b) {
        LocalLossFamily L;
        L.kind_ = LossKind::Quadratic;
        if (A.size() != b.size()) throw ShapeError("need one (A, b) pair per element");
        for (size_t i = 0; i < A.size(); ++i) {
            if (A[i].rows() != A[i].cols() || A[i].rows() != b[i].size())
                throw ShapeError("quadratic block " + std::to_string(i) + " has mismatched sizes");
            if (A[i].size() > 0) {
                if ((A[i] - A[i].transpose()).cwiseAbs().maxCoeff() > 1e-12)
                    throw DomainError("quadratic block " + std::to_string(i) + " is not symmetric");
                Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A[i]);
                if (es.eigenvalues().minCoeff() <= 0.0)
                    throw DomainError("quadratic block " + std::to_string(i) + " is not positive definite");
            }
        }
        L.A_ = std::move(A);
        L.b_ = std::move(b);
        return L;
    }

    static LocalLossFamily custom(int n_elements, ValueFn value, VecFn grad,
                                  VecFn inverse_grad = nullptr) {
        LocalLossFamily L;
        L.kind_ = LossKind::Custom;
        L.n_custom_ = n_elements;
        L.value_fn_ = std::move(value);
        L.grad_fn_ = std::move(grad);
        L.inverse_fn_ = std::move(inverse_grad);
        return L;
    }

    LossKind kind() const { return kind_; }
    double beta() const { return beta_; }

    int n_elements() const {
        switch (kind_) {
            case LossKind::FreeEnergy: return static_cast<int>(H_.size());
            case LossKind::Quadratic: return static_cast<int>(A_.size());
            default: return n_custom_;
        }
    }

    const Eigen::VectorXd& hamiltonian(int a) const { return H_.at(static_cast<size_t>(a)); }
    const Eigen::MatrixXd& quadratic_matrix(int a) const { return A_.at(static_cast<size_t>(a)); }
    const Eigen::VectorXd& quadratic_offset(int a) const { return b_.at(static_cast<size_t>(a)); }

    double value(int a, const Eigen::VectorXd& x) const {
        switch (kind_) {
            case LossKind::FreeEnergy: {
                const Eigen::VectorXd& H = H_.at(static_cast<size_t>(a));
                check_size(x, H.size());
                double s = 0.0;
                for (int i = 0; i < x.size(); ++i) {
                    if (!(x(i) > 0.0)) throw DomainError("free energy needs positive coordinates");
                    s += beta_ * x(i) * H(i) + x(i) * std::log(x(i));
                }
                return s;
            }
            case LossKind::Quadratic: {
                const auto& A = A_.at(static_cast<size_t>(a));
                check_size(x, A.rows());
                return 0.5 * x.dot(A * x) - b_[static_cast<size_t>(a)].dot(x);
            }
            default: return value_fn_(a, x);
        }
    }

    Eigen::VectorXd grad(int a, const Eigen::VectorXd& x) const {
        switch (kind_) {
            case LossKind::FreeEnergy: {
                const Eigen::VectorXd& H = H_.at(static_cast<size_t>(a));
                check_size(x, H.size());
                Eigen::VectorXd g(x.size());
                for (int i = 0; i < x.size(); ++i) {
                    if (!(x(i) > 0.0)) throw DomainError("free energy needs positive coordinates");
                    g(i) = beta_ * H(i) + std::log(x(i)) + 1.0;
                }
                return g;
            }
            case LossKind::Quadratic: {
                const auto& A = A_.at(static_cast<size_t>(a));
                check_size(x, A.rows());
                return A * x - b_[static_cast<size_t>(a)];
            }
            default: return grad_fn_(a, x);
        }
    }

    bool has_inverse_grad() const {
        return kind_ != LossKind::Custom || static_cast<bool>(inverse_fn_);
    }

    /// g_a(y), the unique x with grad(a, x) = y.
    Eigen::VectorXd inverse_grad(int a, const Eigen::VectorXd& y) const {
        switch (kind_) {
            case LossKind::FreeEnergy: {
                const Eigen::VectorXd& H = H_.at(static_cast<size_t>(a));
                check_size(y, H.size());
                return (y - beta_ * H - Eigen::VectorXd::Ones(y.size())).array().exp();
            }
            case LossKind::Quadratic: {
                const auto& A = A_.at(static_cast<size_t>(a));
                check_size(y, A.rows());
                return A.llt().solve(y + b_[static_cast<size_t>(a)]);
            }
            default:
                if (!inverse_fn_) throw MissingInverseError("custom loss without inverse gradient");
                return inverse_fn_(a, y);
        }
    }

    /// Jacobian of inverse_grad at y (finite differences for custom losses).
    Eigen::MatrixXd inverse_grad_jacobian(int a, const Eigen::VectorXd& y) const {
        switch (kind_) {
            case LossKind::FreeEnergy:
                return inverse_grad(a, y).asDiagonal();
            case LossKind::Quadratic: {
                const auto& A = A_.at(static_cast<size_t>(a));
                check_size(y, A.rows());
                return A.llt().solve(Eigen::MatrixXd::Identity(A.rows(), A.cols()));
            }
            default: {
                if (!inverse_fn_) throw MissingInverseError("custom loss without inverse gradient");
                const double h = 1e-6;
                Eigen::MatrixXd J(y.size(), y.size());
                for (int j = 0; j < y.size(); ++j) {
                    Eigen::VectorXd hi = y, lo = y;
                    hi(j) += h;
                    lo(j) -= h;
                    J.col(j) = (inverse_fn_(a, hi) - inverse_fn_(a, lo)) / (2.0 * h);
                }
                return J;
            }
        }
    }

private:
    LocalLossFamily() = default;

    static void check_size(const Eigen::VectorXd& x, Eigen::Index want) {
        if (x.size() != want)
            throw ShapeError("loss argument has size " + std::to_string(x.size()) +
                             ", expected " + std::to_string(want));
    }

    LossKind kind_ = LossKind::Custom;
    double beta_ = 1.0;
    std::vector<Eigen::VectorXd> H_;
    std::vector<Eigen::MatrixXd> A_;
    std::vector<Eigen::VectorXd> b_;
    int n_custom_ = 0;
    ValueFn value_fn_;
    VecFn grad_fn_, inverse_fn_;
};

/// Non-redundant global loss: f_R(x) = sum_a c(a) f_a(x_a), with c the
/// counting coefficients of the poset.
inline double regionalized_value(const Poset& p, const LocalLossFamily& L,
                                 const SectionVector& x) {
    if (static_cast<int>(x.size()) != p.size() || L.n_elements() != p.size())
        throw ShapeError("regionalized value needs one block and one loss per element");
    double s = 0.0;
    for (int a = 0; a < p.size(); ++a) {
        long long c = p.counting()[a];
        if (c != 0) s += static_cast<double>(c) * L.value(a, x[a]);
    }
    return s;
}

/// Per-element collection of local gradients d_x f = (d f_a(x_a))_a.
inline DualVector local_gradients(const LocalLossFamily& L, const SectionVector& x) {
    DualVector y;
    y.reserve(x.size());
    for (size_t a = 0; a < x.size(); ++a) y.push_back(L.grad(static_cast<int>(a), x[a]));
    return y;
}

}  // namespace regio
