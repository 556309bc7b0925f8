#include <catch_amalgamated.hpp>

#include "support.hpp"

using namespace regio;

namespace {

Eigen::VectorXd vec2(double a, double b) {
    Eigen::VectorXd v(2);
    v << a, b;
    return v;
}

}  // namespace

TEST_CASE("free energy value at the fair coin is minus ln 2") {
    auto L = LocalLossFamily::free_energy({Eigen::VectorXd::Zero(2)});
    CHECK(L.value(0, vec2(0.5, 0.5)) == Catch::Approx(-0.6931471805599453).epsilon(1e-14));
}

TEST_CASE("free energy splits into energy and entropy terms") {
    Eigen::VectorXd H = vec2(1.0, 2.0);
    auto L = LocalLossFamily::free_energy({H}, 2.0);
    Eigen::VectorXd x = vec2(0.25, 0.75);
    const double entropy_term = 0.25 * std::log(0.25) + 0.75 * std::log(0.75);
    CHECK(L.value(0, x) == Catch::Approx(2.0 * x.dot(H) + entropy_term).epsilon(1e-14));
}

TEST_CASE("free energy gradient at the uniform point") {
    auto L = LocalLossFamily::free_energy({Eigen::VectorXd::Zero(2)});
    Eigen::VectorXd g = L.grad(0, vec2(0.5, 0.5));
    CHECK(g(0) == Catch::Approx(0.3068528194400547).epsilon(1e-14));  // 1 - ln 2
    CHECK(g(1) == Catch::Approx(g(0)).epsilon(1e-14));
}

TEST_CASE("free energy rejects points outside the positive orthant") {
    auto L = LocalLossFamily::free_energy({Eigen::VectorXd::Zero(2)});
    REQUIRE_THROWS_AS(L.value(0, vec2(0.5, 0.0)), DomainError);
    REQUIRE_THROWS_AS(L.grad(0, vec2(-0.1, 1.1)), DomainError);
}

TEST_CASE("quadratic value and gradient in closed form") {
    auto L = LocalLossFamily::quadratic({Eigen::MatrixXd::Identity(2, 2)},
                                        {Eigen::VectorXd::Zero(2)});
    CHECK(L.value(0, vec2(3.0, 4.0)) == Catch::Approx(12.5).epsilon(1e-14));
    CHECK((L.grad(0, vec2(3.0, 4.0)) - vec2(3.0, 4.0)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("quadratic factory validates symmetry and positivity") {
    Eigen::MatrixXd asym(2, 2);
    asym << 1.0, 0.5, -0.5, 1.0;
    REQUIRE_THROWS_AS(LocalLossFamily::quadratic({asym}, {Eigen::VectorXd::Zero(2)}), DomainError);
    Eigen::MatrixXd indef(2, 2);
    indef << 1.0, 0.0, 0.0, -1.0;
    REQUIRE_THROWS_AS(LocalLossFamily::quadratic({indef}, {Eigen::VectorXd::Zero(2)}), DomainError);
    REQUIRE_THROWS_AS(
        LocalLossFamily::quadratic({Eigen::MatrixXd::Identity(2, 2)}, {Eigen::VectorXd::Zero(3)}),
        ShapeError);
}

TEST_CASE("inverse gradients invert the gradients") {
    regiotest::Rng rng(404);
    const Eigen::MatrixXd R = regiotest::randn(rng, 2, 2, 0.3);
    auto Lq = LocalLossFamily::quadratic(
        {Eigen::MatrixXd(R.transpose() * R + Eigen::MatrixXd::Identity(2, 2))},
        {regiotest::randn(rng, 2, 1)});
    auto Lf = LocalLossFamily::free_energy({regiotest::randn(rng, 3, 1)}, 1.3);
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::VectorXd xq = regiotest::randn(rng, 2, 1);
        CHECK((Lq.inverse_grad(0, Lq.grad(0, xq)) - xq).cwiseAbs().maxCoeff() < 1e-10);
        Eigen::VectorXd xf = regiotest::randu_vec(rng, 3, 0.05, 2.0);
        CHECK((Lf.inverse_grad(0, Lf.grad(0, xf)) - xf).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("inverse gradient jacobians match their closed forms") {
    Eigen::VectorXd H = vec2(0.3, -0.2);
    auto Lf = LocalLossFamily::free_energy({H});
    Eigen::VectorXd y = vec2(0.1, 0.4);
    Eigen::MatrixXd Jf = Lf.inverse_grad_jacobian(0, y);
    Eigen::VectorXd g = Lf.inverse_grad(0, y);
    CHECK((Jf - Eigen::MatrixXd(g.asDiagonal())).cwiseAbs().maxCoeff() < 1e-12);

    Eigen::MatrixXd A(2, 2);
    A << 3.0, 1.0, 1.0, 2.0;
    auto Lq = LocalLossFamily::quadratic({A}, {Eigen::VectorXd::Zero(2)});
    CHECK((Lq.inverse_grad_jacobian(0, y) - A.inverse()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("custom families expose exactly what they are given") {
    auto value = [](int, const Eigen::VectorXd& x) { return 0.25 * std::pow(x.squaredNorm(), 2); };
    auto grad = [](int, const Eigen::VectorXd& x) {
        return Eigen::VectorXd(x.squaredNorm() * x);
    };
    auto L = LocalLossFamily::custom(1, value, grad);
    CHECK_FALSE(L.has_inverse_grad());
    REQUIRE_THROWS_AS(L.inverse_grad(0, vec2(1.0, 0.0)), MissingInverseError);

    auto inverse = [](int, const Eigen::VectorXd& y) {
        const double n = y.norm();
        return Eigen::VectorXd(n > 0 ? (std::pow(n, -2.0 / 3.0) * y).eval()
                                     : Eigen::VectorXd::Zero(y.size()));
    };
    auto Li = LocalLossFamily::custom(1, value, grad, inverse);
    REQUIRE(Li.has_inverse_grad());
    Eigen::VectorXd y = vec2(2.0, 0.0);
    CHECK((Li.grad(0, Li.inverse_grad(0, y)) - y).cwiseAbs().maxCoeff() < 1e-10);
    // Finite-difference jacobian of the supplied inverse.
    Eigen::MatrixXd J = Li.inverse_grad_jacobian(0, y);
    const double dir = (Li.inverse_grad(0, vec2(2.0 + 1e-6, 0.0)) -
                        Li.inverse_grad(0, vec2(2.0 - 1e-6, 0.0)))(0) /
                       2e-6;
    CHECK(J(0, 0) == Catch::Approx(dir).margin(1e-8));
}

TEST_CASE("analytic gradients match central differences") {
    regiotest::Rng rng(1010);
    for (int trial = 0; trial < 25; ++trial) {
        auto inst = regiotest::random_forest_cofunctor(rng, 4);
        auto Lq = regiotest::random_quadratic(rng, *inst.functor);
        auto Lf = regiotest::random_free_energy(rng, *inst.functor);
        for (int a = 0; a < inst.poset->size(); ++a) {
            Eigen::VectorXd xq = regiotest::randn(rng, inst.functor->dim(a), 1);
            Eigen::VectorXd fd = finite_diff_grad(
                [&](const Eigen::VectorXd& z) { return Lq.value(a, z); }, xq);
            Eigen::VectorXd an = Lq.grad(a, xq);
            CHECK((fd - an).cwiseAbs().maxCoeff() <=
                  1e-6 * std::max(1.0, an.cwiseAbs().maxCoeff()));

            Eigen::VectorXd xf = regiotest::randu_vec(rng, inst.functor->dim(a), 0.1, 1.5);
            fd = finite_diff_grad([&](const Eigen::VectorXd& z) { return Lf.value(a, z); }, xf);
            an = Lf.grad(a, xf);
            CHECK((fd - an).cwiseAbs().maxCoeff() <=
                  1e-6 * std::max(1.0, an.cwiseAbs().maxCoeff()));
        }
    }
}

TEST_CASE("regionalized value weighs local losses by counting coefficients") {
    // Two-region chain: only the top region counts, so the lower block is
    // irrelevant to the total.
    auto poset = std::make_shared<const Poset>(std::vector<std::string>{"b", "t"},
                                               std::vector<std::pair<std::string, std::string>>{
                                                   {"b", "t"}});
    Eigen::MatrixXd M(1, 2);
    M << 1.0, 1.0;
    Cofunctor f(poset, {1, 2}, {M});
    auto L = LocalLossFamily::quadratic(
        {Eigen::MatrixXd::Identity(1, 1), Eigen::MatrixXd::Identity(2, 2)},
        {Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(2)});
    SectionVector x = zero_section(f);
    x[1] << 3.0, 4.0;
    x[0] << 7.0;
    const double v1 = regionalized_value(*poset, L, x);
    x[0] << -100.0;
    const double v2 = regionalized_value(*poset, L, x);
    CHECK(v1 == Catch::Approx(12.5).epsilon(1e-14));
    CHECK(v1 == v2);

    // V shape: c = (-1, 1, 1) subtracts the shared lower loss once.
    auto vshape = std::make_shared<const Poset>(
        std::vector<std::string>{"b", "a1", "a2"},
        std::vector<std::pair<std::string, std::string>>{{"b", "a1"}, {"b", "a2"}});
    Cofunctor g(vshape, {1, 1, 1},
                {Eigen::MatrixXd::Identity(1, 1), Eigen::MatrixXd::Identity(1, 1)});
    auto Lv = LocalLossFamily::quadratic(
        std::vector<Eigen::MatrixXd>(3, Eigen::MatrixXd::Identity(1, 1)),
        std::vector<Eigen::VectorXd>(3, Eigen::VectorXd::Zero(1)));
    SectionVector xv = zero_section(g);
    xv[0] << 2.0;
    xv[1] << 1.0;
    xv[2] << 3.0;
    CHECK(regionalized_value(*vshape, Lv, xv) == Catch::Approx(0.5 * (1.0 + 9.0) - 0.5 * 4.0));
}

TEST_CASE("local gradients stack the per-element gradients") {
    regiotest::Rng rng(12);
    auto inst = regiotest::random_forest_cofunctor(rng, 5);
    auto L = regiotest::random_quadratic(rng, *inst.functor);
    SectionVector x = regiotest::random_section(rng, *inst.functor);
    DualVector g = local_gradients(L, x);
    for (int a = 0; a < inst.poset->size(); ++a)
        CHECK((g[static_cast<size_t>(a)] - L.grad(a, x[static_cast<size_t>(a)])).cwiseAbs().maxCoeff() ==
              0.0);
}
