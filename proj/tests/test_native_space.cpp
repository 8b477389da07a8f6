#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace deepspline;
using deepspline::testing::random_spline;

namespace {

// Largest deviation of f from its least-squares affine fit on 1001 points of [-10, 10].
template <class F>
double affine_residual(F f) {
    const Eigen::Index n = 1001;
    Eigen::MatrixXd X(n, 2);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double x = -10.0 + 20.0 * static_cast<double>(i) / static_cast<double>(n - 1);
        X(i, 0) = 1.0;
        X(i, 1) = x;
        y(i) = f(x);
    }
    const Eigen::VectorXd beta = X.colPivHouseholderQr().solve(y);
    return (X * beta - y).cwiseAbs().maxCoeff();
}

DiracMeasure random_measure(Rng& rng, std::size_t atoms) {
    DiracMeasure w;
    for (std::size_t k = 0; k < atoms; ++k) w.atoms.push_back({rng.uniform(-3.0, 3.0), rng.uniform(-2.0, 2.0)});
    return w;
}

} // namespace

TEST(GPhi, OutsideUnitIntervalActsLikeRamp) { EXPECT_EQ(g_phi(2.0, 1.0), 1.0); }

TEST(GPhi, VanishesBeyondSupport) { EXPECT_EQ(g_phi(0.5, 2.0), 0.0); }

TEST(GPhi, CentreValue) { EXPECT_EQ(g_phi(0.5, 0.5), -0.25); }

TEST(GPhi, BoundedByAbsX) {
    Rng rng(41);
    for (int i = 0; i < 20000; ++i) {
        const double x = rng.uniform(-5.0, 5.0);
        const double y = rng.uniform(-5.0, 5.0);
        EXPECT_LE(std::abs(g_phi(x, y)), std::abs(x) + 1e-15);
    }
}

TEST(GPhi, CompactSupportInY) {
    Rng rng(42);
    for (int i = 0; i < 20000; ++i) {
        const double x = rng.uniform(-5.0, 5.0);
        const double y = rng.uniform(-8.0, 8.0);
        if (y < std::min(x, 0.0) || y > std::max(x, 1.0)) EXPECT_EQ(g_phi(x, y), 0.0);
    }
}

TEST(ApplyGPhi, SingleAtom) {
    DiracMeasure w;
    w.atoms.push_back({0.5, 1.0});
    const LinearSpline f = apply_G_phi(w);
    EXPECT_EQ(eval(f, 0.0), 0.0);
    EXPECT_EQ(eval(f, 1.0), 0.0);
    EXPECT_EQ(eval(f, 0.5), -0.25);
}

TEST(ApplyGPhi, EmptyMeasureIsZero) {
    const LinearSpline f = apply_G_phi(DiracMeasure{});
    EXPECT_EQ(f, LinearSpline(0.0, 0.0));
}

TEST(ApplyGPhi, MatchesKernelSum) {
    Rng rng(43);
    for (int trial = 0; trial < 200; ++trial) {
        const DiracMeasure w = random_measure(rng, 1 + rng.below(6));
        const LinearSpline f = apply_G_phi(w);
        const double x = rng.uniform(-4.0, 4.0);
        double direct = 0.0;
        for (const DiracAtom& a : w.atoms) direct += a.weight * g_phi(x, a.location);
        EXPECT_NEAR(eval(f, x), direct, 1e-12);
    }
}

TEST(ApplyGPhi, BoundaryConditions) {
    Rng rng(44);
    for (int trial = 0; trial < 1000; ++trial) {
        const LinearSpline f = apply_G_phi(random_measure(rng, 5));
        EXPECT_LE(std::abs(eval(f, 0.0)), 1e-12);
        EXPECT_LE(std::abs(eval(f, 1.0)), 1e-12);
    }
}

TEST(SecondDerivative, ReluIsUnitDirac) {
    const DiracMeasure w = second_derivative(from_relu());
    ASSERT_EQ(w.atoms.size(), 1u);
    EXPECT_EQ(w.atoms[0].location, 0.0);
    EXPECT_EQ(w.atoms[0].weight, 1.0);
    EXPECT_EQ(w.total_variation(), 1.0);
}

TEST(SecondDerivative, AffineIsEmpty) { EXPECT_TRUE(second_derivative(LinearSpline(1.0, 2.0)).atoms.empty()); }

TEST(SecondDerivative, RightInverseLeavesAffineRemainder) {
    Rng rng(45);
    for (int trial = 0; trial < 200; ++trial) {
        const LinearSpline s = random_spline(rng, 8, 5.0);
        const LinearSpline r = apply_G_phi(second_derivative(s));
        EXPECT_LT(affine_residual([&](double x) { return eval(s, x) - eval(r, x); }), 1e-10);
    }
}

TEST(Bv2Norm, Relu) { EXPECT_DOUBLE_EQ(bv2_norm(from_relu()), 2.0); }

TEST(Bv2Norm, Zero) { EXPECT_EQ(bv2_norm(LinearSpline(0.0, 0.0)), 0.0); }

TEST(Bv2Norm, Identity) { EXPECT_EQ(bv2_norm(LinearSpline::identity()), 1.0); }

TEST(Bv2Norm, SamplingBound) {
    Rng rng(46);
    for (int trial = 0; trial < 5000; ++trial) {
        const LinearSpline s = random_spline(rng, 6, 3.0);
        const double x = rng.uniform(-5.0, 5.0);
        EXPECT_LE(std::abs(eval(s, x)), (1.0 + 2.0 * std::abs(x)) * bv2_norm(s) * (1.0 + 1e-12) + 1e-12);
    }
}
