#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace deepspline;
using deepspline::testing::random_spline;

namespace {

const LinearSpline kRelu(0.0, 0.0, {0.0}, {1.0});

// Independent piecewise evaluation of a canonical spline: walk the pieces
// left to right, accumulating the slope.
double piecewise_eval(const LinearSpline& s, double x) {
    double value = s.b1() + s.b2() * x;
    for (std::size_t k = 0; k < s.knot_count(); ++k) {
        if (x > s.knots()[k]) value += s.coeffs()[k] * (x - s.knots()[k]);
    }
    return value;
}

} // namespace

TEST(Eval, ReluAtPositiveInput) { EXPECT_EQ(eval(kRelu, 2.0), 2.0); }

TEST(Eval, ReluAtNegativeInput) { EXPECT_EQ(eval(kRelu, -1.0), 0.0); }

TEST(Eval, HingeMatchesPointwiseMax) {
    const LinearSpline s(2.0, -1.0, {1.0}, {2.0});
    EXPECT_DOUBLE_EQ(eval(s, 3.0), std::max(3.0, 2.0 - 3.0));
    EXPECT_DOUBLE_EQ(eval(s, 3.0), 3.0);
}

TEST(Eval, CallOperatorAgreesWithEval) {
    Rng rng(4);
    for (int i = 0; i < 50; ++i) {
        const LinearSpline s = random_spline(rng);
        const double x = rng.uniform(-3.0, 3.0);
        EXPECT_EQ(s(x), eval(s, x));
        EXPECT_NEAR(eval(s, x), piecewise_eval(s, x), 1e-12);
    }
}

TEST(EvalDerivative, RightContinuousAtKnot) { EXPECT_EQ(eval_derivative(kRelu, 0.0), 1.0); }

TEST(EvalDerivative, ReluLeftOfKnot) { EXPECT_EQ(eval_derivative(kRelu, -0.5), 0.0); }

TEST(EvalDerivative, SumsSlopeContributions) {
    const LinearSpline s(0.0, 1.0, {1.0, 2.0}, {-1.0, -1.0});
    EXPECT_EQ(eval_derivative(s, 1.5), 0.0);
    EXPECT_EQ(eval_derivative(s, 2.5), -1.0);
    EXPECT_EQ(eval_derivative(s, 0.5), 1.0);
}

TEST(Tv2, ReluIsOne) { EXPECT_EQ(tv2(kRelu), 1.0); }

TEST(Tv2, AffineIsZero) { EXPECT_EQ(tv2(LinearSpline(3.0, -2.0)), 0.0); }

TEST(Tv2, IsL1NormOfCoefficients) { EXPECT_EQ(tv2(LinearSpline(0.0, 0.0, {0.0, 1.0}, {2.0, -3.0})), 5.0); }

TEST(Tv2, CanonicalizesDuplicateKnotsFirst) {
    // a ReLU written as two half-ReLUs at the same knot, plus a cancelling pair
    const LinearSpline s(0.0, 0.0, {0.0, 0.0, 1.0, 1.0}, {0.5, 0.5, 2.0, -2.0});
    EXPECT_EQ(tv2(s), 1.0);
}

TEST(Canonicalize, CancellingDuplicatesBecomeAffine) {
    const LinearSpline c = canonicalize(LinearSpline(0.0, 0.0, {1.0, 1.0}, {2.0, -2.0}), 0.0);
    EXPECT_EQ(c.knot_count(), 0u);
    EXPECT_TRUE(c.is_affine_representation());
}

TEST(Canonicalize, DropsTinyCoefficients) {
    const LinearSpline c = canonicalize(LinearSpline(0.0, 0.0, {0.0, 1.0}, {1e-12, 1.0}), 1e-9);
    ASSERT_EQ(c.knot_count(), 1u);
    EXPECT_EQ(c.knots()[0], 1.0);
    EXPECT_EQ(c.coeffs()[0], 1.0);
}

TEST(Canonicalize, SortsKnots) {
    const LinearSpline c = canonicalize(LinearSpline(0.0, 0.0, {2.0, 1.0}, {0.7, -0.4}), 0.0);
    ASSERT_EQ(c.knot_count(), 2u);
    EXPECT_EQ(c.knots()[0], 1.0);
    EXPECT_EQ(c.knots()[1], 2.0);
    EXPECT_EQ(c.coeffs()[0], -0.4);
    EXPECT_EQ(c.coeffs()[1], 0.7);
}

TEST(Canonicalize, DefaultToleranceIsOneNanometreScale) { EXPECT_EQ(kDefaultKnotTolerance, 1e-9); }

TEST(Canonicalize, RejectsNegativeTolerance) {
    EXPECT_THROW(canonicalize(kRelu, -1.0), std::invalid_argument);
}

TEST(Canonicalize, PreservesFunctionWithinTolerance) {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> knots;
        std::vector<double> coeffs;
        for (int k = 0; k < 8; ++k) {
            const double base = rng.uniform(-2.0, 2.0);
            knots.push_back(base);
            coeffs.push_back(rng.uniform(-1.0, 1.0));
            knots.push_back(base + rng.uniform(0.0, 1e-10));  // near-duplicate
            coeffs.push_back(rng.uniform(-1e-10, 1e-10));
        }
        const LinearSpline s(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), knots, coeffs);
        const double tol = 1e-9;
        const LinearSpline c = canonicalize(s, tol);
        EXPECT_TRUE(is_canonical(c, tol));
        for (int i = 0; i < 20; ++i) {
            const double x = rng.uniform(-3.0, 3.0);
            EXPECT_LE(std::abs(eval(c, x) - eval(s, x)), 16.0 * tol * (1.0 + std::abs(x)));
        }
    }
}

TEST(Canonicalize, NeverIncreasesTv2) {
    Rng rng(12);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> knots;
        std::vector<double> coeffs;
        for (int k = 0; k < 6; ++k) {
            knots.push_back(static_cast<double>(rng.below(4)));  // many exact duplicates
            coeffs.push_back(rng.uniform(-1.0, 1.0));
        }
        const LinearSpline s(0.0, 0.0, knots, coeffs);
        double raw = 0.0;
        for (double a : coeffs) raw += std::abs(a);
        EXPECT_LE(tv2(canonicalize(s, 0.0)), raw + 1e-15);
    }
}

TEST(RescaleInput, ReluDoubled) {
    const LinearSpline r = rescale_input(kRelu, 2.0);
    EXPECT_EQ(r.b2(), 0.0);
    ASSERT_EQ(r.knot_count(), 1u);
    EXPECT_EQ(r.knots()[0], 0.0);
    EXPECT_EQ(r.coeffs()[0], 2.0);
    EXPECT_EQ(eval(r, 1.0), 2.0);
}

TEST(RescaleInput, AffineStaysAffine) {
    const LinearSpline r = rescale_input(LinearSpline(1.0, -0.5), 4.0);
    EXPECT_TRUE(r.is_affine_representation());
    EXPECT_EQ(r.b1(), 1.0);
    EXPECT_EQ(r.b2(), -2.0);
}

TEST(RescaleInput, RelocatesKnots) {
    const LinearSpline r = rescale_input(LinearSpline(0.0, 0.0, {3.0}, {1.0}), 3.0);
    EXPECT_EQ(r.knots()[0], 1.0);
}

TEST(RescaleInput, RejectsNonPositiveScale) {
    EXPECT_THROW(rescale_input(kRelu, 0.0), std::invalid_argument);
    EXPECT_THROW(rescale_input(kRelu, -1.0), std::invalid_argument);
}

TEST(RescaleInput, MatchesComposedEvaluation) {
    Rng rng(13);
    for (int trial = 0; trial < 100; ++trial) {
        const LinearSpline s = random_spline(rng);
        const double c = rng.uniform(0.1, 5.0);
        const LinearSpline r = rescale_input(s, c);
        for (int i = 0; i < 10; ++i) {
            const double t = rng.uniform(-2.0, 2.0);
            EXPECT_NEAR(eval(r, t), eval(s, c * t), 1e-12 * (1.0 + std::abs(eval(s, c * t))));
        }
    }
}

TEST(RescaleInput, RoundTrip) {
    Rng rng(14);
    for (int trial = 0; trial < 100; ++trial) {
        const LinearSpline s = random_spline(rng);
        const double c = rng.uniform(0.1, 10.0);
        const LinearSpline back = rescale_input(rescale_input(s, c), 1.0 / c);
        ASSERT_EQ(back.knot_count(), s.knot_count());
        EXPECT_NEAR(back.b1(), s.b1(), 1e-12);
        EXPECT_NEAR(back.b2(), s.b2(), 1e-12);
        for (std::size_t k = 0; k < s.knot_count(); ++k) {
            EXPECT_NEAR(back.knots()[k], s.knots()[k], 1e-12);
            EXPECT_NEAR(back.coeffs()[k], s.coeffs()[k], 1e-12);
        }
    }
}

TEST(Constructors, ReluRecord) { EXPECT_EQ(from_relu(), kRelu); }

TEST(Constructors, PreluZeroIsRelu) { EXPECT_EQ(from_prelu(0.0), from_relu()); }

TEST(Constructors, PreluOneIsIdentity) {
    const LinearSpline c = canonicalize(from_prelu(1.0));
    EXPECT_EQ(c.knot_count(), 0u);
    EXPECT_EQ(c.b1(), 0.0);
    EXPECT_EQ(c.b2(), 1.0);
}

TEST(Constructors, PreluNegativeSide) { EXPECT_DOUBLE_EQ(eval(from_prelu(0.25), -2.0), -0.5); }

TEST(Constructors, PreluMatchesPiecewiseDefinition) {
    Rng rng(15);
    for (int i = 0; i < 100; ++i) {
        const double alpha = rng.uniform(-1.0, 1.0);
        const double x = rng.uniform(-3.0, 3.0);
        EXPECT_NEAR(eval(from_prelu(alpha), x), x >= 0.0 ? x : alpha * x, 1e-15);
    }
}

TEST(MaxoutPair, HingeRecord) {
    const LinearSpline s = from_maxout_pair(1.0, 0.0, -1.0, 2.0);
    EXPECT_EQ(s.b1(), 2.0);
    EXPECT_EQ(s.b2(), -1.0);
    ASSERT_EQ(s.knot_count(), 1u);
    EXPECT_EQ(s.knots()[0], 1.0);
    EXPECT_EQ(s.coeffs()[0], 2.0);
    EXPECT_EQ(eval(s, 0.0), 2.0);
    EXPECT_EQ(eval(s, 2.0), 2.0);
    EXPECT_EQ(eval(s, 1.0), 1.0);
}

TEST(MaxoutPair, EqualLinesGiveThatLine) {
    const LinearSpline s = from_maxout_pair(1.0, 0.0, 1.0, 0.0);
    EXPECT_TRUE(s.is_affine_representation());
    EXPECT_EQ(s.b1(), 0.0);
    EXPECT_EQ(s.b2(), 1.0);
}

TEST(MaxoutPair, EqualSlopesKeepDominantOffset) {
    const LinearSpline s = from_maxout_pair(0.5, -1.0, 0.5, 3.0);
    EXPECT_TRUE(s.is_affine_representation());
    EXPECT_EQ(s.b1(), 3.0);
    EXPECT_EQ(s.b2(), 0.5);
}

TEST(MaxoutPair, ZeroAndIdentityIsRelu) {
    const LinearSpline s = canonicalize(from_maxout_pair(0.0, 0.0, 1.0, 0.0));
    EXPECT_EQ(s, kRelu);
}

TEST(MaxoutPair, MatchesPointwiseMaxAtRandomPoints) {
    Rng rng(16);
    for (int trial = 0; trial < 20; ++trial) {
        const double s1 = rng.uniform(-2.0, 2.0);
        const double o1 = rng.uniform(-2.0, 2.0);
        const double s2 = rng.uniform(-2.0, 2.0);
        const double o2 = rng.uniform(-2.0, 2.0);
        const LinearSpline s = from_maxout_pair(s1, o1, s2, o2);
        for (int i = 0; i < 1000; ++i) {
            const double x = rng.uniform(-5.0, 5.0);
            const double expected = std::max(s1 * x + o1, s2 * x + o2);
            EXPECT_NEAR(eval(s, x), expected, 1e-12 * (1.0 + std::abs(expected)));
        }
    }
}

TEST(SplineProperties, LipschitzContinuity) {
    Rng rng(17);
    for (int trial = 0; trial < 500; ++trial) {
        const LinearSpline s = random_spline(rng);
        const double x = rng.uniform(-3.0, 3.0);
        const double h = rng.uniform(0.0, 1.0);
        EXPECT_LE(std::abs(eval(s, x + h) - eval(s, x)), lipschitz_bound(s) * h + 1e-12);
    }
}

TEST(SplineProperties, DerivativeMatchesCentralDifference) {
    Rng rng(18);
    const double h = 1e-6;
    for (int trial = 0; trial < 500; ++trial) {
        const LinearSpline s = random_spline(rng);
        const double x = rng.uniform(-3.0, 3.0);
        bool near_knot = false;
        for (double t : s.knots()) near_knot = near_knot || std::abs(x - t) < 10.0 * h;
        if (near_knot) continue;
        const double fd = (eval(s, x + h) - eval(s, x - h)) / (2.0 * h);
        const double d = eval_derivative(s, x);
        EXPECT_LE(std::abs(fd - d), 1e-6 * std::max(1.0, std::abs(d)));
    }
}

TEST(SplineProperties, BreakpointsOnlyAtNonzeroKnots) {
    // Second differences vanish away from the knots of a canonical spline.
    Rng rng(19);
    for (int trial = 0; trial < 100; ++trial) {
        const LinearSpline s = random_spline(rng);
        const double x = rng.uniform(-3.0, 3.0);
        const double h = 1e-3;
        bool near_knot = false;
        for (double t : s.knots()) near_knot = near_knot || std::abs(x - t) <= h;
        const double second = eval(s, x + h) - 2.0 * eval(s, x) + eval(s, x - h);
        if (!near_knot) EXPECT_NEAR(second, 0.0, 1e-12);
    }
}
