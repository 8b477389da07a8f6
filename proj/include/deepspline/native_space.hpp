#pragma once

// Computable pieces of the BV2 native space: the kernel g(x, y) of the
// right inverse of D^2 with boundary functionals f(0) and f(1) - f(0), its
// action on finite sums of Diracs, and the BV2 norm.

#include "deepspline/linear_spline.hpp"

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

namespace deepspline {

struct DiracAtom {
    double location = 0.0;
    double weight = 0.0;
};

/// Finite sum of weighted Diracs, sum_k a_k delta(. - tau_k).
struct DiracMeasure {
    std::vector<DiracAtom> atoms;

    double total_variation() const noexcept {
        double tv = 0.0;
        for (const DiracAtom& atom : atoms) tv += std::abs(atom.weight);
        return tv;
    }
};

/// g(x, y) = (x - y)_+ - (1 - x)(-y)_+ - x (1 - y)_+
/// Evaluated piecewise in y so that it is exactly zero off its support.
inline double g_phi(double x, double y) noexcept {
    if (y < 0.0) return relu(y - x);
    if (y > 1.0) return relu(x - y);
    return relu(x - y) - x * (1.0 - y);
}

/// x -> sum_k a_k g(x, tau_k), represented exactly. In x, each g(., tau) is a
/// ReLU at tau plus the affine correction -(-tau)_+ + x ((-tau)_+ - (1 - tau)_+),
/// so the result satisfies f(0) = 0 and f(1) = 0.
inline LinearSpline apply_G_phi(const DiracMeasure& w) {
    double b1 = 0.0;
    double b2 = 0.0;
    std::vector<double> knots;
    std::vector<double> coeffs;
    for (const DiracAtom& atom : w.atoms) {
        const double left = relu(-atom.location);
        const double right = relu(1.0 - atom.location);
        b1 -= atom.weight * left;
        b2 += atom.weight * (left - right);
        knots.push_back(atom.location);
        coeffs.push_back(atom.weight);
    }
    return LinearSpline(b1, b2, std::move(knots), std::move(coeffs));
}

/// D^2 s = sum_k a_k delta(. - tau_k).
inline DiracMeasure second_derivative(const LinearSpline& s) {
    DiracMeasure w;
    const auto knots = s.knots();
    const auto coeffs = s.coeffs();
    for (std::size_t k = 0; k < knots.size(); ++k) w.atoms.push_back({knots[k], coeffs[k]});
    return w;
}

/// ||D^2 f||_M + sqrt(f(0)^2 + (f(1) - f(0))^2)
inline double bv2_norm(const LinearSpline& s) {
    const double f0 = eval(s, 0.0);
    const double f1 = eval(s, 1.0);
    return tv2(s) + std::hypot(f0, f1 - f0);
}

} // namespace deepspline
