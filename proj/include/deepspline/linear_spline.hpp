#pragma once

// One-dimensional continuous piecewise-linear splines
//
//     f(x) = b1 + b2 x + sum_k a_k (x - tau_k)_+
//
// used as trainable neuron activations. Values are immutable once built;
// every operation below is a pure function returning a new spline.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace deepspline {

/// Absolute tolerance used when merging nearby knots or dropping tiny coefficients.
inline constexpr double kDefaultKnotTolerance = 1e-9;

class LinearSpline {
public:
    LinearSpline() = default;

    LinearSpline(double b1, double b2, std::vector<double> knots = {}, std::vector<double> coeffs = {})
        : b1_(b1), b2_(b2), knots_(std::move(knots)), coeffs_(std::move(coeffs)) {
        if (knots_.size() != coeffs_.size()) {
            throw std::invalid_argument("LinearSpline: knots and coeffs must have the same length");
        }
        if (!std::isfinite(b1_) || !std::isfinite(b2_)) {
            throw std::invalid_argument("LinearSpline: non-finite affine part");
        }
        for (std::size_t k = 0; k < knots_.size(); ++k) {
            if (!std::isfinite(knots_[k]) || !std::isfinite(coeffs_[k])) {
                throw std::invalid_argument("LinearSpline: non-finite knot or coefficient");
            }
        }
    }

    static LinearSpline affine(double b1, double b2) { return LinearSpline(b1, b2); }
    static LinearSpline identity() { return LinearSpline(0.0, 1.0); }

    double b1() const noexcept { return b1_; }
    double b2() const noexcept { return b2_; }
    std::span<const double> knots() const noexcept { return knots_; }
    std::span<const double> coeffs() const noexcept { return coeffs_; }
    std::size_t knot_count() const noexcept { return knots_.size(); }
    bool is_affine_representation() const noexcept { return knots_.empty(); }

    double operator()(double x) const noexcept;

    friend bool operator==(const LinearSpline&, const LinearSpline&) = default;

private:
    double b1_ = 0.0;
    double b2_ = 0.0;
    std::vector<double> knots_;
    std::vector<double> coeffs_;
};

inline double relu(double x) noexcept { return x > 0.0 ? x : 0.0; }

/// b1 + b2 x + sum_k a_k (x - tau_k)_+
inline double eval(const LinearSpline& s, double x) noexcept {
    double value = s.b1() + s.b2() * x;
    const auto knots = s.knots();
    const auto coeffs = s.coeffs();
    for (std::size_t k = 0; k < knots.size(); ++k) {
        value += coeffs[k] * relu(x - knots[k]);
    }
    return value;
}

inline double LinearSpline::operator()(double x) const noexcept { return eval(*this, x); }

/// Slope at x. Right-continuous: a knot at exactly x counts as already passed.
inline double eval_derivative(const LinearSpline& s, double x) noexcept {
    double slope = s.b2();
    const auto knots = s.knots();
    const auto coeffs = s.coeffs();
    for (std::size_t k = 0; k < knots.size(); ++k) {
        if (x >= knots[k]) slope += coeffs[k];
    }
    return slope;
}

/// Sorts knots, merges knots closer than `tol` (summing their coefficients)
/// and drops coefficients with |a| <= tol.
///
/// A merged group is placed at the coefficient-weighted mean of its members,
/// which is where the outer segments of a same-sign group intersect, so the
/// function is unchanged outside the group's span. Mixed-sign groups whose
/// weighted mean falls outside the span are clamped to it.
inline LinearSpline canonicalize(const LinearSpline& s, double tol = kDefaultKnotTolerance) {
    if (tol < 0.0) throw std::invalid_argument("canonicalize: tol must be >= 0");
    const auto knots = s.knots();
    const auto coeffs = s.coeffs();

    std::vector<std::size_t> order(knots.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return knots[i] < knots[j]; });

    std::vector<double> out_knots;
    std::vector<double> out_coeffs;
    std::size_t i = 0;
    while (i < order.size()) {
        const double first = knots[order[i]];
        double last = first;
        double sum = 0.0;
        double moment = 0.0;
        std::size_t j = i;
        while (j < order.size() && knots[order[j]] - last <= tol) {
            last = knots[order[j]];
            sum += coeffs[order[j]];
            moment += coeffs[order[j]] * knots[order[j]];
            ++j;
        }
        if (std::abs(sum) > tol) {
            double location = first;
            if (j - i > 1 && last > first) location = std::clamp(moment / sum, first, last);
            out_knots.push_back(location);
            out_coeffs.push_back(sum);
        }
        i = j;
    }
    return LinearSpline(s.b1(), s.b2(), std::move(out_knots), std::move(out_coeffs));
}

/// True when knots are strictly increasing (gaps > tol) and no |a_k| <= tol.
inline bool is_canonical(const LinearSpline& s, double tol = 0.0) {
    const auto knots = s.knots();
    const auto coeffs = s.coeffs();
    for (std::size_t k = 0; k < knots.size(); ++k) {
        if (std::abs(coeffs[k]) <= tol) return false;
        if (k > 0 && knots[k] - knots[k - 1] <= tol) return false;
    }
    return true;
}

/// Second-order total variation, i.e. the l1 norm of the knot coefficients
/// of the canonical representation (duplicate knots are merged first).
inline double tv2(const LinearSpline& s) {
    const LinearSpline c = canonicalize(s, 0.0);
    double total = 0.0;
    for (double a : c.coeffs()) total += std::abs(a);
    return total;
}

/// Global Lipschitz bound |b2| + sum |a_k|.
inline double lipschitz_bound(const LinearSpline& s) noexcept {
    double bound = std::abs(s.b2());
    for (double a : s.coeffs()) bound += std::abs(a);
    return bound;
}

/// Returns s' with s'(t) == s(c t). Used to absorb a row scale c = ||w|| into
/// the downstream activation.
inline LinearSpline rescale_input(const LinearSpline& s, double c) {
    if (!(c > 0.0) || !std::isfinite(c)) throw std::invalid_argument("rescale_input: scale must be positive and finite");
    std::vector<double> knots(s.knots().begin(), s.knots().end());
    std::vector<double> coeffs(s.coeffs().begin(), s.coeffs().end());
    for (double& t : knots) t /= c;
    for (double& a : coeffs) a *= c;
    return LinearSpline(s.b1(), c * s.b2(), std::move(knots), std::move(coeffs));
}

inline LinearSpline from_relu() { return LinearSpline(0.0, 0.0, {0.0}, {1.0}); }

/// PReLU with slope `negative_slope` for x < 0 and 1 for x >= 0.
inline LinearSpline from_prelu(double negative_slope) {
    return LinearSpline(0.0, negative_slope, {0.0}, {1.0 - negative_slope});
}

/// max(slope1 x + offset1, slope2 x + offset2) as a single-knot spline.
/// Equal slopes are degenerate: the line with the larger offset dominates
/// everywhere and is returned as an affine spline.
inline LinearSpline from_maxout_pair(double slope1, double offset1, double slope2, double offset2) {
    if (slope1 == slope2) return LinearSpline::affine(std::max(offset1, offset2), slope1);
    if (slope1 > slope2) {
        std::swap(slope1, slope2);
        std::swap(offset1, offset2);
    }
    const double jump = slope2 - slope1;
    return LinearSpline(offset1, slope1, {(offset1 - offset2) / jump}, {jump});
}

} // namespace deepspline
