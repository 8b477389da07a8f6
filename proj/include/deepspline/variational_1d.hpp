#pragma once

// One-dimensional variational problems over linear splines:
//
//  * minimum-TV2 interpolation, posed as an l1 linear program over a grid of
//    candidate knots (the optimum is a linear spline with at most M-2 knots);
//  * its closed-form optimal value (sum of secant-slope changes);
//  * TV2-regularized least squares by proximal gradient;
//  * Sobolev (H1) interpolation, i.e. connect-the-dots with flat tails.

#include "deepspline/error.hpp"
#include "deepspline/linear_spline.hpp"
#include "deepspline/simplex.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace deepspline {

struct Point {
    double x = 0.0;
    double y = 0.0;
};

/// Absolute tolerance for interpolation constraints and duplicate-abscissa checks.
inline constexpr double kFeasibilityTolerance = 1e-9;

/// Interpolation data: sorted, with duplicated abscissae collapsed. Duplicates
/// must carry the same ordinate, otherwise no function can interpolate them.
class InterpolationProblem {
public:
    explicit InterpolationProblem(std::vector<Point> points) {
        if (points.empty()) throw std::invalid_argument("InterpolationProblem: no data points");
        for (const Point& p : points) {
            if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
                throw std::invalid_argument("InterpolationProblem: non-finite data point");
            }
        }
        std::stable_sort(points.begin(), points.end(), [](const Point& a, const Point& b) { return a.x < b.x; });
        for (const Point& p : points) {
            if (!xs_.empty() && p.x == xs_.back()) {
                if (std::abs(p.y - ys_.back()) > kFeasibilityTolerance * std::max(1.0, std::abs(p.y))) {
                    throw InfeasibleError("InterpolationProblem: abscissa " + std::to_string(p.x) +
                                          " carries two different values");
                }
                continue;
            }
            xs_.push_back(p.x);
            ys_.push_back(p.y);
        }
    }

    std::size_t size() const noexcept { return xs_.size(); }
    const std::vector<double>& xs() const noexcept { return xs_; }
    const std::vector<double>& ys() const noexcept { return ys_; }
    double x_min() const noexcept { return xs_.front(); }
    double x_max() const noexcept { return xs_.back(); }

private:
    std::vector<double> xs_;
    std::vector<double> ys_;
};

/// Regression data: sorted by abscissa, duplicates allowed.
class FitProblem {
public:
    explicit FitProblem(std::vector<Point> points) {
        for (const Point& p : points) {
            if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
                throw std::invalid_argument("FitProblem: non-finite data point");
            }
        }
        std::stable_sort(points.begin(), points.end(), [](const Point& a, const Point& b) { return a.x < b.x; });
        for (const Point& p : points) {
            xs_.push_back(p.x);
            ys_.push_back(p.y);
        }
        if (xs_.empty() || xs_.front() == xs_.back()) {
            throw std::invalid_argument("FitProblem: need at least two distinct abscissae");
        }
    }

    std::size_t size() const noexcept { return xs_.size(); }
    const std::vector<double>& xs() const noexcept { return xs_; }
    const std::vector<double>& ys() const noexcept { return ys_; }
    double x_min() const noexcept { return xs_.front(); }
    double x_max() const noexcept { return xs_.back(); }

private:
    std::vector<double> xs_;
    std::vector<double> ys_;
};

/// Uniform candidate-knot grid on [lo, hi], optionally augmented with the data abscissae.
struct KnotGrid {
    double lo = 0.0;
    double hi = 1.0;
    std::size_t count = 512;
    bool snap_data_points = true;

    void validate() const {
        if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi)) {
            throw std::invalid_argument("KnotGrid: need finite lo < hi");
        }
        if (count < 2) throw std::invalid_argument("KnotGrid: count must be >= 2");
    }
};

/// 512 knots over the data range padded by 5% on each side, data abscissae snapped in.
inline KnotGrid default_grid(double x_min, double x_max, std::size_t count = 512, double padding = 0.05) {
    double range = x_max - x_min;
    if (!(range > 0.0)) range = 1.0;
    return KnotGrid{x_min - padding * range, x_max + padding * range, count, true};
}

/// Sorted candidate knots: the uniform grid, plus `data_xs` when snapping is on.
/// Uniform points closer than 1e-9 of the spacing to a data abscissa are replaced by it.
inline std::vector<double> candidate_knots(const KnotGrid& grid, const std::vector<double>& data_xs) {
    grid.validate();
    const double spacing = (grid.hi - grid.lo) / static_cast<double>(grid.count - 1);
    std::vector<double> knots;
    knots.reserve(grid.count + data_xs.size());
    for (std::size_t i = 0; i < grid.count; ++i) {
        knots.push_back(i + 1 == grid.count ? grid.hi : grid.lo + spacing * static_cast<double>(i));
    }
    if (grid.snap_data_points) {
        std::vector<double> sorted_xs(data_xs);
        std::sort(sorted_xs.begin(), sorted_xs.end());
        const double eps = 1e-9 * spacing;
        std::erase_if(knots, [&](double t) {
            auto it = std::lower_bound(sorted_xs.begin(), sorted_xs.end(), t - eps);
            return it != sorted_xs.end() && *it <= t + eps;
        });
        knots.insert(knots.end(), sorted_xs.begin(), sorted_xs.end());
        std::sort(knots.begin(), knots.end());
        knots.erase(std::unique(knots.begin(), knots.end()), knots.end());
    }
    return knots;
}

/// Secant slopes s_m = (y_{m+1} - y_m) / (x_{m+1} - x_m).
inline std::vector<double> secant_slopes(const InterpolationProblem& p) {
    std::vector<double> slopes;
    for (std::size_t m = 0; m + 1 < p.size(); ++m) {
        slopes.push_back((p.ys()[m + 1] - p.ys()[m]) / (p.xs()[m + 1] - p.xs()[m]));
    }
    return slopes;
}

/// Minimum of TV2 over all interpolants: sum_m |s_{m+1} - s_m|. Every
/// interpolant's derivative attains each secant slope (mean value theorem),
/// and connect-the-dots with linear extrapolation attains the bound.
inline double secant_lower_bound(const InterpolationProblem& p) {
    if (p.size() < 2) throw std::invalid_argument("secant_lower_bound: need at least 2 distinct points");
    const auto slopes = secant_slopes(p);
    double total = 0.0;
    for (std::size_t m = 0; m + 1 < slopes.size(); ++m) total += std::abs(slopes[m + 1] - slopes[m]);
    return total;
}

enum class Extrapolation { linear, constant };

/// Piecewise-linear interpolant with knots at the data abscissae. Linear
/// extrapolation continues the end segments; constant extrapolation flattens
/// both tails (knots at x_1 and x_M as well).
inline LinearSpline connect_the_dots(const InterpolationProblem& p, Extrapolation mode) {
    if (p.size() == 1) return LinearSpline::affine(p.ys()[0], 0.0);
    const auto& xs = p.xs();
    const auto& ys = p.ys();
    const auto slopes = secant_slopes(p);
    std::vector<double> knots;
    std::vector<double> coeffs;
    if (mode == Extrapolation::linear) {
        for (std::size_t m = 1; m + 1 < xs.size(); ++m) {
            knots.push_back(xs[m]);
            coeffs.push_back(slopes[m] - slopes[m - 1]);
        }
        return LinearSpline(ys[0] - slopes[0] * xs[0], slopes[0], std::move(knots), std::move(coeffs));
    }
    double previous = 0.0;
    double sum = 0.0;
    for (std::size_t m = 0; m + 1 < xs.size(); ++m) {
        knots.push_back(xs[m]);
        coeffs.push_back(slopes[m] - previous);
        sum += coeffs.back();
        previous = slopes[m];
    }
    // Last coefficient closes the telescoping sum so the terminal slope is 0.
    knots.push_back(xs.back());
    coeffs.push_back(-sum);
    return LinearSpline(ys[0], 0.0, std::move(knots), std::move(coeffs));
}

/// H1-optimal interpolant: connect-the-dots with constant extrapolation
/// (finite Dirichlet energy forces zero slope in both tails).
inline LinearSpline sobolev_interpolate(const InterpolationProblem& p) {
    return connect_the_dots(p, Extrapolation::constant);
}

namespace detail {

// Affine change of variables x' = (x - x0) / sx, y' = (y - y0) / sy that maps
// the data to unit scale before handing it to a solver.
struct Normalization {
    double x0 = 0.0;
    double sx = 1.0;
    double y0 = 0.0;
    double sy = 1.0;

    double to_x(double x) const { return (x - x0) / sx; }

    // Maps a spline in normalized coordinates back to original coordinates.
    LinearSpline to_original(double b1n, double b2n, const std::vector<double>& knots_n,
                             const std::vector<double>& coeffs_n) const {
        std::vector<double> knots;
        std::vector<double> coeffs;
        for (std::size_t k = 0; k < knots_n.size(); ++k) {
            knots.push_back(x0 + sx * knots_n[k]);
            coeffs.push_back(sy * coeffs_n[k] / sx);
        }
        return LinearSpline(y0 + sy * b1n - sy * b2n * x0 / sx, sy * b2n / sx, std::move(knots), std::move(coeffs));
    }
};

inline double max_abs_residual(const LinearSpline& s, const std::vector<double>& xs, const std::vector<double>& ys) {
    double worst = 0.0;
    for (std::size_t m = 0; m < xs.size(); ++m) worst = std::max(worst, std::abs(eval(s, xs[m]) - ys[m]));
    return worst;
}

} // namespace detail

/// Minimum-TV2 interpolation over the candidate knots of `grid`.
///
/// Solves  min ||a||_1  s.t.  b1 + b2 x_m + sum_k a_k (x_m - tau_k)_+ = y_m
/// as a standard-form LP (b and a split into positive and negative parts) and
/// returns the canonical vertex solution. When the grid contains the data
/// abscissae the optimum equals secant_lower_bound(p) and has at most M-2 knots.
inline LinearSpline sparse_interpolate(const InterpolationProblem& p, const KnotGrid& grid) {
    if (p.size() < 2) throw std::invalid_argument("sparse_interpolate: need at least 2 distinct points");
    if (grid.lo > p.x_min() || grid.hi < p.x_max()) {
        throw std::invalid_argument("sparse_interpolate: grid does not cover the data range");
    }
    const auto& xs = p.xs();
    const auto& ys = p.ys();

    detail::Normalization norm;
    norm.x0 = xs.front();
    norm.sx = xs.back() - xs.front();
    norm.y0 = ys.front();
    double y_spread = 0.0;
    for (double y : ys) y_spread = std::max(y_spread, std::abs(y - norm.y0));
    norm.sy = y_spread > 0.0 ? y_spread : 1.0;

    const std::vector<double> candidates = candidate_knots(grid, xs);
    std::vector<double> knots_n;
    for (double t : candidates) knots_n.push_back(norm.to_x(t));

    const auto m = static_cast<Eigen::Index>(xs.size());
    const auto P = static_cast<Eigen::Index>(knots_n.size());
    Eigen::MatrixXd A(m, 4 + 2 * P);
    Eigen::VectorXd b(m);
    Eigen::VectorXd c = Eigen::VectorXd::Zero(4 + 2 * P);
    c.tail(2 * P).setOnes();
    for (Eigen::Index i = 0; i < m; ++i) {
        const double x = norm.to_x(xs[static_cast<std::size_t>(i)]);
        b(i) = (ys[static_cast<std::size_t>(i)] - norm.y0) / norm.sy;
        A(i, 0) = 1.0;
        A(i, 1) = -1.0;
        A(i, 2) = x;
        A(i, 3) = -x;
        for (Eigen::Index k = 0; k < P; ++k) {
            const double phi = relu(x - knots_n[static_cast<std::size_t>(k)]);
            A(i, 4 + k) = phi;
            A(i, 4 + P + k) = -phi;
        }
    }

    const lp::Result result = lp::solve_standard_form(A, b, c);
    switch (result.status) {
    case lp::Status::optimal:
        break;
    case lp::Status::infeasible:
        throw InfeasibleError("sparse_interpolate: no interpolant on this knot grid");
    case lp::Status::unbounded:
        throw SolverError("sparse_interpolate: LP reported unbounded (cannot happen for l1 objective)");
    case lp::Status::iteration_limit:
        throw SolverError("sparse_interpolate: simplex iteration limit reached");
    }

    const Eigen::VectorXd& x = result.x;
    std::vector<double> coeffs_n(static_cast<std::size_t>(P));
    double largest = 0.0;
    for (Eigen::Index k = 0; k < P; ++k) {
        coeffs_n[static_cast<std::size_t>(k)] = x(4 + k) - x(4 + P + k);
        largest = std::max(largest, std::abs(coeffs_n[static_cast<std::size_t>(k)]));
    }
    const double drop_tol = kDefaultKnotTolerance * std::max(1.0, largest);
    for (double& a : coeffs_n) {
        if (std::abs(a) <= drop_tol) a = 0.0;
    }
    LinearSpline spline = canonicalize(norm.to_original(x(0) - x(1), x(2) - x(3), knots_n, coeffs_n), 0.0);

    const double residual = detail::max_abs_residual(spline, xs, ys);
    double y_max = 0.0;
    for (double y : ys) y_max = std::max(y_max, std::abs(y));
    if (residual > kFeasibilityTolerance * std::max(1.0, y_max)) {
        throw SolverError("sparse_interpolate: solution violates interpolation constraints by " +
                          std::to_string(residual));
    }
    return spline;
}

inline LinearSpline sparse_interpolate(const InterpolationProblem& p) {
    return sparse_interpolate(p, default_grid(p.x_min(), p.x_max()));
}

/// Greedy knot consolidation. Adjacent knots with coefficients of the same
/// sign are replaced by one knot at the intersection of the outer segments
/// (same total slope change, so TV2 is unchanged) whenever the result still
/// interpolates `p` within `tol`. Repeats until no merge is feasible.
inline LinearSpline consolidate(const LinearSpline& s, const InterpolationProblem& p,
                                double tol = kFeasibilityTolerance) {
    LinearSpline current = canonicalize(s, 0.0);
    bool merged = true;
    while (merged) {
        merged = false;
        const auto knots = current.knots();
        const auto coeffs = current.coeffs();
        for (std::size_t k = 0; k + 1 < knots.size(); ++k) {
            if ((coeffs[k] > 0.0) != (coeffs[k + 1] > 0.0)) continue;
            const double sum = coeffs[k] + coeffs[k + 1];
            const double location = (coeffs[k] * knots[k] + coeffs[k + 1] * knots[k + 1]) / sum;
            std::vector<double> new_knots(knots.begin(), knots.end());
            std::vector<double> new_coeffs(coeffs.begin(), coeffs.end());
            new_knots[k] = location;
            new_coeffs[k] = sum;
            new_knots.erase(new_knots.begin() + static_cast<std::ptrdiff_t>(k) + 1);
            new_coeffs.erase(new_coeffs.begin() + static_cast<std::ptrdiff_t>(k) + 1);
            LinearSpline candidate(current.b1(), current.b2(), std::move(new_knots), std::move(new_coeffs));
            if (detail::max_abs_residual(candidate, p.xs(), p.ys()) <= tol && tv2(candidate) <= tv2(current)) {
                current = std::move(candidate);
                merged = true;
                break;
            }
        }
    }
    return current;
}

struct OptimizerConfig {
    std::size_t max_steps = 100000;  // homotopy breakpoints
    double tolerance = 1e-9;         // relative KKT tolerance for the final certificate
};

struct FitResult {
    LinearSpline spline;
    double objective = 0.0;  // rss + lambda * tv2
    double rss = 0.0;
    std::size_t iterations = 0;  // homotopy breakpoints visited
    bool converged = false;      // reached lambda and passed the optimality check
};

/// Sum of squared residuals of `s` on the data.
inline double residual_sum_of_squares(const LinearSpline& s, const FitProblem& p) {
    double rss = 0.0;
    for (std::size_t m = 0; m < p.size(); ++m) {
        const double r = p.ys()[m] - eval(s, p.xs()[m]);
        rss += r * r;
    }
    return rss;
}

namespace detail {

// The regularized problem with the affine part profiled out: columns and
// targets are projected onto the orthogonal complement of span{1, x}, so the
// remaining problem is a plain lasso in the knot coefficients.
struct ProfiledDesign {
    Normalization norm;
    std::vector<double> knots_n;  // candidates whose projected column is nonzero
    Eigen::MatrixXd affine;       // [1, x'] on the data
    Eigen::MatrixXd basis;        // (x' - tau'_k)_+ on the data
    Eigen::MatrixXd projected;    // basis minus its affine least-squares fit
    Eigen::VectorXd y;
    Eigen::VectorXd y_projected;
    Eigen::HouseholderQR<Eigen::MatrixXd> affine_qr;

    ProfiledDesign(const FitProblem& p, const KnotGrid& grid) {
        const auto& xs = p.xs();
        norm.x0 = p.x_min();
        norm.sx = p.x_max() - p.x_min();
        const auto m = static_cast<Eigen::Index>(xs.size());
        affine.resize(m, 2);
        y.resize(m);
        for (Eigen::Index i = 0; i < m; ++i) {
            affine(i, 0) = 1.0;
            affine(i, 1) = norm.to_x(xs[static_cast<std::size_t>(i)]);
            y(i) = p.ys()[static_cast<std::size_t>(i)];
        }
        affine_qr.compute(affine);
        const Eigen::MatrixXd q = affine_qr.householderQ() * Eigen::MatrixXd::Identity(m, 2);
        y_projected = y - q * (q.transpose() * y);

        for (double t : relevant_knots(candidate_knots(grid, xs), xs)) knots_n.push_back(norm.to_x(t));
        const auto P = static_cast<Eigen::Index>(knots_n.size());
        basis.resize(m, P);
        for (Eigen::Index k = 0; k < P; ++k) {
            for (Eigen::Index i = 0; i < m; ++i) basis(i, k) = relu(affine(i, 1) - knots_n[static_cast<std::size_t>(k)]);
        }
        projected = basis - q * (q.transpose() * basis);
    }

    Eigen::VectorXd affine_fit(const Eigen::VectorXd& a) const { return affine_qr.solve(y - basis * a); }

    // Candidates that can matter. Knots at or left of x_1 give affine columns
    // and knots at or right of x_M give zero columns. Between consecutive
    // abscissae a knot's column is affine in its location, so a knot with
    // candidates (or x_1, x_M) on both sides within the same data interval
    // is a convex combination of them at no lower l1 cost.
    static std::vector<double> relevant_knots(const std::vector<double>& candidates, const std::vector<double>& xs) {
        std::vector<double> u(xs);
        u.erase(std::unique(u.begin(), u.end()), u.end());
        const auto is_candidate = [&](double x) { return std::binary_search(candidates.begin(), candidates.end(), x); };
        std::vector<double> kept;
        for (std::size_t i = 0; i + 1 < u.size(); ++i) {
            if (i > 0 && is_candidate(u[i])) kept.push_back(u[i]);
            const auto lo = std::upper_bound(candidates.begin(), candidates.end(), u[i]);
            const auto hi = std::lower_bound(candidates.begin(), candidates.end(), u[i + 1]);
            if (lo >= hi) continue;
            const bool left_covered = i == 0 || is_candidate(u[i]);
            const bool right_covered = i + 2 == u.size() || is_candidate(u[i + 1]);
            if (!left_covered) kept.push_back(*lo);
            if (!right_covered && (left_covered || hi - lo > 1)) kept.push_back(*(hi - 1));
        }
        return kept;
    }
};

} // namespace detail

/// Smallest lambda for which the regularized fit on `grid` has no knots:
/// max_k |2 <phi_k, r_ols>| with r_ols the ordinary least-squares residual.
inline double lambda_max(const FitProblem& p, const KnotGrid& grid) {
    const detail::ProfiledDesign d(p, grid);
    if (d.knots_n.empty()) return 0.0;
    return 2.0 * (d.basis.transpose() * d.y_projected).cwiseAbs().maxCoeff() * d.norm.sx;
}

/// TV2-regularized least squares over splines with knots on `grid`:
///
///     min  sum_m (y_m - f(x_m))^2 + lambda ||a||_1.
///
/// Solved exactly by the lasso homotopy: starting from the affine fit at
/// lambda_max, the solution path is followed downwards through its
/// breakpoints (knots entering or leaving the active set) to `lambda`. The
/// result is a vertex of the solution set, so its knots are at most the
/// number of distinct abscissae minus two. lambda = 0 is the interpolation
/// limit: the minimum-TV2 spline through the per-abscissa means.
inline FitResult regularized_fit(const FitProblem& p, double lambda, const KnotGrid& grid,
                                 const OptimizerConfig& opt = {}) {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("regularized_fit: lambda must be >= 0");
    FitResult result;

    if (lambda == 0.0) {
        std::vector<Point> means;
        const auto& xs = p.xs();
        for (std::size_t i = 0; i < xs.size();) {
            std::size_t j = i;
            double sum = 0.0;
            while (j < xs.size() && xs[j] == xs[i]) sum += p.ys()[j++];
            means.push_back({xs[i], sum / static_cast<double>(j - i)});
            i = j;
        }
        KnotGrid covering = grid;
        covering.lo = std::min(grid.lo, p.x_min());
        covering.hi = std::max(grid.hi, p.x_max());
        result.spline = sparse_interpolate(InterpolationProblem(std::move(means)), covering);
        result.rss = residual_sum_of_squares(result.spline, p);
        result.objective = result.rss;
        result.converged = true;
        return result;
    }

    const detail::ProfiledDesign d(p, grid);
    const double lambda_n = lambda / d.norm.sx;
    const Eigen::Index P = d.projected.cols();
    const Eigen::MatrixXd& X = d.projected;
    const Eigen::VectorXd& y = d.y_projected;
    const double scale = std::max(1.0, (2.0 * X.transpose() * y).cwiseAbs().maxCoeff());
    const double tie = 1e-12 * scale;

    std::vector<Eigen::Index> active;
    std::vector<double> signs;
    std::vector<bool> is_active(static_cast<std::size_t>(P), false);
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(P);

    auto active_matrix = [&] {
        Eigen::MatrixXd A(X.rows(), static_cast<Eigen::Index>(active.size()));
        for (std::size_t j = 0; j < active.size(); ++j) A.col(static_cast<Eigen::Index>(j)) = X.col(active[j]);
        return A;
    };
    // Active coefficients on the path at level lam: G^{-1} (A^T y - lam s / 2).
    auto solve_active = [&](const Eigen::MatrixXd& A, double lam, Eigen::VectorXd& coef, Eigen::VectorXd& slope) {
        if (A.cols() == 0) {
            coef.resize(0);
            slope.resize(0);
            return;
        }
        const Eigen::MatrixXd G = A.transpose() * A;
        const Eigen::LDLT<Eigen::MatrixXd> ldlt(G);
        Eigen::VectorXd s(static_cast<Eigen::Index>(signs.size()));
        for (std::size_t j = 0; j < signs.size(); ++j) s(static_cast<Eigen::Index>(j)) = signs[j];
        slope = 0.5 * ldlt.solve(s);  // d coef / d(-lam)
        coef = ldlt.solve(A.transpose() * y) - lam * slope;
    };

    Eigen::VectorXd corr = 2.0 * X.transpose() * y;
    double level = P > 0 ? corr.cwiseAbs().maxCoeff() : 0.0;
    if (level <= lambda_n) {
        level = lambda_n;
        result.converged = true;
    } else {
        // Seed the active set with every column attaining the maximum.
        for (Eigen::Index k = 0; k < P; ++k) {
            if (std::abs(corr(k)) >= level - tie) {
                active.push_back(k);
                signs.push_back(corr(k) > 0.0 ? 1.0 : -1.0);
                is_active[static_cast<std::size_t>(k)] = true;
                break;
            }
        }
    }

    Eigen::VectorXd coef;
    Eigen::VectorXd slope;
    while (!result.converged && result.iterations < opt.max_steps) {
        ++result.iterations;
        const Eigen::MatrixXd A = active_matrix();
        solve_active(A, level, coef, slope);
        const Eigen::VectorXd drift = 2.0 * X.transpose() * (A * slope);  // d corr / d(-lam)

        // Largest admissible decrease of the level before the next event.
        double step = level - lambda_n;
        Eigen::Index event = -1;
        bool entering = false;
        double entering_sign = 0.0;
        for (Eigen::Index k = 0; k < P; ++k) {
            if (is_active[static_cast<std::size_t>(k)]) continue;
            const double c = 2.0 * X.col(k).dot(y - A * coef);
            for (double sign : {1.0, -1.0}) {
                // Gap to the level, (level - t) - sign * (c - t drift), closes at rate denom.
                const double denom = 1.0 - sign * drift(k);
                if (denom <= 0.0) continue;
                const double t = std::max(0.0, (level - sign * c) / denom);
                if (t < step) {
                    step = t;
                    event = k;
                    entering = true;
                    entering_sign = sign;
                }
            }
        }
        for (std::size_t j = 0; j < active.size(); ++j) {
            const auto jj = static_cast<Eigen::Index>(j);
            // Only a coefficient heading towards zero (or already past it) leaves.
            if (slope(jj) * signs[j] >= 0.0) continue;
            const double t = std::max(0.0, -coef(jj) / slope(jj));
            if (t < step) {
                step = t;
                event = jj;
                entering = false;
            }
        }

        level -= step;
        if (event < 0) {
            level = lambda_n;
            result.converged = true;
            break;
        }
        if (entering) {
            // A column already in the span of the active set cannot change the fit.
            const Eigen::VectorXd col = X.col(event);
            const bool in_span = !active.empty() &&
                                 (A * A.colPivHouseholderQr().solve(col) - col).norm() <= 1e-10 * std::max(1.0, col.norm());
            if (in_span) {
                is_active[static_cast<std::size_t>(event)] = true;  // parked: never enters
                continue;
            }
            active.push_back(event);
            signs.push_back(entering_sign);
            is_active[static_cast<std::size_t>(event)] = true;
        } else {
            const auto j = static_cast<std::size_t>(event);
            is_active[static_cast<std::size_t>(active[j])] = false;
            active.erase(active.begin() + static_cast<std::ptrdiff_t>(j));
            signs.erase(signs.begin() + static_cast<std::ptrdiff_t>(j));
        }
    }

    if (!active.empty()) {
        solve_active(active_matrix(), lambda_n, coef, slope);
        for (std::size_t j = 0; j < active.size(); ++j) beta(active[j]) = coef(static_cast<Eigen::Index>(j));
    }

    // Optimality certificate: sign consistency on the support, bounded
    // correlations elsewhere.
    const Eigen::VectorXd final_corr = 2.0 * X.transpose() * (y - X * beta);
    const double slack = opt.tolerance * scale;
    bool certified = result.converged;
    for (Eigen::Index k = 0; k < P; ++k) {
        if (beta(k) != 0.0) {
            if (std::abs(final_corr(k) - lambda_n * (beta(k) > 0.0 ? 1.0 : -1.0)) > slack) certified = false;
        } else if (std::abs(final_corr(k)) > lambda_n + slack) {
            certified = false;
        }
    }
    result.converged = certified;

    std::vector<double> coeffs_n(beta.data(), beta.data() + P);
    const Eigen::VectorXd b = d.affine_fit(beta);
    result.spline = canonicalize(d.norm.to_original(b(0), b(1), d.knots_n, coeffs_n), 0.0);
    result.rss = residual_sum_of_squares(result.spline, p);
    result.objective = result.rss + lambda * tv2(result.spline);
    return result;
}

inline FitResult regularized_fit(const FitProblem& p, double lambda, const OptimizerConfig& opt = {}) {
    return regularized_fit(p, lambda, default_grid(p.x_min(), p.x_max()), opt);
}

} // namespace deepspline
