#pragma once

// Two-phase revised primal simplex for standard-form linear programs
//
//     minimize c^T x   subject to  A x = b,  x >= 0.
//
// Sized for the short, wide problems produced by the 1-D interpolation solver
// (tens of rows, around a thousand columns). The basis matrix is refactorized
// at every iteration, which is cheap at this size and keeps rounding from
// accumulating. Pricing is Dantzig's rule, switching to Bland's rule after a
// run of degenerate pivots so the method terminates. The result is a basic
// (vertex) solution.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

namespace deepspline::lp {

enum class Status { optimal, infeasible, unbounded, iteration_limit };

struct Options {
    double tolerance = 1e-9;        // reduced-cost and primal feasibility tolerance
    double pivot_tolerance = 1e-9;  // smallest acceptable pivot magnitude
    std::size_t max_iterations = 100000;
    std::size_t degenerate_limit = 50;  // degenerate pivots before Bland's rule takes over
};

struct Result {
    Status status = Status::iteration_limit;
    Eigen::VectorXd x;
    double objective = std::numeric_limits<double>::quiet_NaN();
    std::vector<Eigen::Index> basis;  // column indices of the basic structural variables
    std::size_t iterations = 0;
};

namespace detail {

// Columns 0..n-1 are structural, n..n+m-1 artificial (signed unit vectors so
// the starting basis is feasible).
class RevisedSimplex {
public:
    RevisedSimplex(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const Options& opt)
        : A_(A), b_(b), opt_(opt), m_(A.rows()), n_(A.cols()), sign_(A.rows()), basis_(static_cast<std::size_t>(A.rows())) {
        for (Eigen::Index i = 0; i < m_; ++i) {
            sign_(i) = b(i) < 0.0 ? -1.0 : 1.0;
            basis_[static_cast<std::size_t>(i)] = n_ + i;
        }
        refactor();
    }

    bool is_artificial(Eigen::Index j) const { return j >= n_; }
    const std::vector<Eigen::Index>& basis() const { return basis_; }
    const Eigen::VectorXd& basic_values() const { return xb_; }

    Eigen::VectorXd column(Eigen::Index j) const {
        if (j < n_) return A_.col(j);
        Eigen::VectorXd e = Eigen::VectorXd::Zero(m_);
        e(j - n_) = sign_(j - n_);
        return e;
    }

    double objective(const Eigen::VectorXd& cost) const {
        double value = 0.0;
        for (Eigen::Index i = 0; i < m_; ++i) value += cost(basis_[static_cast<std::size_t>(i)]) * xb_(i);
        return value;
    }

    // Minimizes cost^T x over columns with allowed[j] true, starting from the
    // current basis.
    Status optimize(const Eigen::VectorXd& cost, const std::vector<bool>& allowed, std::size_t& iterations) {
        std::size_t degenerate_run = 0;
        bool bland = false;
        while (iterations < opt_.max_iterations) {
            Eigen::VectorXd cb(m_);
            for (Eigen::Index i = 0; i < m_; ++i) cb(i) = cost(basis_[static_cast<std::size_t>(i)]);
            const Eigen::VectorXd y = lu_.transpose().solve(cb);

            std::vector<bool> in_basis(static_cast<std::size_t>(n_ + m_), false);
            for (Eigen::Index j : basis_) in_basis[static_cast<std::size_t>(j)] = true;

            Eigen::Index entering = -1;
            double best = -opt_.tolerance;
            for (Eigen::Index j = 0; j < n_ + m_; ++j) {
                if (!allowed[static_cast<std::size_t>(j)] || in_basis[static_cast<std::size_t>(j)]) continue;
                const double colnorm = j < n_ ? 1.0 + A_.col(j).cwiseAbs().maxCoeff() : 1.0;
                const double d = cost(j) - (j < n_ ? y.dot(A_.col(j)) : sign_(j - n_) * y(j - n_));
                if (d < best * colnorm) {
                    entering = j;
                    if (bland) break;
                    best = d / colnorm;
                }
            }
            if (entering < 0) return Status::optimal;

            const Eigen::VectorXd dir = lu_.solve(column(entering));

            // Two-pass ratio test: find the largest step that keeps every basic
            // variable above -tolerance, then among rows that block within it
            // pick the largest pivot (Bland: the smallest basic index).
            double theta_max = std::numeric_limits<double>::infinity();
            for (Eigen::Index i = 0; i < m_; ++i) {
                if (dir(i) > opt_.pivot_tolerance) {
                    theta_max = std::min(theta_max, (xb_(i) + opt_.tolerance) / dir(i));
                } else if (is_artificial(basis_[static_cast<std::size_t>(i)]) && !allowed[static_cast<std::size_t>(basis_[static_cast<std::size_t>(i)])] &&
                           std::abs(dir(i)) > opt_.pivot_tolerance) {
                    theta_max = 0.0;  // artificial pinned at zero in phase II
                }
            }
            if (!std::isfinite(theta_max)) return Status::unbounded;

            Eigen::Index leaving = -1;
            double pivot = 0.0;
            for (Eigen::Index i = 0; i < m_; ++i) {
                const bool pinned = is_artificial(basis_[static_cast<std::size_t>(i)]) &&
                                    !allowed[static_cast<std::size_t>(basis_[static_cast<std::size_t>(i)])];
                const double a = pinned ? std::abs(dir(i)) : dir(i);
                if (a <= opt_.pivot_tolerance) continue;
                const double ratio = pinned ? 0.0 : std::max(0.0, xb_(i)) / a;
                if (ratio > theta_max) continue;
                const bool better = leaving < 0 ||
                                    (bland ? basis_[static_cast<std::size_t>(i)] < basis_[static_cast<std::size_t>(leaving)]
                                           : a > pivot);
                if (better) {
                    leaving = i;
                    pivot = a;
                }
            }
            if (leaving < 0) return Status::unbounded;

            const double step = std::max(0.0, xb_(leaving)) / std::abs(dir(leaving));
            basis_[static_cast<std::size_t>(leaving)] = entering;
            refactor();
            ++iterations;

            if (step <= opt_.tolerance) {
                if (++degenerate_run >= opt_.degenerate_limit) bland = true;
            } else {
                degenerate_run = 0;
            }
        }
        return Status::iteration_limit;
    }

    // Swaps a basic artificial at row `row` for structural column j.
    bool try_replace_artificial(Eigen::Index row) {
        Eigen::Index best = -1;
        double best_abs = 1e-7;
        std::vector<bool> in_basis(static_cast<std::size_t>(n_ + m_), false);
        for (Eigen::Index j : basis_) in_basis[static_cast<std::size_t>(j)] = true;
        Eigen::VectorXd e = Eigen::VectorXd::Zero(m_);
        e(row) = 1.0;
        const Eigen::VectorXd r = lu_.transpose().solve(e);  // row `row` of B^{-1}
        for (Eigen::Index j = 0; j < n_; ++j) {
            if (in_basis[static_cast<std::size_t>(j)]) continue;
            const double v = std::abs(r.dot(A_.col(j)));
            if (v > best_abs) {
                best_abs = v;
                best = j;
            }
        }
        if (best < 0) return false;
        basis_[static_cast<std::size_t>(row)] = best;
        refactor();
        return true;
    }

private:
    void refactor() {
        Eigen::MatrixXd B(m_, m_);
        for (Eigen::Index i = 0; i < m_; ++i) B.col(i) = column(basis_[static_cast<std::size_t>(i)]);
        lu_.compute(B);
        xb_ = lu_.solve(b_);
    }

    const Eigen::MatrixXd& A_;
    const Eigen::VectorXd& b_;
    Options opt_;
    Eigen::Index m_;
    Eigen::Index n_;
    Eigen::VectorXd sign_;
    std::vector<Eigen::Index> basis_;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
    Eigen::VectorXd xb_;
};

} // namespace detail

/// Solves the standard-form LP.
inline Result solve_standard_form(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const Eigen::VectorXd& c,
                                  const Options& opt = {}) {
    const Eigen::Index m = A.rows();
    const Eigen::Index n = A.cols();
    Result result;
    if (b.size() != m || c.size() != n) throw std::invalid_argument("solve_standard_form: dimension mismatch");
    if (m == 0) {
        result.x = Eigen::VectorXd::Zero(n);
        if ((c.array() < 0.0).any()) {
            result.status = Status::unbounded;
            return result;
        }
        result.status = Status::optimal;
        result.objective = 0.0;
        return result;
    }

    detail::RevisedSimplex simplex(A, b, opt);
    const double scale = 1.0 + b.cwiseAbs().maxCoeff();

    // Phase I: minimize the sum of artificials.
    Eigen::VectorXd phase1 = Eigen::VectorXd::Zero(n + m);
    phase1.tail(m).setOnes();
    std::vector<bool> allowed(static_cast<std::size_t>(n + m), true);
    Status status = simplex.optimize(phase1, allowed, result.iterations);
    if (status == Status::iteration_limit) {
        result.status = status;
        return result;
    }
    if (simplex.objective(phase1) > opt.tolerance * scale * 10.0) {
        result.status = Status::infeasible;
        return result;
    }
    for (Eigen::Index i = 0; i < m; ++i) {
        if (simplex.is_artificial(simplex.basis()[static_cast<std::size_t>(i)])) simplex.try_replace_artificial(i);
    }

    // Phase II over structural columns; leftover artificials stay pinned at zero.
    Eigen::VectorXd phase2 = Eigen::VectorXd::Zero(n + m);
    phase2.head(n) = c;
    for (Eigen::Index j = n; j < n + m; ++j) allowed[static_cast<std::size_t>(j)] = false;
    status = simplex.optimize(phase2, allowed, result.iterations);
    result.status = status;
    if (status != Status::optimal) return result;

    result.x = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < m; ++i) {
        const Eigen::Index j = simplex.basis()[static_cast<std::size_t>(i)];
        if (simplex.is_artificial(j)) continue;
        result.basis.push_back(j);
        result.x(j) = std::max(0.0, simplex.basic_values()(i));
    }
    result.objective = c.dot(result.x);
    return result;
}

} // namespace deepspline::lp
