// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include "test_support.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

using namespace deepspline;
using deepspline::testing::random_net;
using deepspline::testing::random_point;
using deepspline::testing::random_relu_network;
using deepspline::testing::random_spline;

namespace {

struct Outcome {
    bool passed = false;
    std::string detail;
};

std::vector<Point> random_problem(Rng& rng, std::size_t m) {
    std::vector<double> xs;
    while (xs.size() < m) {
        const double x = rng.uniform(-3.0, 3.0);
        if (std::none_of(xs.begin(), xs.end(), [&](double v) { return std::abs(v - x) < 1e-3; })) xs.push_back(x);
    }
    std::vector<Point> pts;
    for (double x : xs) pts.push_back({x, rng.uniform(-2.0, 2.0)});
    return pts;
}

double max_residual(const LinearSpline& s, const InterpolationProblem& p) {
    double worst = 0.0;
    for (std::size_t m = 0; m < p.size(); ++m) worst = std::max(worst, std::abs(eval(s, p.xs()[m]) - p.ys()[m]));
    return worst;
}

// 1. TV2 identities
Outcome tv2_identities() {
    Rng rng(1001);
    bool ok = tv2(from_relu()) == 1.0;
    for (int i = 0; i < 1000; ++i) ok = ok && tv2(LinearSpline::affine(rng.normal(), rng.normal())) == 0.0;
    ok = ok && tv2(LinearSpline(0.5, -2.0, {-1.0, 0.0, 3.0}, {0.0, 0.0, 0.0})) == 0.0;
    return {ok, "tv2(relu) = " + std::to_string(tv2(from_relu()))};
}

// 2. LP optimum equals the secant lower bound
Outcome sparse_interpolation_suite() {
    Rng rng(1002);
    int optimal = 0;
    int sparse = 0;
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t m = 3 + rng.below(8);
        const InterpolationProblem p(random_problem(rng, m));
        const LinearSpline s = canonicalize(sparse_interpolate(p, default_grid(p.x_min(), p.x_max(), 512)));
        const double bound = secant_lower_bound(p);
        const double rel = std::abs(tv2(s) - bound) / std::max(bound, 1e-300);
        worst = std::max(worst, rel);
        optimal += rel <= 1e-7;
        sparse += s.knot_count() <= m - 2;
    }
    std::ostringstream d;
    d << optimal << "/200 optimal (worst relative gap " << worst << "), " << sparse << "/200 with K <= M-2";
    return {optimal == 200 && sparse == 200, d.str()};
}

// 3. Four-point instance with two optimal solutions
Outcome four_point_instance() {
    const InterpolationProblem p({{0, 0}, {1, 1}, {2, 1}, {3, 0}});
    const LinearSpline dots = connect_the_dots(p, Extrapolation::linear);
    const LinearSpline single(0.0, 1.0, {1.5}, {-2.0});
    const LinearSpline merged = canonicalize(consolidate(dots, p));
    bool ok = dots.knot_count() == 2 && std::abs(tv2(dots) - 2.0) <= 1e-9;
    ok = ok && std::abs(tv2(single) - 2.0) <= 1e-9 && max_residual(single, p) <= 1e-9;
    ok = ok && merged.knot_count() == 1 && std::abs(merged.knots()[0] - 1.5) <= 1e-9;
    ok = ok && std::abs(tv2(merged) - 2.0) <= 1e-9 && max_residual(merged, p) <= 1e-9;
    for (double x : p.xs()) ok = ok && std::abs(x - 1.5) > 1e-9;
    std::ostringstream d;
    d << "consolidated knot " << (merged.knot_count() ? merged.knots()[0] : NAN) << ", TV2 " << tv2(merged);
    return {ok, d.str()};
}

// 4. Sobolev interpolation
Outcome sobolev_suite() {
    Rng rng(1004);
    double residual = 0.0;
    double coeff_sum = 0.0;
    double gap = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const InterpolationProblem p(random_problem(rng, 2 + rng.below(12)));
        const LinearSpline h = sobolev_interpolate(p);
        const LinearSpline dots = connect_the_dots(p, Extrapolation::linear);
        residual = std::max(residual, max_residual(h, p));
        double sum = 0.0;
        for (double a : h.coeffs()) sum += a;
        coeff_sum = std::max(coeff_sum, std::abs(sum));
        for (int i = 0; i <= 200; ++i) {
            const double x = p.x_min() + (p.x_max() - p.x_min()) * i / 200.0;
            gap = std::max(gap, std::abs(eval(h, x) - eval(dots, x)));
        }
    }
    std::ostringstream d;
    d << "residual " << residual << ", |sum a| " << coeff_sum << ", max gap to connect-the-dots " << gap;
    return {residual <= 1e-10 && coeff_sum <= 1e-12 && gap <= 1e-10, d.str()};
}

// 5. ReLU networks rewritten as spline networks
Outcome relu_equivalence() {
    Rng rng(1005);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::size_t> nodes{1 + rng.below(8)};
        const std::size_t depth = 1 + rng.below(3);
        for (std::size_t l = 0; l < depth; ++l) nodes.push_back(1 + rng.below(16));
        nodes.push_back(1 + rng.below(4));
        if (trial == 0) nodes = {8, 16, 16, 4};
        const ReluNetwork relu = random_relu_network(rng, nodes, trial % 2 == 0);
        const DeepSplineNet net = from_relu_network(relu);
        for (int i = 0; i < 1000; ++i) {
            const Eigen::VectorXd x = random_point(rng, static_cast<Eigen::Index>(nodes.front()), 2.0);
            worst = std::max(worst, (predict(net, x) - relu(x)).cwiseAbs().maxCoeff());
        }
    }
    std::ostringstream d;
    d << "max abs error " << worst;
    return {worst <= 1e-12, d.str()};
}

// 6. Backward pass against central differences
Outcome gradient_suite() {
    Rng rng(1006);
    double worst = 0.0;
    double knot_worst = 0.0;
    std::size_t used = 0;
    int passed = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t in = 1 + rng.below(3);
        const DeepSplineNet net = random_net(rng, {in, 2 + rng.below(3), 1 + rng.below(2)}, 4, false);
        Dataset d;
        for (int m = 0; m < 4; ++m) {
            d.inputs.push_back(random_point(rng, static_cast<Eigen::Index>(in)));
            d.targets.push_back(random_point(rng, net.output_dim()));
        }
        const GradientCheckReport r = gradient_check(net, d, 1e-6);
        worst = std::max(worst, r.max_relative_error);
        knot_worst = std::max(knot_worst, r.max_error_knot);
        used += r.samples_used;
        passed += r.passed || r.samples_used == 0;
    }
    std::ostringstream d;
    d << passed << "/50 nets, max relative error " << worst << " (knots " << knot_worst << "), " << used
      << " samples used";
    return {passed == 50 && used > 0, d.str()};
}

// 7. Kernel of the native-space construction
Outcome kernel_suite() {
    Rng rng(1007);
    bool support = true;
    bool bound = true;
    for (int i = 0; i < 100000; ++i) {
        const double x = rng.uniform(-5.0, 5.0);
        const double y = rng.uniform(-6.0, 6.0);
        const double g = g_phi(x, y);
        bound = bound && std::abs(g) <= std::abs(x);
        if (y < std::min(x, 0.0) || y > std::max(x, 1.0)) support = support && g == 0.0;
    }
    double boundary = 0.0;
    double affine = 0.0;
    for (int trial = 0; trial < 500; ++trial) {
        DiracMeasure w;
        const std::size_t atoms = 1 + rng.below(8);
        for (std::size_t k = 0; k < atoms; ++k) w.atoms.push_back({rng.uniform(-3.0, 3.0), rng.uniform(-2.0, 2.0)});
        const LinearSpline f = apply_G_phi(w);
        boundary = std::max({boundary, std::abs(eval(f, 0.0)), std::abs(eval(f, 1.0))});

        // s - G{D2 s} must be affine: compare it with its least-squares line.
        const LinearSpline s = random_spline(rng, 8, 4.0);
        const LinearSpline r = apply_G_phi(second_derivative(s));
        Eigen::MatrixXd X(1001, 2);
        Eigen::VectorXd y(1001);
        for (Eigen::Index i = 0; i < 1001; ++i) {
            const double x = -10.0 + 0.02 * static_cast<double>(i);
            X(i, 0) = 1.0;
            X(i, 1) = x;
            y(i) = eval(s, x) - eval(r, x);
        }
        const Eigen::VectorXd beta = X.colPivHouseholderQr().solve(y);
        affine = std::max(affine, (X * beta - y).cwiseAbs().maxCoeff());
    }
    int violations = 0;
    for (int i = 0; i < 10000; ++i) {
        const LinearSpline s = random_spline(rng, 6, 3.0);
        const double x = rng.uniform(-6.0, 6.0);
        if (std::abs(eval(s, x)) > (1.0 + 2.0 * std::abs(x)) * bv2_norm(s) * (1.0 + 1e-12) + 1e-14) ++violations;
    }
    std::ostringstream d;
    d << "support " << (support ? "ok" : "violated") << ", bound " << (bound ? "ok" : "violated") << ", boundary "
      << boundary << ", affine residual " << affine << ", sampling-bound violations " << violations;
    return {support && bound && boundary <= 1e-12 && affine < 1e-10 && violations == 0, d.str()};
}

// 8. Knot count along a lambda path
Outcome sparsity_path() {
    int trend = 0;
    int affine_at_top = 0;
    std::ostringstream d;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Dataset data = synth(SynthKind::sine, 50, 0.1, seed);
        std::vector<Point> pts;
        for (std::size_t m = 0; m < data.size(); ++m) pts.push_back({data.inputs[m](0), data.targets[m](0)});
        const FitProblem problem(pts);
        const KnotGrid grid = default_grid(0.0, 1.0, 512);
        std::vector<std::size_t> knots;
        for (int i = 0; i < 8; ++i) {
            const double lambda = std::pow(10.0, -4.0 + 5.0 * i / 7.0);
            knots.push_back(canonicalize(regularized_fit(problem, lambda, grid).spline, 1e-9).knot_count());
        }
        trend += std::is_sorted(knots.rbegin(), knots.rend());
        affine_at_top += knots.back() == 0;
        if (seed == 0) {
            d << "seed 0 knots";
            for (std::size_t k : knots) d << ' ' << k;
            d << "; ";
        }
    }
    d << trend << "/10 seeds nonincreasing, " << affine_at_top << "/10 affine at the largest lambda";
    return {trend >= 8 && affine_at_top == 10, d.str()};
}

// 9. Hinge target learned by a single spline neuron
Outcome hinge_representability() {
    int passed = 0;
    double worst_loss = 0.0;
    std::ostringstream d;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Dataset data = synth(SynthKind::hinge, 41, 0.0, seed);
        TrainConfig cfg;
        cfg.lambda = 1e-2;
        cfg.epochs = 6000;
        cfg.seed = seed;
        cfg.step_size = 0.01;
        cfg.renorm_every = 1;
        cfg.backtracking = true;
        cfg.momentum = 0.9;
        cfg.absorb_inactive = true;
        cfg.grid = {-2.0, 2.0, 9};
        const DeepSplineNet initial = init_network({1, 1, 1}, cfg.grid, seed, true);
        const TrainResult result = train(initial, data, cfg);
        const double loss = data_term(result.net, data, LossKind::squared) / static_cast<double>(data.size());
        const std::size_t k = sparsify(result.net, 1e-6).net.layers[0].activations[0].knot_count();
        worst_loss = std::max(worst_loss, loss);
        passed += loss < 1e-3 && k == 1;
    }
    d << passed << "/10 seeds with loss < 1e-3 and K = 1 (worst loss " << worst_loss << ")";
    return {passed >= 7, d.str()};
}

// 10. Spline networks are continuous piecewise-linear
Outcome cpwl_composition() {
    Rng rng(1010);
    int passed = 0;
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const DeepSplineNet net = random_net(rng, {1, 2 + rng.below(5), 2 + rng.below(5), 1}, 5, false);
        const CpwlReport r = cpwl_check(net, -2.0, 2.0);
        worst = std::max(worst, r.max_deviation / std::max(r.scale, 1e-300));
        passed += r.passed;
    }
    std::ostringstream d;
    d << passed << "/20 nets, worst relative deviation " << worst;
    return {passed == 20, d.str()};
}

} // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"tv2 identities", tv2_identities},
        {"sparse interpolation meets the secant bound", sparse_interpolation_suite},
        {"four-point instance", four_point_instance},
        {"sobolev interpolation", sobolev_suite},
        {"relu equivalence", relu_equivalence},
        {"gradient check", gradient_suite},
        {"kernel suite", kernel_suite},
        {"sparsity path", sparsity_path},
        {"hinge representability", hinge_representability},
        {"cpwl composition", cpwl_composition},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        failures += !o.passed;
        std::printf("%s criterion %zu (%s): %s [%.2fs]\n", o.passed ? "PASS" : "FAIL", i + 1,
                    criteria[i].first.c_str(), o.detail.c_str(), secs);
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
