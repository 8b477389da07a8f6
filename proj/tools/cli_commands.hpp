#pragma once

// Subcommands of the deepspline tool. run_cli is kept separate from main so
// the tests can drive it with in-memory streams.

#include "deepspline/deepspline.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace deepspline::cli {

enum ExitCode : int { kOk = 0, kConfigError = 2, kDivergence = 3, kVerificationFailure = 4 };

namespace detail {

struct UsageError : Error {
    using Error::Error;
};

inline std::vector<Point> load_points(const std::string& path) {
    const Dataset d = load_csv(path, 1, 1);
    std::vector<Point> points;
    points.reserve(d.size());
    for (std::size_t m = 0; m < d.size(); ++m) points.push_back({d.inputs[m](0), d.targets[m](0)});
    return points;
}

inline std::ofstream open_output(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    return out;
}

inline std::string strip_extension(const std::string& path, const std::string& ext) {
    if (path.size() > ext.size() && path.compare(path.size() - ext.size(), ext.size(), ext) == 0) {
        return path.substr(0, path.size() - ext.size());
    }
    return path;
}

/// "0.1" or a log sweep "a:b:k" (k values from a to b, both > 0).
inline std::vector<double> parse_lambdas(const std::string& text) {
    auto number = [&](const std::string& s) {
        const auto v = deepspline::detail::parse_double(deepspline::detail::trim(s));
        if (!v || !std::isfinite(*v) || *v < 0.0) throw UsageError("invalid lambda '" + text + "'");
        return *v;
    };
    std::vector<std::string> parts;
    std::stringstream ss(text);
    for (std::string part; std::getline(ss, part, ':');) parts.push_back(part);
    if (parts.size() == 1) return {number(parts[0])};
    if (parts.size() != 3) throw UsageError("lambda sweep must look like a:b:k, got '" + text + "'");
    const double a = number(parts[0]);
    const double b = number(parts[1]);
    const auto k = deepspline::detail::parse_double(parts[2]);
    if (!(a > 0.0) || !(b > 0.0)) throw UsageError("lambda sweep endpoints must be > 0");
    if (!k || *k < 1.0 || *k != std::floor(*k)) throw UsageError("lambda sweep count must be a positive integer");
    const auto count = static_cast<std::size_t>(*k);
    if (count == 1) return {a};
    std::vector<double> out;
    const double la = std::log10(a);
    const double lb = std::log10(b);
    for (std::size_t i = 0; i < count; ++i) {
        out.push_back(std::pow(10.0, la + (lb - la) * static_cast<double>(i) / static_cast<double>(count - 1)));
    }
    out.front() = a;
    out.back() = b;
    return out;
}

inline LossKind parse_loss(const std::string& name) {
    if (name == "squared") return LossKind::squared;
    if (name == "logistic") return LossKind::logistic;
    throw UsageError("unknown loss '" + name + "' (expected squared or logistic)");
}

inline void write_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream out = open_output(path);
    out << j.dump(2) << '\n';
}

// Reads {"weights": [[[...]]...], "thresholds": [[...]...], "linear_output": bool}.
inline ReluNetwork load_relu_network(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path + ": " + e.what());
    }
    const auto& weights = deepspline::detail::field(j, "weights", path);
    const auto& thresholds = deepspline::detail::field(j, "thresholds", path);
    if (!weights.is_array() || !thresholds.is_array() || weights.size() != thresholds.size()) {
        throw ParseError(path + ": 'weights' and 'thresholds' must be arrays of equal length");
    }
    ReluNetwork net;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        const std::string where = path + ": weights[" + std::to_string(l) + "]";
        const auto& rows = weights[l];
        if (!rows.is_array() || rows.empty()) throw ParseError(where + ": expected a non-empty matrix");
        const auto first = deepspline::detail::numbers(rows[0], where);
        Eigen::MatrixXd W(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(first.size()));
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const auto row = deepspline::detail::numbers(rows[r], where);
            if (row.size() != first.size() || row.empty()) throw ParseError(where + ": ragged or empty rows");
            for (std::size_t c = 0; c < row.size(); ++c) W(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row[c];
        }
        const auto z = deepspline::detail::numbers(thresholds[l], path + ": thresholds[" + std::to_string(l) + "]");
        net.weights.push_back(W);
        net.thresholds.push_back(Eigen::Map<const Eigen::VectorXd>(z.data(), static_cast<Eigen::Index>(z.size())));
    }
    if (j.contains("linear_output")) {
        if (!j.at("linear_output").is_boolean()) throw ParseError(path + ": 'linear_output' must be a boolean");
        net.linear_output = j.at("linear_output").get<bool>();
    }
    for (std::size_t l = 1; l < net.weights.size(); ++l) {
        if (net.weights[l].cols() != net.weights[l - 1].rows()) {
            throw ParseError(path + ": layer " + std::to_string(l + 1) + " does not match the previous layer's width");
        }
    }
    return net;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Option structs, one per subcommand

struct Interp1dOptions {
    std::string data;
    std::size_t grid = 512;
    bool consolidate = false;
    bool sobolev = false;
    std::string out;
    std::string report;  // default: <out without .csv>.report.json
};

struct Fit1dOptions {
    std::string data;
    std::string lambda;
    std::size_t grid = 512;
    std::string out;  // empty: stdout
};

struct TrainOptions {
    std::string data;
    std::string arch;
    double lambda = 1e-3;
    double mu = 0.0;
    std::size_t epochs = 100;
    std::uint64_t seed = 0;
    double step = 1e-3;
    std::size_t batch = 0;
    std::size_t renorm = 0;
    double grid_lo = -2.0;
    double grid_hi = 2.0;
    std::size_t grid_count = 21;
    double momentum = 0.0;
    bool backtracking = false;
    bool knot_learning = false;
    bool absorb_inactive = false;
    std::string loss = "squared";
    double sparsify_tol = 1e-6;
    std::size_t threads = 1;
    std::string out;
    std::string history;  // default: <out without .json>.history.csv
};

struct EvalOptions {
    std::string model;
    std::string data;
    std::string loss = "squared";
};

struct ConvertOptions {
    std::string relu_weights;
    std::string out;
    std::size_t probes = 1000;
    double probe_range = 1.0;
    double tolerance = 1e-9;
    std::uint64_t seed = 0;
};

struct SynthOptions {
    std::string kind;
    std::size_t n = 100;
    double noise = 0.0;
    std::uint64_t seed = 0;
    std::string out;  // empty: stdout
};

struct DiagOptions {
    std::string model;
};

// ---------------------------------------------------------------------------
// Commands

inline int cmd_interp1d(const Interp1dOptions& o, std::ostream& out, std::ostream& err) {
    const InterpolationProblem problem(detail::load_points(o.data));
    KnotGrid grid = default_grid(problem.x_min(), problem.x_max(), o.grid);
    LinearSpline s = canonicalize(sparse_interpolate(problem, grid));
    if (o.consolidate) s = consolidate(s, problem);

    {
        std::ofstream csv = detail::open_output(o.out);
        write_breakpoints_csv(csv, s, problem.x_min(), problem.x_max());
    }
    nlohmann::json report = {{"tv2", tv2(s)},
                             {"secant_lower_bound", secant_lower_bound(problem)},
                             {"knot_count", s.knot_count()},
                             {"M", problem.size()}};
    if (o.sobolev) {
        const LinearSpline h1 = canonicalize(sobolev_interpolate(problem));
        const std::string path = detail::strip_extension(o.out, ".csv") + ".sobolev.csv";
        std::ofstream csv = detail::open_output(path);
        write_breakpoints_csv(csv, h1, problem.x_min(), problem.x_max());
        report["sobolev"] = {{"tv2", tv2(h1)}, {"knot_count", h1.knot_count()}, {"breakpoints", path}};
    }
    const std::string report_path =
        o.report.empty() ? detail::strip_extension(o.out, ".csv") + ".report.json" : o.report;
    detail::write_json(report_path, report);
    out << report.dump() << '\n';
    err << "interp1d: " << s.knot_count() << " knots, TV2 " << tv2(s) << '\n';
    return kOk;
}

inline int cmd_fit1d(const Fit1dOptions& o, std::ostream& out, std::ostream& err) {
    const std::vector<double> lambdas = detail::parse_lambdas(o.lambda);
    const FitProblem problem(detail::load_points(o.data));
    const KnotGrid grid = default_grid(problem.x_min(), problem.x_max(), o.grid);

    std::ostringstream csv;
    csv << "lambda,rss,tv2,knots\n";
    for (double lambda : lambdas) {
        const FitResult r = regularized_fit(problem, lambda, grid);
        if (!r.converged) err << "fit1d: lambda " << lambda << " did not reach the optimality tolerance\n";
        const LinearSpline s = canonicalize(r.spline);
        deepspline::detail::write_number(csv, lambda);
        csv << ',';
        deepspline::detail::write_number(csv, r.rss);
        csv << ',';
        deepspline::detail::write_number(csv, tv2(s));
        csv << ',' << s.knot_count() << '\n';
    }
    if (o.out.empty()) {
        out << csv.str();
    } else {
        std::ofstream file = detail::open_output(o.out);
        file << csv.str();
        err << "fit1d: wrote " << lambdas.size() << " rows to " << o.out << '\n';
    }
    return kOk;
}

inline int cmd_train(const TrainOptions& o, std::ostream& out, std::ostream& err) {
    const std::vector<std::size_t> nodes = parse_architecture(o.arch);
    TrainConfig cfg;
    cfg.lambda = o.lambda;
    cfg.mu = o.mu;
    cfg.epochs = o.epochs;
    cfg.seed = o.seed;
    cfg.step_size = o.step;
    cfg.batch_size = o.batch;
    cfg.renorm_every = o.renorm;
    cfg.grid = {o.grid_lo, o.grid_hi, o.grid_count};
    cfg.momentum = o.momentum;
    cfg.backtracking = o.backtracking;
    cfg.knot_learning = o.knot_learning;
    cfg.absorb_inactive = o.absorb_inactive;
    cfg.loss = detail::parse_loss(o.loss);
    cfg.sparsify_tol = o.sparsify_tol;
    cfg.threads = o.threads;
    cfg.validate();

    const Dataset data = load_csv(o.data, nodes.front(), nodes.back());
    if (data.empty()) throw Error("train: '" + o.data + "' has no data rows");
    const DeepSplineNet initial = init_network(nodes, cfg.grid, cfg.seed, cfg.normalized_mode());
    const TrainResult result = train(initial, data, cfg);
    for (const std::string& w : result.warnings) err << "train: warning: " << w << '\n';

    save_model(result.net, o.out, ModelMetadata{cfg.lambda, cfg.mu, cfg.seed});
    const std::string history_path =
        o.history.empty() ? detail::strip_extension(o.out, ".json") + ".history.csv" : o.history;
    {
        std::ofstream csv = detail::open_output(history_path);
        write_history_csv(csv, result.history);
    }
    const ObjectiveParts parts = objective(result.net, data, cfg);
    out << "objective " << parts.total << " data " << parts.data << " knots " << total_knot_count(result.net) << '\n';
    err << "train: wrote " << o.out << " and " << history_path << '\n';
    return kOk;
}

inline int cmd_eval(const EvalOptions& o, std::ostream& out, std::ostream& /*err*/) {
    const DeepSplineNet net = load_model(o.model);
    const LossKind loss = detail::parse_loss(o.loss);
    const Dataset data = load_csv(o.data, static_cast<std::size_t>(net.input_dim()),
                                  static_cast<std::size_t>(net.output_dim()));
    if (data.empty()) throw Error("eval: '" + o.data + "' has no data rows");
    const double mean_loss = data_term(net, data, loss) / static_cast<double>(data.size());
    out << "loss " << mean_loss << '\n';
    std::size_t start = 0;
    const std::vector<std::size_t> counts = knot_counts(net);
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const std::size_t width = net.layers[l].activations.size();
        std::size_t total = 0;
        out << "layer " << l + 1 << " knots";
        for (std::size_t n = 0; n < width; ++n) {
            out << ' ' << counts[start + n];
            total += counts[start + n];
        }
        out << " (total " << total << ")\n";
        start += width;
    }
    return kOk;
}

inline int cmd_convert(const ConvertOptions& o, std::ostream& out, std::ostream& err) {
    if (o.probes == 0) throw detail::UsageError("convert: --probes must be >= 1");
    const ReluNetwork relu_net = detail::load_relu_network(o.relu_weights);
    const DeepSplineNet net = from_relu_network(relu_net);

    Rng rng(o.seed);
    const Eigen::Index d = net.input_dim();
    double worst = 0.0;
    for (std::size_t i = 0; i < o.probes; ++i) {
        Eigen::VectorXd x(d);
        for (Eigen::Index k = 0; k < d; ++k) x(k) = rng.uniform(-o.probe_range, o.probe_range);
        const Eigen::VectorXd expected = relu_net(x);
        const Eigen::VectorXd got = predict(net, x);
        const double scale = std::max(1.0, expected.cwiseAbs().maxCoeff());
        worst = std::max(worst, (got - expected).cwiseAbs().maxCoeff() / scale);
    }
    out << "max relative deviation " << worst << " over " << o.probes << " probes\n";
    if (!(worst <= o.tolerance)) {
        err << "convert: verification failed, deviation " << worst << " exceeds " << o.tolerance << '\n';
        return kVerificationFailure;
    }
    save_model(net, o.out);
    err << "convert: wrote " << o.out << '\n';
    return kOk;
}

inline int cmd_synth(const SynthOptions& o, std::ostream& out, std::ostream& err) {
    Dataset data = synth(o.kind, o.n, o.noise, o.seed);
    if (data.input_dim() == 1) {
        data.names = {"x", "y"};
    } else {
        data.names = {"x1", "x2", "y"};
    }
    if (o.out.empty()) {
        write_csv(out, data);
    } else {
        std::ofstream file = detail::open_output(o.out);
        write_csv(file, data);
        err << "synth: wrote " << data.size() << " rows to " << o.out << '\n';
    }
    return kOk;
}

// Per-neuron native-space quantities: TV2, the BV2 norm, and the residual of
// rebuilding the activation from its second derivative (which must be affine).
inline int cmd_diag(const DiagOptions& o, std::ostream& out, std::ostream& /*err*/) {
    const DeepSplineNet net = load_model(o.model);
    out << "layer,neuron,knots,tv2,bv2_norm,lipschitz,reconstruction_curvature\n";
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        for (std::size_t n = 0; n < net.layers[l].activations.size(); ++n) {
            const LinearSpline& s = net.layers[l].activations[n];
            const LinearSpline rebuilt = apply_G_phi(second_derivative(s));
            // s - rebuilt is affine: its second differences vanish on any grid.
            double curvature = 0.0;
            const auto diff = [&](double x) { return eval(s, x) - eval(rebuilt, x); };
            for (int i = 0; i <= 20; ++i) {
                const double x = -2.0 + 0.2 * i;
                curvature = std::max(curvature, std::abs(diff(x - 0.1) - 2.0 * diff(x) + diff(x + 0.1)));
            }
            out << l + 1 << ',' << n + 1 << ',' << s.knot_count() << ',';
            deepspline::detail::write_number(out, tv2(s));
            out << ',';
            deepspline::detail::write_number(out, bv2_norm(s));
            out << ',';
            deepspline::detail::write_number(out, lipschitz_bound(s));
            out << ',';
            deepspline::detail::write_number(out, curvature);
            out << '\n';
        }
    }
    return kOk;
}

// ---------------------------------------------------------------------------
// Dispatcher

/// Parses `args` (without the program name) and runs one subcommand.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Deep spline networks: 1-D TV2 interpolation, sparse fitting and spline network training",
                 "deepspline"};
    app.require_subcommand(1);

    Interp1dOptions interp;
    auto* interp_cmd = app.add_subcommand("interp1d", "Minimum-TV2 interpolation of 1-D data");
    interp_cmd->add_option("--data", interp.data, "CSV with columns x,y")->required();
    interp_cmd->add_option("--grid", interp.grid, "Candidate knot count")->capture_default_str();
    interp_cmd->add_flag("--consolidate", interp.consolidate, "Merge same-sign adjacent knots when feasible");
    interp_cmd->add_flag("--sobolev", interp.sobolev, "Also write the H1 (connect-the-dots) interpolant");
    interp_cmd->add_option("--out", interp.out, "Breakpoint CSV path")->required();
    interp_cmd->add_option("--report", interp.report, "Report JSON path");

    Fit1dOptions fit;
    auto* fit_cmd = app.add_subcommand("fit1d", "TV2-regularized least squares, one row per lambda");
    fit_cmd->add_option("--data", fit.data, "CSV with columns x,y")->required();
    fit_cmd->add_option("--lambda", fit.lambda, "Value, or log sweep a:b:k")->required();
    fit_cmd->add_option("--grid", fit.grid, "Candidate knot count")->capture_default_str();
    fit_cmd->add_option("--out", fit.out, "Output CSV (default stdout)");

    TrainOptions tr;
    auto* train_cmd = app.add_subcommand("train", "Train a deep spline network");
    train_cmd->add_option("--data", tr.data, "CSV, inputs then targets")->required();
    train_cmd->add_option("--arch", tr.arch, "Layer widths, e.g. 1-4-1")->required();
    train_cmd->add_option("--lambda", tr.lambda, "TV2 weight")->capture_default_str();
    train_cmd->add_option("--mu", tr.mu, "Weight-decay weight")->capture_default_str();
    train_cmd->add_option("--epochs", tr.epochs)->capture_default_str();
    train_cmd->add_option("--seed", tr.seed)->capture_default_str();
    train_cmd->add_option("--step", tr.step, "Step size")->capture_default_str();
    train_cmd->add_option("--batch", tr.batch, "Mini-batch size (0: full batch)")->capture_default_str();
    train_cmd->add_option("--renorm", tr.renorm, "Renormalize every N steps (0: off)")->capture_default_str();
    train_cmd->add_option("--grid-lo", tr.grid_lo)->capture_default_str();
    train_cmd->add_option("--grid-hi", tr.grid_hi)->capture_default_str();
    train_cmd->add_option("--grid-count", tr.grid_count)->capture_default_str();
    train_cmd->add_option("--momentum", tr.momentum)->capture_default_str();
    train_cmd->add_flag("--backtracking", tr.backtracking, "Full-batch step-size backtracking");
    train_cmd->add_flag("--knot-learning", tr.knot_learning, "Also train knot positions");
    train_cmd->add_flag("--absorb-inactive", tr.absorb_inactive,
                        "Fold knots outside the observed pre-activation range into the affine part at the end");
    train_cmd->add_option("--loss", tr.loss, "squared or logistic")->capture_default_str();
    train_cmd->add_option("--sparsify-tol", tr.sparsify_tol)->capture_default_str();
    train_cmd->add_option("--threads", tr.threads)->capture_default_str();
    train_cmd->add_option("--out", tr.out, "Model JSON path")->required();
    train_cmd->add_option("--history", tr.history, "History CSV path");

    EvalOptions ev;
    auto* eval_cmd = app.add_subcommand("eval", "Mean loss and knot counts of a model on a dataset");
    eval_cmd->add_option("--model", ev.model)->required();
    eval_cmd->add_option("--data", ev.data)->required();
    eval_cmd->add_option("--loss", ev.loss)->capture_default_str();

    ConvertOptions conv;
    auto* convert_cmd = app.add_subcommand("convert", "Rewrite a ReLU network as a deep spline network");
    convert_cmd->add_option("--relu-weights", conv.relu_weights, "JSON {weights, thresholds, linear_output}")->required();
    convert_cmd->add_option("--out", conv.out, "Model JSON path")->required();
    convert_cmd->add_option("--probes", conv.probes)->capture_default_str();
    convert_cmd->add_option("--probe-range", conv.probe_range, "Probes are uniform in [-r, r]^d")->capture_default_str();
    convert_cmd->add_option("--tolerance", conv.tolerance)->capture_default_str();
    convert_cmd->add_option("--seed", conv.seed)->capture_default_str();

    SynthOptions syn;
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset");
    synth_cmd->add_option("--kind", syn.kind, "sine, step, spiral2d or hinge")->required();
    synth_cmd->add_option("--n", syn.n)->capture_default_str();
    synth_cmd->add_option("--noise", syn.noise)->capture_default_str();
    synth_cmd->add_option("--seed", syn.seed)->capture_default_str();
    synth_cmd->add_option("--out", syn.out, "Output CSV (default stdout)");

    DiagOptions dg;
    auto* diag_cmd = app.add_subcommand("diag", "Per-neuron TV2 and BV2 diagnostics of a model");
    diag_cmd->add_option("--model", dg.model)->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n";
        const auto subs = app.get_subcommands();
        err << (subs.empty() ? app.help() : subs.front()->help());
        return kConfigError;
    }

    try {
        if (*interp_cmd) return cmd_interp1d(interp, out, err);
        if (*fit_cmd) return cmd_fit1d(fit, out, err);
        if (*train_cmd) return cmd_train(tr, out, err);
        if (*eval_cmd) return cmd_eval(ev, out, err);
        if (*convert_cmd) return cmd_convert(conv, out, err);
        if (*synth_cmd) return cmd_synth(syn, out, err);
        if (*diag_cmd) return cmd_diag(dg, out, err);
    } catch (const DivergenceError& e) {
        err << "error: " << e.what() << '\n';
        return kDivergence;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kConfigError;
    }
    return kConfigError;
}

} // namespace deepspline::cli
