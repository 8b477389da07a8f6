#pragma once

// CSV datasets, synthetic generators and the JSON model file.

#include "deepspline/dataset.hpp"
#include "deepspline/error.hpp"
#include "deepspline/linear_spline.hpp"
#include "deepspline/network.hpp"
#include "deepspline/random.hpp"
#include "deepspline/training.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace deepspline {

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t pos = 0;
    while (true) {
        const std::size_t comma = line.find(',', pos);
        fields.push_back(trim(line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos)));
        if (comma == std::string_view::npos) break;
        pos = comma + 1;
    }
    return fields;
}

inline std::optional<double> parse_double(std::string_view field) {
    if (!field.empty() && field.front() == '+') field.remove_prefix(1);
    if (field.empty()) return std::nullopt;
    double value = 0.0;
    const auto [end, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc() || end != field.data() + field.size()) return std::nullopt;
    return value;
}

} // namespace detail

/// Parses comma-separated rows of n_inputs + n_targets numbers. A first row
/// containing any non-numeric field is taken as the header. LF and CRLF line
/// endings are accepted; blank lines are skipped.
inline Dataset parse_csv(std::istream& in, std::size_t n_inputs, std::size_t n_targets) {
    if (n_inputs == 0 || n_targets == 0) throw std::invalid_argument("parse_csv: need at least one input and one target column");
    const std::size_t columns = n_inputs + n_targets;
    Dataset data;
    std::string line;
    std::size_t line_no = 0;
    bool first = true;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (detail::trim(line).empty()) continue;
        const auto fields = detail::split_fields(line);

        std::vector<double> values;
        std::size_t bad = fields.size();
        for (std::size_t i = 0; i < fields.size(); ++i) {
            const auto v = detail::parse_double(fields[i]);
            if (!v) {
                bad = i;
                break;
            }
            values.push_back(*v);
        }
        if (first) {
            first = false;
            if (bad < fields.size()) {
                if (fields.size() != columns) {
                    throw ParseError("header has " + std::to_string(fields.size()) + " columns, expected " +
                                     std::to_string(columns), line_no);
                }
                for (auto f : fields) data.names.emplace_back(f);
                continue;
            }
        }
        if (fields.size() != columns) {
            throw ParseError("expected " + std::to_string(columns) + " columns, found " + std::to_string(fields.size()),
                             line_no);
        }
        if (bad < fields.size()) {
            throw ParseError("column " + std::to_string(bad + 1) + ": '" + std::string(fields[bad]) + "' is not a number",
                             line_no);
        }
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (!std::isfinite(values[i])) {
                throw ParseError("column " + std::to_string(i + 1) + ": value is not finite", line_no);
            }
        }
        Eigen::VectorXd x(static_cast<Eigen::Index>(n_inputs));
        Eigen::VectorXd y(static_cast<Eigen::Index>(n_targets));
        for (std::size_t i = 0; i < n_inputs; ++i) x(static_cast<Eigen::Index>(i)) = values[i];
        for (std::size_t i = 0; i < n_targets; ++i) y(static_cast<Eigen::Index>(i)) = values[n_inputs + i];
        data.inputs.push_back(std::move(x));
        data.targets.push_back(std::move(y));
    }
    return data;
}

inline Dataset load_csv(const std::string& path, std::size_t n_inputs, std::size_t n_targets) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path + "'");
    try {
        return parse_csv(in, n_inputs, n_targets);
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what());
    }
}

namespace detail {
inline void write_number(std::ostream& out, double v) {
    char buf[32];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    out.write(buf, end - buf);
}
} // namespace detail

inline void write_csv(std::ostream& out, const Dataset& data) {
    if (!data.names.empty()) {
        for (std::size_t i = 0; i < data.names.size(); ++i) out << (i ? "," : "") << data.names[i];
        out << '\n';
    }
    for (std::size_t m = 0; m < data.size(); ++m) {
        bool first = true;
        for (const Eigen::VectorXd* v : {&data.inputs[m], &data.targets[m]}) {
            for (Eigen::Index i = 0; i < v->size(); ++i) {
                if (!first) out << ',';
                first = false;
                detail::write_number(out, (*v)(i));
            }
        }
        out << '\n';
    }
}

/// (x, f(x)) at lo, every knot inside (lo, hi), and hi.
inline void write_breakpoints_csv(std::ostream& out, const LinearSpline& s, double lo, double hi) {
    std::vector<double> xs{lo};
    for (double t : s.knots()) {
        if (t > lo && t < hi) xs.push_back(t);
    }
    if (hi > lo) xs.push_back(hi);
    std::sort(xs.begin(), xs.end());
    out << "x,f\n";
    for (double x : xs) {
        detail::write_number(out, x);
        out << ',';
        detail::write_number(out, eval(s, x));
        out << '\n';
    }
}

inline void write_history_csv(std::ostream& out, const std::vector<HistoryRow>& history) {
    out << "epoch,data,weight_penalty,tv2_penalty,total,knot_count\n";
    for (const HistoryRow& row : history) {
        out << row.epoch << ',';
        detail::write_number(out, row.parts.data);
        out << ',';
        detail::write_number(out, row.parts.weight_penalty);
        out << ',';
        detail::write_number(out, row.parts.tv2_penalty);
        out << ',';
        detail::write_number(out, row.parts.total);
        out << ',' << row.knot_count << '\n';
    }
}

// ---------------------------------------------------------------------------
// Synthetic data

enum class SynthKind { sine, step, spiral2d, hinge };

inline SynthKind parse_synth_kind(const std::string& name) {
    if (name == "sine") return SynthKind::sine;
    if (name == "step") return SynthKind::step;
    if (name == "spiral2d") return SynthKind::spiral2d;
    if (name == "hinge") return SynthKind::hinge;
    throw std::invalid_argument("unknown synthetic dataset '" + name + "' (expected sine, step, spiral2d or hinge)");
}

/// Evenly spaced inputs with Gaussian target noise for the 1-D kinds:
///   sine   y = sin(2 pi x)        on [0, 1]
///   step   y = 1[x > 0.5]         on [0, 1]
///   hinge  y = max(x, 2 - x)      on [-1, 3]
/// spiral2d interleaves two spiral arms (targets +1 and -1) and perturbs the
/// 2-D inputs instead.
inline Dataset synth(SynthKind kind, std::size_t n, double noise_sd, std::uint64_t seed) {
    if (n == 0) throw std::invalid_argument("synth: n must be >= 1");
    if (!(noise_sd >= 0.0)) throw std::invalid_argument("synth: noise_sd must be >= 0");
    Rng rng(seed);
    Dataset data;
    auto fraction = [n](std::size_t i) { return n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1); };

    if (kind == SynthKind::spiral2d) {
        data.names = {"x1", "x2", "label"};
        const std::size_t per_arm = (n + 1) / 2;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t arm = i % 2;
            const double t = static_cast<double>(i / 2 + 1) / static_cast<double>(per_arm);
            const double angle = 3.0 * std::numbers::pi * t + std::numbers::pi * static_cast<double>(arm);
            Eigen::VectorXd x(2);
            x(0) = t * std::cos(angle) + rng.normal(0.0, noise_sd);
            x(1) = t * std::sin(angle) + rng.normal(0.0, noise_sd);
            data.inputs.push_back(x);
            data.targets.push_back(Eigen::VectorXd::Constant(1, arm == 0 ? 1.0 : -1.0));
        }
        return data;
    }

    data.names = {"x", "y"};
    for (std::size_t i = 0; i < n; ++i) {
        double x = 0.0;
        double y = 0.0;
        switch (kind) {
        case SynthKind::sine:
            x = fraction(i);
            y = std::sin(2.0 * std::numbers::pi * x);
            break;
        case SynthKind::step:
            x = fraction(i);
            y = x > 0.5 ? 1.0 : 0.0;
            break;
        case SynthKind::hinge:
            x = -1.0 + 4.0 * fraction(i);
            y = std::max(x, 2.0 - x);
            break;
        case SynthKind::spiral2d: break;
        }
        if (noise_sd > 0.0) y += rng.normal(0.0, noise_sd);
        data.inputs.push_back(Eigen::VectorXd::Constant(1, x));
        data.targets.push_back(Eigen::VectorXd::Constant(1, y));
    }
    return data;
}

inline Dataset synth(const std::string& kind, std::size_t n, double noise_sd, std::uint64_t seed) {
    return synth(parse_synth_kind(kind), n, noise_sd, seed);
}

// ---------------------------------------------------------------------------
// Model file

inline constexpr int kModelSchemaVersion = 1;

struct ModelMetadata {
    double lambda = 0.0;
    double mu = 0.0;
    std::uint64_t seed = 0;
    std::string rng = Rng::kAlgorithm;
};

struct ModelFile {
    DeepSplineNet net;
    std::optional<ModelMetadata> training;
};

inline nlohmann::json spline_to_json(const LinearSpline& s) {
    return {{"b1", s.b1()},
            {"b2", s.b2()},
            {"knots", std::vector<double>(s.knots().begin(), s.knots().end())},
            {"coeffs", std::vector<double>(s.coeffs().begin(), s.coeffs().end())}};
}

inline nlohmann::json model_to_json(const DeepSplineNet& net, const std::optional<ModelMetadata>& meta = std::nullopt) {
    net.validate();
    nlohmann::json j;
    j["schema_version"] = kModelSchemaVersion;
    j["node_descriptor"] = net.node_descriptor();
    nlohmann::json layers = nlohmann::json::array();
    for (const Layer& layer : net.layers) {
        nlohmann::json weights = nlohmann::json::array();
        for (Eigen::Index r = 0; r < layer.outputs(); ++r) {
            std::vector<double> row(static_cast<std::size_t>(layer.inputs()));
            for (Eigen::Index c = 0; c < layer.inputs(); ++c) row[static_cast<std::size_t>(c)] = layer.weights(r, c);
            weights.push_back(row);
        }
        nlohmann::json activations = nlohmann::json::array();
        for (const LinearSpline& s : layer.activations) activations.push_back(spline_to_json(s));
        layers.push_back({{"weights", weights}, {"normalized", layer.normalized}, {"activations", activations}});
    }
    j["layers"] = layers;
    if (meta) {
        j["training"] = {{"lambda", meta->lambda}, {"mu", meta->mu}, {"seed", meta->seed}, {"rng", meta->rng}};
    }
    return j;
}

namespace detail {

inline const nlohmann::json& field(const nlohmann::json& j, const char* key, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) throw ParseError(where + ": missing field '" + key + "'");
    return j.at(key);
}

inline double number(const nlohmann::json& j, const std::string& where) {
    if (!j.is_number()) throw ParseError(where + ": expected a number");
    return j.get<double>();
}

inline std::vector<double> numbers(const nlohmann::json& j, const std::string& where) {
    if (!j.is_array()) throw ParseError(where + ": expected an array of numbers");
    std::vector<double> out;
    for (const auto& v : j) out.push_back(number(v, where));
    return out;
}

} // namespace detail

inline LinearSpline spline_from_json(const nlohmann::json& j, const std::string& where = "spline") {
    try {
        return LinearSpline(detail::number(detail::field(j, "b1", where), where + ".b1"),
                            detail::number(detail::field(j, "b2", where), where + ".b2"),
                            detail::numbers(detail::field(j, "knots", where), where + ".knots"),
                            detail::numbers(detail::field(j, "coeffs", where), where + ".coeffs"));
    } catch (const std::invalid_argument& e) {
        throw ParseError(where + ": " + e.what());
    }
}

inline ModelFile model_from_json(const nlohmann::json& j) {
    const auto& version = detail::field(j, "schema_version", "model");
    if (!version.is_number_integer() || version.get<long long>() != kModelSchemaVersion) {
        throw ParseError("model: unsupported schema_version " + version.dump() + " (expected " +
                         std::to_string(kModelSchemaVersion) + ")");
    }
    const auto& layers = detail::field(j, "layers", "model");
    if (!layers.is_array() || layers.empty()) throw ParseError("model: 'layers' must be a non-empty array");

    ModelFile file;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string where = "layers[" + std::to_string(l) + "]";
        const auto& lj = layers[l];
        const auto& rows = detail::field(lj, "weights", where);
        if (!rows.is_array() || rows.empty()) throw ParseError(where + ".weights: expected a non-empty matrix");
        Layer layer;
        const std::size_t cols = rows[0].is_array() ? rows[0].size() : 0;
        layer.weights.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const auto row = detail::numbers(rows[r], where + ".weights");
            if (row.size() != cols || cols == 0) throw ParseError(where + ".weights: ragged or empty rows");
            for (std::size_t c = 0; c < cols; ++c) {
                layer.weights(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row[c];
            }
        }
        const auto& normalized = detail::field(lj, "normalized", where);
        if (!normalized.is_boolean()) throw ParseError(where + ".normalized: expected a boolean");
        layer.normalized = normalized.get<bool>();
        const auto& acts = detail::field(lj, "activations", where);
        if (!acts.is_array()) throw ParseError(where + ".activations: expected an array");
        for (std::size_t n = 0; n < acts.size(); ++n) {
            layer.activations.push_back(spline_from_json(acts[n], where + ".activations[" + std::to_string(n) + "]"));
        }
        file.net.layers.push_back(std::move(layer));
    }
    try {
        file.net.validate();
    } catch (const std::invalid_argument& e) {
        throw ParseError(std::string("model: ") + e.what());
    }
    if (j.contains("node_descriptor")) {
        const auto& nd = j.at("node_descriptor");
        std::vector<std::size_t> declared;
        if (nd.is_array()) {
            for (const auto& v : nd) {
                if (!v.is_number_unsigned()) throw ParseError("model: node_descriptor must hold non-negative integers");
                declared.push_back(v.get<std::size_t>());
            }
        }
        if (declared != file.net.node_descriptor()) throw ParseError("model: node_descriptor does not match layer shapes");
    }
    if (j.contains("training")) {
        const auto& t = j.at("training");
        ModelMetadata meta;
        meta.lambda = detail::number(detail::field(t, "lambda", "training"), "training.lambda");
        meta.mu = detail::number(detail::field(t, "mu", "training"), "training.mu");
        const auto& seed = detail::field(t, "seed", "training");
        if (!seed.is_number_unsigned()) throw ParseError("training.seed: expected a non-negative integer");
        meta.seed = seed.get<std::uint64_t>();
        if (t.contains("rng")) meta.rng = t.at("rng").get<std::string>();
        file.training = meta;
    }
    return file;
}

inline void save_model(const DeepSplineNet& net, const std::string& path,
                       const std::optional<ModelMetadata>& meta = std::nullopt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    out << model_to_json(net, meta).dump(2) << '\n';
    if (!out) throw Error("write to '" + path + "' failed");
}

inline ModelFile load_model_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path + ": malformed JSON: " + e.what());
    }
    return model_from_json(j);
}

inline DeepSplineNet load_model(const std::string& path) { return load_model_file(path).net; }

} // namespace deepspline
