#pragma once

// Training of deep spline networks on
//
//     sum_m E(y_m, f(x_m)) + mu sum_l ||U_l||_F^2 + lambda sum_{n,l} TV2(sigma_{n,l})
//
// by stochastic proximal gradient: a gradient step on every trainable
// parameter, soft-thresholding of the spline coefficients (the TV2 term is
// their l1 norm), a closed-form shrink for the weight penalty, and periodic
// row renormalization.

#include "deepspline/dataset.hpp"
#include "deepspline/error.hpp"
#include "deepspline/linear_spline.hpp"
#include "deepspline/network.hpp"
#include "deepspline/random.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace deepspline {

// ---------------------------------------------------------------------------
// Losses

enum class LossKind { squared, logistic };

namespace detail {
inline double softplus(double v) noexcept { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); }
inline double sigmoid(double v) noexcept {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}
} // namespace detail

/// E(y, f). `squared` is ||y - f||^2. `logistic` treats both arguments as
/// logits and returns KL(Bernoulli(sigmoid(y)) || Bernoulli(sigmoid(f))),
/// which is convex in f and vanishes exactly at f = y.
inline double loss_value(LossKind kind, const Eigen::VectorXd& target, const Eigen::VectorXd& output) {
    double total = 0.0;
    for (Eigen::Index j = 0; j < target.size(); ++j) {
        const double y = target(j);
        const double f = output(j);
        if (kind == LossKind::squared) {
            total += (f - y) * (f - y);
        } else {
            total += detail::softplus(f) - detail::softplus(y) - detail::sigmoid(y) * (f - y);
        }
    }
    return std::max(total, 0.0);
}

/// dE/df
inline Eigen::VectorXd loss_gradient(LossKind kind, const Eigen::VectorXd& target, const Eigen::VectorXd& output) {
    Eigen::VectorXd g(output.size());
    for (Eigen::Index j = 0; j < output.size(); ++j) {
        g(j) = kind == LossKind::squared ? 2.0 * (output(j) - target(j))
                                         : detail::sigmoid(output(j)) - detail::sigmoid(target(j));
    }
    return g;
}

// ---------------------------------------------------------------------------
// Flat parameter views

enum class ParamKind { weight, b1, b2, coeff, knot };

struct ParamRef {
    ParamKind kind = ParamKind::weight;
    std::size_t layer = 0;
    Eigen::Index row = 0;   // neuron index
    Eigen::Index col = 0;   // input index for weights
    std::size_t index = 0;  // knot index for coeff/knot
};

/// Which parameter groups are exposed to the optimizer.
struct ParameterMask {
    bool weights = true;
    bool affine = true;   // b1, b2
    bool coeffs = true;   // knot coefficients a_k
    bool knots = false;   // knot locations tau_k
    std::vector<bool> layers;  // empty: every layer

    bool layer_enabled(std::size_t l) const { return layers.empty() || (l < layers.size() && layers[l]); }
};

inline std::vector<ParamRef> parameter_refs(const DeepSplineNet& net, const ParameterMask& mask) {
    std::vector<ParamRef> refs;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        if (!mask.layer_enabled(l)) continue;
        const Layer& layer = net.layers[l];
        if (mask.weights) {
            for (Eigen::Index r = 0; r < layer.outputs(); ++r) {
                for (Eigen::Index c = 0; c < layer.inputs(); ++c) refs.push_back({ParamKind::weight, l, r, c, 0});
            }
        }
        for (Eigen::Index n = 0; n < layer.outputs(); ++n) {
            const LinearSpline& s = layer.activations[static_cast<std::size_t>(n)];
            if (mask.affine) {
                refs.push_back({ParamKind::b1, l, n, 0, 0});
                refs.push_back({ParamKind::b2, l, n, 0, 0});
            }
            for (std::size_t k = 0; k < s.knot_count(); ++k) {
                if (mask.coeffs) refs.push_back({ParamKind::coeff, l, n, 0, k});
                if (mask.knots) refs.push_back({ParamKind::knot, l, n, 0, k});
            }
        }
    }
    return refs;
}

inline Eigen::VectorXd gather(const DeepSplineNet& net, const std::vector<ParamRef>& refs) {
    Eigen::VectorXd values(static_cast<Eigen::Index>(refs.size()));
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const ParamRef& r = refs[i];
        const Layer& layer = net.layers[r.layer];
        const LinearSpline& s = layer.activations[static_cast<std::size_t>(r.row)];
        double v = 0.0;
        switch (r.kind) {
        case ParamKind::weight: v = layer.weights(r.row, r.col); break;
        case ParamKind::b1: v = s.b1(); break;
        case ParamKind::b2: v = s.b2(); break;
        case ParamKind::coeff: v = s.coeffs()[r.index]; break;
        case ParamKind::knot: v = s.knots()[r.index]; break;
        }
        values(static_cast<Eigen::Index>(i)) = v;
    }
    return values;
}

inline Eigen::VectorXd gather(const Gradients& grads, const std::vector<ParamRef>& refs) {
    Eigen::VectorXd values(static_cast<Eigen::Index>(refs.size()));
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const ParamRef& r = refs[i];
        const LayerGradient& lg = grads.layers[r.layer];
        const SplineGradient& sg = lg.activations[static_cast<std::size_t>(r.row)];
        double v = 0.0;
        switch (r.kind) {
        case ParamKind::weight: v = lg.weights(r.row, r.col); break;
        case ParamKind::b1: v = sg.b1; break;
        case ParamKind::b2: v = sg.b2; break;
        case ParamKind::coeff: v = sg.coeffs[r.index]; break;
        case ParamKind::knot: v = sg.knots[r.index]; break;
        }
        values(static_cast<Eigen::Index>(i)) = v;
    }
    return values;
}

/// Returns a copy of `net` with the referenced parameters replaced by `values`.
inline DeepSplineNet scatter(const DeepSplineNet& net, const std::vector<ParamRef>& refs, const Eigen::VectorXd& values) {
    struct Buffer {
        double b1, b2;
        std::vector<double> knots, coeffs;
        bool dirty = false;
    };
    DeepSplineNet out = net;
    std::vector<std::vector<Buffer>> buffers(net.layers.size());
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        for (const LinearSpline& s : net.layers[l].activations) {
            buffers[l].push_back({s.b1(), s.b2(), {s.knots().begin(), s.knots().end()},
                                  {s.coeffs().begin(), s.coeffs().end()}, false});
        }
    }
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const ParamRef& r = refs[i];
        const double v = values(static_cast<Eigen::Index>(i));
        if (r.kind == ParamKind::weight) {
            out.layers[r.layer].weights(r.row, r.col) = v;
            continue;
        }
        Buffer& b = buffers[r.layer][static_cast<std::size_t>(r.row)];
        b.dirty = true;
        switch (r.kind) {
        case ParamKind::b1: b.b1 = v; break;
        case ParamKind::b2: b.b2 = v; break;
        case ParamKind::coeff: b.coeffs[r.index] = v; break;
        case ParamKind::knot: b.knots[r.index] = v; break;
        case ParamKind::weight: break;
        }
    }
    for (std::size_t l = 0; l < out.layers.size(); ++l) {
        for (std::size_t n = 0; n < buffers[l].size(); ++n) {
            Buffer& b = buffers[l][n];
            if (b.dirty) out.layers[l].activations[n] = LinearSpline(b.b1, b.b2, std::move(b.knots), std::move(b.coeffs));
        }
        if (out.layers[l].normalized) {
            for (Eigen::Index r = 0; r < out.layers[l].outputs(); ++r) {
                if (std::abs(out.layers[l].weights.row(r).norm() - 1.0) > 1e-12) {
                    out.layers[l].normalized = false;
                    break;
                }
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Objective

/// Knot grid shared by every hidden neuron at initialization.
struct NeuronGrid {
    double lo = -2.0;
    double hi = 2.0;
    std::size_t count = 21;
};

struct TrainConfig {
    double lambda = 1e-3;        // TV2 weight
    double mu = 0.0;             // Frobenius weight penalty (unnormalized mode only)
    double step_size = 1e-3;     // applies to the summed (not averaged) objective
    std::size_t epochs = 100;
    std::size_t batch_size = 0;  // 0: full batch
    std::uint64_t seed = 0;
    NeuronGrid grid;
    double sparsify_tol = 1e-6;
    std::size_t renorm_every = 0;  // steps between renormalizations; 0 keeps rows unnormalized
    bool knot_learning = false;
    LossKind loss = LossKind::squared;
    double momentum = 0.0;
    bool backtracking = false;   // full batch only; step halves until sufficient decrease
    std::size_t threads = 1;     // per-sample gradients; reduction order is fixed
    ParameterMask mask;          // `knots` is overridden by knot_learning
    bool absorb_inactive = false;  // fold knots outside the observed pre-activation range at the end

    bool normalized_mode() const noexcept { return renorm_every > 0; }

    void validate() const {
        if (!(lambda >= 0.0) || !(mu >= 0.0)) throw std::invalid_argument("TrainConfig: lambda and mu must be >= 0");
        if (!(step_size > 0.0)) throw std::invalid_argument("TrainConfig: step_size must be > 0");
        if (!(sparsify_tol >= 0.0)) throw std::invalid_argument("TrainConfig: sparsify_tol must be >= 0");
        if (grid.count < 2 || !(grid.lo < grid.hi)) throw std::invalid_argument("TrainConfig: invalid neuron grid");
        if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("TrainConfig: momentum must be in [0, 1)");
        if (threads == 0) throw std::invalid_argument("TrainConfig: threads must be >= 1");
    }
};

struct ObjectiveParts {
    double data = 0.0;
    double weight_penalty = 0.0;  // sum_l ||U_l||_F^2
    double tv2_penalty = 0.0;     // sum_{n,l} ||a_{n,l}||_1
    double total = 0.0;           // data + mu * weight_penalty + lambda * tv2_penalty
};

inline double data_term(const DeepSplineNet& net, const Dataset& data, LossKind loss) {
    double total = 0.0;
    for (std::size_t m = 0; m < data.size(); ++m) total += loss_value(loss, data.targets[m], predict(net, data.inputs[m]));
    return total;
}

inline ObjectiveParts objective(const DeepSplineNet& net, const Dataset& data, const TrainConfig& cfg) {
    ObjectiveParts parts;
    parts.data = data_term(net, data, cfg.loss);
    for (const Layer& layer : net.layers) {
        parts.weight_penalty += layer.weights.squaredNorm();
        for (const LinearSpline& s : layer.activations) parts.tv2_penalty += tv2(s);
    }
    parts.total = parts.data + cfg.mu * parts.weight_penalty + cfg.lambda * parts.tv2_penalty;
    return parts;
}

/// Soft threshold: the minimizer of 1/2 (u - value)^2 + threshold |u|.
inline double prox_l1(double value, double threshold) {
    if (threshold < 0.0) throw std::invalid_argument("prox_l1: threshold must be >= 0");
    if (value > threshold) return value - threshold;
    if (value < -threshold) return value + threshold;
    return 0.0;
}

// ---------------------------------------------------------------------------
// Initialization

/// Parses "N0-N1-...-NL".
inline std::vector<std::size_t> parse_architecture(const std::string& arch) {
    std::vector<std::size_t> nodes;
    std::size_t pos = 0;
    while (pos <= arch.size()) {
        const std::size_t dash = arch.find('-', pos);
        const std::string token = arch.substr(pos, dash == std::string::npos ? std::string::npos : dash - pos);
        if (token.empty() || token.find_first_not_of("0123456789") != std::string::npos) {
            throw std::invalid_argument("architecture '" + arch + "': expected N0-N1-...-NL with positive integers");
        }
        const std::size_t n = std::stoul(token);
        if (n == 0) throw std::invalid_argument("architecture '" + arch + "': layer widths must be positive");
        nodes.push_back(n);
        if (dash == std::string::npos) break;
        pos = dash + 1;
    }
    if (nodes.size() < 2) throw std::invalid_argument("architecture '" + arch + "': need at least two layers");
    return nodes;
}

/// Weights uniform on [-1, 1] / sqrt(fan_in). Hidden activations are PReLU(0.25)
/// written on the knot grid (every grid coefficient zero except the knot at 0);
/// output activations start as the identity and stay affine. With
/// `normalized`, rows are scaled to unit norm directly (the activations keep
/// their initial shape), so no layer starts with a near-zero gain.
inline DeepSplineNet init_network(const std::vector<std::size_t>& nodes, const NeuronGrid& grid, std::uint64_t seed,
                                  bool normalized) {
    if (nodes.size() < 2) throw std::invalid_argument("init_network: need at least input and output widths");
    Rng rng(seed);

    std::vector<double> knots;
    const double spacing = (grid.hi - grid.lo) / static_cast<double>(grid.count - 1);
    for (std::size_t i = 0; i < grid.count; ++i) {
        const double t = grid.lo + (grid.hi - grid.lo) * static_cast<double>(i) / static_cast<double>(grid.count - 1);
        knots.push_back(std::abs(t) < 1e-9 * spacing ? 0.0 : t);
    }
    if (std::find(knots.begin(), knots.end(), 0.0) == knots.end()) {
        knots.push_back(0.0);
        std::sort(knots.begin(), knots.end());
    }
    std::vector<double> coeffs(knots.size(), 0.0);
    const auto zero = static_cast<std::size_t>(std::find(knots.begin(), knots.end(), 0.0) - knots.begin());
    const LinearSpline prelu_reference = from_prelu(0.25);
    coeffs[zero] = prelu_reference.coeffs()[0];
    const LinearSpline hidden(0.0, prelu_reference.b2(), knots, coeffs);

    DeepSplineNet net;
    for (std::size_t l = 1; l < nodes.size(); ++l) {
        Layer layer;
        const double bound = 1.0 / std::sqrt(static_cast<double>(nodes[l - 1]));
        layer.weights.resize(static_cast<Eigen::Index>(nodes[l]), static_cast<Eigen::Index>(nodes[l - 1]));
        for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
            for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) layer.weights(r, c) = rng.uniform(-bound, bound);
        }
        const bool output = l + 1 == nodes.size();
        layer.activations.assign(nodes[l], output ? LinearSpline::identity() : hidden);
        net.layers.push_back(std::move(layer));
    }
    if (normalized) {
        for (Layer& layer : net.layers) {
            for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
                const double norm = layer.weights.row(r).norm();
                if (norm == 0.0) layer.weights(r, 0) = 1.0;
                else layer.weights.row(r) /= norm;
            }
            layer.normalized = true;
        }
    }
    return net;
}

// ---------------------------------------------------------------------------
// Gradients over a dataset

namespace detail {

// Sum of per-sample gradients of the data term over `indices`, accumulated in
// index order so the result does not depend on the thread count.
inline Gradients batch_gradient(const DeepSplineNet& net, const Dataset& data, const std::vector<std::size_t>& indices,
                                LossKind loss, std::size_t threads) {
    std::vector<Gradients> per_sample(indices.size());
    auto work = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const std::size_t m = indices[i];
            const ForwardPass pass = forward(net, data.inputs[m]);
            per_sample[i] = backward(net, pass.cache, loss_gradient(loss, data.targets[m], pass.output));
        }
    };
    const std::size_t workers = std::min(threads, std::max<std::size_t>(indices.size(), 1));
    if (workers <= 1) {
        work(0, indices.size());
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (indices.size() + workers - 1) / workers;
        for (std::size_t w = 0; w < workers; ++w) {
            const std::size_t begin = w * chunk;
            const std::size_t end = std::min(indices.size(), begin + chunk);
            if (begin < end) pool.emplace_back(work, begin, end);
        }
        for (std::thread& t : pool) t.join();
    }
    Gradients total = Gradients::zeros_like(net);
    for (const Gradients& g : per_sample) total += g;
    return total;
}

} // namespace detail

/// Gradient of the data term summed over the whole dataset.
inline Gradients dataset_gradient(const DeepSplineNet& net, const Dataset& data, LossKind loss, std::size_t threads = 1) {
    std::vector<std::size_t> all(data.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return detail::batch_gradient(net, data, all, loss, threads);
}

/// Removes from every weight-row gradient its component along the row. On
/// unit-norm rows the radial direction only rescales the downstream
/// activation's input, which renormalization would undo.
inline void project_to_sphere_tangent(Gradients& grads, const DeepSplineNet& net) {
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const Eigen::MatrixXd& W = net.layers[l].weights;
        Eigen::MatrixXd& G = grads.layers[l].weights;
        for (Eigen::Index r = 0; r < W.rows(); ++r) {
            const double norm2 = W.row(r).squaredNorm();
            if (norm2 > 0.0) G.row(r) -= (G.row(r).dot(W.row(r)) / norm2) * W.row(r);
        }
    }
}

// ---------------------------------------------------------------------------
// Sparsification

struct SparsifyResult {
    DeepSplineNet net;
    std::vector<std::vector<std::size_t>> knots_before;  // [layer][neuron]
    std::vector<std::vector<std::size_t>> knots_after;
};

/// Canonicalizes every activation with merge/drop tolerance `tol`.
inline SparsifyResult sparsify(const DeepSplineNet& net, double tol) {
    if (tol < 0.0) throw std::invalid_argument("sparsify: tol must be >= 0");
    SparsifyResult result{net, {}, {}};
    for (Layer& layer : result.net.layers) {
        std::vector<std::size_t> before;
        std::vector<std::size_t> after;
        for (LinearSpline& s : layer.activations) {
            before.push_back(s.knot_count());
            s = canonicalize(s, tol);
            after.push_back(s.knot_count());
        }
        result.knots_before.push_back(std::move(before));
        result.knots_after.push_back(std::move(after));
    }
    return result;
}

/// Zeroes every coefficient whose knot lies outside the range of
/// pre-activations the neuron sees on `data`, folding it into the affine
/// part. Outputs on `data` are unchanged up to rounding; the knot stays in
/// place with a zero coefficient. Returns the number of coefficients folded.
inline std::size_t absorb_inactive_knots(DeepSplineNet& net, const Dataset& data) {
    if (data.empty()) return 0;
    std::vector<Eigen::VectorXd> lo;
    std::vector<Eigen::VectorXd> hi;
    for (std::size_t m = 0; m < data.size(); ++m) {
        const ForwardPass pass = forward(net, data.inputs[m]);
        for (std::size_t l = 0; l < net.layers.size(); ++l) {
            const Eigen::VectorXd& z = pass.cache.pre[l];
            if (m == 0) {
                lo.push_back(z);
                hi.push_back(z);
            } else {
                lo[l] = lo[l].cwiseMin(z);
                hi[l] = hi[l].cwiseMax(z);
            }
        }
    }
    std::size_t folded = 0;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        for (std::size_t n = 0; n < net.layers[l].activations.size(); ++n) {
            const LinearSpline& s = net.layers[l].activations[n];
            const auto idx = static_cast<Eigen::Index>(n);
            double b1 = s.b1();
            double b2 = s.b2();
            std::vector<double> coeffs(s.coeffs().begin(), s.coeffs().end());
            const auto knots = s.knots();
            bool changed = false;
            for (std::size_t k = 0; k < coeffs.size(); ++k) {
                if (coeffs[k] == 0.0) continue;
                if (knots[k] <= lo[l](idx)) {
                    b1 -= coeffs[k] * knots[k];
                    b2 += coeffs[k];
                } else if (knots[k] < hi[l](idx)) {
                    continue;
                }
                coeffs[k] = 0.0;
                changed = true;
                ++folded;
            }
            if (changed) {
                net.layers[l].activations[n] =
                    LinearSpline(b1, b2, std::vector<double>(knots.begin(), knots.end()), std::move(coeffs));
            }
        }
    }
    return folded;
}

// ---------------------------------------------------------------------------
// Training loop

struct HistoryRow {
    std::size_t epoch = 0;
    ObjectiveParts parts;
    std::size_t knot_count = 0;
};

struct TrainResult {
    DeepSplineNet net;
    std::vector<HistoryRow> history;
    std::vector<double> step_objectives;  // full-batch runs: objective after every step
    std::vector<std::string> warnings;
};

/// Mini-batch proximal SGD on the deep spline objective. The returned network
/// is sparsified with cfg.sparsify_tol. Throws DivergenceError when the
/// objective stops being finite.
inline TrainResult train(const DeepSplineNet& initial, const Dataset& data, const TrainConfig& cfg) {
    cfg.validate();
    data.validate();
    initial.validate();
    if (data.empty()) throw std::invalid_argument("train: empty dataset");
    if (data.input_dim() != initial.input_dim() || data.target_dim() != initial.output_dim()) {
        throw std::invalid_argument("train: dataset arity does not match the network");
    }

    TrainResult result;
    DeepSplineNet net = cfg.normalized_mode() ? renormalize(initial) : initial;

    ParameterMask mask = cfg.mask;
    mask.knots = cfg.knot_learning;
    const std::vector<ParamRef> refs = parameter_refs(net, mask);
    const auto n_params = static_cast<Eigen::Index>(refs.size());

    const bool decay = cfg.mu > 0.0 && !cfg.normalized_mode();
    if (cfg.mu > 0.0 && cfg.normalized_mode()) {
        result.warnings.push_back("mu has no effect in normalized mode: unit-norm rows make the weight penalty constant");
    }
    const bool full_batch = cfg.batch_size == 0 || cfg.batch_size >= data.size();
    if (cfg.backtracking && !full_batch) result.warnings.push_back("backtracking ignored: requires full-batch updates");
    const bool backtrack = cfg.backtracking && full_batch;

    Eigen::VectorXd l1_weight = Eigen::VectorXd::Zero(n_params);
    Eigen::VectorXd decay_mask = Eigen::VectorXd::Zero(n_params);
    for (std::size_t i = 0; i < refs.size(); ++i) {
        if (refs[i].kind == ParamKind::coeff) l1_weight(static_cast<Eigen::Index>(i)) = cfg.lambda;
        if (decay && refs[i].kind == ParamKind::weight) decay_mask(static_cast<Eigen::Index>(i)) = 1.0;
    }
    auto prox = [&](const Eigen::VectorXd& v, double step) {
        Eigen::VectorXd out(v.size());
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            double u = prox_l1(v(i), step * l1_weight(i));
            if (decay_mask(i) != 0.0) u /= 1.0 + 2.0 * step * cfg.mu;
            out(i) = u;
        }
        return out;
    };

    const std::size_t batch = full_batch ? data.size() : cfg.batch_size;
    const double batch_scale = static_cast<double>(data.size()) / static_cast<double>(batch);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(cfg.seed);
    Eigen::VectorXd previous;  // iterate before the last step, for momentum
    double step = cfg.step_size;
    std::size_t steps = 0;

    auto check_finite = [&](double value, std::size_t epoch) {
        if (!std::isfinite(value)) {
            throw DivergenceError("training diverged at epoch " + std::to_string(epoch) +
                                  ": objective is not finite (try a smaller step size)");
        }
    };

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        if (!full_batch) {
            for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        }
        for (std::size_t begin = 0; begin < order.size(); begin += batch) {
            const std::vector<std::size_t> indices(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), begin + batch)));
            // Extrapolated point for momentum; plain proximal SGD when momentum is 0.
            const Eigen::VectorXd theta = gather(net, refs);
            const bool extrapolate = cfg.momentum > 0.0 && previous.size() == theta.size();
            const Eigen::VectorXd base_theta = extrapolate ? Eigen::VectorXd(theta + cfg.momentum * (theta - previous)) : theta;
            const DeepSplineNet base = extrapolate ? scatter(net, refs, base_theta) : net;

            Gradients grads = detail::batch_gradient(base, data, indices, cfg.loss, cfg.threads);
            grads *= batch_scale;
            if (cfg.normalized_mode()) project_to_sphere_tangent(grads, base);
            const Eigen::VectorXd g = gather(grads, refs);

            DeepSplineNet next_net;
            if (backtrack) {
                const double smooth = data_term(base, data, cfg.loss);
                check_finite(smooth, epoch);
                // Let the step recover after a local contraction, capped at the configured size.
                step = std::min(cfg.step_size, 2.0 * step);
                for (int attempt = 0;; ++attempt) {
                    const Eigen::VectorXd next = prox(base_theta - step * g, step);
                    DeepSplineNet candidate = scatter(base, refs, next);
                    const Eigen::VectorXd diff = next - base_theta;
                    const double bound = smooth + g.dot(diff) + diff.squaredNorm() / (2.0 * step);
                    const double value = data_term(candidate, data, cfg.loss);
                    if (std::isfinite(value) && value <= bound + 1e-12 * std::abs(smooth)) {
                        next_net = std::move(candidate);
                        break;
                    }
                    if (attempt >= 60) {
                        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) +
                                              ": backtracking found no admissible step");
                    }
                    step *= 0.5;
                }
            } else {
                next_net = scatter(base, refs, prox(base_theta - step * g, step));
            }
            previous = theta;
            net = std::move(next_net);
            ++steps;
            if (cfg.renorm_every > 0 && steps % cfg.renorm_every == 0) {
                // The momentum reference moves to the same gauge as the iterate.
                const std::vector<Eigen::VectorXd> scales = row_norms(net);
                if (previous.size() > 0) previous = gather(rescale_rows(scatter(net, refs, previous), scales), refs);
                net = renormalize(net);
            }
            if (full_batch) {
                const double value = objective(net, data, cfg).total;
                check_finite(value, epoch);
                // Adaptive restart: drop the momentum whenever the objective goes up.
                if (!result.step_objectives.empty() && value > result.step_objectives.back()) previous.resize(0);
                result.step_objectives.push_back(value);
            }
        }
        HistoryRow row;
        row.epoch = epoch;
        row.parts = objective(net, data, cfg);
        check_finite(row.parts.total, epoch);
        row.knot_count = total_knot_count(net, cfg.sparsify_tol);
        result.history.push_back(row);
    }

    if (cfg.absorb_inactive) absorb_inactive_knots(net, data);
    result.net = sparsify(net, cfg.sparsify_tol).net;
    return result;
}

// ---------------------------------------------------------------------------
// Finite-difference verification

struct GradientCheckReport {
    double max_relative_error = 0.0;
    double max_error_weight = 0.0;
    double max_error_b1 = 0.0;
    double max_error_b2 = 0.0;
    double max_error_coeff = 0.0;
    double max_error_knot = 0.0;
    std::size_t parameters_checked = 0;
    std::size_t samples_used = 0;
    std::size_t samples_excluded = 0;
    bool passed = false;
};

/// Compares backward() with central differences of the data term for every
/// parameter (weights, b1, b2, a, tau). Samples whose pre-activation lies
/// within `knot_margin` of a knot of its neuron are excluded. The relative
/// error is |fd - analytic| / max(|fd|, |analytic|, 1e-3); the check passes
/// below `threshold`.
inline GradientCheckReport gradient_check(const DeepSplineNet& net, const Dataset& data, double h,
                                          LossKind loss = LossKind::squared, double knot_margin = 1e-4,
                                          double threshold = 1e-4) {
    if (!(h > 0.0)) throw std::invalid_argument("gradient_check: h must be > 0");
    GradientCheckReport report;
    Dataset kept;
    for (std::size_t m = 0; m < data.size(); ++m) {
        const ForwardPass pass = forward(net, data.inputs[m]);
        bool near_knot = false;
        for (std::size_t l = 0; l < net.layers.size() && !near_knot; ++l) {
            for (Eigen::Index n = 0; n < pass.cache.pre[l].size() && !near_knot; ++n) {
                for (double t : net.layers[l].activations[static_cast<std::size_t>(n)].knots()) {
                    if (std::abs(pass.cache.pre[l](n) - t) < knot_margin) {
                        near_knot = true;
                        break;
                    }
                }
            }
        }
        if (near_knot) {
            ++report.samples_excluded;
            continue;
        }
        kept.inputs.push_back(data.inputs[m]);
        kept.targets.push_back(data.targets[m]);
    }
    report.samples_used = kept.size();
    if (kept.empty()) return report;

    ParameterMask all;
    all.knots = true;
    const std::vector<ParamRef> refs = parameter_refs(net, all);
    const Eigen::VectorXd analytic = gather(dataset_gradient(net, kept, loss), refs);
    const Eigen::VectorXd theta = gather(net, refs);

    for (std::size_t i = 0; i < refs.size(); ++i) {
        const auto idx = static_cast<Eigen::Index>(i);
        Eigen::VectorXd plus = theta;
        Eigen::VectorXd minus = theta;
        plus(idx) += h;
        minus(idx) -= h;
        const double fd = (data_term(scatter(net, refs, plus), kept, loss) - data_term(scatter(net, refs, minus), kept, loss)) /
                          (2.0 * h);
        const double err = std::abs(fd - analytic(idx)) / std::max({std::abs(fd), std::abs(analytic(idx)), 1e-3});
        report.max_relative_error = std::max(report.max_relative_error, err);
        double* slot = nullptr;
        switch (refs[i].kind) {
        case ParamKind::weight: slot = &report.max_error_weight; break;
        case ParamKind::b1: slot = &report.max_error_b1; break;
        case ParamKind::b2: slot = &report.max_error_b2; break;
        case ParamKind::coeff: slot = &report.max_error_coeff; break;
        case ParamKind::knot: slot = &report.max_error_knot; break;
        }
        *slot = std::max(*slot, err);
        ++report.parameters_checked;
    }
    report.passed = report.max_relative_error <= threshold;
    return report;
}

} // namespace deepspline
