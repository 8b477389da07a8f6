#pragma once

// Deep spline networks: alternating linear maps z = U y and per-neuron
// linear-spline activations y_n = sigma_n(z_n). Biases live inside the
// activations (as knot offsets and the b1 term), so layers carry no separate
// bias vectors.

#include "deepspline/error.hpp"
#include "deepspline/linear_spline.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace deepspline {

struct Layer {
    Eigen::MatrixXd weights;  // outputs x inputs
    std::vector<LinearSpline> activations;
    bool normalized = false;  // every row has unit Euclidean norm

    Eigen::Index inputs() const noexcept { return weights.cols(); }
    Eigen::Index outputs() const noexcept { return weights.rows(); }
};

struct DeepSplineNet {
    std::vector<Layer> layers;

    Eigen::Index input_dim() const { return layers.empty() ? 0 : layers.front().inputs(); }
    Eigen::Index output_dim() const { return layers.empty() ? 0 : layers.back().outputs(); }

    /// (N_0, N_1, ..., N_L)
    std::vector<std::size_t> node_descriptor() const {
        std::vector<std::size_t> nodes;
        if (layers.empty()) return nodes;
        nodes.push_back(static_cast<std::size_t>(layers.front().inputs()));
        for (const Layer& layer : layers) nodes.push_back(static_cast<std::size_t>(layer.outputs()));
        return nodes;
    }

    /// Throws std::invalid_argument on inconsistent shapes or non-finite weights.
    void validate() const {
        if (layers.empty()) throw std::invalid_argument("DeepSplineNet: no layers");
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const Layer& layer = layers[l];
            const std::string where = "DeepSplineNet layer " + std::to_string(l + 1);
            if (layer.outputs() == 0 || layer.inputs() == 0) throw std::invalid_argument(where + ": empty weight matrix");
            if (static_cast<Eigen::Index>(layer.activations.size()) != layer.outputs()) {
                throw std::invalid_argument(where + ": activation count does not match row count");
            }
            if (l > 0 && layer.inputs() != layers[l - 1].outputs()) {
                throw std::invalid_argument(where + ": input width does not match previous layer");
            }
            if (!layer.weights.allFinite()) throw std::invalid_argument(where + ": non-finite weights");
        }
    }
};

/// Per-sample intermediate values: z[l] = U_l y[l], y[l + 1] = sigma_l(z[l]),
/// with y[0] the network input.
struct ForwardCache {
    std::vector<Eigen::VectorXd> pre;   // one per layer
    std::vector<Eigen::VectorXd> post;  // layers + 1 entries, post[0] is the input

    const Eigen::VectorXd& output() const { return post.back(); }
};

struct ForwardPass {
    Eigen::VectorXd output;
    ForwardCache cache;
};

inline ForwardPass forward(const DeepSplineNet& net, const Eigen::VectorXd& x) {
    if (net.layers.empty()) throw std::invalid_argument("forward: empty network");
    if (x.size() != net.input_dim()) {
        throw std::invalid_argument("forward: input has length " + std::to_string(x.size()) + ", expected " +
                                    std::to_string(net.input_dim()));
    }
    ForwardPass pass;
    pass.cache.post.reserve(net.layers.size() + 1);
    pass.cache.pre.reserve(net.layers.size());
    pass.cache.post.push_back(x);
    for (const Layer& layer : net.layers) {
        if (layer.inputs() != pass.cache.post.back().size() ||
            static_cast<Eigen::Index>(layer.activations.size()) != layer.outputs()) {
            throw std::invalid_argument("forward: inconsistent layer shapes");
        }
        Eigen::VectorXd z = layer.weights * pass.cache.post.back();
        Eigen::VectorXd y(z.size());
        for (Eigen::Index n = 0; n < z.size(); ++n) y(n) = eval(layer.activations[static_cast<std::size_t>(n)], z(n));
        pass.cache.pre.push_back(std::move(z));
        pass.cache.post.push_back(std::move(y));
    }
    pass.output = pass.cache.post.back();
    return pass;
}

inline Eigen::VectorXd predict(const DeepSplineNet& net, const Eigen::VectorXd& x) { return forward(net, x).output; }

struct SplineGradient {
    double b1 = 0.0;
    double b2 = 0.0;
    std::vector<double> coeffs;
    std::vector<double> knots;
};

struct LayerGradient {
    Eigen::MatrixXd weights;
    std::vector<SplineGradient> activations;
};

/// Gradients with the same shape as a network's parameters.
struct Gradients {
    std::vector<LayerGradient> layers;

    static Gradients zeros_like(const DeepSplineNet& net) {
        Gradients g;
        for (const Layer& layer : net.layers) {
            LayerGradient lg;
            lg.weights = Eigen::MatrixXd::Zero(layer.outputs(), layer.inputs());
            for (const LinearSpline& s : layer.activations) {
                SplineGradient sg;
                sg.coeffs.assign(s.knot_count(), 0.0);
                sg.knots.assign(s.knot_count(), 0.0);
                lg.activations.push_back(std::move(sg));
            }
            g.layers.push_back(std::move(lg));
        }
        return g;
    }

    Gradients& operator+=(const Gradients& other) {
        for (std::size_t l = 0; l < layers.size(); ++l) {
            layers[l].weights += other.layers[l].weights;
            for (std::size_t n = 0; n < layers[l].activations.size(); ++n) {
                SplineGradient& a = layers[l].activations[n];
                const SplineGradient& b = other.layers[l].activations[n];
                a.b1 += b.b1;
                a.b2 += b.b2;
                for (std::size_t k = 0; k < a.coeffs.size(); ++k) {
                    a.coeffs[k] += b.coeffs[k];
                    a.knots[k] += b.knots[k];
                }
            }
        }
        return *this;
    }

    Gradients& operator*=(double factor) {
        for (LayerGradient& lg : layers) {
            lg.weights *= factor;
            for (SplineGradient& sg : lg.activations) {
                sg.b1 *= factor;
                sg.b2 *= factor;
                for (double& v : sg.coeffs) v *= factor;
                for (double& v : sg.knots) v *= factor;
            }
        }
        return *this;
    }
};

/// Reverse-mode pass for one sample. `upstream` is dLoss/d(output).
///
/// Spline derivatives use the right derivative at knots, matching
/// eval_derivative. Knot gradients d/dtau_k = -a_k 1[z >= tau_k] are always
/// filled in; training only applies them when knot learning is enabled.
inline Gradients backward(const DeepSplineNet& net, const ForwardCache& cache, const Eigen::VectorXd& upstream) {
    const std::size_t L = net.layers.size();
    if (cache.pre.size() != L || cache.post.size() != L + 1) {
        throw std::invalid_argument("backward: cache does not match network depth");
    }
    if (upstream.size() != net.output_dim()) throw std::invalid_argument("backward: upstream gradient has wrong length");

    Gradients grads = Gradients::zeros_like(net);
    Eigen::VectorXd delta = upstream;  // dLoss / d post[l + 1]
    for (std::size_t l = L; l-- > 0;) {
        const Layer& layer = net.layers[l];
        const Eigen::VectorXd& z = cache.pre[l];
        if (z.size() != layer.outputs() || cache.post[l].size() != layer.inputs()) {
            throw std::invalid_argument("backward: stale cache (shape mismatch)");
        }
        LayerGradient& lg = grads.layers[l];
        Eigen::VectorXd dz(z.size());
        for (Eigen::Index n = 0; n < z.size(); ++n) {
            const LinearSpline& s = layer.activations[static_cast<std::size_t>(n)];
            SplineGradient& sg = lg.activations[static_cast<std::size_t>(n)];
            const double g = delta(n);
            const double zn = z(n);
            sg.b1 = g;
            sg.b2 = g * zn;
            double slope = s.b2();
            const auto knots = s.knots();
            const auto coeffs = s.coeffs();
            for (std::size_t k = 0; k < knots.size(); ++k) {
                sg.coeffs[k] = g * relu(zn - knots[k]);
                if (zn >= knots[k]) {
                    slope += coeffs[k];
                    sg.knots[k] = -g * coeffs[k];
                }
            }
            dz(n) = g * slope;
        }
        lg.weights = dz * cache.post[l].transpose();
        delta = layer.weights.transpose() * dz;
    }
    return grads;
}

/// A classical ReLU network: y_l = relu(W_l y_{l-1} - z_l), with an optional
/// purely affine last layer.
struct ReluNetwork {
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> thresholds;
    bool linear_output = false;

    Eigen::VectorXd operator()(const Eigen::VectorXd& x) const {
        Eigen::VectorXd y = x;
        for (std::size_t l = 0; l < weights.size(); ++l) {
            y = weights[l] * y - thresholds[l];
            if (!(linear_output && l + 1 == weights.size())) y = y.cwiseMax(0.0);
        }
        return y;
    }
};

/// Rewrites a ReLU network as a normalized deep spline network using
/// (w.x - z)_+ = a (u.x - tau)_+ with a = ||w||, u = w / a, tau = z / a.
/// A zero row in a ReLU layer has no normalized form and is rejected. In a
/// linear output layer a zero row becomes a constant activation.
inline DeepSplineNet from_relu_network(const ReluNetwork& relu_net) {
    if (relu_net.weights.empty() || relu_net.weights.size() != relu_net.thresholds.size()) {
        throw std::invalid_argument("from_relu_network: need one threshold vector per weight matrix");
    }
    DeepSplineNet net;
    for (std::size_t l = 0; l < relu_net.weights.size(); ++l) {
        const Eigen::MatrixXd& W = relu_net.weights[l];
        const Eigen::VectorXd& z = relu_net.thresholds[l];
        if (z.size() != W.rows()) throw std::invalid_argument("from_relu_network: threshold length mismatch");
        const bool linear = relu_net.linear_output && l + 1 == relu_net.weights.size();
        Layer layer;
        layer.weights = W;
        layer.normalized = true;
        for (Eigen::Index n = 0; n < W.rows(); ++n) {
            const double a = W.row(n).norm();
            if (a == 0.0) {
                if (!linear) {
                    throw std::invalid_argument("from_relu_network: zero row " + std::to_string(n + 1) + " in layer " +
                                                std::to_string(l + 1));
                }
                layer.weights.row(n).setZero();
                layer.weights(n, 0) = 1.0;
                layer.activations.push_back(LinearSpline::affine(-z(n), 0.0));
                continue;
            }
            layer.weights.row(n) /= a;
            if (linear) {
                layer.activations.push_back(LinearSpline::affine(-z(n), a));
            } else {
                layer.activations.push_back(LinearSpline(0.0, 0.0, {z(n) / a}, {a}));
            }
        }
        net.layers.push_back(std::move(layer));
    }
    net.validate();
    return net;
}

/// Euclidean norm of every weight row, per layer.
inline std::vector<Eigen::VectorXd> row_norms(const DeepSplineNet& net) {
    std::vector<Eigen::VectorXd> norms;
    for (const Layer& layer : net.layers) norms.push_back(layer.weights.rowwise().norm());
    return norms;
}

/// Divides row n of layer l by scales[l](n) and absorbs the factor into the
/// row's activation via rescale_input, leaving the network function unchanged.
inline DeepSplineNet rescale_rows(const DeepSplineNet& net, const std::vector<Eigen::VectorXd>& scales) {
    if (scales.size() != net.layers.size()) throw std::invalid_argument("rescale_rows: one scale vector per layer");
    DeepSplineNet out = net;
    for (std::size_t l = 0; l < out.layers.size(); ++l) {
        Layer& layer = out.layers[l];
        for (Eigen::Index n = 0; n < layer.outputs(); ++n) {
            const double c = scales[l](n);
            if (!(c > 0.0) || !std::isfinite(c)) {
                throw std::invalid_argument("rescale_rows: zero row " + std::to_string(n + 1) + " in layer " +
                                            std::to_string(l + 1));
            }
            if (c == 1.0) continue;
            layer.weights.row(n) /= c;
            auto& act = layer.activations[static_cast<std::size_t>(n)];
            act = rescale_input(act, c);
        }
    }
    return out;
}

/// Scales every row to unit norm, absorbing the scale into the activations.
inline DeepSplineNet renormalize(const DeepSplineNet& net) {
    DeepSplineNet out = rescale_rows(net, row_norms(net));
    for (Layer& layer : out.layers) layer.normalized = true;
    return out;
}

/// Number of knots with |a| > tol, per layer.
inline std::vector<std::size_t> knot_counts(const DeepSplineNet& net, double tol = 0.0) {
    std::vector<std::size_t> counts;
    for (const Layer& layer : net.layers) {
        std::size_t count = 0;
        for (const LinearSpline& s : layer.activations) {
            for (double a : s.coeffs()) count += std::abs(a) > tol ? 1 : 0;
        }
        counts.push_back(count);
    }
    return counts;
}

inline std::size_t total_knot_count(const DeepSplineNet& net, double tol = 0.0) {
    std::size_t total = 0;
    for (std::size_t c : knot_counts(net, tol)) total += c;
    return total;
}

struct CpwlReport {
    std::vector<double> breakpoints;
    double max_deviation = 0.0;  // worst distance from the secant of any affine piece
    double scale = 1.0;
    bool passed = false;
};

/// Numerical check that a scalar-input network is continuous piecewise-linear
/// on [lo, hi]. Breakpoints are detected where the second difference of the
/// sampled outputs exceeds `detect_tol * scale`; between breakpoints every
/// sample must lie within `affine_tol * scale` of the piece's secant, with
/// scale = max(1, max |f|).
inline CpwlReport cpwl_check(const DeepSplineNet& net, double lo, double hi, std::size_t n_samples = 10001,
                             double affine_tol = 1e-8, double detect_tol = 1e-10) {
    if (net.input_dim() != 1) throw std::invalid_argument("cpwl_check: network input must be scalar");
    if (!(lo < hi) || n_samples < 3) throw std::invalid_argument("cpwl_check: need lo < hi and at least 3 samples");

    const auto n = static_cast<Eigen::Index>(n_samples);
    const double h = (hi - lo) / static_cast<double>(n - 1);
    Eigen::VectorXd xs(n);
    Eigen::MatrixXd fs(n, net.output_dim());
    for (Eigen::Index i = 0; i < n; ++i) {
        xs(i) = i + 1 == n ? hi : lo + h * static_cast<double>(i);
        fs.row(i) = predict(net, Eigen::VectorXd::Constant(1, xs(i))).transpose();
    }

    CpwlReport report;
    report.scale = std::max(1.0, fs.cwiseAbs().maxCoeff());
    const double detect = detect_tol * report.scale;
    std::vector<double> found;

    for (Eigen::Index j = 0; j < fs.cols(); ++j) {
        const Eigen::VectorXd f = fs.col(j);
        std::vector<bool> flagged(static_cast<std::size_t>(n), false);
        for (Eigen::Index i = 1; i + 1 < n; ++i) {
            flagged[static_cast<std::size_t>(i)] = std::abs(f(i + 1) - 2.0 * f(i) + f(i - 1)) > detect;
        }

        // Affine pieces run between flagged clusters; a flag at i means a
        // breakpoint somewhere in (x_{i-1}, x_{i+1}).
        Eigen::Index start = 0;
        Eigen::Index i = 1;
        auto check_piece = [&](Eigen::Index a, Eigen::Index b) {
            if (b - a < 2) return;
            const double slope = (f(b) - f(a)) / (xs(b) - xs(a));
            for (Eigen::Index k = a + 1; k < b; ++k) {
                const double dev = std::abs(f(k) - (f(a) + slope * (xs(k) - xs(a))));
                report.max_deviation = std::max(report.max_deviation, dev);
            }
        };
        while (i + 1 < n) {
            if (!flagged[static_cast<std::size_t>(i)]) {
                ++i;
                continue;
            }
            Eigen::Index end = i;
            while (end + 2 < n && flagged[static_cast<std::size_t>(end + 1)]) ++end;
            check_piece(start, i - 1);

            // Intersect the lines of the neighbouring pieces to locate the break.
            double location = 0.5 * (xs(i - 1) + xs(end + 1));
            if (i >= 2 && end + 2 < n) {
                const double left = (f(i - 1) - f(i - 2)) / h;
                const double right = (f(end + 2) - f(end + 1)) / h;
                if (left != right) {
                    const double t = (f(end + 1) - f(i - 1) - right * (xs(end + 1) - xs(i - 1))) / (left - right);
                    location = std::clamp(xs(i - 1) + t, xs(i - 1), xs(end + 1));
                }
            }
            found.push_back(location);
            start = end + 1;
            i = end + 1;
        }
        check_piece(start, n - 1);
    }

    std::sort(found.begin(), found.end());
    for (double b : found) {
        if (report.breakpoints.empty() || b - report.breakpoints.back() > 2.0 * h) report.breakpoints.push_back(b);
    }
    report.passed = report.max_deviation < affine_tol * report.scale;
    return report;
}

} // namespace deepspline
