// Scalar radial basis families (Gaussian, compact-support cosine, and a
// small fully connected network applied to an inner basis) plus their
// multiplicative combination.
#pragma once

#include <functional>
#include <memory>

#include "common.hpp"

namespace pqsteer {

enum class RadialKind { gaussian, cosine, mlp };

// Fully connected network weights, layer-major. Hidden layers use ReLU, the
// output layer is affine.
struct MlpWeights {
    std::vector<Matrix> W;
    std::vector<std::vector<double>> b;

    size_t param_count() const {
        size_t n = 0;
        for (const auto& w : W) n += w.a.size();
        for (const auto& bv : b) n += bv.size();
        return n;
    }

    void for_each_param(const std::function<void(double&)>& f) {
        for (auto& w : W)
            for (double& v : w.a) f(v);
        for (auto& bv : b)
            for (double& v : bv) f(v);
    }
};

struct RadialBasisSpec {
    RadialKind kind = RadialKind::gaussian;
    int size = 1;                  // K; for mlp this is the output width
    std::vector<double> centers;   // gaussian/cosine
    double sigma = 1.0;            // gaussian width
    double gamma = 1.0;            // cosine normalization
    std::vector<int> hidden;       // mlp hidden layer sizes
    std::shared_ptr<RadialBasisSpec> inner;  // mlp inner basis
    MlpWeights mlp;                // mlp parameters (trainable)
};

namespace detail {
inline double center_spacing(int k, double x_max) {
    if (k > 1 && x_max > 0) return x_max / (k - 1);
    return std::max(x_max, 1.0);
}
}  // namespace detail

// Centers equally spaced on [0, x_max]; a single center sits at x_max.
inline std::vector<double> default_centers(int k, double x_max) {
    require(k >= 1, "radial basis: K must be >= 1");
    std::vector<double> c(static_cast<size_t>(k));
    if (k == 1) {
        c[0] = x_max;
    } else {
        for (int i = 0; i < k; ++i) c[i] = x_max * i / (k - 1);
    }
    return c;
}

inline RadialBasisSpec make_gaussian(int k, double x_max) {
    RadialBasisSpec s;
    s.kind = RadialKind::gaussian;
    s.size = k;
    s.centers = default_centers(k, x_max);
    s.sigma = detail::center_spacing(k, x_max);
    return s;
}

inline RadialBasisSpec make_cosine(int k, double x_max) {
    RadialBasisSpec s;
    s.kind = RadialKind::cosine;
    s.size = k;
    s.centers = default_centers(k, x_max);
    s.gamma = 1.0 / detail::center_spacing(k, x_max);
    return s;
}

// inner basis -> hidden ReLU layers -> affine output of width k_out,
// weights uniform in +-1/sqrt(fan_in) from the given seed
inline RadialBasisSpec make_mlp(RadialBasisSpec inner, std::vector<int> hidden, int k_out,
                                uint64_t seed) {
    RadialBasisSpec s;
    s.kind = RadialKind::mlp;
    s.size = k_out;
    s.hidden = std::move(hidden);
    s.inner = std::make_shared<RadialBasisSpec>(std::move(inner));
    Rng rng(seed);
    int prev = s.inner->size;
    std::vector<int> widths = s.hidden;
    widths.push_back(k_out);
    for (int w : widths) {
        double bound = 1.0 / std::sqrt(static_cast<double>(prev));
        Matrix wm(w, prev);
        for (double& v : wm.a) v = rng.uniform(-bound, bound);
        std::vector<double> bv(static_cast<size_t>(w));
        for (double& v : bv) v = rng.uniform(-bound, bound);
        s.mlp.W.push_back(std::move(wm));
        s.mlp.b.push_back(std::move(bv));
        prev = w;
    }
    return s;
}

inline std::vector<double> eval_radial(const RadialBasisSpec& spec, double x) {
    require(x >= 0, "eval_radial: negative radius");
    std::vector<double> out(static_cast<size_t>(spec.size), 0.0);
    switch (spec.kind) {
        case RadialKind::gaussian: {
            require(spec.sigma > 0, "eval_radial: sigma must be positive");
            for (int k = 0; k < spec.size; ++k) {
                double d = x - spec.centers[static_cast<size_t>(k)];
                out[static_cast<size_t>(k)] = std::exp(-d * d / (2.0 * spec.sigma * spec.sigma));
            }
            break;
        }
        case RadialKind::cosine: {
            require(spec.gamma > 0, "eval_radial: gamma must be positive");
            for (int k = 0; k < spec.size; ++k) {
                double u = spec.gamma * (x - spec.centers[static_cast<size_t>(k)]);
                if (u >= -1.0 && u <= 1.0) {
                    double c = std::cos(u * M_PI / 2.0);
                    out[static_cast<size_t>(k)] = c * c;
                }
            }
            break;
        }
        case RadialKind::mlp: {
            require(spec.inner != nullptr, "eval_radial: mlp without inner basis");
            std::vector<double> h = eval_radial(*spec.inner, x);
            for (size_t layer = 0; layer < spec.mlp.W.size(); ++layer) {
                h = spec.mlp.W[layer].apply(h);
                for (size_t i = 0; i < h.size(); ++i) h[i] += spec.mlp.b[layer][i];
                if (layer + 1 < spec.mlp.W.size())
                    for (double& v : h) v = std::max(v, 0.0);
            }
            out = std::move(h);
            break;
        }
    }
    return out;
}

// Accumulates d(loss)/d(mlp params) for the given input radius and upstream
// gradient. Gradients wrt the fixed inner basis are not propagated (its
// parameters are not trainable).
inline void mlp_backward(const RadialBasisSpec& spec, double x, const std::vector<double>& dLdout,
                         MlpWeights& grad) {
    require(spec.kind == RadialKind::mlp, "mlp_backward: spec is not an mlp");
    std::vector<std::vector<double>> acts;  // pre-activation inputs per layer
    std::vector<double> h = eval_radial(*spec.inner, x);
    acts.push_back(h);
    for (size_t layer = 0; layer < spec.mlp.W.size(); ++layer) {
        h = spec.mlp.W[layer].apply(h);
        for (size_t i = 0; i < h.size(); ++i) h[i] += spec.mlp.b[layer][i];
        if (layer + 1 < spec.mlp.W.size()) {
            for (double& v : h) v = std::max(v, 0.0);
            acts.push_back(h);
        }
    }
    if (grad.W.empty()) {
        for (const auto& w : spec.mlp.W) grad.W.emplace_back(w.rows, w.cols);
        for (const auto& bv : spec.mlp.b) grad.b.emplace_back(bv.size(), 0.0);
    }
    std::vector<double> delta = dLdout;
    for (int layer = static_cast<int>(spec.mlp.W.size()) - 1; layer >= 0; --layer) {
        const std::vector<double>& in = acts[static_cast<size_t>(layer)];
        Matrix& gw = grad.W[static_cast<size_t>(layer)];
        for (int r = 0; r < gw.rows; ++r) {
            grad.b[static_cast<size_t>(layer)][static_cast<size_t>(r)] +=
                delta[static_cast<size_t>(r)];
            for (int c = 0; c < gw.cols; ++c)
                gw(r, c) += delta[static_cast<size_t>(r)] * in[static_cast<size_t>(c)];
        }
        if (layer == 0) break;
        const Matrix& w = spec.mlp.W[static_cast<size_t>(layer)];
        std::vector<double> prev(static_cast<size_t>(w.cols), 0.0);
        for (int c = 0; c < w.cols; ++c) {
            double s = 0;
            for (int r = 0; r < w.rows; ++r) s += w(r, c) * delta[static_cast<size_t>(r)];
            // ReLU mask from the stored post-activation values
            prev[static_cast<size_t>(c)] = (in[static_cast<size_t>(c)] > 0.0) ? s : 0.0;
        }
        delta = std::move(prev);
    }
}

// Outer product flattened row-major: index k = k1 * K2 + k2.
inline std::vector<double> combine_product(const std::vector<double>& a,
                                           const std::vector<double>& b) {
    std::vector<double> out;
    out.reserve(a.size() * b.size());
    for (double va : a)
        for (double vb : b) out.push_back(va * vb);
    return out;
}

}  // namespace pqsteer
