// Non-rotation-equivariant reference model: ordinary 3D convolutions over
// the q samples treated as plain scalar channels, ReLU activations, sigmoid
// output. Used as the comparison baseline for the equivariant models.
#pragma once

#include "model.hpp"

namespace pqsteer {

struct PlainConvConfig {
    int in_channels = 1;
    std::vector<int> channels;  // per layer; last must be 1
    int p_filter = 2;
    uint64_t seed = 1;
};

struct PlainConvParams {
    std::vector<std::vector<double>> kernels;  // [layer], layout [pf][out][in]
    std::vector<std::vector<double>> biases;   // [layer][out]

    size_t param_count() const {
        size_t n = 0;
        for (const auto& k : kernels) n += k.size();
        for (const auto& b : biases) n += b.size();
        return n;
    }
};

// q samples become scalar channels on the p-grid
inline MultiChannelTensorField flatten_q_to_channels(const MultiChannelTensorField& in) {
    require(in.type == TensorType{1}, "flatten_q_to_channels: scalar field expected");
    MultiChannelTensorField out(TensorType{in.qsize()}, in.p_dims, QScheme::origin());
    for (int z = 0; z < in.p_dims[2]; ++z)
        for (int y = 0; y < in.p_dims[1]; ++y)
            for (int x = 0; x < in.p_dims[0]; ++x)
                for (int n = 0; n < in.qsize(); ++n)
                    out.at(n, z, y, x, 0) = in.at(0, z, y, x, n);
    return out;
}

namespace detail {

inline Kernel plain_kernel(int c_in, int c_out, int p_filter, const std::vector<double>& values) {
    Kernel k;
    k.tau_in = TensorType{c_in};
    k.tau_out = TensorType{c_out};
    k.q_in = QScheme::origin();
    k.q_out = QScheme::origin();
    k.grid = PFilterGrid{p_filter};
    k.rows = c_out;
    k.cols = c_in;
    require(values.size() == static_cast<size_t>(k.grid.num_offsets()) * c_out * c_in,
            "plain_kernel: size mismatch");
    k.k = values;
    return k;
}

}  // namespace detail

inline size_t plain_conv_param_count(const PlainConvConfig& cfg) {
    size_t n = 0;
    int prev = cfg.in_channels;
    int npf = PFilterGrid{cfg.p_filter}.num_offsets();
    for (int c : cfg.channels) {
        n += static_cast<size_t>(npf) * prev * c + static_cast<size_t>(c);
        prev = c;
    }
    return n;
}

inline PlainConvParams plain_conv_init(const PlainConvConfig& cfg) {
    require(!cfg.channels.empty() && cfg.channels.back() == 1,
            "PlainConvConfig: final layer must emit one channel");
    PlainConvParams p;
    Rng rng(cfg.seed);
    int prev = cfg.in_channels;
    int npf = PFilterGrid{cfg.p_filter}.num_offsets();
    for (int c : cfg.channels) {
        double bound = 1.0 / std::sqrt(static_cast<double>(prev) * npf);
        std::vector<double> k(static_cast<size_t>(npf) * prev * c);
        for (double& v : k) v = rng.uniform(-bound, bound);
        // positive initial biases keep the ReLU units alive on DC-heavy input
        std::vector<double> b(static_cast<size_t>(c));
        for (double& v : b) v = std::abs(rng.uniform(-bound, bound)) + 0.1 * bound;
        p.kernels.push_back(std::move(k));
        p.biases.push_back(std::move(b));
        prev = c;
    }
    return p;
}

inline Prediction plain_conv_forward(const PlainConvConfig& cfg, const PlainConvParams& params,
                                     const MultiChannelTensorField& input,
                                     std::vector<MultiChannelTensorField>* cache = nullptr) {
    MultiChannelTensorField x = flatten_q_to_channels(detail::merge_b0_if_needed(input));
    require(x.type.dim() == cfg.in_channels, "plain_conv_forward: channel mismatch");
    int prev = cfg.in_channels;
    for (size_t layer = 0; layer < cfg.channels.size(); ++layer) {
        int c = cfg.channels[layer];
        if (cache) cache->push_back(x);
        Kernel k = detail::plain_kernel(prev, c, cfg.p_filter, params.kernels[layer]);
        x = pq_conv(k, x);
        size_t plane = x.voxels();
        for (int ch = 0; ch < c; ++ch)
            for (size_t i = 0; i < plane; ++i)
                x.data[static_cast<size_t>(ch) * plane + i] += params.biases[layer][ch];
        bool last = (layer + 1 == cfg.channels.size());
        if (!last)
            for (double& v : x.data) v = std::max(v, 0.0);
        else if (cache)
            cache->push_back(x);  // logits
        prev = c;
    }
    Prediction out;
    out.prob = x;
    for (double& v : out.prob.data) v = sigmoid(v);
    return out;
}

inline double plain_conv_loss_and_grad(const PlainConvConfig& cfg, const PlainConvParams& params,
                                       const Sample& sample, double pos_weight,
                                       PlainConvParams* grad_out) {
    std::vector<MultiChannelTensorField> cache;
    Prediction pred = plain_conv_forward(cfg, params, sample.field, &cache);
    double loss = loss_weighted_bce(pred.prob, sample.labels, sample.mask, pos_weight);
    if (!grad_out) return loss;

    grad_out->kernels.clear();
    grad_out->biases.clear();
    for (const auto& k : params.kernels) grad_out->kernels.emplace_back(k.size(), 0.0);
    for (const auto& b : params.biases) grad_out->biases.emplace_back(b.size(), 0.0);

    // logits stored as the last cache entry
    MultiChannelTensorField g = cache.back();
    size_t count = 0;
    for (size_t i = 0; i < g.data.size(); ++i)
        if (sample.mask.data[i] > 0.5) ++count;
    for (size_t i = 0; i < g.data.size(); ++i) {
        if (sample.mask.data[i] <= 0.5) {
            g.data[i] = 0.0;
            continue;
        }
        double p = pred.prob.data[i], y = sample.labels.data[i];
        g.data[i] = (-pos_weight * y * (1.0 - p) + (1.0 - y) * p) / static_cast<double>(count);
    }

    int n_layers = static_cast<int>(cfg.channels.size());
    for (int layer = n_layers - 1; layer >= 0; --layer) {
        const MultiChannelTensorField& input = cache[static_cast<size_t>(layer)];
        int prev = layer == 0 ? cfg.in_channels : cfg.channels[static_cast<size_t>(layer) - 1];
        int c = cfg.channels[static_cast<size_t>(layer)];
        if (layer < n_layers - 1) {
            // undo ReLU: recompute the pre-activation sign from the stored input
            // of the NEXT layer (post-ReLU): zero gradient where it clipped
            const MultiChannelTensorField& post = cache[static_cast<size_t>(layer) + 1];
            for (size_t i = 0; i < g.data.size(); ++i)
                if (post.data[i] <= 0.0) g.data[i] = 0.0;
        }
        Kernel k = detail::plain_kernel(prev, c, cfg.p_filter,
                                        params.kernels[static_cast<size_t>(layer)]);
        std::vector<double> gk = pq_conv_backward_kernel(k, input, g);
        grad_out->kernels[static_cast<size_t>(layer)] = gk;
        size_t plane = g.voxels();
        for (int ch = 0; ch < c; ++ch) {
            double s = 0;
            for (size_t i = 0; i < plane; ++i) s += g.data[static_cast<size_t>(ch) * plane + i];
            grad_out->biases[static_cast<size_t>(layer)][static_cast<size_t>(ch)] = s;
        }
        if (layer > 0) g = pq_conv_backward_input(k, g);
    }
    return loss;
}

// same origin-flatness escape as the equivariant trainer: one global factor
// lifts the freshly drawn start into the live logit region
inline void plain_conv_normalize_init(const PlainConvConfig& cfg, PlainConvParams& params,
                                      const MultiChannelTensorField& probe,
                                      double target_peak = 1.5) {
    PlainConvParams base = params;
    auto scaled = [&](double s) {
        PlainConvParams p = base;
        for (auto& k : p.kernels)
            for (double& v : k) v *= s;
        for (auto& b : p.biases)
            for (double& v : b) v *= s;
        return p;
    };
    auto peak_at = [&](double s) {
        std::vector<MultiChannelTensorField> cache;
        PlainConvParams p = scaled(s);
        plain_conv_forward(cfg, p, probe, &cache);
        double peak = 0;
        for (double v : cache.back().data) peak = std::max(peak, std::abs(v));
        return peak;
    };
    double lo = 0.0, hi = 0.0;
    if (peak_at(1.0) >= target_peak) {
        lo = -6.0;
    } else {
        hi = 6.0;
    }
    for (int iter = 0; iter < 40; ++iter) {
        double mid = 0.5 * (lo + hi);
        if (peak_at(std::pow(10.0, mid)) < target_peak)
            lo = mid;
        else
            hi = mid;
    }
    params = scaled(std::pow(10.0, 0.5 * (lo + hi)));
}

inline std::vector<double> plain_conv_train(const PlainConvConfig& cfg, PlainConvParams& params,
                                            const std::vector<Sample>& data, int steps, double lr,
                                            double pos_weight = -1.0) {
    require(!data.empty(), "plain_conv_train: empty dataset");
    if (pos_weight <= 0) pos_weight = default_pos_weight(data);
    plain_conv_normalize_init(cfg, params, data.front().field);
    std::vector<double> trace;
    PlainConvParams grad;
    for (int step = 0; step < steps; ++step) {
        const Sample& s = data[static_cast<size_t>(step) % data.size()];
        double loss = plain_conv_loss_and_grad(cfg, params, s, pos_weight, &grad);
        if (!std::isfinite(loss))
            throw Error("plain_conv_train: loss diverged at step " + std::to_string(step));
        trace.push_back(loss);
        for (size_t layer = 0; layer < params.kernels.size(); ++layer) {
            for (size_t i = 0; i < params.kernels[layer].size(); ++i)
                params.kernels[layer][i] -= lr * grad.kernels[layer][i];
            for (size_t i = 0; i < params.biases[layer].size(); ++i)
                params.biases[layer][i] -= lr * grad.biases[layer][i];
        }
    }
    return trace;
}

}  // namespace pqsteer
