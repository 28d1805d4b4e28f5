// Model configuration (incl. the published channel-table presets), the
// end-to-end forward pass, weighted BCE loss, reverse-mode gradients for all
// trainable parameters, a plain-SGD toy training loop, and evaluation
// metrics.
#pragma once

#include <functional>
#include <optional>
#include <sstream>

#include "layers.hpp"

namespace pqsteer {

enum class QReduceKind { late, gradual };

struct PqLayerCfg {
    TensorType tau_out;  // declared output type (gates are added internally)
    QScheme q_out;
};

struct ModelConfig {
    std::string name = "custom";
    TensorType tau_in{1};
    QScheme q_in;
    std::vector<PqLayerCfg> pq_layers;
    QReduceKind q_reduce = QReduceKind::late;
    TensorType q_reduce_tau_out;  // gradual only
    std::vector<TensorType> p_layers;
    FilterFamily pq_family = FilterFamily::tp_d;
    int tp_d = 1;
    RadialKind p_radial = RadialKind::cosine;
    bool p_radial_fc = false;
    std::vector<int> fc_hidden = {50, 50, 50};
    int p_filter = 2;
    uint64_t seed = 1;
    std::vector<int> q_table;  // structural Q counts (input, then per pq-layer)

    void validate() const {
        require(tau_in == TensorType{1}, "ModelConfig: input type must be a single scalar");
        require(!p_layers.empty(), "ModelConfig: at least one p-layer required");
        require(p_layers.back() == TensorType{1},
                "ModelConfig: final layer type must be (1) for segmentation");
        require(q_in.size() >= 1, "ModelConfig: input q-scheme required");
        if (q_reduce == QReduceKind::gradual) {
            require(q_reduce_tau_out.dim() > 0, "ModelConfig: gradual reduction type missing");
            int prev = q_in.size();
            for (const PqLayerCfg& l : pq_layers) {
                require(l.q_out.size() < prev,
                        "ModelConfig: gradual mode requires strictly shrinking q-schemes");
                prev = l.q_out.size();
            }
        } else {
            for (const PqLayerCfg& l : pq_layers)
                require(l.q_out.size() == q_in.size(),
                        "ModelConfig: late mode keeps the input q-scheme in all pq-layers");
        }
        require(p_filter >= 0, "ModelConfig: negative filter radius");
    }

    // pq rows, then the q-reduction row, then the p rows (as in the
    // published channel tables)
    std::vector<TensorType> layer_tau_table() const {
        std::vector<TensorType> rows;
        for (const PqLayerCfg& l : pq_layers) rows.push_back(l.tau_out);
        if (q_reduce == QReduceKind::gradual) {
            rows.push_back(q_reduce_tau_out);
        } else {
            rows.push_back(pq_layers.empty() ? tau_in : pq_layers.back().tau_out);
        }
        for (const TensorType& t : p_layers) rows.push_back(t);
        return rows;
    }
};

inline std::string canonical_string(const ModelConfig& cfg) {
    std::ostringstream os;
    os.precision(17);
    auto put_tau = [&](const TensorType& t) {
        os << "(";
        for (int c : t.counts) os << c << ",";
        os << ")";
    };
    auto put_scheme = [&](const QScheme& q) {
        os << "[";
        for (const Vec3& v : q.vectors) os << v.x << " " << v.y << " " << v.z << ";";
        os << "]";
    };
    os << "name=" << cfg.name << "|tau_in=";
    put_tau(cfg.tau_in);
    os << "|q_in=";
    put_scheme(cfg.q_in);
    os << "|pq=";
    for (const PqLayerCfg& l : cfg.pq_layers) {
        put_tau(l.tau_out);
        put_scheme(l.q_out);
    }
    os << "|reduce=" << (cfg.q_reduce == QReduceKind::late ? "late" : "gradual");
    os << "|reduce_tau=";
    put_tau(cfg.q_reduce_tau_out);
    os << "|p=";
    for (const TensorType& t : cfg.p_layers) put_tau(t);
    os << "|family=" << family_name(cfg.pq_family) << "|d=" << cfg.tp_d;
    os << "|p_radial=" << static_cast<int>(cfg.p_radial) << (cfg.p_radial_fc ? "+fc" : "");
    os << "|hidden=";
    for (int h : cfg.fc_hidden) os << h << ",";
    os << "|P=" << cfg.p_filter << "|seed=" << cfg.seed;
    return os.str();
}

inline uint64_t config_hash(const ModelConfig& cfg) { return fnv1a64(canonical_string(cfg)); }

// ------------------------------------------------------------------ presets

namespace detail {

struct PresetTable {
    std::vector<TensorType> pq;
    TensorType qred;
    std::vector<TensorType> p;
    QReduceKind reduce;
    std::vector<int> q_table;
};

inline const std::map<std::string, PresetTable>& preset_tables() {
    static const std::map<std::string, PresetTable> tables = [] {
        std::map<std::string, PresetTable> t;
        using TT = TensorType;
        auto late = [&](const std::string& layers, std::vector<TT> pq, std::vector<TT> p) {
            t[layers] = PresetTable{std::move(pq), TT{}, std::move(p), QReduceKind::late, {42, 42}};
            t[layers].qred = t[layers].pq.back();
        };
        late("1+1+2", {TT{5, 3}}, {TT{10, 5}, TT{1}});
        late("1+1+3", {TT{5, 3}}, {TT{50, 10}, TT{20, 5}, TT{1}});
        late("1+1+4", {TT{7, 4}}, {TT{20, 5}, TT{10, 3}, TT{5, 2}, TT{1}});
        late("1+1+4(l2)", {TT{7, 4}}, {TT{20, 5, 2}, TT{10, 3, 1}, TT{5, 2}, TT{1}});
        late("1+1+4(l2/l3)", {TT{7, 4}}, {TT{20, 5, 2, 1}, TT{10, 3, 1, 0}, TT{5, 2}, TT{1}});
        late("1(l2)+1+4(l2)", {TT{5, 3, 1}}, {TT{20, 5, 2}, TT{10, 3, 1}, TT{5, 2}, TT{1}});
        late("1(l2/l3)+1+4(l2/l3)", {TT{5, 3, 1, 1}},
             {TT{20, 5, 2, 1}, TT{10, 3, 1, 0}, TT{5, 2}, TT{1}});
        late("1+1+5", {TT{5, 3}}, {TT{20, 5}, TT{10, 3}, TT{5, 2}, TT{3, 1}, TT{1}});
        auto gradual = [&](const std::string& layers, std::vector<TT> pq, TT qred,
                           std::vector<TT> p, std::vector<int> qt) {
            t[layers] = PresetTable{std::move(pq), std::move(qred), std::move(p),
                                    QReduceKind::gradual, std::move(qt)};
        };
        gradual("0+1+3", {}, TT{100, 20}, {TT{50, 10}, TT{10, 5}, TT{1}}, {42});
        gradual("g1+1+2", {TT{15, 7}}, TT{70, 10}, {TT{20, 5}, TT{1}}, {42, 7});
        gradual("g1+1+3", {TT{15, 7}}, TT{70, 10}, {TT{20, 5}, TT{10, 3}, TT{1}}, {42, 7});
        gradual("g2+1+1", {TT{3, 2}, TT{5, 3}}, TT{70, 10}, {TT{1}}, {42, 27, 7});
        return t;
    }();
    return tables;
}

struct PresetId {
    std::string table;
    FilterFamily family;
    RadialKind p_radial;
    bool fc;
};

inline const std::map<std::string, PresetId>& preset_ids() {
    static const std::map<std::string, PresetId> ids = {
        {"l_TP1_1+2", {"1+1+2", FilterFamily::tp_d, RadialKind::cosine, true}},
        {"l_TP1_1+3", {"1+1+3", FilterFamily::tp_d, RadialKind::cosine, true}},
        {"l_TP1_1+4", {"1+1+4", FilterFamily::tp_d, RadialKind::cosine, true}},
        {"l_TP1_1+4(l2)", {"1+1+4(l2)", FilterFamily::tp_d, RadialKind::cosine, true}},
        {"l_TP1_1+4(l3)", {"1+1+4(l2/l3)", FilterFamily::tp_d, RadialKind::cosine, true}},
        {"l_TP1_1(l2)+4(l2)", {"1(l2)+1+4(l2)", FilterFamily::tp_d, RadialKind::cosine, true}},
        {"l_TP1_1(l3)+4(l3)",
         {"1(l2/l3)+1+4(l2/l3)", FilterFamily::tp_d, RadialKind::cosine, true}},
        {"l_TP1_1+5", {"1+1+5", FilterFamily::tp_d, RadialKind::cosine, true}},
        {"l_TPvec_1+4", {"1+1+4", FilterFamily::tp_vec, RadialKind::cosine, true}},
        {"l_pq-diff-p_1+4", {"1+1+4", FilterFamily::pq_diff_p, RadialKind::cosine, true}},
        {"l_pq-diff-q_1+4", {"1+1+4", FilterFamily::pq_diff_q, RadialKind::cosine, true}},
        {"l_TP1_1+4_Gfc", {"1+1+4", FilterFamily::tp_d, RadialKind::gaussian, true}},
        {"l_TP1_1+4_c", {"1+1+4", FilterFamily::tp_d, RadialKind::cosine, false}},
        {"l_TP1_1+4_G", {"1+1+4", FilterFamily::tp_d, RadialKind::gaussian, false}},
        {"g_TP1_0+3", {"0+1+3", FilterFamily::tp_d, RadialKind::gaussian, false}},
        {"g_TP1_1+2", {"g1+1+2", FilterFamily::tp_d, RadialKind::cosine, true}},
        {"g_TP1_1+3", {"g1+1+3", FilterFamily::tp_d, RadialKind::cosine, true}},
        {"g_TP1_2+1", {"g2+1+1", FilterFamily::tp_d, RadialKind::cosine, true}},
    };
    return ids;
}

}  // namespace detail

inline std::vector<std::string> preset_names() {
    std::vector<std::string> out;
    for (const auto& [k, v] : detail::preset_ids()) out.push_back(k);
    return out;
}

// Structural preset: channel tables as published; q-schemes must be bound
// before building (the table Q counts are metadata, not usable schemes).
inline ModelConfig preset(const std::string& id) {
    auto iit = detail::preset_ids().find(id);
    require(iit != detail::preset_ids().end(), "unknown preset: " + id);
    const detail::PresetId& pid = iit->second;
    const detail::PresetTable& tab = detail::preset_tables().at(pid.table);
    ModelConfig cfg;
    cfg.name = id;
    cfg.q_reduce = tab.reduce;
    for (const TensorType& t : tab.pq) cfg.pq_layers.push_back({t, QScheme{}});
    if (tab.reduce == QReduceKind::gradual) cfg.q_reduce_tau_out = tab.qred;
    cfg.p_layers = tab.p;
    cfg.pq_family = pid.family;
    cfg.p_radial = pid.p_radial;
    cfg.p_radial_fc = pid.fc;
    cfg.q_table = tab.q_table;
    return cfg;
}

// Binds small q-schemes to a preset for desk-scale runs. Late mode keeps the
// input scheme; gradual mode shrinks through octahedral subsets to 6 points.
inline ModelConfig bind_preset(const std::string& id, const QScheme& q_in, int p_filter = 2,
                               uint64_t seed = 1, const std::vector<int>& fc_hidden = {8, 8, 8}) {
    ModelConfig cfg = preset(id);
    cfg.q_in = q_in;
    cfg.p_filter = p_filter;
    cfg.seed = seed;
    cfg.fc_hidden = fc_hidden;
    if (cfg.q_reduce == QReduceKind::late) {
        for (PqLayerCfg& l : cfg.pq_layers) l.q_out = q_in;
    } else {
        // shrink through octahedrally closed sets (26 -> 14 -> 6 points)
        double r = std::max(q_in.max_length(), 0.5);
        int prev = q_in.size();
        for (PqLayerCfg& l : cfg.pq_layers) {
            int pts = 0;
            for (int cand : {26, 14, 6})
                if (cand < prev) {
                    pts = cand;
                    break;
                }
            require(pts > 0, "bind_preset: input scheme too small for gradual shrinking");
            l.q_out = make_octahedral_scheme(1, {r}, pts);
            prev = pts;
        }
    }
    cfg.validate();
    return cfg;
}

// -------------------------------------------------------------- built model

enum class StageKind { conv, qwa };

struct Stage {
    StageKind kind = StageKind::conv;
    // conv
    KernelBasis basis;
    GateSpec gates;
    bool gated = false;
    bool radial_learned = false;
    // qwa
    RadialBasisSpec qwa_radial;
    int qwa_channels = 0;
};

struct Model {
    ModelConfig cfg;
    std::vector<Stage> stages;

    static Model build(const ModelConfig& cfg_in, const PrecomputeOptions& opts = {}) {
        ModelConfig cfg = cfg_in;
        cfg.validate();
        Model m;
        m.cfg = cfg;
        TensorType cur_tau = cfg.tau_in;
        QScheme cur_q = cfg.q_in;
        uint64_t stage_seed = cfg.seed;

        auto add_conv = [&](const TensorType& declared, const QScheme& q_out,
                            FilterFamily family, bool gated) {
            Stage st;
            st.kind = StageKind::conv;
            st.gated = gated;
            st.gates = GateSpec::for_type(declared);
            TensorType produce = gated ? st.gates.augmented() : declared;
            PFilterGrid grid{cfg.p_filter};
            FilterBasisSpec spec =
                make_filter_spec(family, cfg.tp_d, grid, cur_q, q_out, cfg.p_radial,
                                 cfg.p_radial_fc, ++stage_seed, cfg.fc_hidden);
            st.radial_learned = cfg.p_radial_fc;
            st.basis = precompute_basis(spec, cur_tau, produce, cur_q, q_out, grid, opts);
            m.stages.push_back(std::move(st));
            cur_tau = declared;
            cur_q = q_out;
        };

        for (const PqLayerCfg& l : cfg.pq_layers) add_conv(l.tau_out, l.q_out, cfg.pq_family, true);
        if (cfg.q_reduce == QReduceKind::gradual) {
            add_conv(cfg.q_reduce_tau_out, QScheme::origin(), cfg.pq_family, true);
        } else {
            Stage st;
            st.kind = StageKind::qwa;
            st.qwa_radial = make_gaussian(static_cast<int>(cur_q.distinct_lengths().size()),
                                          cur_q.max_length());
            st.qwa_channels = cur_tau.num_channels();
            m.stages.push_back(std::move(st));
            cur_q = QScheme::origin();
        }
        for (size_t i = 0; i < cfg.p_layers.size(); ++i) {
            bool last = (i + 1 == cfg.p_layers.size());
            add_conv(cfg.p_layers[i], QScheme::origin(), FilterFamily::p_space, !last);
        }
        return m;
    }
};

// ------------------------------------------------------------------- params

struct StageParams {
    Weights w;        // conv
    MlpWeights mlp;   // conv with learned p radial basis
    Matrix qwa_w;     // qwa
};

struct ModelParams {
    std::vector<StageParams> stages;
    uint64_t hash = 0;

    size_t param_count() const {
        size_t n = 0;
        for (const StageParams& sp : stages) {
            for (const auto& a : sp.w.w)
                for (const auto& b : a)
                    for (const auto& c : b) n += c.size();
            n += sp.mlp.param_count();
            n += sp.qwa_w.a.size();
        }
        return n;
    }

    void for_each_param(const std::function<void(double&)>& f) {
        for (StageParams& sp : stages) {
            sp.w.for_each(f);
            sp.mlp.for_each_param(f);
            for (double& v : sp.qwa_w.a) f(v);
        }
    }

    std::vector<double> flat() {
        std::vector<double> out;
        for_each_param([&](double& v) { out.push_back(v); });
        return out;
    }

    void set_flat(const std::vector<double>& v) {
        size_t i = 0;
        for_each_param([&](double& p) { p = v[i++]; });
        require(i == v.size(), "set_flat: size mismatch");
    }
};

inline ModelParams init_params(const Model& m, uint64_t seed) {
    ModelParams out;
    out.hash = config_hash(m.cfg);
    Rng rng(seed);
    for (const Stage& st : m.stages) {
        StageParams sp;
        if (st.kind == StageKind::conv) {
            sp.w = init_weights(st.basis, rng);
            if (st.radial_learned) sp.mlp = st.basis.spec.radial_p.mlp;  // seeded at build time
        } else {
            sp.qwa_w = Matrix(st.qwa_channels, st.qwa_radial.size);
            double bound = 1.0 / std::sqrt(static_cast<double>(st.qwa_radial.size));
            for (double& v : sp.qwa_w.a) v = rng.uniform(-bound, bound);
        }
        out.stages.push_back(std::move(sp));
    }
    return out;
}

inline ModelParams zero_params_like(const Model& m) {
    ModelParams out;
    out.hash = config_hash(m.cfg);
    for (const Stage& st : m.stages) {
        StageParams sp;
        if (st.kind == StageKind::conv) {
            sp.w = Weights::zeros_like(st.basis);
            if (st.radial_learned) {
                sp.mlp = st.basis.spec.radial_p.mlp;
                sp.mlp.for_each_param([](double& v) { v = 0.0; });
            }
        } else {
            sp.qwa_w = Matrix(st.qwa_channels, st.qwa_radial.size);
        }
        out.stages.push_back(std::move(sp));
    }
    return out;
}

// ------------------------------------------------------------------ forward

struct Prediction {
    MultiChannelTensorField prob;  // type (1), single q sample, values in [0,1]
};

struct ForwardCache {
    std::vector<MultiChannelTensorField> inputs;  // input to each stage
    std::vector<MultiChannelTensorField> pre;     // conv outputs before the nonlinearity
    std::vector<Kernel> kernels;
    MultiChannelTensorField logits;
};

namespace detail {

inline RadialBasisSpec radial_with_mlp(const RadialBasisSpec& spec, const MlpWeights& w) {
    RadialBasisSpec r = spec;
    r.mlp = w;
    return r;
}

inline MultiChannelTensorField merge_b0_if_needed(const MultiChannelTensorField& in) {
    std::vector<int> zeros;
    for (int n = 0; n < in.qsize(); ++n)
        if (in.q_scheme.vectors[static_cast<size_t>(n)].norm() <= 1e-9) zeros.push_back(n);
    if (zeros.size() <= 1) return in;
    return b0_mean(in, zeros);
}

}  // namespace detail

inline Prediction forward(const Model& m, const ModelParams& params,
                          const MultiChannelTensorField& input, ForwardCache* cache = nullptr) {
    require(params.hash == config_hash(m.cfg), "forward: params do not match the config");
    require(params.stages.size() == m.stages.size(), "forward: stage count mismatch");
    MultiChannelTensorField x = detail::merge_b0_if_needed(input);
    require(x.type == m.cfg.tau_in, "forward: input type mismatch");
    require(x.qsize() == m.cfg.q_in.size(), "forward: input q count mismatch");
    for (int n = 0; n < x.qsize(); ++n)
        require((x.q_scheme.vectors[n] - m.cfg.q_in.vectors[n]).norm() <= 1e-9,
                "forward: input q-scheme differs from the configured one");

    for (size_t si = 0; si < m.stages.size(); ++si) {
        const Stage& st = m.stages[si];
        const StageParams& sp = params.stages[si];
        if (cache) cache->inputs.push_back(x);
        if (st.kind == StageKind::conv) {
            Kernel k;
            if (st.radial_learned) {
                RadialBasisSpec ovr = detail::radial_with_mlp(st.basis.spec.radial_p, sp.mlp);
                k = assemble_kernel(st.basis, sp.w, &ovr);
            } else {
                k = assemble_kernel(st.basis, sp.w);
            }
            MultiChannelTensorField pre = pq_conv(k, x);
            if (cache) {
                cache->kernels.push_back(k);
                cache->pre.push_back(pre);
            }
            x = st.gated ? gated_nonlinearity(pre, st.gates) : std::move(pre);
        } else {
            x = q_reduce_weighted_average(x, st.qwa_radial, sp.qwa_w);
            if (cache) {
                cache->kernels.emplace_back();
                cache->pre.emplace_back();
            }
        }
    }
    if (cache) cache->logits = x;
    Prediction out;
    out.prob = x;
    for (double& v : out.prob.data) v = sigmoid(v);
    return out;
}

// --------------------------------------------------------------------- loss

constexpr double kLogClamp = 1e-12;

inline double loss_weighted_bce(const MultiChannelTensorField& prob,
                                const MultiChannelTensorField& labels,
                                const MultiChannelTensorField& mask, double pos_weight) {
    require(prob.data.size() == labels.data.size() && prob.data.size() == mask.data.size(),
            "loss: shape mismatch");
    double sum = 0;
    size_t count = 0;
    for (size_t i = 0; i < prob.data.size(); ++i) {
        if (mask.data[i] <= 0.5) continue;
        double p = prob.data[i], y = labels.data[i];
        sum -= pos_weight * y * std::log(std::max(p, kLogClamp)) +
               (1.0 - y) * std::log(std::max(1.0 - p, kLogClamp));
        ++count;
    }
    require(count > 0, "loss: empty mask");
    return sum / static_cast<double>(count);
}

// ---------------------------------------------------------------- gradients

struct Sample {
    MultiChannelTensorField field, labels, mask;
};

// Loss and full parameter gradient for one sample (reverse mode; the
// gradient has the same stage structure as the parameters).
inline double loss_and_grad(const Model& m, const ModelParams& params, const Sample& sample,
                            double pos_weight, ModelParams* grad_out) {
    ForwardCache cache;
    Prediction pred = forward(m, params, sample.field, &cache);
    double loss = loss_weighted_bce(pred.prob, sample.labels, sample.mask, pos_weight);
    if (!grad_out) return loss;

    *grad_out = zero_params_like(m);
    grad_out->hash = params.hash;

    // d(loss)/d(logit) in the combined sigmoid+BCE form, which stays bounded
    // and keeps its restoring sign under saturation (the log clamps guard
    // only the loss value in the 1e-12 tails)
    MultiChannelTensorField g = cache.logits;
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

    for (int si = static_cast<int>(m.stages.size()) - 1; si >= 0; --si) {
        const Stage& st = m.stages[static_cast<size_t>(si)];
        const StageParams& sp = params.stages[static_cast<size_t>(si)];
        StageParams& gp = grad_out->stages[static_cast<size_t>(si)];
        const MultiChannelTensorField& input = cache.inputs[static_cast<size_t>(si)];
        if (st.kind == StageKind::conv) {
            MultiChannelTensorField g_pre =
                st.gated ? gated_nonlinearity_backward(cache.pre[static_cast<size_t>(si)],
                                                       st.gates, g)
                         : std::move(g);
            const Kernel& k = cache.kernels[static_cast<size_t>(si)];
            std::vector<double> gk = pq_conv_backward_kernel(k, input, g_pre);
            if (st.radial_learned) {
                RadialBasisSpec ovr = detail::radial_with_mlp(st.basis.spec.radial_p, sp.mlp);
                accumulate_weight_grad(st.basis, gk, gp.w, &sp.w, &ovr, &gp.mlp);
            } else {
                accumulate_weight_grad(st.basis, gk, gp.w);
            }
            if (si > 0) g = pq_conv_backward_input(k, g_pre);
        } else {
            g = q_reduce_weighted_average_backward(input, st.qwa_radial, sp.qwa_w, g, gp.qwa_w);
        }
    }
    return loss;
}

inline ModelParams grad_params(const Model& m, const ModelParams& params, const Sample& sample,
                               double pos_weight) {
    ModelParams g;
    loss_and_grad(m, params, sample, pos_weight, &g);
    return g;
}

// ----------------------------------------------------------------- training

struct TrainResult {
    ModelParams params;
    std::vector<double> loss_trace;
};

inline double default_pos_weight(const std::vector<Sample>& data) {
    double pos = 0, neg = 0;
    for (const Sample& s : data)
        for (size_t i = 0; i < s.labels.data.size(); ++i) {
            if (s.mask.data[i] <= 0.5) continue;
            if (s.labels.data[i] > 0.5)
                pos += 1;
            else
                neg += 1;
        }
    require(pos > 0 && neg > 0, "default_pos_weight: both classes required");
    return neg / pos;
}

// Rescales freshly drawn parameters so the peak |logit| on the probe field
// reaches the target. The variance-scaled draw leaves multi-stage models at
// the flat spot around the origin where plain SGD stalls; one global factor
// (bisected in log space, deterministic) moves the start into the live
// region without touching the relative weight structure.
inline void normalize_init_scale(const Model& m, ModelParams& params,
                                 const MultiChannelTensorField& probe, double target_peak = 1.5) {
    ModelParams base = params;
    auto peak_at = [&](double s) {
        ModelParams p = base;
        p.for_each_param([&](double& v) { v *= s; });
        ForwardCache cache;
        forward(m, p, probe, &cache);
        double peak = 0;
        for (double v : cache.logits.data) peak = std::max(peak, std::abs(v));
        return peak;
    };
    double lo = 0.0, hi = 0.0;  // log10 scale bracket
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
    double scale = std::pow(10.0, 0.5 * (lo + hi));
    params.for_each_param([&](double& v) { v *= scale; });
}

// Plain SGD, batch size one, fixed learning rate. Deterministic given the
// config seed; aborts with a diagnostic if the loss diverges.
inline TrainResult train_toy(const Model& m, const std::vector<Sample>& data, int steps, double lr,
                             double pos_weight = -1.0) {
    require(!data.empty(), "train_toy: empty dataset");
    if (pos_weight <= 0) pos_weight = default_pos_weight(data);
    TrainResult result;
    result.params = init_params(m, m.cfg.seed);
    normalize_init_scale(m, result.params, data.front().field);
    ModelParams grad;
    for (int step = 0; step < steps; ++step) {
        const Sample& s = data[static_cast<size_t>(step) % data.size()];
        double loss = loss_and_grad(m, result.params, s, pos_weight, &grad);
        if (!std::isfinite(loss))
            throw Error("train_toy: loss diverged at step " + std::to_string(step));
        result.loss_trace.push_back(loss);
        if (lr != 0.0) {
            std::vector<double> gflat = grad.flat();
            size_t i = 0;
            result.params.for_each_param([&](double& v) { v -= lr * gflat[i++]; });
        }
    }
    return result;
}

// ------------------------------------------------------------------ metrics

struct Metrics {
    double roc_auc = 0, avg_precision = 0, dice = 0;
};

inline Metrics metrics(const MultiChannelTensorField& prob, const MultiChannelTensorField& labels,
                       const MultiChannelTensorField& mask) {
    require(prob.data.size() == labels.data.size() && prob.data.size() == mask.data.size(),
            "metrics: shape mismatch");
    std::vector<std::pair<double, int>> scored;  // (score, label)
    size_t tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < prob.data.size(); ++i) {
        if (mask.data[i] <= 0.5) continue;
        int y = labels.data[i] > 0.5 ? 1 : 0;
        scored.push_back({prob.data[i], y});
        int pred = prob.data[i] > 0.5 ? 1 : 0;
        if (pred && y) ++tp;
        if (pred && !y) ++fp;
        if (!pred && y) ++fn;
    }
    require(!scored.empty(), "metrics: empty mask");
    size_t n_pos = 0;
    for (const auto& [s, y] : scored) n_pos += static_cast<size_t>(y);
    size_t n_neg = scored.size() - n_pos;
    require(n_pos > 0 && n_neg > 0, "metrics: AUC/AvgPrec undefined for single-class input");

    Metrics out;
    // AUC via the rank statistic with average ranks for ties
    std::sort(scored.begin(), scored.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    double rank_sum_pos = 0;
    size_t i = 0;
    while (i < scored.size()) {
        size_t j = i;
        while (j < scored.size() && scored[j].first == scored[i].first) ++j;
        double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
        for (size_t k = i; k < j; ++k)
            if (scored[k].second) rank_sum_pos += avg_rank;
        i = j;
    }
    out.roc_auc = (rank_sum_pos - 0.5 * static_cast<double>(n_pos) * (n_pos + 1)) /
                  (static_cast<double>(n_pos) * static_cast<double>(n_neg));

    // AvgPrec: step integration of the precision-recall curve over the
    // distinct predicted scores, descending
    double ap = 0;
    double prev_recall = 0;
    size_t tp_c = 0, pred_c = 0;
    size_t idx = scored.size();
    while (idx > 0) {
        double threshold = scored[idx - 1].first;
        while (idx > 0 && scored[idx - 1].first == threshold) {
            --idx;
            ++pred_c;
            tp_c += static_cast<size_t>(scored[idx].second);
        }
        double precision = static_cast<double>(tp_c) / static_cast<double>(pred_c);
        double recall = static_cast<double>(tp_c) / static_cast<double>(n_pos);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    out.avg_precision = ap;

    out.dice = (2.0 * static_cast<double>(tp)) /
               std::max<double>(2.0 * static_cast<double>(tp) + fp + fn, 1.0);
    return out;
}

}  // namespace pqsteer
