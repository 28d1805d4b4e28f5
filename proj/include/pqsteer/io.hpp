// File formats: QSTF fields, SEK1 kernel exports, SEP1 parameter
// checkpoints, model/phantom JSON configs, audit reports, and CSV loss
// traces. All multi-byte integers and floats are little-endian.
#pragma once

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "baseline.hpp"
#include "phantom.hpp"

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

namespace pqsteer {

using nlohmann::json;

namespace detail {

class ByteReader {
public:
    ByteReader(std::vector<char> bytes, std::string name)
        : bytes_(std::move(bytes)), name_(std::move(name)) {}

    size_t offset() const { return off_; }

    void fail(const std::string& what) const {
        throw Error(name_ + ": " + what + " at byte " + std::to_string(off_));
    }

    void read_raw(void* dst, size_t n) {
        if (off_ + n > bytes_.size()) fail("unexpected end of file");
        std::memcpy(dst, bytes_.data() + off_, n);
        off_ += n;
    }

    template <typename T>
    T read() {
        T v;
        read_raw(&v, sizeof(T));
        return v;
    }

    std::string read_string(size_t n) {
        std::string s(n, '\0');
        read_raw(s.data(), n);
        return s;
    }

    void expect_magic(const char* magic) {
        std::string got = read_string(4);
        if (got != magic) {
            off_ -= 4;
            fail(std::string("bad magic, expected '") + magic + "', got '" + got + "'");
        }
    }

    size_t remaining() const { return bytes_.size() - off_; }

private:
    std::vector<char> bytes_;
    std::string name_;
    size_t off_ = 0;
};

inline std::vector<char> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open file: " + path);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    return bytes;
}

inline void spit(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "cannot write file: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(out.good(), "write failed: " + path);
}

inline void append(std::string& buf, const void* data, size_t n) {
    buf.append(static_cast<const char*>(data), n);
}

template <typename T>
inline void append_value(std::string& buf, T v) {
    append(buf, &v, sizeof(T));
}

inline json parse_header(ByteReader& r, uint32_t len) {
    std::string text = r.read_string(len);
    try {
        return json::parse(text);
    } catch (const std::exception& e) {
        r.fail(std::string("invalid JSON header: ") + e.what());
    }
    return {};
}

inline json scheme_to_json(const QScheme& q) {
    json out = json::array();
    for (const Vec3& v : q.vectors) out.push_back({v.x, v.y, v.z});
    return out;
}

inline QScheme scheme_from_json(const json& j) {
    QScheme q;
    for (const auto& v : j) q.vectors.push_back({v.at(0), v.at(1), v.at(2)});
    return q;
}

}  // namespace detail

// --------------------------------------------------------------------- QSTF

// magic 'QSTF', u16 version=1, u32 header length, JSON header, raw payload
// in field index order (component outermost, q fastest).
inline void write_qstf(const std::string& path, const MultiChannelTensorField& f,
                       const std::string& dtype = "f64") {
    require(dtype == "f64" || dtype == "f32", "write_qstf: dtype must be f32 or f64");
    json header = {{"p_dims", {f.p_dims[0], f.p_dims[1], f.p_dims[2]}},
                   {"tensor_type", f.type.counts},
                   {"q_scheme", detail::scheme_to_json(f.q_scheme)},
                   {"dtype", dtype}};
    std::string htext = header.dump();
    std::string buf;
    buf.reserve(14 + htext.size() + f.data.size() * 8);
    detail::append(buf, "QSTF", 4);
    detail::append_value<uint16_t>(buf, 1);
    detail::append_value<uint32_t>(buf, static_cast<uint32_t>(htext.size()));
    buf += htext;
    if (dtype == "f64") {
        detail::append(buf, f.data.data(), f.data.size() * sizeof(double));
    } else {
        for (double v : f.data) detail::append_value<float>(buf, static_cast<float>(v));
    }
    detail::spit(path, buf);
}

inline MultiChannelTensorField read_qstf(const std::string& path) {
    detail::ByteReader r(detail::slurp(path), path);
    r.expect_magic("QSTF");
    uint16_t version = r.read<uint16_t>();
    if (version != 1) r.fail("unsupported version " + std::to_string(version));
    uint32_t hlen = r.read<uint32_t>();
    json header = detail::parse_header(r, hlen);

    TensorType type(header.at("tensor_type").get<std::vector<int>>());
    std::array<int, 3> dims{header.at("p_dims").at(0), header.at("p_dims").at(1),
                            header.at("p_dims").at(2)};
    QScheme q = detail::scheme_from_json(header.at("q_scheme"));
    std::string dtype = header.at("dtype");
    MultiChannelTensorField f(type, dims, q);
    size_t elems = f.data.size();
    size_t want = elems * (dtype == "f64" ? 8 : 4);
    if (r.remaining() != want)
        r.fail("payload size " + std::to_string(r.remaining()) + " does not match header (want " +
               std::to_string(want) + ")");
    if (dtype == "f64") {
        r.read_raw(f.data.data(), elems * sizeof(double));
    } else if (dtype == "f32") {
        for (size_t i = 0; i < elems; ++i) f.data[i] = r.read<float>();
    } else {
        r.fail("unknown dtype '" + dtype + "'");
    }
    return f;
}

// --------------------------------------------------------------------- SEK1

// magic 'SEK1', u32 header length, JSON header, raw f64 entries in
// (row, col, p_filter) order with p_filter fastest.
inline void write_sek1(const std::string& path, const Kernel& k) {
    int s = k.grid.side();
    json header = {{"shape", {k.rows, k.cols, s, s, s}},
                   {"tau_in", k.tau_in.counts},
                   {"tau_out", k.tau_out.counts},
                   {"q_in", detail::scheme_to_json(k.q_in)},
                   {"q_out", detail::scheme_to_json(k.q_out)},
                   {"P_filter", k.grid.radius},
                   {"dtype", "f64"},
                   {"index_order", "row,col,p_filter"}};
    std::string htext = header.dump();
    std::string buf;
    buf.reserve(8 + htext.size() + k.k.size() * 8);
    detail::append(buf, "SEK1", 4);
    detail::append_value<uint32_t>(buf, static_cast<uint32_t>(htext.size()));
    buf += htext;
    int npf = k.grid.num_offsets();
    for (int row = 0; row < k.rows; ++row)
        for (int col = 0; col < k.cols; ++col)
            for (int pf = 0; pf < npf; ++pf) detail::append_value<double>(buf, k.at(pf, row, col));
    detail::spit(path, buf);
}

inline Kernel read_sek1(const std::string& path) {
    detail::ByteReader r(detail::slurp(path), path);
    r.expect_magic("SEK1");
    uint32_t hlen = r.read<uint32_t>();
    json header = detail::parse_header(r, hlen);
    Kernel k;
    k.tau_in = TensorType(header.at("tau_in").get<std::vector<int>>());
    k.tau_out = TensorType(header.at("tau_out").get<std::vector<int>>());
    k.q_in = detail::scheme_from_json(header.at("q_in"));
    k.q_out = detail::scheme_from_json(header.at("q_out"));
    k.grid = PFilterGrid{header.at("P_filter").get<int>()};
    k.rows = header.at("shape").at(0);
    k.cols = header.at("shape").at(1);
    int npf = k.grid.num_offsets();
    size_t want = static_cast<size_t>(k.rows) * k.cols * npf * 8;
    if (r.remaining() != want) r.fail("payload size does not match header");
    k.k.assign(static_cast<size_t>(npf) * k.rows * k.cols, 0.0);
    for (int row = 0; row < k.rows; ++row)
        for (int col = 0; col < k.cols; ++col)
            for (int pf = 0; pf < npf; ++pf) k.at(pf, row, col) = r.read<double>();
    return k;
}

// --------------------------------------------------------------------- SEP1

// magic 'SEP1', u32 header length, JSON header with the config hash and the
// array directory, raw f64 arrays concatenated in declared order.
inline void write_sep1(const std::string& path, const ModelParams& params) {
    ModelParams copy = params;  // flat() is non-const
    json arrays = json::array();
    std::string payload;
    for (size_t si = 0; si < copy.stages.size(); ++si) {
        StageParams& sp = copy.stages[si];
        auto emit = [&](const std::string& name, const std::function<void()>& write_values,
                        size_t len) {
            if (len == 0) return;
            arrays.push_back({{"name", "stage" + std::to_string(si) + "." + name}, {"len", len}});
            write_values();
        };
        size_t wlen = 0;
        sp.w.for_each([&](double&) { ++wlen; });
        emit("w", [&] { sp.w.for_each([&](double& v) { detail::append_value(payload, v); }); },
             wlen);
        emit("mlp",
             [&] { sp.mlp.for_each_param([&](double& v) { detail::append_value(payload, v); }); },
             sp.mlp.param_count());
        emit("qwa",
             [&] {
                 for (double v : sp.qwa_w.a) detail::append_value(payload, v);
             },
             sp.qwa_w.a.size());
    }
    char hashbuf[32];
    std::snprintf(hashbuf, sizeof(hashbuf), "%016llx",
                  static_cast<unsigned long long>(params.hash));
    json header = {{"config_hash", hashbuf}, {"dtype", "f64"}, {"arrays", arrays}};
    std::string htext = header.dump();
    std::string buf;
    detail::append(buf, "SEP1", 4);
    detail::append_value<uint32_t>(buf, static_cast<uint32_t>(htext.size()));
    buf += htext;
    buf += payload;
    detail::spit(path, buf);
}

// Reads a checkpoint into the parameter structure of the given model.
// Fails loudly when the checkpoint belongs to a different config.
inline ModelParams read_sep1(const std::string& path, const Model& m) {
    detail::ByteReader r(detail::slurp(path), path);
    r.expect_magic("SEP1");
    uint32_t hlen = r.read<uint32_t>();
    json header = detail::parse_header(r, hlen);
    uint64_t want_hash = config_hash(m.cfg);
    uint64_t got_hash = std::stoull(header.at("config_hash").get<std::string>(), nullptr, 16);
    if (got_hash != want_hash)
        throw Error(path + ": checkpoint config hash " +
                    header.at("config_hash").get<std::string>() +
                    " does not match the model config");
    ModelParams params = zero_params_like(m);
    params.hash = want_hash;
    size_t declared = 0;
    for (const auto& a : header.at("arrays")) declared += a.at("len").get<size_t>();
    if (r.remaining() != declared * 8) r.fail("payload size does not match the array directory");
    params.for_each_param([&](double& v) { v = r.read<double>(); });
    if (r.remaining() != 0) r.fail("trailing bytes after parameter arrays");
    return params;
}

// ------------------------------------------------------------- model config

inline std::string radial_name(RadialKind kind, bool fc) {
    std::string base = kind == RadialKind::cosine ? "cosine" : "gaussian";
    return fc ? base + "+fc" : base;
}

inline json model_config_to_json(const ModelConfig& cfg) {
    json pq = json::array();
    for (const PqLayerCfg& l : cfg.pq_layers)
        pq.push_back({{"tau_out", l.tau_out.counts},
                      {"q_out", detail::scheme_to_json(l.q_out)}});
    json filter = {{"family", family_name(cfg.pq_family)}};
    if (cfg.pq_family == FilterFamily::tp_d) filter["d"] = cfg.tp_d;
    json p_layers = json::array();
    for (const TensorType& t : cfg.p_layers) p_layers.push_back(t.counts);
    json j = {{"name", cfg.name},
              {"seed", cfg.seed},
              {"p_filter", cfg.p_filter},
              {"q_in", detail::scheme_to_json(cfg.q_in)},
              {"pq_layers", pq},
              {"q_reduce", cfg.q_reduce == QReduceKind::late ? "late" : "gradual"},
              {"p_layers", p_layers},
              {"filter", filter},
              {"p_radial", radial_name(cfg.p_radial, cfg.p_radial_fc)},
              {"fc_hidden", cfg.fc_hidden},
              {"q_table", cfg.q_table}};
    if (cfg.q_reduce == QReduceKind::gradual) j["q_reduce_tau_out"] = cfg.q_reduce_tau_out.counts;
    return j;
}

inline ModelConfig model_config_from_json(const json& j) {
    ModelConfig cfg;
    cfg.name = j.at("name");
    cfg.seed = j.at("seed");
    cfg.p_filter = j.at("p_filter");
    cfg.q_in = detail::scheme_from_json(j.at("q_in"));
    for (const auto& l : j.at("pq_layers")) {
        PqLayerCfg lc;
        lc.tau_out = TensorType(l.at("tau_out").get<std::vector<int>>());
        lc.q_out = detail::scheme_from_json(l.at("q_out"));
        cfg.pq_layers.push_back(std::move(lc));
    }
    std::string reduce = j.at("q_reduce");
    require(reduce == "late" || reduce == "gradual", "config: bad q_reduce '" + reduce + "'");
    cfg.q_reduce = reduce == "late" ? QReduceKind::late : QReduceKind::gradual;
    if (cfg.q_reduce == QReduceKind::gradual)
        cfg.q_reduce_tau_out = TensorType(j.at("q_reduce_tau_out").get<std::vector<int>>());
    for (const auto& t : j.at("p_layers"))
        cfg.p_layers.push_back(TensorType(t.get<std::vector<int>>()));
    cfg.pq_family = family_from_name(j.at("filter").at("family"));
    if (j.at("filter").contains("d")) cfg.tp_d = j.at("filter").at("d");
    std::string radial = j.at("p_radial");
    cfg.p_radial_fc = radial.size() > 3 && radial.substr(radial.size() - 3) == "+fc";
    std::string base = cfg.p_radial_fc ? radial.substr(0, radial.size() - 3) : radial;
    require(base == "cosine" || base == "gaussian", "config: bad p_radial '" + radial + "'");
    cfg.p_radial = base == "cosine" ? RadialKind::cosine : RadialKind::gaussian;
    if (j.contains("fc_hidden")) cfg.fc_hidden = j.at("fc_hidden").get<std::vector<int>>();
    if (j.contains("q_table")) cfg.q_table = j.at("q_table").get<std::vector<int>>();
    cfg.validate();
    return cfg;
}

inline ModelConfig load_model_config(const std::string& path) {
    std::vector<char> bytes = detail::slurp(path);
    json j;
    try {
        j = json::parse(bytes.begin(), bytes.end());
    } catch (const std::exception& e) {
        throw Error(path + ": invalid JSON: " + e.what());
    }
    try {
        return model_config_from_json(j);
    } catch (const json::exception& e) {
        throw Error(path + ": bad model config: " + e.what());
    }
}

// ------------------------------------------------------------ phantom config

struct PhantomBatchSpec {
    PhantomSpec spec;
    int count = 1;
    int b0_count = 0;  // extra q=0 samples prepended to the scheme
};

inline PhantomBatchSpec phantom_spec_from_json(const json& j) {
    PhantomBatchSpec batch;
    PhantomSpec& s = batch.spec;
    if (j.contains("dims")) {
        s.dims = {j.at("dims").at(0), j.at("dims").at(1), j.at("dims").at(2)};
    }
    s.seed = j.value("seed", s.seed);
    s.n_lesions = j.value("n_lesions", s.n_lesions);
    if (j.contains("lesion_radius")) {
        s.lesion_radius_min = j.at("lesion_radius").at(0);
        s.lesion_radius_max = j.at("lesion_radius").at(1);
    }
    s.b_scale = j.value("b_scale", s.b_scale);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.mask_border = j.value("mask_border", s.mask_border);
    s.lambda_parallel = j.value("lambda_parallel", s.lambda_parallel);
    s.lambda_perp = j.value("lambda_perp", s.lambda_perp);
    batch.count = j.value("count", 1);
    batch.b0_count = 0;

    const json& qj = j.at("q_scheme");
    std::string kind = qj.at("kind");
    if (kind == "octahedral") {
        std::vector<double> shells = qj.at("shells").get<std::vector<double>>();
        int points = qj.value("points", 6);
        s.q_scheme = make_octahedral_scheme(static_cast<int>(shells.size()), shells, points);
    } else if (kind == "uniform-random") {
        int count = qj.at("count");
        double radius = qj.value("radius", 1.0);
        Rng rng(qj.value("seed", 12345));
        QScheme q;
        for (int i = 0; i < count; ++i) q.vectors.push_back(rng.unit_vector() * radius);
        q.validate();
        s.q_scheme = q;
    } else if (kind == "explicit") {
        s.q_scheme = detail::scheme_from_json(qj.at("vectors"));
    } else {
        throw Error("phantom config: unknown q_scheme kind '" + kind + "'");
    }
    batch.b0_count = qj.value("b0_count", 0);
    for (int i = 0; i < batch.b0_count; ++i)
        s.q_scheme.vectors.insert(s.q_scheme.vectors.begin(), Vec3{0, 0, 0});
    return batch;
}

inline PhantomBatchSpec load_phantom_spec(const std::string& path) {
    std::vector<char> bytes = detail::slurp(path);
    try {
        return phantom_spec_from_json(json::parse(bytes.begin(), bytes.end()));
    } catch (const json::exception& e) {
        throw Error(path + ": bad phantom spec: " + e.what());
    }
}

// ------------------------------------------------------------- audit report

inline json motion_to_json(const RigidMotion& m) {
    json rot = json::array();
    for (int i = 0; i < 3; ++i) rot.push_back({m.g.R(i, 0), m.g.R(i, 1), m.g.R(i, 2)});
    return {{"rotation", rot}, {"translation", {m.t.x, m.t.y, m.t.z}}};
}

inline void write_audit_report(const std::string& path, const std::string& mode,
                               uint64_t cfg_hash,
                               const std::vector<std::pair<RigidMotion, double>>& results) {
    char hashbuf[32];
    std::snprintf(hashbuf, sizeof(hashbuf), "%016llx", static_cast<unsigned long long>(cfg_hash));
    json entries = json::array();
    double max_error = 0;
    for (const auto& [motion, error] : results) {
        entries.push_back({{"motion", motion_to_json(motion)}, {"error", error}, {"mode", mode},
                           {"config_hash", hashbuf}});
        max_error = std::max(max_error, error);
    }
    json report = {{"mode", mode},
                   {"config_hash", hashbuf},
                   {"results", entries},
                   {"max_error", max_error}};
    detail::spit(path, report.dump(2) + "\n");
}

inline void write_loss_trace(const std::string& path, const std::vector<double>& trace) {
    std::string csv = "step,loss\n";
    char line[64];
    for (size_t i = 0; i < trace.size(); ++i) {
        std::snprintf(line, sizeof(line), "%zu,%.17g\n", i, trace[i]);
        csv += line;
    }
    detail::spit(path, csv);
}

}  // namespace pqsteer
