// Command-line surface: phantom generation, kernel export, forward passes,
// equivariance audits, toy training, and metric evaluation.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "pqsteer/io.hpp"

namespace fs = std::filesystem;
using namespace pqsteer;

namespace {

std::string sample_name(int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "sample%03d", i);
    return buf;
}

std::vector<Sample> load_dataset(const std::string& dir) {
    std::vector<Sample> out;
    for (int i = 0;; ++i) {
        fs::path base = fs::path(dir) / sample_name(i);
        fs::path field = base;
        field += ".qstf";
        if (!fs::exists(field)) break;
        Sample s;
        s.field = read_qstf(field.string());
        fs::path labels = base;
        labels += ".labels.qstf";
        s.labels = read_qstf(labels.string());
        fs::path mask = base;
        mask += ".mask.qstf";
        s.mask = read_qstf(mask.string());
        out.push_back(std::move(s));
    }
    require(!out.empty(), "no sample files found under " + dir);
    return out;
}

int run_gen(const std::string& spec_path, const std::string& out_dir) {
    PhantomBatchSpec batch = load_phantom_spec(spec_path);
    fs::create_directories(out_dir);
    for (int i = 0; i < batch.count; ++i) {
        PhantomSpec spec = batch.spec;
        spec.seed = batch.spec.seed + static_cast<uint64_t>(i);
        Phantom ph = generate_phantom(spec);
        fs::path base = fs::path(out_dir) / sample_name(i);
        write_qstf(base.string() + ".qstf", ph.field);
        write_qstf(base.string() + ".labels.qstf", ph.labels);
        write_qstf(base.string() + ".mask.qstf", ph.mask);
    }
    std::cout << "wrote " << batch.count << " phantom(s) to " << out_dir << "\n";
    return 0;
}

int run_preset(const std::string& id, int q_points, double q_radius, bool with_b0, int p_filter,
               uint64_t seed, const std::vector<int>& fc_hidden, const std::string& out_path) {
    QScheme q = make_octahedral_scheme(1, {q_radius}, q_points);
    if (with_b0) q.vectors.insert(q.vectors.begin(), Vec3{0, 0, 0});
    ModelConfig cfg = bind_preset(id, q, p_filter, seed, fc_hidden);
    detail::spit(out_path, model_config_to_json(cfg).dump(2) + "\n");
    std::cout << "wrote " << out_path << " (config hash " << std::hex << config_hash(cfg)
              << std::dec << ")\n";
    return 0;
}

int run_build_kernel(const std::string& config_path, int layer, const std::string& params_path,
                     const std::string& out_path) {
    ModelConfig cfg = load_model_config(config_path);
    Model m = Model::build(cfg);
    ModelParams params =
        params_path.empty() ? init_params(m, cfg.seed) : read_sep1(params_path, m);
    int conv_idx = 0;
    for (size_t si = 0; si < m.stages.size(); ++si) {
        if (m.stages[si].kind != StageKind::conv) continue;
        if (conv_idx == layer) {
            const Stage& st = m.stages[si];
            Kernel k;
            if (st.radial_learned) {
                RadialBasisSpec ovr = st.basis.spec.radial_p;
                ovr.mlp = params.stages[si].mlp;
                k = assemble_kernel(st.basis, params.stages[si].w, &ovr);
            } else {
                k = assemble_kernel(st.basis, params.stages[si].w);
            }
            write_sek1(out_path, k);
            std::cout << "wrote " << out_path << " (" << k.rows << "x" << k.cols << "x"
                      << k.grid.side() << "^3)\n";
            return 0;
        }
        ++conv_idx;
    }
    throw Error("layer index out of range: " + std::to_string(layer) + " (model has " +
                std::to_string(conv_idx) + " conv layers)");
}

int run_forward(const std::string& config_path, const std::string& params_path,
                const std::string& in_path, const std::string& out_path) {
    ModelConfig cfg = load_model_config(config_path);
    Model m = Model::build(cfg);
    ModelParams params = read_sep1(params_path, m);
    MultiChannelTensorField in = read_qstf(in_path);
    Prediction pred = forward(m, params, in);
    write_qstf(out_path, pred.prob);
    std::cout << "wrote " << out_path << "\n";
    return 0;
}

int run_audit(const std::string& config_path, const std::string& params_path,
              const std::string& in_path, const std::string& mode,
              const std::string& report_path, double tol) {
    ModelConfig cfg = load_model_config(config_path);
    Model m = Model::build(cfg);
    ModelParams params =
        params_path.empty() ? init_params(m, cfg.seed) : read_sep1(params_path, m);
    MultiChannelTensorField in = read_qstf(in_path);
    int border = audit_border(m);

    std::vector<std::pair<RigidMotion, double>> results;
    MultiChannelTensorField merged = detail::merge_b0_if_needed(in);
    if (mode == "cube") {
        std::vector<double> errors = cube_group_audit(model_map(m, params), merged, border);
        for (size_t i = 0; i < errors.size(); ++i)
            results.push_back({RigidMotion::rotation_only(cube_rotations()[i]), errors[i]});
    } else if (mode == "continuous") {
        Rng rng(cfg.seed ^ 0xa0d17u);
        for (int trial = 0; trial < 4; ++trial) {
            Rotation g = Rotation::random(rng);
            Model m_rot = Model::build(rotated_config(m.cfg, g));
            ModelParams p_rot = retarget_params(params, m_rot);
            double err = equivariance_error(model_map(m, params), model_map(m_rot, p_rot), merged,
                                            RigidMotion::rotation_only(g), Interp::trilinear,
                                            border);
            results.push_back({RigidMotion::rotation_only(g), err});
        }
    } else {
        throw Error("audit: mode must be 'cube' or 'continuous'");
    }
    double max_error = 0;
    for (const auto& [motion, err] : results) max_error = std::max(max_error, err);
    if (!report_path.empty()) write_audit_report(report_path, mode, config_hash(cfg), results);
    std::cout << "max equivariance error: " << max_error << " (tolerance " << tol << ")\n";
    return max_error <= tol ? 0 : 2;
}

int run_train(const std::string& config_path, const std::string& data_dir, int steps, double lr,
              const std::string& out_path, const std::string& trace_path) {
    ModelConfig cfg = load_model_config(config_path);
    Model m = Model::build(cfg);
    std::vector<Sample> data = load_dataset(data_dir);
    TrainResult result = train_toy(m, data, steps, lr);
    write_sep1(out_path, result.params);
    if (!trace_path.empty()) write_loss_trace(trace_path, result.loss_trace);
    std::cout << "trained " << steps << " steps; final loss " << result.loss_trace.back() << "\n";
    std::cout << "wrote " << out_path << "\n";
    return 0;
}

int run_eval(const std::string& pred_path, const std::string& labels_path,
             const std::string& mask_path) {
    MultiChannelTensorField pred = read_qstf(pred_path);
    MultiChannelTensorField labels = read_qstf(labels_path);
    MultiChannelTensorField mask = read_qstf(mask_path);
    Metrics met = metrics(pred, labels, mask);
    json out = {{"roc_auc", met.roc_auc},
                {"avg_precision", met.avg_precision},
                {"dice", met.dice}};
    std::cout << out.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"roto-translationally equivariant p/q-space filtering toolkit"};
    app.require_subcommand(1);

    std::string spec_path, out_path, config_path, params_path, in_path, report_path;
    std::string data_dir, pred_path, labels_path, mask_path, trace_path;
    std::string mode = "cube", preset_id;
    int layer = 0, steps = 100, q_points = 6;
    double lr = 0.05, tol = 1e-8, q_radius = 1.0;
    uint64_t seed = 1;
    int p_filter = 2;
    bool with_b0 = false;
    std::vector<int> fc_hidden = {8, 8, 8};

    auto* gen = app.add_subcommand("gen", "generate phantom fields, labels, and masks");
    gen->add_option("--spec", spec_path, "phantom spec JSON")->required();
    gen->add_option("--out", out_path, "output directory")->required();

    auto* preset_cmd = app.add_subcommand("preset", "emit a bound preset model config");
    preset_cmd->add_option("--id", preset_id, "preset id, e.g. l_TP1_1+2")->required();
    preset_cmd->add_option("--out", out_path, "output config JSON")->required();
    preset_cmd->add_option("--q-points", q_points, "octahedral scheme size (6, 14, 26)");
    preset_cmd->add_option("--q-radius", q_radius, "q shell radius");
    preset_cmd->add_flag("--with-b0", with_b0, "include a q=0 sample in the scheme");
    preset_cmd->add_option("--p-filter", p_filter, "filter radius in p-space");
    preset_cmd->add_option("--seed", seed, "config seed");
    preset_cmd->add_option("--fc-hidden", fc_hidden, "hidden widths for +fc radial bases");

    auto* bk = app.add_subcommand("build-kernel", "assemble and export one layer kernel");
    bk->add_option("--config", config_path, "model config JSON")->required();
    bk->add_option("--layer", layer, "conv layer index")->required();
    bk->add_option("--params", params_path, "SEP1 checkpoint (default: seeded init)");
    bk->add_option("--out", out_path, "output SEK1 file")->required();

    auto* fwd = app.add_subcommand("forward", "run the model on a field");
    fwd->add_option("--config", config_path, "model config JSON")->required();
    fwd->add_option("--params", params_path, "SEP1 checkpoint")->required();
    fwd->add_option("--in", in_path, "input QSTF field")->required();
    fwd->add_option("--out", out_path, "output QSTF probability field")->required();

    auto* audit = app.add_subcommand("audit", "equivariance audit");
    audit->add_option("--config", config_path, "model config JSON")->required();
    audit->add_option("--params", params_path, "SEP1 checkpoint (default: seeded init)");
    audit->add_option("--in", in_path, "input QSTF field")->required();
    audit->add_option("--mode", mode, "cube | continuous")->required();
    audit->add_option("--report", report_path, "JSON report path");
    audit->add_option("--tol", tol, "failure threshold on the max relative error");

    auto* train = app.add_subcommand("train", "toy SGD training");
    train->add_option("--config", config_path, "model config JSON")->required();
    train->add_option("--data", data_dir, "directory with sampleNNN.[labels.|mask.]qstf")
        ->required();
    train->add_option("--steps", steps, "SGD steps");
    train->add_option("--lr", lr, "learning rate");
    train->add_option("--out", out_path, "output SEP1 checkpoint")->required();
    train->add_option("--trace", trace_path, "CSV loss trace path");

    auto* eval = app.add_subcommand("eval", "metrics for a prediction");
    eval->add_option("--pred", pred_path, "QSTF probability field")->required();
    eval->add_option("--labels", labels_path, "QSTF label field")->required();
    eval->add_option("--mask", mask_path, "QSTF mask field")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return run_gen(spec_path, out_path);
        if (preset_cmd->parsed())
            return run_preset(preset_id, q_points, q_radius, with_b0, p_filter, seed, fc_hidden,
                              out_path);
        if (bk->parsed()) return run_build_kernel(config_path, layer, params_path, out_path);
        if (fwd->parsed()) return run_forward(config_path, params_path, in_path, out_path);
        if (audit->parsed())
            return run_audit(config_path, params_path, in_path, mode, report_path, tol);
        if (train->parsed())
            return run_train(config_path, data_dir, steps, lr, out_path, trace_path);
        if (eval->parsed()) return run_eval(pred_path, labels_path, mask_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
