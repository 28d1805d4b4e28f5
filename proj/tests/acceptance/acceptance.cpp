// Acceptance suite: one check per shipping criterion, each printing a
// PASS/FAIL line. Run all criteria or a single one with --criterion N.
// Criterion 10 drives the installed CLI binary (--cli PATH).

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "pqsteer/baseline.hpp"
#include "pqsteer/io.hpp"

namespace fs = std::filesystem;
using namespace pqsteer;

namespace {

std::string g_cli_path = "./pqsteer";

// ---------------------------------------------------------------- criterion 1

bool algebra_suite(std::string& detail) {
    Rng rng(1001);
    double worst_sh = 0, worst_orth = 0, worst_hom = 0, worst_tp = 0;
    for (int trial = 0; trial < 100; ++trial) {
        Rotation g = Rotation::random(rng);
        Rotation h = Rotation::random(rng);
        Vec3 n = rng.unit_vector();
        for (int l = 0; l <= 3; ++l) {
            SphericalTensor lhs = sph_harm(l, g.inverse() * n);
            std::vector<double> rhs = wigner_d(l, g.inverse()).apply(sph_harm(l, n).v);
            for (int i = 0; i < lhs.size(); ++i)
                worst_sh = std::max(worst_sh, std::abs(lhs[i] - rhs[i]));

            Matrix dg = wigner_d(l, g);
            Matrix gram = dg.transposed() * dg;
            worst_orth = std::max(worst_orth, max_abs_diff(gram, Matrix::identity(2 * l + 1)));
            worst_hom = std::max(worst_hom, max_abs_diff(dg * wigner_d(l, h), wigner_d(l, g * h)));
        }
        int l1 = rng.uniform_int(0, 3), l2 = rng.uniform_int(0, 3);
        int l = rng.uniform_int(std::abs(l1 - l2), std::min(l1 + l2, 3));
        SphericalTensor a(l1), b(l2);
        for (double& v : a.v) v = rng.normal();
        for (double& v : b.v) v = rng.normal();
        SphericalTensor ga(l1, wigner_d(l1, g).apply(a.v));
        SphericalTensor gb(l2, wigner_d(l2, g).apply(b.v));
        SphericalTensor lhs = tensor_product(ga, gb, l);
        std::vector<double> rhs = wigner_d(l, g).apply(tensor_product(a, b, l).v);
        for (int i = 0; i < lhs.size(); ++i)
            worst_tp = std::max(worst_tp, std::abs(lhs[i] - rhs[i]));
    }
    bool zero_ok = true;
    for (int l1 = 0; l1 <= 4; ++l1)
        for (int l2 = 0; l2 <= 4; ++l2)
            for (int l = 0; l <= 4; ++l) {
                const CgBlock& blk = clebsch_gordan(l1, l2, l);
                double mx = 0;
                for (double v : blk.c) mx = std::max(mx, std::abs(v));
                bool admissible = std::abs(l1 - l2) <= l && l <= l1 + l2;
                if (!admissible && mx != 0.0) zero_ok = false;
                if (admissible && mx == 0.0) zero_ok = false;
            }
    char buf[256];
    std::snprintf(buf, sizeof(buf), "sh=%.2e orth=%.2e hom=%.2e tp=%.2e cg-pattern=%s", worst_sh,
                  worst_orth, worst_hom, worst_tp, zero_ok ? "exact" : "BROKEN");
    detail = buf;
    return worst_sh <= 1e-10 && worst_orth <= 1e-10 && worst_hom <= 1e-10 && worst_tp <= 1e-10 &&
           zero_ok;
}

// ---------------------------------------------------------------- criterion 2

bool filter_steerability(std::string& detail) {
    Rng rng(1002);
    PFilterGrid grid{2};
    QScheme q = make_octahedral_scheme(2, {0.7, 1.3});
    const FilterFamily families[] = {FilterFamily::p_space,   FilterFamily::q_space,
                                     FilterFamily::pq_diff,   FilterFamily::pq_diff_p,
                                     FilterFamily::pq_diff_q, FilterFamily::tp_vec,
                                     FilterFamily::tp_d};
    double worst_overall = 0;
    std::string worst_family;
    for (FilterFamily fam : families) {
        FilterBasisSpec spec = make_filter_spec(fam, 1, grid, q, q);
        double worst = 0;
        for (int draw = 0; draw < 200; ++draw) {
            int l_in = rng.uniform_int(0, 2), l_out = rng.uniform_int(0, 2);
            auto chans = enumerate_channels(spec, l_in, l_out);
            const AngularChannel& ch =
                chans[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(chans.size()) - 1))];
            int k = rng.uniform_int(0, radial_size(spec, ch) - 1);
            Vec3 dp = rng.in_ball(spec.p_cutoff);
            Vec3 qo = rng.in_ball(1.5), qi = rng.in_ball(1.5);
            Rotation g = Rotation::random(rng);
            SphericalTensor lhs = filter_eval(spec, ch, k, g * dp, g * qo, g * qi);
            std::vector<double> rhs =
                wigner_d(ch.l_filter, g).apply(filter_eval(spec, ch, k, dp, qo, qi).v);
            for (int i = 0; i < lhs.size(); ++i)
                worst = std::max(worst, std::abs(lhs[i] - rhs[i]));
        }
        if (worst > worst_overall) {
            worst_overall = worst;
            worst_family = family_name(fam);
        }
    }
    char buf[128];
    std::snprintf(buf, sizeof(buf), "worst %.2e (%s), 200 draws x 7 families", worst_overall,
                  worst_family.c_str());
    detail = buf;
    return worst_overall <= 1e-9;
}

// ---------------------------------------------------------------- criterion 3

bool conv_oracle_equivalence(std::string& detail) {
    const std::vector<TensorType> taus = {TensorType{1},       TensorType{2},
                                          TensorType{1, 1},    TensorType{2, 1},
                                          TensorType{1, 0, 1}, TensorType{1, 1, 1}};
    const FilterFamily families[] = {FilterFamily::p_space,   FilterFamily::q_space,
                                     FilterFamily::pq_diff,   FilterFamily::pq_diff_p,
                                     FilterFamily::pq_diff_q, FilterFamily::tp_vec,
                                     FilterFamily::tp_d};
    double worst = 0;
    for (int inst = 0; inst < 50; ++inst) {
        Rng rng(2000 + static_cast<uint64_t>(inst));
        int pf = rng.uniform_int(0, 2);
        int dim_hi = pf == 2 ? 4 : (pf == 1 ? 6 : 7);
        std::array<int, 3> dims{rng.uniform_int(3, dim_hi), rng.uniform_int(3, dim_hi),
                                rng.uniform_int(3, dim_hi)};
        QScheme q_in, q_out;
        int nqi = rng.uniform_int(2, 6), nqo = rng.uniform_int(1, 3);
        while (q_in.size() < nqi) {
            Vec3 v = rng.in_ball(1.2);
            if (q_in.find(v, 1e-6) < 0) q_in.vectors.push_back(v);
        }
        while (q_out.size() < nqo) {
            Vec3 v = rng.in_ball(1.2);
            if (q_out.find(v, 1e-6) < 0) q_out.vectors.push_back(v);
        }
        TensorType tin = taus[static_cast<size_t>(rng.uniform_int(0, 5))];
        TensorType tout = taus[static_cast<size_t>(rng.uniform_int(0, 5))];
        FilterFamily fam = families[inst % 7];
        PFilterGrid grid{pf};
        FilterBasisSpec spec = make_filter_spec(fam, 1, grid, q_in, q_out);
        KernelBasis basis = precompute_basis(spec, tin, tout, q_in, q_out, grid);
        Weights w = init_weights(basis, rng);
        Kernel k = assemble_kernel(basis, w);
        MultiChannelTensorField in(tin, dims, q_in);
        for (double& v : in.data) v = rng.normal();
        MultiChannelTensorField fast = pq_conv(k, in);
        MultiChannelTensorField ref = pq_conv_reference(basis, w, in);
        double num = 0, den = 0;
        for (size_t i = 0; i < fast.data.size(); ++i) {
            num += (fast.data[i] - ref.data[i]) * (fast.data[i] - ref.data[i]);
            den += ref.data[i] * ref.data[i];
        }
        worst = std::max(worst, std::sqrt(num / std::max(den, 1e-300)));
    }
    char buf[96];
    std::snprintf(buf, sizeof(buf), "worst relative error %.2e over 50 instances", worst);
    detail = buf;
    return worst <= 1e-10;
}

// ---------------------------------------------------------------- criterion 4

bool exact_grid_equivariance(std::string& detail) {
    QScheme q = make_octahedral_scheme(1, {1.0});
    q.vectors.insert(q.vectors.begin(), Vec3{0, 0, 0});
    ModelConfig cfg = bind_preset("l_TP1_1+2", q, 2, 404);
    Model m = Model::build(cfg);
    ModelParams params = init_params(m, cfg.seed);
    params.for_each_param([](double& v) { v *= 8.0; });  // O(1) logits

    PhantomSpec pspec;
    pspec.dims = {17, 17, 17};
    pspec.seed = 44;
    pspec.n_lesions = 3;
    pspec.q_scheme = q;
    Phantom ph = generate_phantom(pspec);

    std::vector<double> errors = cube_group_audit(model_map(m, params), ph.field, audit_border(m));
    double worst = *std::max_element(errors.begin(), errors.end());
    char buf[96];
    std::snprintf(buf, sizeof(buf), "max interior error %.2e over 24 rotations", worst);
    detail = buf;
    return worst <= 1e-10;
}

// ---------------------------------------------------------------- criterion 5

bool continuous_rotation_audit(std::string& detail) {
    QScheme q = make_octahedral_scheme(1, {1.0});
    Rng rng(1005);
    Rotation g = Rotation::random(rng);

    std::vector<double> errors;
    for (int size : {9, 17, 33}) {
        ModelConfig cfg = bind_preset("l_TP1_1+2", q, 1, 505);
        Model m = Model::build(cfg);
        ModelParams params = init_params(m, cfg.seed);
        params.for_each_param([](double& v) { v *= 8.0; });  // give the logits a usable scale
        Model m_rot = Model::build(rotated_config(cfg, g));
        ModelParams p_rot = retarget_params(params, m_rot);

        PhantomSpec pspec;
        pspec.dims = {size, size, size};
        pspec.seed = 55;
        pspec.n_lesions = 0;  // lesion spheres have hard edges; keep the field band-limited
        pspec.q_scheme = q;
        pspec.coord_scale = 8.0 / (size - 1);  // same physical phantom at all sizes
        Phantom ph = generate_phantom(pspec);

        // widen the frame so the crop stays inside the inscribed ball:
        // rotation sampling preserves radius, so only there is the action
        // free of zero-padding reads
        int geom = static_cast<int>(std::ceil((size - (size - 1) / std::sqrt(3.0)) / 2.0));
        int border = std::max(audit_border(m), geom);
        errors.push_back(equivariance_error(logit_map(m, params), logit_map(m_rot, p_rot),
                                            ph.field, RigidMotion::rotation_only(g),
                                            Interp::trilinear, border));
    }
    char buf[128];
    std::snprintf(buf, sizeof(buf), "errors 9/17/33: %.3e %.3e %.3e", errors[0], errors[1],
                  errors[2]);
    detail = buf;
    return errors[1] <= 1.1 * errors[0] && errors[2] <= 1.1 * errors[1] && errors[2] <= 0.05;
}

// ---------------------------------------------------------------- criterion 6

bool gradient_correctness(std::string& detail) {
    double worst = 0;
    std::string worst_preset;
    for (const std::string& id : preset_names()) {
        // smallest octahedral scheme the preset can shrink through
        QScheme q;
        Model m;
        bool bound = false;
        for (int pts : {6, 14, 26}) {
            try {
                q = make_octahedral_scheme(1, {1.0}, pts);
                m = Model::build(bind_preset(id, q, 1, 606));
                bound = true;
                break;
            } catch (const Error&) {
            }
        }
        if (!bound) {
            detail = "could not bind preset " + id;
            return false;
        }
        Rng rng(3000 + fnv1a64(id));
        Sample s;
        s.field = MultiChannelTensorField(TensorType{1}, {7, 7, 7}, q);
        // amplitude lifts the gradient norms of the deeper (flatter) presets
        // above the double-precision finite-difference floor
        for (double& v : s.field.data) v = 10.0 * rng.normal();
        s.labels = MultiChannelTensorField(TensorType{1}, {7, 7, 7}, QScheme::origin());
        for (double& v : s.labels.data) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
        s.mask = s.labels;
        for (double& v : s.mask.data) v = 1.0;

        for (int draw = 0; draw < 20; ++draw) {
            ModelParams params = init_params(m, 7000 + static_cast<uint64_t>(draw));
            ModelParams grad;
            loss_and_grad(m, params, s, 2.0, &grad);
            std::vector<double> gflat = grad.flat();
            std::vector<double> theta = params.flat();
            // probe along the gradient plus a random perturbation: a pure
            // random direction shrinks the directional derivative by
            // sqrt(dim) and drowns it in loss-evaluation roundoff
            double gnorm = 0;
            for (double v : gflat) gnorm += v * v;
            gnorm = std::sqrt(std::max(gnorm, 1e-300));
            std::vector<double> dir(theta.size());
            double norm = 0;
            for (size_t i = 0; i < dir.size(); ++i) {
                dir[i] = gflat[i] / gnorm + 0.5 * rng.normal() / std::sqrt(double(dir.size()));
                norm += dir[i] * dir[i];
            }
            norm = std::sqrt(norm);
            double analytic = 0;
            for (size_t i = 0; i < dir.size(); ++i) {
                dir[i] /= norm;
                analytic += gflat[i] * dir[i];
            }
            // Richardson-extrapolated central difference: the h^2 term
            // cancels, leaving only evaluation roundoff
            const double h = 4e-4;
            auto loss_at = [&](double t) {
                std::vector<double> probe = theta;
                for (size_t i = 0; i < probe.size(); ++i) probe[i] += t * dir[i];
                ModelParams p2 = params;
                p2.set_flat(probe);
                return loss_and_grad(m, p2, s, 2.0, nullptr);
            };
            double fd_h = (loss_at(h) - loss_at(-h)) / (2 * h);
            double fd_h2 = (loss_at(h / 2) - loss_at(-h / 2)) / h;
            double fd = (4.0 * fd_h2 - fd_h) / 3.0;
            double rel =
                std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-6});
            if (rel > worst) {
                worst = rel;
                worst_preset = id;
            }
        }
    }
    char buf[128];
    std::snprintf(buf, sizeof(buf), "worst relative error %.2e (%s), 20 draws x %zu presets",
                  worst, worst_preset.c_str(), preset_names().size());
    detail = buf;
    return worst <= 1e-5;
}

// ---------------------------------------------------------------- criterion 7

double mean_dice(const Model& m, const ModelParams& params, const std::vector<Phantom>& data) {
    double sum = 0;
    for (const Phantom& ph : data) {
        Prediction pred = forward(m, params, ph.field);
        sum += metrics(pred.prob, ph.labels, ph.mask).dice;
    }
    return sum / static_cast<double>(data.size());
}

double mean_dice_plain(const PlainConvConfig& cfg, const PlainConvParams& params,
                       const std::vector<Phantom>& data) {
    double sum = 0;
    for (const Phantom& ph : data) {
        Prediction pred = plain_conv_forward(cfg, params, ph.field);
        sum += metrics(pred.prob, ph.labels, ph.mask).dice;
    }
    return sum / static_cast<double>(data.size());
}

bool toy_reproduction(std::string& detail) {
    QScheme q6 = make_octahedral_scheme(1, {1.0});
    PhantomSpec base;
    base.dims = {11, 11, 11};
    base.n_lesions = 2;
    base.lesion_radius_min = 1.6;
    base.lesion_radius_max = 2.4;
    base.q_scheme = q6;
    base.q_scheme.vectors.insert(base.q_scheme.vectors.begin(), Vec3{0, 0, 0});
    base.q_scheme.vectors.insert(base.q_scheme.vectors.begin(), Vec3{0, 0, 0});
    base.mask_border = 2;

    auto make_set = [&](uint64_t seed0, int count, const Rotation* g) {
        std::vector<Phantom> out;
        for (int i = 0; i < count; ++i) {
            PhantomSpec s = base;
            s.seed = seed0 + static_cast<uint64_t>(i);
            if (g) s = rotated_spec(s, *g);
            out.push_back(generate_phantom(s));
        }
        return out;
    };

    std::vector<Phantom> train_set = make_set(300, 6, nullptr);
    std::vector<Phantom> held_out = make_set(400, 4, nullptr);
    // nontrivial cube rotations; rotated scans deliver the same q-vector
    // set, reordered to the canonical acquisition order
    QScheme q_merged = q6;
    q_merged.vectors.insert(q_merged.vectors.begin(), Vec3{0, 0, 0});
    std::vector<Rotation> test_rotations = {cube_rotations()[5], cube_rotations()[12],
                                            cube_rotations()[20]};
    std::vector<std::vector<Phantom>> held_out_rotated;
    for (const Rotation& g : test_rotations) {
        std::vector<Phantom> set = make_set(400, 4, &g);
        for (Phantom& ph : set)
            ph.field = reorder_q(detail::merge_b0_if_needed(ph.field), q_merged);
        held_out_rotated.push_back(std::move(set));
    }

    // rotation-invariant preprocessing: center each q-shell at its
    // training-set mean (shells are closed under rotations, so the offsets
    // are invariant); without it the DC-heavy positive signal starves SGD
    std::vector<double> shell_mean(2, 0.0), shell_cnt(2, 0.0);
    for (const Phantom& ph : train_set)
        for (int n = 0; n < ph.field.qsize(); ++n) {
            int sh = ph.field.q_scheme.vectors[static_cast<size_t>(n)].norm() < 0.5 ? 0 : 1;
            for (int z = 0; z < 11; ++z)
                for (int y = 0; y < 11; ++y)
                    for (int x = 0; x < 11; ++x) {
                        shell_mean[static_cast<size_t>(sh)] += ph.field.at(0, z, y, x, n);
                        shell_cnt[static_cast<size_t>(sh)] += 1;
                    }
        }
    for (int sh = 0; sh < 2; ++sh)
        shell_mean[static_cast<size_t>(sh)] /= shell_cnt[static_cast<size_t>(sh)];
    auto preprocess = [&](MultiChannelTensorField& f) {
        for (int n = 0; n < f.qsize(); ++n) {
            int sh = f.q_scheme.vectors[static_cast<size_t>(n)].norm() < 0.5 ? 0 : 1;
            for (int z = 0; z < f.p_dims[2]; ++z)
                for (int y = 0; y < f.p_dims[1]; ++y)
                    for (int x = 0; x < f.p_dims[0]; ++x)
                        f.at(0, z, y, x, n) =
                            f.at(0, z, y, x, n) / shell_mean[static_cast<size_t>(sh)] - 1.0;
        }
    };
    for (auto& ph : train_set) preprocess(ph.field);
    for (auto& ph : held_out) preprocess(ph.field);
    for (auto& set : held_out_rotated)
        for (auto& ph : set) preprocess(ph.field);

    std::vector<Sample> train_samples;
    for (const Phantom& ph : train_set) train_samples.push_back({ph.field, ph.labels, ph.mask});

    // equivariant micro model: one gated pq-layer, weighted-average
    // q-reduction, scalar p-layer
    ModelConfig cfg;
    cfg.name = "toy_eq";
    cfg.q_in = q_merged;
    cfg.pq_layers = {{TensorType{6, 3}, q_merged}};
    cfg.q_reduce = QReduceKind::late;
    cfg.p_layers = {TensorType{1}};
    cfg.pq_family = FilterFamily::tp_d;
    cfg.p_radial = RadialKind::cosine;
    cfg.p_filter = 1;
    cfg.seed = 707;
    Model m = Model::build(cfg);
    const int steps = 1200;
    const double lr = 0.3;
    TrainResult eq = train_toy(m, train_samples, steps, lr, 1.0);

    double eq_unrot = mean_dice(m, eq.params, held_out);
    double eq_rot = 0;
    for (const auto& set : held_out_rotated) eq_rot += mean_dice(m, eq.params, set);
    eq_rot /= static_cast<double>(held_out_rotated.size());
    double eq_drop = eq_unrot - eq_rot;

    // plain-conv baseline at matched parameter count (slightly above the
    // equivariant model's), same training budget
    size_t target = init_params(m, 1).param_count();
    std::vector<std::vector<int>> candidates = {{1, 1}, {2, 1}, {1, 1, 1}, {1, 2, 1}, {2, 2, 1}};
    PlainConvConfig best;
    best.in_channels = q_merged.size();
    best.p_filter = cfg.p_filter;
    best.seed = 808;
    size_t best_gap = SIZE_MAX;
    for (const auto& ch : candidates) {
        PlainConvConfig cand = best;
        cand.channels = ch;
        size_t count = plain_conv_param_count(cand);
        size_t gap = count > target ? count - target : target - count;
        if (gap < best_gap) {
            best_gap = gap;
            best = cand;
        }
    }
    PlainConvParams bp = plain_conv_init(best);
    plain_conv_train(best, bp, train_samples, steps, lr, 1.0);

    double bl_unrot = mean_dice_plain(best, bp, held_out);
    double bl_rot = 0;
    for (const auto& set : held_out_rotated) bl_rot += mean_dice_plain(best, bp, set);
    bl_rot /= static_cast<double>(held_out_rotated.size());
    double bl_drop = bl_unrot - bl_rot;

    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "eq %zu params dice %.3f->%.3f (drop %.4f); baseline %zu params dice "
                  "%.3f->%.3f (drop %.4f)",
                  target, eq_unrot, eq_rot, eq_drop, bp.param_count(), bl_unrot, bl_rot, bl_drop);
    detail = buf;
    return eq_unrot > 0.8 && eq_drop <= 0.02 && bl_drop > eq_drop;
}

// ---------------------------------------------------------------- criterion 8

bool preset_fidelity(std::string& detail) {
    using TT = TensorType;
    using Rows = std::vector<TT>;
    struct Expect {
        std::string id;
        Rows rows;
        std::vector<int> q_table;
    };
    const std::vector<Expect> expected = {
        {"l_TP1_1+2", {TT{5, 3}, TT{5, 3}, TT{10, 5}, TT{1}}, {42, 42}},
        {"l_TP1_1+3", {TT{5, 3}, TT{5, 3}, TT{50, 10}, TT{20, 5}, TT{1}}, {42, 42}},
        {"l_TP1_1+4", {TT{7, 4}, TT{7, 4}, TT{20, 5}, TT{10, 3}, TT{5, 2}, TT{1}}, {42, 42}},
        {"l_TP1_1+4(l2)",
         {TT{7, 4}, TT{7, 4}, TT{20, 5, 2}, TT{10, 3, 1}, TT{5, 2}, TT{1}},
         {42, 42}},
        {"l_TP1_1+4(l3)",
         {TT{7, 4}, TT{7, 4}, TT{20, 5, 2, 1}, TT{10, 3, 1, 0}, TT{5, 2}, TT{1}},
         {42, 42}},
        {"l_TP1_1(l2)+4(l2)",
         {TT{5, 3, 1}, TT{5, 3, 1}, TT{20, 5, 2}, TT{10, 3, 1}, TT{5, 2}, TT{1}},
         {42, 42}},
        {"l_TP1_1(l3)+4(l3)",
         {TT{5, 3, 1, 1}, TT{5, 3, 1, 1}, TT{20, 5, 2, 1}, TT{10, 3, 1, 0}, TT{5, 2}, TT{1}},
         {42, 42}},
        {"l_TP1_1+5",
         {TT{5, 3}, TT{5, 3}, TT{20, 5}, TT{10, 3}, TT{5, 2}, TT{3, 1}, TT{1}},
         {42, 42}},
        {"g_TP1_0+3", {TT{100, 20}, TT{50, 10}, TT{10, 5}, TT{1}}, {42}},
        {"g_TP1_1+2", {TT{15, 7}, TT{70, 10}, TT{20, 5}, TT{1}}, {42, 7}},
        {"g_TP1_1+3", {TT{15, 7}, TT{70, 10}, TT{20, 5}, TT{10, 3}, TT{1}}, {42, 7}},
        {"g_TP1_2+1", {TT{3, 2}, TT{5, 3}, TT{70, 10}, TT{1}}, {42, 27, 7}},
    };
    for (const Expect& e : expected) {
        ModelConfig cfg = preset(e.id);
        if (!(cfg.layer_tau_table() == e.rows) || cfg.q_table != e.q_table) {
            detail = "mismatch for preset " + e.id;
            return false;
        }
    }
    detail = std::to_string(expected.size()) + " preset tables match field-for-field";
    return true;
}

// ---------------------------------------------------------------- criterion 9

bool metrics_oracle(std::string& detail) {
    Rng rng(1009);
    double worst = 0;
    int cases = 0;
    while (cases < 100) {
        MultiChannelTensorField pr(TensorType{1}, {20, 1, 1}, QScheme::origin());
        MultiChannelTensorField yr(TensorType{1}, {20, 1, 1}, QScheme::origin());
        MultiChannelTensorField mr(TensorType{1}, {20, 1, 1}, QScheme::origin());
        bool has_pos = false, has_neg = false;
        for (int i = 0; i < 20; ++i) {
            pr.data[i] = cases % 2 == 0 ? rng.uniform() : std::round(rng.uniform() * 5) / 5.0;
            yr.data[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
            mr.data[i] = 1.0;
            (yr.data[i] > 0.5 ? has_pos : has_neg) = true;
        }
        if (!has_pos || !has_neg) continue;
        ++cases;
        Metrics got = metrics(pr, yr, mr);

        double pairs = 0, wins = 0;
        for (int i = 0; i < 20; ++i)
            for (int j = 0; j < 20; ++j) {
                if (yr.data[i] < 0.5 || yr.data[j] > 0.5) continue;
                pairs += 1;
                if (pr.data[i] > pr.data[j]) wins += 1;
                else if (pr.data[i] == pr.data[j]) wins += 0.5;
            }
        worst = std::max(worst, std::abs(got.roc_auc - wins / pairs));

        std::vector<double> thresholds(pr.data.begin(), pr.data.begin() + 20);
        std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
        thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
        double n_pos = 0;
        for (int i = 0; i < 20; ++i) n_pos += yr.data[i];
        double ap = 0, prev_recall = 0;
        for (double t : thresholds) {
            double tp = 0, fp = 0;
            for (int i = 0; i < 20; ++i) {
                if (pr.data[i] >= t && yr.data[i] > 0.5) tp += 1;
                if (pr.data[i] >= t && yr.data[i] < 0.5) fp += 1;
            }
            ap += (tp / n_pos - prev_recall) * (tp / (tp + fp));
            prev_recall = tp / n_pos;
        }
        worst = std::max(worst, std::abs(got.avg_precision - ap));

        double tp = 0, fp = 0, fn = 0;
        for (int i = 0; i < 20; ++i) {
            bool pred = pr.data[i] > 0.5, truth = yr.data[i] > 0.5;
            if (pred && truth) tp += 1;
            if (pred && !truth) fp += 1;
            if (!pred && truth) fn += 1;
        }
        worst = std::max(worst, std::abs(got.dice - 2 * tp / (2 * tp + fp + fn)));
    }
    char buf[96];
    std::snprintf(buf, sizeof(buf), "worst deviation %.2e over 100 cases", worst);
    detail = buf;
    return worst <= 1e-12;
}

// --------------------------------------------------------------- criterion 10

bool run_cli(const std::string& args) {
    std::string cmd = "\"" + g_cli_path + "\" " + args + " > /dev/null 2>&1";
    return std::system(cmd.c_str()) == 0;
}

std::vector<char> file_bytes(const fs::path& p) { return detail::slurp(p.string()); }

bool determinism(std::string& detail) {
    fs::path root = fs::temp_directory_path() / "pqsteer_acceptance_c10";
    fs::remove_all(root);
    fs::create_directories(root);
    std::string spec_path = (root / "phantom.json").string();
    detail::spit(spec_path, R"({"dims":[9,9,9],"seed":21,"n_lesions":2,"b_scale":1.0,
        "count":3,"mask_border":2,
        "q_scheme":{"kind":"octahedral","shells":[1.0],"points":6,"b0_count":2}})");

    for (const char* run : {"a", "b"}) {
        fs::path dir = root / run;
        fs::create_directories(dir);
        std::string d = dir.string();
        if (!run_cli("gen --spec \"" + spec_path + "\" --out \"" + d + "/data\"") ||
            !run_cli("preset --id l_TP1_1+2 --q-points 6 --with-b0 --p-filter 1 --seed 5 --out \"" +
                     d + "/model.json\"") ||
            !run_cli("train --config \"" + d + "/model.json\" --data \"" + d +
                     "/data\" --steps 25 --lr 0.01 --out \"" + d + "/p.sep\" --trace \"" + d +
                     "/loss.csv\"") ||
            !run_cli("audit --config \"" + d + "/model.json\" --params \"" + d +
                     "/p.sep\" --in \"" + d + "/data/sample000.qstf\" --mode cube --report \"" +
                     d + "/report.json\" --tol 1e-8")) {
            detail = "CLI pipeline failed in run " + std::string(run);
            return false;
        }
    }
    for (const char* f :
         {"data/sample000.qstf", "data/sample001.labels.qstf", "model.json", "p.sep", "loss.csv",
          "report.json"}) {
        if (file_bytes(root / "a" / f) != file_bytes(root / "b" / f)) {
            detail = std::string("byte mismatch in ") + f;
            return false;
        }
    }
    fs::remove_all(root);
    detail = "gen/train/audit reruns byte-identical (checkpoint, trace, report, data)";
    return true;
}

struct Criterion {
    int id;
    const char* name;
    bool (*fn)(std::string&);
};

const Criterion kCriteria[] = {
    {1, "algebra suite", algebra_suite},
    {2, "filter steerability", filter_steerability},
    {3, "conv oracle equivalence", conv_oracle_equivalence},
    {4, "exact-grid equivariance", exact_grid_equivariance},
    {5, "continuous-rotation audit", continuous_rotation_audit},
    {6, "gradient correctness", gradient_correctness},
    {7, "directional toy reproduction", toy_reproduction},
    {8, "preset fidelity", preset_fidelity},
    {9, "metrics oracle", metrics_oracle},
    {10, "determinism", determinism},
};

}  // namespace

int main(int argc, char** argv) {
    int which = -1;
    for (int i = 1; i < argc; ++i) {
        std::string arg = argv[i];
        if (arg == "--criterion" && i + 1 < argc) {
            std::string v = argv[++i];
            which = (v == "all") ? -1 : std::stoi(v);
        } else if (arg == "--cli" && i + 1 < argc) {
            g_cli_path = argv[++i];
        }
    }
    bool all_ok = true;
    for (const Criterion& c : kCriteria) {
        if (which > 0 && c.id != which) continue;
        auto start = std::chrono::steady_clock::now();
        std::string detail;
        bool ok = false;
        try {
            ok = c.fn(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("[%s] criterion %d: %s (%s) [%.1fs]\n", ok ? "PASS" : "FAIL", c.id, c.name,
                    detail.c_str(), secs);
        std::fflush(stdout);
        all_ok = all_ok && ok;
    }
    return all_ok ? 0 : 1;
}
