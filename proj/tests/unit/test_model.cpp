#include "helpers.hpp"
#include "pqsteer/model.hpp"

using namespace pqsteer;
using testutil::max_abs_diff;

namespace {

// minimal model: no pq-layers, mean-style q reduction, p-layers only
ModelConfig tiny_config(int p_filter = 0) {
    ModelConfig cfg;
    cfg.name = "tiny";
    cfg.q_in = QScheme::origin();
    cfg.q_reduce = QReduceKind::late;
    cfg.p_layers = {TensorType{1}};
    cfg.p_radial = RadialKind::gaussian;
    cfg.p_filter = p_filter;
    cfg.seed = 7;
    return cfg;
}

Sample scalar_sample(std::array<int, 3> dims, const QScheme& q, Rng& rng, double label_frac = 0.3) {
    Sample s;
    s.field = MultiChannelTensorField(TensorType{1}, dims, q);
    for (double& v : s.field.data) v = rng.normal();
    s.labels = MultiChannelTensorField(TensorType{1}, dims, QScheme::origin());
    for (double& v : s.labels.data) v = rng.uniform() < label_frac ? 1.0 : 0.0;
    s.mask = MultiChannelTensorField(TensorType{1}, dims, QScheme::origin());
    for (double& v : s.mask.data) v = 1.0;
    return s;
}

}  // namespace

TEST_CASE("zero parameters give constant half probability", "[model]") {
    QScheme q = make_octahedral_scheme(1, {1.0});
    ModelConfig cfg = bind_preset("l_TP1_1+2", q, 1, 3);
    Model m = Model::build(cfg);
    ModelParams params = zero_params_like(m);
    Rng rng(61);
    MultiChannelTensorField in(TensorType{1}, {5, 5, 5}, q);
    for (double& v : in.data) v = rng.normal();
    Prediction pred = forward(m, params, in);
    for (double v : pred.prob.data) CHECK(v == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("identity-style single layer applies a sigmoid to scaled input", "[model]") {
    Model m = Model::build(tiny_config(0));
    ModelParams params = zero_params_like(m);
    // qwa stage passes the single sample through; conv scales by a
    params.stages[0].qwa_w(0, 0) = 1.0;
    double a = 1.7;
    params.stages[1].w.w[0][0][0][0] = 2.0 * std::sqrt(M_PI) * a;
    Rng rng(62);
    MultiChannelTensorField in(TensorType{1}, {3, 3, 3}, QScheme::origin());
    for (double& v : in.data) v = rng.uniform();
    Prediction pred = forward(m, params, in);
    for (size_t i = 0; i < in.data.size(); ++i)
        CHECK(pred.prob.data[i] == Catch::Approx(sigmoid(a * in.data[i])).epsilon(1e-12));
}

TEST_CASE("forward equals the manual stage composition", "[model]") {
    QScheme q = make_octahedral_scheme(1, {1.0});
    ModelConfig cfg = bind_preset("l_TP1_1+2", q, 1, 5);
    Model m = Model::build(cfg);
    ModelParams params = init_params(m, cfg.seed);
    Rng rng(63);
    MultiChannelTensorField in(TensorType{1}, {5, 5, 5}, q);
    for (double& v : in.data) v = rng.normal();
    Prediction pred = forward(m, params, in);
    for (double v : pred.prob.data) {
        CHECK(std::isfinite(v));
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    // manual composition through the cached kernels
    MultiChannelTensorField x = in;
    for (size_t si = 0; si < m.stages.size(); ++si) {
        const Stage& st = m.stages[si];
        if (st.kind == StageKind::conv) {
            Kernel k;
            if (st.radial_learned) {
                RadialBasisSpec ovr = st.basis.spec.radial_p;
                ovr.mlp = params.stages[si].mlp;
                k = assemble_kernel(st.basis, params.stages[si].w, &ovr);
            } else {
                k = assemble_kernel(st.basis, params.stages[si].w);
            }
            MultiChannelTensorField pre = pq_conv(k, x);
            x = st.gated ? gated_nonlinearity(pre, st.gates) : pre;
        } else {
            x = q_reduce_weighted_average(x, st.qwa_radial, params.stages[si].qwa_w);
        }
    }
    for (double& v : x.data) v = sigmoid(v);
    CHECK(max_abs_diff(x.data, pred.prob.data) == 0.0);
}

TEST_CASE("weighted BCE loss", "[model]") {
    Rng rng(64);
    std::array<int, 3> dims{3, 3, 3};
    MultiChannelTensorField p(TensorType{1}, dims, QScheme::origin());
    MultiChannelTensorField y(TensorType{1}, dims, QScheme::origin());
    MultiChannelTensorField mask(TensorType{1}, dims, QScheme::origin());
    for (size_t i = 0; i < p.data.size(); ++i) {
        y.data[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
        mask.data[i] = 1.0;
        p.data[i] = y.data[i];  // perfect prediction
    }
    CHECK(loss_weighted_bce(p, y, mask, 2.0) <= 1e-10);

    for (double& v : p.data) v = 0.5;
    double w_pos = 3.0;
    double n_pos = 0, n_all = 0;
    for (double v : y.data) {
        n_pos += v;
        n_all += 1;
    }
    double expect = (w_pos * n_pos + (n_all - n_pos)) * std::log(2.0) / n_all;
    CHECK(loss_weighted_bce(p, y, mask, w_pos) == Catch::Approx(expect).epsilon(1e-12));

    // random case against an independent scalar loop
    for (double& v : p.data) v = rng.uniform(0.05, 0.95);
    for (double& v : mask.data) v = rng.uniform() < 0.8 ? 1.0 : 0.0;
    double sum = 0;
    int cnt = 0;
    for (size_t i = 0; i < p.data.size(); ++i) {
        if (mask.data[i] <= 0.5) continue;
        sum += -(w_pos * y.data[i] * std::log(p.data[i]) +
                 (1 - y.data[i]) * std::log(1 - p.data[i]));
        ++cnt;
    }
    CHECK(loss_weighted_bce(p, y, mask, w_pos) == Catch::Approx(sum / cnt).epsilon(1e-12));

    for (double& v : mask.data) v = 0.0;
    CHECK_THROWS_AS(loss_weighted_bce(p, y, mask, 1.0), Error);
}

TEST_CASE("one-parameter model gradient matches finite differences", "[model]") {
    Model m = Model::build(tiny_config(0));
    ModelParams params = zero_params_like(m);
    params.stages[0].qwa_w(0, 0) = 1.0;  // fixed pass-through
    params.stages[1].w.w[0][0][0][0] = 0.4;

    Rng rng(65);
    Sample s = scalar_sample({3, 3, 3}, QScheme::origin(), rng);

    ModelParams grad;
    double base = loss_and_grad(m, params, s, 1.5, &grad);
    CHECK(std::isfinite(base));

    const double h = 1e-5;
    ModelParams pp = params, pm = params;
    pp.stages[1].w.w[0][0][0][0] += h;
    pm.stages[1].w.w[0][0][0][0] -= h;
    double fd = (loss_and_grad(m, pp, s, 1.5, nullptr) - loss_and_grad(m, pm, s, 1.5, nullptr)) /
                (2 * h);
    CHECK(grad.stages[1].w.w[0][0][0][0] == Catch::Approx(fd).margin(1e-8));
}

TEST_CASE("zero input gives zero conv-weight gradients", "[model]") {
    QScheme q = make_octahedral_scheme(1, {1.0});
    ModelConfig cfg = bind_preset("l_TP1_1+2", q, 1, 9);
    Model m = Model::build(cfg);
    ModelParams params = init_params(m, cfg.seed);
    Rng rng(66);
    Sample s = scalar_sample({4, 4, 4}, q, rng);
    for (double& v : s.field.data) v = 0.0;
    ModelParams grad;
    loss_and_grad(m, params, s, 1.0, &grad);
    // first conv stage: gradient wrt its weights vanishes with zero input
    double g0 = 0;
    grad.stages[0].w.for_each([&](double& v) { g0 = std::max(g0, std::abs(v)); });
    CHECK(g0 == 0.0);
}

TEST_CASE("full gradient matches finite differences on a micro preset", "[model]") {
    QScheme q = make_octahedral_scheme(1, {1.0});
    ModelConfig cfg = bind_preset("l_TP1_1+2", q, 1, 11, {4, 4});
    Model m = Model::build(cfg);
    ModelParams params = init_params(m, 123);
    Rng rng(67);
    Sample s = scalar_sample({4, 4, 4}, q, rng);

    ModelParams grad;
    loss_and_grad(m, params, s, 2.0, &grad);
    std::vector<double> gflat = grad.flat();
    std::vector<double> theta = params.flat();

    // directional probes across the whole parameter vector
    const double h = 1e-5;
    for (int probe = 0; probe < 4; ++probe) {
        std::vector<double> dir(theta.size());
        double norm = 0;
        for (double& v : dir) {
            v = rng.normal();
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (double& v : dir) v /= norm;
        std::vector<double> tp = theta, tm = theta;
        for (size_t i = 0; i < theta.size(); ++i) {
            tp[i] += h * dir[i];
            tm[i] -= h * dir[i];
        }
        ModelParams pp = params, pm = params;
        pp.set_flat(tp);
        pm.set_flat(tm);
        double fd = (loss_and_grad(m, pp, s, 2.0, nullptr) -
                     loss_and_grad(m, pm, s, 2.0, nullptr)) /
                    (2 * h);
        double analytic = 0;
        for (size_t i = 0; i < dir.size(); ++i) analytic += gflat[i] * dir[i];
        CHECK(analytic == Catch::Approx(fd).margin(std::max(1e-5 * std::abs(fd), 1e-9)));
    }
}

TEST_CASE("training basics", "[model]") {
    Model m = Model::build(tiny_config(0));
    Rng rng(68);
    Sample s = scalar_sample({3, 3, 3}, QScheme::origin(), rng);

    // lr = 0 leaves the parameters at the (scale-normalized) start
    TrainResult r0 = train_toy(m, {s}, 5, 0.0);
    ModelParams fresh = init_params(m, m.cfg.seed);
    normalize_init_scale(m, fresh, s.field);
    CHECK(max_abs_diff(r0.params.flat(), fresh.flat()) == 0.0);

    // linearly separable one-voxel dataset: logistic regression converges
    Sample pos, neg;
    pos.field = MultiChannelTensorField(TensorType{1}, {1, 1, 1}, QScheme::origin());
    pos.field.data[0] = 1.0;
    pos.labels = MultiChannelTensorField(TensorType{1}, {1, 1, 1}, QScheme::origin());
    pos.labels.data[0] = 1.0;
    pos.mask = pos.labels;
    pos.mask.data[0] = 1.0;
    neg = pos;
    neg.field.data[0] = -1.0;
    neg.labels.data[0] = 0.0;
    TrainResult r = train_toy(m, {pos, neg}, 500, 5.0, 1.0);
    CHECK(r.loss_trace.back() < 0.01);
}

TEST_CASE("metrics against the exhaustive threshold sweep", "[model]") {
    Rng rng(69);
    // perfect and inverted predictions
    MultiChannelTensorField p(TensorType{1}, {4, 5, 1}, QScheme::origin());
    MultiChannelTensorField y(TensorType{1}, {4, 5, 1}, QScheme::origin());
    MultiChannelTensorField mask(TensorType{1}, {4, 5, 1}, QScheme::origin());
    for (size_t i = 0; i < p.data.size(); ++i) {
        y.data[i] = (i % 3 == 0) ? 1.0 : 0.0;
        p.data[i] = y.data[i] * 0.9 + 0.05;
        mask.data[i] = 1.0;
    }
    Metrics perfect = metrics(p, y, mask);
    CHECK(perfect.roc_auc == Catch::Approx(1.0));
    CHECK(perfect.avg_precision == Catch::Approx(1.0));
    CHECK(perfect.dice == Catch::Approx(1.0));
    for (size_t i = 0; i < p.data.size(); ++i) p.data[i] = 1.0 - p.data[i];
    CHECK(metrics(p, y, mask).roc_auc == Catch::Approx(0.0).margin(1e-15));

    // single-class input is rejected
    for (double& v : y.data) v = 0.0;
    CHECK_THROWS_AS(metrics(p, y, mask), Error);

    // random 20-voxel cases vs brute force
    for (int trial = 0; trial < 40; ++trial) {
        MultiChannelTensorField pr(TensorType{1}, {20, 1, 1}, QScheme::origin());
        MultiChannelTensorField yr(TensorType{1}, {20, 1, 1}, QScheme::origin());
        MultiChannelTensorField mr(TensorType{1}, {20, 1, 1}, QScheme::origin());
        bool has_pos = false, has_neg = false;
        for (int i = 0; i < 20; ++i) {
            pr.data[i] = trial % 2 == 0 ? rng.uniform() : std::round(rng.uniform() * 4) / 4.0;
            yr.data[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
            mr.data[i] = 1.0;
            (yr.data[i] > 0.5 ? has_pos : has_neg) = true;
        }
        if (!has_pos || !has_neg) continue;
        Metrics got = metrics(pr, yr, mr);

        // brute-force AUC over all pairs with tie credit
        double pairs = 0, wins = 0;
        for (int i = 0; i < 20; ++i)
            for (int j = 0; j < 20; ++j) {
                if (yr.data[i] < 0.5 || yr.data[j] > 0.5) continue;
                pairs += 1;
                if (pr.data[i] > pr.data[j]) wins += 1;
                else if (pr.data[i] == pr.data[j]) wins += 0.5;
            }
        CHECK(got.roc_auc == Catch::Approx(wins / pairs).margin(1e-12));

        // brute-force AvgPrec: recompute TP/FP from scratch per threshold
        std::vector<double> thresholds(pr.data.begin(), pr.data.begin() + 20);
        std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
        thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
        double n_pos = 0;
        for (int i = 0; i < 20; ++i) n_pos += yr.data[i];
        double ap = 0, prev_recall = 0;
        for (double t : thresholds) {
            double tp2 = 0, fp2 = 0;
            for (int i = 0; i < 20; ++i) {
                if (pr.data[i] >= t && yr.data[i] > 0.5) tp2 += 1;
                if (pr.data[i] >= t && yr.data[i] < 0.5) fp2 += 1;
            }
            double prec = tp2 / (tp2 + fp2);
            double rec = tp2 / n_pos;
            ap += (rec - prev_recall) * prec;
            prev_recall = rec;
        }
        CHECK(got.avg_precision == Catch::Approx(ap).margin(1e-12));

        // brute-force Dice at 0.5
        double tp2 = 0, fp2 = 0, fn2 = 0;
        for (int i = 0; i < 20; ++i) {
            bool pred = pr.data[i] > 0.5, truth = yr.data[i] > 0.5;
            if (pred && truth) tp2 += 1;
            if (pred && !truth) fp2 += 1;
            if (!pred && truth) fn2 += 1;
        }
        CHECK(got.dice == Catch::Approx(2 * tp2 / (2 * tp2 + fp2 + fn2)).margin(1e-12));
    }
}

TEST_CASE("preset channel tables match the published configurations", "[model]") {
    using TT = TensorType;
    auto rows = [](const std::string& id) { return preset(id).layer_tau_table(); };

    CHECK(rows("l_TP1_1+2") ==
          std::vector<TT>{TT{5, 3}, TT{5, 3}, TT{10, 5}, TT{1}});
    CHECK(rows("l_TP1_1+3") ==
          std::vector<TT>{TT{5, 3}, TT{5, 3}, TT{50, 10}, TT{20, 5}, TT{1}});
    CHECK(rows("l_TP1_1+4") ==
          std::vector<TT>{TT{7, 4}, TT{7, 4}, TT{20, 5}, TT{10, 3}, TT{5, 2}, TT{1}});
    CHECK(rows("l_TP1_1+5") == std::vector<TT>{TT{5, 3}, TT{5, 3}, TT{20, 5}, TT{10, 3}, TT{5, 2},
                                               TT{3, 1}, TT{1}});
    CHECK(rows("g_TP1_0+3") ==
          std::vector<TT>{TT{100, 20}, TT{50, 10}, TT{10, 5}, TT{1}});
    CHECK(rows("g_TP1_2+1") ==
          std::vector<TT>{TT{3, 2}, TT{5, 3}, TT{70, 10}, TT{1}});
    CHECK(preset("l_TP1_1+4").q_table == std::vector<int>{42, 42});
    CHECK(preset("g_TP1_2+1").q_table == std::vector<int>{42, 27, 7});
}
