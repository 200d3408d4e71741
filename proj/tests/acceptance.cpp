// Acceptance suite: one pass/fail line per criterion.
//
// Criteria 1-6 and 8 are hard gates; criterion 7 (GAN conditioning
// fidelity) is a soft gate logged as a warning. Run with
// --only 1,2,... to execute a subset.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "soapkd/ccgan.hpp"
#include "soapkd/common.hpp"
#include "soapkd/config.hpp"
#include "soapkd/data.hpp"
#include "soapkd/distill.hpp"
#include "soapkd/eval.hpp"
#include "soapkd/labelembed.hpp"
#include "soapkd/netspec.hpp"
#include "soapkd/pipeline.hpp"
#include "soapkd/refinery.hpp"
#include "soapkd/serialize.hpp"

namespace fs = std::filesystem;
using namespace soapkd;

namespace {

struct Criterion {
    int id;
    const char* name;
    bool (*run)(std::string& detail);
    bool soft = false;
};

// ---------------------------------------------------------------------------
// 1. Loss gradient checks at double precision
// ---------------------------------------------------------------------------

NetworkSpec toy_spec(int out_channels) {
    NetworkSpec spec;
    spec.name = "toy";
    spec.input_shape = {3, 8, 8};
    spec.layers.push_back(LayerSpec::conv(3, 4, 3, 1, 1));
    spec.layers.push_back(LayerSpec::relu());
    spec.layers.push_back(LayerSpec::conv(4, out_channels, 3, 2, 1));
    spec.layers.push_back(LayerSpec::relu());
    spec.feature_tap = 3;
    return spec;
}

// Total loss L_reg + lambda * L_kd for fixed teacher outputs; forward only.
double total_loss(RegressionModel<double>& student, Adapter<double>& adapter,
                  const Tensord& batch, int n_real,
                  const std::vector<double>& y_real, const Tensord& teacher_feats,
                  const std::vector<double>& teacher_preds_fake, double lambda) {
    auto out = student.forward(batch, true);
    const int n_total = batch.dim(0);
    const int n_fake = n_total - n_real;
    std::vector<double> preds_real(static_cast<std::size_t>(n_real));
    std::vector<double> preds_fake(static_cast<std::size_t>(n_fake));
    for (int i = 0; i < n_real; ++i) preds_real[size_t(i)] = out.predictions.at(i, 0);
    for (int i = 0; i < n_fake; ++i)
        preds_fake[size_t(i)] = out.predictions.at(n_real + i, 0);
    const auto reg = loss_reg<double>(preds_real, y_real, preds_fake,
                                      teacher_preds_fake);
    Tensord adapted = adapter.forward(out.features, true);
    const auto kd = loss_kd<double>(teacher_feats, adapted, Tensord(), Tensord());
    return loss_total<double>(reg.value, kd.value, lambda);
}

bool criterion_loss_gradients(std::string& detail) {
    RegressionModel<double> teacher(toy_spec(6), {8, 4, 1}, 11);
    RegressionModel<double> student(toy_spec(4), {8, 4, 1}, 13);
    Adapter<double> adapter = build_adapter<double>(toy_spec(4), toy_spec(6), 17);
    const double lambda = 0.7;

    Rng data_rng(19);
    double worst = 0;
    int checked = 0;
    for (int batch_idx = 0; batch_idx < 3; ++batch_idx) {
        const int n_real = 3, n_fake = 2, n = n_real + n_fake;
        Tensord batch({n, 3, 8, 8});
        batch.fill_uniform(data_rng, 0.0, 1.0);
        std::vector<double> y_real;
        for (int i = 0; i < n_real; ++i) y_real.push_back(data_rng.uniform());

        // teacher outputs are constants
        auto t_out = teacher.forward(batch, false);
        std::vector<double> t_preds_fake;
        for (int i = 0; i < n_fake; ++i)
            t_preds_fake.push_back(t_out.predictions.at(n_real + i, 0));

        // analytic gradients through the same wiring the trainer uses
        student.net().zero_grad();
        adapter.zero_grad();
        auto s_out = student.forward(batch, true);
        std::vector<double> preds_real(static_cast<std::size_t>(n_real));
        std::vector<double> preds_fake(static_cast<std::size_t>(n_fake));
        for (int i = 0; i < n_real; ++i)
            preds_real[size_t(i)] = s_out.predictions.at(i, 0);
        for (int i = 0; i < n_fake; ++i)
            preds_fake[size_t(i)] = s_out.predictions.at(n_real + i, 0);
        const auto reg =
            loss_reg<double>(preds_real, y_real, preds_fake, t_preds_fake);
        Tensord adapted = adapter.forward(s_out.features, true);
        const auto kd = loss_kd<double>(t_out.features, adapted, Tensord(), Tensord());

        Tensord dpred({n, 1});
        for (int i = 0; i < n_real; ++i) dpred.at(i, 0) = reg.grad_real[size_t(i)];
        for (int i = 0; i < n_fake; ++i)
            dpred.at(n_real + i, 0) = reg.grad_fake[size_t(i)];
        Tensord dkd = kd.grad_real;
        dkd.scale(lambda);
        Tensord dfeat = adapter.backward(dkd);
        student.backward(dpred, &dfeat);

        std::vector<Param<double>*> params = student.net().params();
        for (auto* p : adapter.params()) params.push_back(p);

        Rng pick(23 + std::uint64_t(batch_idx));
        for (int trial = 0; trial < 10; ++trial) {
            auto* p = params[size_t(pick.below(params.size()))];
            const std::size_t j = size_t(pick.below(p->v.numel()));
            const double analytic = p->g[j];
            const double h = 1e-6;
            const double saved = p->v[j];
            p->v[j] = saved + h;
            const double up = total_loss(student, adapter, batch, n_real, y_real,
                                         t_out.features, t_preds_fake, lambda);
            p->v[j] = saved - h;
            const double down = total_loss(student, adapter, batch, n_real, y_real,
                                           t_out.features, t_preds_fake, lambda);
            p->v[j] = saved;
            const double numeric = (up - down) / (2 * h);
            const double denom =
                std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
            worst = std::max(worst, std::fabs(analytic - numeric) / denom);
            ++checked;
        }
    }
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%d gradients checked, worst relative error %.2e",
                  checked, worst);
    detail = buf;
    return worst < 1e-4;
}

// ---------------------------------------------------------------------------
// 2. Counting oracles
// ---------------------------------------------------------------------------

bool criterion_counting(std::string& detail) {
    int passed = 0, total = 0;
    auto expect = [&](std::int64_t got, std::int64_t want) {
        ++total;
        if (got == want) ++passed;
    };

    // plain conv stack
    NetworkSpec plain;
    plain.input_shape = {3, 32, 32};
    plain.layers.push_back(LayerSpec::conv(3, 16, 3, 1, 1));
    plain.layers.push_back(LayerSpec::bn(16));
    plain.layers.push_back(LayerSpec::conv(16, 8, 5, 2, 2, 1, false));
    expect(count_params(plain), 3680);      // 448 + 32 + 3200
    expect(count_macs(plain), 1261568);     // 442368 + 819200

    // depthwise
    NetworkSpec dw;
    dw.input_shape = {16, 16, 16};
    dw.layers.push_back(LayerSpec::dwconv(16, 3, 1, 1));
    expect(count_params(dw), 144);   // 3*3*1*16
    expect(count_macs(dw), 36864);   // 16*16*16*9

    // grouped
    NetworkSpec grouped;
    grouped.input_shape = {8, 10, 10};
    grouped.layers.push_back(LayerSpec::conv(8, 12, 3, 1, 1, 4));
    expect(count_params(grouped), 228);   // 9*2*12 + 12
    expect(count_macs(grouped), 21600);   // 100*12*18

    // residual
    NetworkSpec res;
    res.input_shape = {4, 8, 8};
    res.layers.push_back(LayerSpec::conv(4, 4, 3, 1, 1, 1, false));
    res.layers.push_back(LayerSpec::bn(4));
    res.layers.push_back(LayerSpec::relu());
    res.layers.push_back(LayerSpec::conv(4, 4, 3, 1, 1, 1, false));
    res.layers.push_back(LayerSpec::bn(4));
    res.layers.push_back(LayerSpec::add(2));
    expect(count_params(res), 304);    // 144 + 8 + 144 + 8
    expect(count_macs(res), 18432);    // 2 * 64*4*36

    // fc-only with head arithmetic
    NetworkSpec fc;
    fc.input_shape = {6, 4, 4};
    fc.layers.push_back(LayerSpec::gap());
    fc.layers.push_back(LayerSpec::fc(6, 10));
    fc.layers.push_back(LayerSpec::fc(10, 3, false));
    expect(count_params(fc), 100);   // 70 + 30
    expect(count_macs(fc), 90);      // 60 + 30

    // regression head widths on a 256-channel backbone
    NetworkSpec bb;
    bb.input_shape = {3, 16, 16};
    bb.layers.push_back(LayerSpec::conv(3, 256, 1, 1, 0, 1, false));
    expect(count_params(bb, {128, 64, 1}) - count_params(bb), 41217);

    // construction/counting consistency across the zoo
    for (const auto& name : builtin_spec_names()) {
        const NetworkSpec spec = builtin_spec(name);
        RegressionModel<float> model(spec, default_head(name), 1);
        expect(std::int64_t(model.net().param_count()),
               count_params(spec, default_head(name)));
    }

    char buf[64];
    std::snprintf(buf, sizeof(buf), "%d/%d oracle values matched", passed, total);
    detail = buf;
    return passed == total;
}

// ---------------------------------------------------------------------------
// 3. Reporting arithmetic
// ---------------------------------------------------------------------------

bool criterion_report_ratios(std::string& detail) {
    auto pct1 = [](double v) { return std::round(v * 1000.0) / 10.0; };
    const double params_red = pct1(relative_reduction(14.550, 5.582));
    const double macs_red = pct1(relative_reduction(0.339, 0.133));
    const double mae_rel = (3.339 - 3.090) / 3.090;
    char buf[128];
    std::snprintf(buf, sizeof(buf),
                  "params %.1f%% (want 61.6), macs %.1f%% (want 60.8), mae +%.0f%% "
                  "(want 8)",
                  params_red, macs_red, std::round(mae_rel * 100.0));
    detail = buf;
    return params_red == 61.6 && macs_red == 60.8 &&
           std::round(mae_rel * 100.0) == 8.0;
}

// ---------------------------------------------------------------------------
// 4. Label embedding round-trip gate
// ---------------------------------------------------------------------------

bool criterion_embed_gate(std::string& detail) {
    EmbedConfig cfg;  // defaults: 10 epochs, variance 0.02, epsilon 0.02
    cfg.t3_iterations = 1500;
    double worst = 0;
    std::string per_seed;
    for (const std::uint64_t seed : {101ull, 202ull, 303ull}) {
        const auto data = synth_generate(600, 64, seed);
        std::vector<double> labels;
        for (const auto& s : data) labels.push_back(s.label.normalized());
        EmbeddingNetworks nets(cfg.latent_dim, 64, seed);
        train_t1_t2(nets, data, cfg, seed + 1);
        nets.freeze_t2();
        train_t3(nets, labels, cfg, seed + 2);
        const double err = round_trip_max_error(nets, 512);
        worst = std::max(worst, err);
        char buf[48];
        std::snprintf(buf, sizeof(buf), " seed %llu: %.4f",
                      static_cast<unsigned long long>(seed), err);
        per_seed += buf;
    }
    detail = "max |T2(T3(y)) - y| over 512-point grid:" + per_seed +
             " (gate 0.02)";
    return worst <= cfg.epsilon_embed;
}

// ---------------------------------------------------------------------------
// 5. Refinery invariants
// ---------------------------------------------------------------------------

bool criterion_refinery(std::string& detail) {
    bool ok = true;
    std::string notes;

    // subsampling statistics over 10,000 trials at ratio 0.5 * max
    {
        const int n = 10001;
        std::vector<FakeSample> pool(static_cast<std::size_t>(n));
        std::vector<double> ratios(static_cast<std::size_t>(n), 0.5);
        ratios[0] = 1.0;
        for (auto& s : pool) {
            s.image.resize({1, 1, 1});
            s.cond_label = 0.5;
        }
        subsample_with_ratios(pool, ratios, 31337);
        if (!pool[0].kept_by_subsampling) ok = false;  // max ratio always kept
        int kept = 0;
        for (int i = 1; i < n; ++i) kept += pool[size_t(i)].kept_by_subsampling;
        const double rate = double(kept) / (n - 1);
        const double se = std::sqrt(0.25 / (n - 1));
        char buf[96];
        std::snprintf(buf, sizeof(buf), "acceptance rate %.4f (3se window %.4f)",
                      rate, 3 * se);
        notes += buf;
        if (std::fabs(rate - 0.5) > 3 * se) ok = false;
    }

    // filtering monotonicity, mean reduction, flag implication
    {
        Rng rng(99);
        const int n = 500;
        std::vector<FakeSample> pool(static_cast<std::size_t>(n));
        std::vector<double> preds(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            pool[size_t(i)].image.resize({1, 1, 1});
            pool[size_t(i)].cond_label = rng.uniform();
            pool[size_t(i)].kept_by_subsampling = rng.uniform() < 0.8;
            preds[size_t(i)] = rng.uniform();
        }
        std::vector<char> prev_kept(static_cast<std::size_t>(n), 0);
        bool first = true;
        for (const double alpha : {5.0, 15.0, 45.0, 90.0}) {
            apply_filter(pool, preds, alpha);
            double pre_mean = 0, post_mean = 0;
            int pre_n = 0, post_n = 0;
            for (int i = 0; i < n; ++i) {
                const auto& s = pool[size_t(i)];
                const double err = circular_distance_degrees(s.teacher_pred * 180.0,
                                                             s.cond_label * 180.0);
                if (s.kept_by_subsampling) {
                    pre_mean += err;
                    ++pre_n;
                }
                if (s.kept_by_filtering) {
                    post_mean += err;
                    ++post_n;
                    if (!s.kept_by_subsampling) ok = false;  // order implication
                    if (!first && !prev_kept[size_t(i)] && alpha == 5.0) ok = false;
                }
                if (!first && prev_kept[size_t(i)] && !s.kept_by_filtering)
                    ok = false;  // monotonicity: kept(a1) subset kept(a2)
            }
            if (pre_n && post_n && post_mean / post_n > pre_mean / pre_n + 1e-12)
                ok = false;  // filtering cannot raise the mean discrepancy
            for (int i = 0; i < n; ++i)
                prev_kept[size_t(i)] = pool[size_t(i)].kept_by_filtering;
            first = false;
        }
        // alpha = 90 keeps every subsampling survivor
        for (const auto& s : pool)
            if (s.kept_by_subsampling != s.kept_by_filtering) ok = false;
        notes += "; filter invariants held";
    }

    // quantile pin
    if (quantile_linear({1, 2, 3, 4, 5}, 0.9) != 4.6) ok = false;

    detail = notes;
    return ok;
}

// ---------------------------------------------------------------------------
// 6 + 7. Desk-scale pipeline: ablation ordering and conditioning fidelity
// ---------------------------------------------------------------------------

RunConfig desk_config(const std::string& out_dir) {
    RunConfig cfg;
    cfg.out_dir = out_dir;
    cfg.seed = 7;
    cfg.resolution = 64;
    cfg.data.n_train_pool = 2000;
    cfg.data.n_test = 500;
    apply_short_profile(cfg);
    return cfg;
}

const char* kDeskDir = "acceptance_desk";

// Runs data..grid once; reused by criteria 6 and 7.
void ensure_desk_pipeline() {
    RunConfig cfg = desk_config(kDeskDir);
    cfg.stages = {"data", "teacher", "embed", "gan", "gen", "refine", "grid"};
    run_pipeline(cfg);
}

bool criterion_ablation(std::string& detail) {
    ensure_desk_pipeline();
    RunConfig cfg = desk_config(kDeskDir);

    const auto train = read_dataset((fs::path(kDeskDir) / "data" / "train").string());
    const auto test = read_dataset((fs::path(kDeskDir) / "data" / "test").string());
    RegressionModel<float> teacher =
        load_model((fs::path(kDeskDir) / "teacher" / "teacher.ckpt").string());
    teacher.freeze();
    auto pool = read_fake_pool((fs::path(kDeskDir) / "gen" / "fakes").string());
    apply_refined_manifest((fs::path(kDeskDir) / "refine" / "refined.csv").string(),
                           pool);
    double lambda = 1.0;
    {
        std::ifstream f(fs::path(kDeskDir) / "grid" / "lambda.json");
        nlohmann::json j;
        f >> j;
        lambda = j.at("best_lambda").get<double>();
    }

    const NetworkSpec student_spec = builtin_spec(cfg.distill.student, 64);
    const HeadWidths head = default_head(cfg.distill.student);
    const std::vector<FakeSample> no_fakes;

    double mean_nokd = 0, mean_lkd = 0, mean_soapkd = 0;
    std::string per_seed;
    for (const std::uint64_t seed : {1001ull, 2002ull, 3003ull}) {
        auto run_variant = [&](double lam, const std::vector<FakeSample>& fakes) {
            RegressionModel<float> student(student_spec, head, seed);
            Adapter<float> adapter =
                build_adapter<float>(student_spec, teacher.backbone_spec(), seed);
            train_student(student, train, fakes, teacher, adapter, lam,
                          cfg.distill.schedule, seed);
            return model_mae_degrees(student, test, true);
        };
        const double nokd = run_variant(0.0, no_fakes);
        const double lkd = run_variant(lambda, no_fakes);
        const double soapkd = run_variant(lambda, pool);
        mean_nokd += nokd / 3;
        mean_lkd += lkd / 3;
        mean_soapkd += soapkd / 3;
        char buf[96];
        std::snprintf(buf, sizeof(buf), " [seed %llu: %.2f/%.2f/%.2f]",
                      static_cast<unsigned long long>(seed), nokd, lkd, soapkd);
        per_seed += buf;
    }

    char buf[192];
    std::snprintf(buf, sizeof(buf),
                  "mean test MAE deg: NOKD %.3f, L_kd %.3f, SOAP-KD %.3f "
                  "(lambda %.1f)%s",
                  mean_nokd, mean_lkd, mean_soapkd, lambda, per_seed.c_str());
    detail = buf;
    const bool ordering = mean_soapkd < mean_lkd && mean_lkd < mean_nokd;
    const bool margin = mean_soapkd <= 0.9 * mean_nokd;
    return ordering && margin;
}

bool criterion_conditioning(std::string& detail) {
    ensure_desk_pipeline();
    EmbeddingNetworks nets =
        EmbeddingNetworks::load((fs::path(kDeskDir) / "embed" / "embed.ckpt").string());
    GanPair gan = load_gan((fs::path(kDeskDir) / "gan" / "gan.ckpt").string());
    RegressionModel<float> teacher =
        load_model((fs::path(kDeskDir) / "teacher" / "teacher.ckpt").string());
    teacher.freeze();
    FeatureExtractor extractor =
        FeatureExtractor::load((fs::path(kDeskDir) / "refine" / "extractor.ckpt").string());
    DensityRatioModel dre =
        DensityRatioModel::load((fs::path(kDeskDir) / "refine" / "dre.ckpt").string());
    const auto val = read_dataset((fs::path(kDeskDir) / "data" / "val").string());
    RunConfig cfg = desk_config(kDeskDir);
    const double alpha = compute_alpha(teacher, val, cfg.refinery);

    auto spearman = [](std::vector<double> a, std::vector<double> b) {
        auto ranks = [](std::vector<double>& v) {
            std::vector<std::size_t> order(v.size());
            std::iota(order.begin(), order.end(), std::size_t(0));
            std::sort(order.begin(), order.end(),
                      [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
            std::vector<double> r(v.size());
            for (std::size_t i = 0; i < order.size(); ++i) r[order[i]] = double(i);
            return r;
        };
        const auto ra = ranks(a), rb = ranks(b);
        const double n = double(ra.size());
        double d2 = 0;
        for (std::size_t i = 0; i < ra.size(); ++i)
            d2 += (ra[i] - rb[i]) * (ra[i] - rb[i]);
        return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
    };

    int hits = 0;
    std::string per_seed;
    for (const std::uint64_t seed : {11ull, 22ull, 33ull}) {
        Rng rng(seed);
        std::vector<double> labels(900);
        for (auto& y : labels) y = rng.uniform();
        auto pool = generate(gan.g, nets, labels, seed + 1);
        subsample(pool, dre, extractor, nets, seed + 2);
        filter(pool, teacher, alpha);
        std::vector<double> cond, pred;
        for (const auto& s : pool) {
            if (!s.kept_by_filtering) continue;
            if (cond.size() >= 500) break;
            cond.push_back(s.cond_label);
            pred.push_back(wrap_degrees(s.teacher_pred * 180.0) / 180.0);
        }
        const double rho = cond.size() > 10 ? spearman(cond, pred) : 0.0;
        char buf[64];
        std::snprintf(buf, sizeof(buf), " [seed %llu: rho %.3f over %zu]",
                      static_cast<unsigned long long>(seed), rho, cond.size());
        per_seed += buf;
        if (rho > 0.3) ++hits;
    }
    detail = "refined-pool label/teacher Spearman:" + per_seed;
    return hits >= 2;
}

// ---------------------------------------------------------------------------
// 8. Determinism: byte-identical artifacts across reruns
// ---------------------------------------------------------------------------

RunConfig micro_config(const std::string& out_dir) {
    RunConfig cfg;
    cfg.out_dir = out_dir;
    cfg.seed = 1234;
    cfg.resolution = 32;
    cfg.data.n_train_pool = 60;
    cfg.data.n_test = 16;
    cfg.teacher.epochs = 2;
    cfg.teacher.batch_size = 16;
    cfg.teacher.lr_decay_epochs = {1};
    cfg.embed.t1t2_epochs = 1;
    cfg.embed.t3_iterations = 40;
    cfg.embed.batch_size = 16;
    cfg.gan.iterations = 12;
    cfg.gan.batch_size = 8;
    cfg.gan.noise_dim = 8;
    cfg.gan.base_channels = 8;
    cfg.gan.checkpoint_every = 0;
    cfg.gen.n_fakes = 24;
    cfg.refinery.classifier_epochs = 1;
    cfg.refinery.classifier_batch = 16;
    cfg.refinery.dre_iterations = 20;
    cfg.refinery.dre_batch = 16;
    cfg.distill.lambda = 1.0;
    cfg.distill.schedule.epochs = 1;
    cfg.distill.schedule.batch_size = 16;
    cfg.distill.schedule.lr_decay_epochs = {};
    cfg.stages = {"data", "teacher", "embed", "gan", "gen", "refine", "distill",
                  "eval"};
    return cfg;
}

bool criterion_determinism(std::string& detail) {
    const std::string a = "acceptance_det_a", b = "acceptance_det_b";
    fs::remove_all(a);
    fs::remove_all(b);
    RunConfig cfg_a = micro_config(a);
    RunConfig cfg_b = micro_config(b);
    run_pipeline(cfg_a);
    run_pipeline(cfg_b);

    // every artifact byte-identical (paths are relative inside the trees,
    // so records and manifests must match exactly)
    int compared = 0, mismatched = 0;
    std::string first_bad;
    for (auto it = fs::recursive_directory_iterator(a);
         it != fs::recursive_directory_iterator(); ++it) {
        if (!it->is_regular_file()) continue;
        const fs::path rel = fs::relative(it->path(), a);
        if (rel.filename() == "config.txt") continue;  // embeds the out dir
        const fs::path other = fs::path(b) / rel;
        ++compared;
        if (!fs::exists(other) ||
            file_fingerprint(it->path().string()) != file_fingerprint(other.string())) {
            ++mismatched;
            if (first_bad.empty()) first_bad = rel.string();
        }
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%d artifacts compared, %d mismatched%s%s",
                  compared, mismatched, first_bad.empty() ? "" : ", first: ",
                  first_bad.c_str());
    detail = buf;
    const bool ok = compared > 10 && mismatched == 0;
    if (ok) {
        fs::remove_all(a);
        fs::remove_all(b);
    }
    return ok;
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
            std::string list = argv[i + 1];
            for (char& c : list)
                if (c == ',') c = ' ';
            std::istringstream is(list);
            int v;
            while (is >> v) only.insert(v);
        }
    }

    const Criterion criteria[] = {
        {1, "loss gradients match finite differences (1e-4, double)",
         criterion_loss_gradients},
        {2, "param/MAC counting matches closed-form oracles", criterion_counting},
        {3, "report arithmetic reproduces reference ratios", criterion_report_ratios},
        {4, "label embedding round trip <= 0.02 across 3 seeds",
         criterion_embed_gate},
        {5, "refinery invariants (subsampling stats, filter monotonicity)",
         criterion_refinery},
        {6, "ablation ordering SOAP-KD < L_kd < NOKD with >= 10% margin",
         criterion_ablation},
        {7, "GAN conditioning fidelity (soft gate)", criterion_conditioning, true},
        {8, "byte-identical artifacts across same-seed reruns",
         criterion_determinism},
    };

    int hard_failures = 0;
    for (const Criterion& c : criteria) {
        if (!only.empty() && !only.count(c.id)) continue;
        std::string det;
        bool ok = false;
        try {
            ok = c.run(det);
        } catch (const std::exception& e) {
            det = std::string("exception: ") + e.what();
        }
        if (ok) {
            std::printf("[PASS] criterion %d: %s\n       %s\n", c.id, c.name,
                        det.c_str());
        } else if (c.soft) {
            std::printf("[WARN] criterion %d (soft): %s\n       %s\n", c.id, c.name,
                        det.c_str());
        } else {
            std::printf("[FAIL] criterion %d: %s\n       %s\n", c.id, c.name,
                        det.c_str());
            ++hard_failures;
        }
        std::fflush(stdout);
    }
    if (hard_failures)
        std::printf("%d hard criterion(s) failed\n", hard_failures);
    else
        std::printf("all hard criteria passed\n");
    return hard_failures == 0 ? 0 : 1;
}
