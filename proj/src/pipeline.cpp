#include "soapkd/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "soapkd/ccgan.hpp"
#include "soapkd/common.hpp"
#include "soapkd/data.hpp"
#include "soapkd/distill.hpp"
#include "soapkd/eval.hpp"
#include "soapkd/labelembed.hpp"
#include "soapkd/netspec.hpp"
#include "soapkd/refinery.hpp"
#include "soapkd/serialize.hpp"

namespace fs = std::filesystem;

namespace soapkd {

namespace {

fs::path stage_dir(const RunConfig& cfg, const std::string& stage) {
    return fs::path(cfg.out_dir) / stage;
}

fs::path marker_path(const RunConfig& cfg, const std::string& stage) {
    return stage_dir(cfg, stage) / "stage.done";
}

std::uint64_t stage_seed(const RunConfig& cfg, const std::string& stage) {
    return Rng(cfg.seed).fork(fnv1a64(stage)).next_u64();
}

void write_marker(const RunConfig& cfg, const std::string& stage) {
    nlohmann::json j;
    j["stage"] = stage;
    j["fingerprint"] = config_fingerprint(cfg);
    std::ofstream f(marker_path(cfg, stage), std::ios::binary);
    f << j.dump(2) << "\n";
    if (!f) throw DataError("cannot write stage marker for " + stage);
}

void require_artifact(const fs::path& path, const std::string& stage,
                      const std::string& producer) {
    if (!fs::exists(path))
        throw DataError("stage '" + stage + "': missing upstream artifact '" +
                        path.string() + "' (run stage '" + producer + "' first)");
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    std::ofstream f(path, std::ios::binary);
    f << j.dump(2) << "\n";
    if (!f) throw DataError("cannot write " + path.string());
}

nlohmann::json read_json(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot read " + path.string());
    nlohmann::json j;
    f >> j;
    return j;
}

std::vector<double> collect_labels(const std::vector<ImageSample>& set) {
    std::vector<double> out;
    out.reserve(set.size());
    for (const auto& s : set) out.push_back(s.label.normalized());
    return out;
}

}  // namespace

const std::vector<std::string>& pipeline_stage_order() {
    static const std::vector<std::string> order = {"data", "count",  "teacher", "embed",
                                                   "gan",  "gen",    "refine",  "grid",
                                                   "distill", "eval"};
    return order;
}

bool stage_complete(const RunConfig& cfg, const std::string& stage) {
    const fs::path marker = marker_path(cfg, stage);
    if (!fs::exists(marker)) return false;
    try {
        const nlohmann::json j = read_json(marker);
        return j.value("fingerprint", "") == config_fingerprint(cfg);
    } catch (const std::exception&) {
        return false;
    }
}

// ---------------------------------------------------------------------------
// data
// ---------------------------------------------------------------------------

void stage_data(const RunConfig& cfg) {
    const fs::path dir = stage_dir(cfg, "data");
    fs::create_directories(dir);
    const std::uint64_t seed = stage_seed(cfg, "data");

    std::vector<ImageSample> pool, test;
    if (cfg.data.source == "synth") {
        pool = synth_generate(cfg.data.n_train_pool, cfg.resolution, seed);
        test = synth_generate(cfg.data.n_test, cfg.resolution,
                              Rng(seed).fork(0x7e57).next_u64());
    } else {
        // directory of images + manifest; preprocessing applies here
        auto raw = read_dataset(cfg.data.source);
        for (auto& s : raw) s.pixels = squarify_and_resize(s.pixels, cfg.resolution);
        Rng rng(seed);
        std::vector<int> order(raw.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = int(i);
        rng.shuffle(order);
        const std::size_t n_test =
            std::min(raw.size() / 5, std::size_t(cfg.data.n_test));
        for (std::size_t i = 0; i < order.size(); ++i) {
            if (i < n_test)
                test.push_back(raw[std::size_t(order[i])]);
            else
                pool.push_back(raw[std::size_t(order[i])]);
        }
    }

    const DatasetSplit split = split_dataset(pool, Rng(seed).fork(0x5b17).next_u64());
    write_dataset((dir / "train").string(), split.train);
    write_dataset((dir / "val").string(), split.val);
    write_dataset((dir / "test").string(), test);
    write_marker(cfg, "data");
}

// ---------------------------------------------------------------------------
// count
// ---------------------------------------------------------------------------

void stage_count(const RunConfig& cfg) {
    const fs::path dir = stage_dir(cfg, "count");
    fs::create_directories(dir);
    std::ostringstream os;
    os << "spec,input_size,params,macs,params_millions,macs_billions\n";
    for (const auto& name : builtin_spec_names()) {
        const NetworkSpec spec = builtin_spec(name);
        const HeadWidths head = default_head(name);
        const std::int64_t params = count_params(spec, head);
        const std::int64_t macs = count_macs(spec, head);
        char buf[128];
        std::snprintf(buf, sizeof(buf), "%s,%d,%lld,%lld,%.3f,%.3f\n", name.c_str(),
                      spec.input_shape.h, (long long)params, (long long)macs,
                      double(params) / 1e6, double(macs) / 1e9);
        os << buf;
    }
    std::ofstream f(dir / "counts.csv", std::ios::binary);
    f << os.str();
    if (!f) throw DataError("stage 'count': cannot write counts.csv");
    write_marker(cfg, "count");
}

// ---------------------------------------------------------------------------
// teacher
// ---------------------------------------------------------------------------

void stage_teacher(const RunConfig& cfg) {
    const fs::path data_dir = stage_dir(cfg, "data");
    require_artifact(data_dir / "train" / "manifest.csv", "teacher", "data");
    const fs::path dir = stage_dir(cfg, "teacher");
    fs::create_directories(dir);

    const auto train = read_dataset((data_dir / "train").string());
    const auto val = read_dataset((data_dir / "val").string());
    const std::uint64_t seed = stage_seed(cfg, "teacher");

    NetworkSpec spec = builtin_spec(cfg.teacher_spec, cfg.resolution);
    RegressionModel<float> teacher(spec, default_head(cfg.teacher_spec), seed);
    const RunRecord record = train_teacher(teacher, train, cfg.teacher, seed);

    save_model((dir / "teacher.ckpt").string(), teacher, seed, "teacher");
    nlohmann::json j;
    j["seed"] = seed;
    j["spec"] = cfg.teacher_spec;
    j["epoch_loss"] = record.epoch_loss;
    j["epoch_lr"] = record.epoch_lr;
    j["train_mae"] = record.final_train_mae;
    j["val_mae"] = model_mae_degrees(teacher, val);
    j["config_fingerprint"] = config_fingerprint(cfg);
    write_json(dir / "record.json", j);
    write_marker(cfg, "teacher");
}

// ---------------------------------------------------------------------------
// embed
// ---------------------------------------------------------------------------

void stage_embed(const RunConfig& cfg) {
    const fs::path data_dir = stage_dir(cfg, "data");
    require_artifact(data_dir / "train" / "manifest.csv", "embed", "data");
    const fs::path dir = stage_dir(cfg, "embed");
    fs::create_directories(dir);

    const auto train = read_dataset((data_dir / "train").string());
    const std::uint64_t seed = stage_seed(cfg, "embed");

    EmbeddingNetworks nets(cfg.embed.latent_dim, cfg.resolution, seed);
    EmbedTrainLog log = train_t1_t2(nets, train, cfg.embed, seed);
    nets.freeze_t2();
    train_t3(nets, collect_labels(train), cfg.embed, Rng(seed).fork(3).next_u64(),
             &log);
    nets.freeze_t3();

    const double round_trip = round_trip_max_error(nets);
    nets.save((dir / "embed.ckpt").string(), cfg.embed, seed);
    nlohmann::json j;
    j["seed"] = seed;
    j["t1t2_epoch_loss"] = log.t1t2_epoch_loss;
    j["t3_loss"] = log.t3_loss;
    j["round_trip_max_error"] = round_trip;
    j["epsilon_embed"] = cfg.embed.epsilon_embed;
    j["gate_passed"] = round_trip <= cfg.embed.epsilon_embed;
    j["config_fingerprint"] = config_fingerprint(cfg);
    write_json(dir / "record.json", j);
    write_marker(cfg, "embed");
}

// ---------------------------------------------------------------------------
// gan
// ---------------------------------------------------------------------------

void stage_gan(const RunConfig& cfg) {
    const fs::path data_dir = stage_dir(cfg, "data");
    require_artifact(data_dir / "train" / "manifest.csv", "gan", "data");
    require_artifact(stage_dir(cfg, "embed") / "embed.ckpt", "gan", "embed");
    const fs::path dir = stage_dir(cfg, "gan");
    fs::create_directories(dir);

    const auto train = read_dataset((data_dir / "train").string());
    EmbeddingNetworks nets =
        EmbeddingNetworks::load((stage_dir(cfg, "embed") / "embed.ckpt").string());
    const std::uint64_t seed = stage_seed(cfg, "gan");

    GanPair gan;
    gan.g = Generator(cfg.gan.noise_dim, cfg.embed.latent_dim, cfg.gan.base_channels,
                      cfg.resolution, Rng(seed).fork(1).next_u64());
    gan.d = Discriminator(cfg.embed.latent_dim, cfg.gan.base_channels, cfg.resolution,
                          Rng(seed).fork(2).next_u64());
    const GanTrainLog log = train_ccgan(gan, train, nets, cfg.gan, seed, dir.string());

    save_gan((dir / "gan.ckpt").string(), gan, cfg.gan, seed);
    nlohmann::json j;
    j["seed"] = seed;
    j["d_loss"] = log.d_loss;
    j["g_loss"] = log.g_loss;
    j["config_fingerprint"] = config_fingerprint(cfg);
    write_json(dir / "record.json", j);
    write_marker(cfg, "gan");
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

void stage_gen(const RunConfig& cfg) {
    require_artifact(stage_dir(cfg, "gan") / "gan.ckpt", "gen", "gan");
    require_artifact(stage_dir(cfg, "embed") / "embed.ckpt", "gen", "embed");
    const fs::path dir = stage_dir(cfg, "gen");
    fs::create_directories(dir);

    GanPair gan = load_gan((stage_dir(cfg, "gan") / "gan.ckpt").string());
    EmbeddingNetworks nets =
        EmbeddingNetworks::load((stage_dir(cfg, "embed") / "embed.ckpt").string());
    const std::uint64_t seed = stage_seed(cfg, "gen");

    Rng rng(seed);
    std::vector<double> labels(std::size_t(cfg.gen.n_fakes));
    for (auto& y : labels) y = rng.uniform();
    const auto pool = generate(gan.g, nets, labels, Rng(seed).fork(1).next_u64());
    write_fake_pool((dir / "fakes").string(), pool);
    write_marker(cfg, "gen");
}

// ---------------------------------------------------------------------------
// refine
// ---------------------------------------------------------------------------

void stage_refine(const RunConfig& cfg, const ArtifactOverrides* ov) {
    const fs::path data_dir = stage_dir(cfg, "data");
    const fs::path fakes_dir = ov && !ov->fakes_dir.empty()
                                   ? fs::path(ov->fakes_dir)
                                   : stage_dir(cfg, "gen") / "fakes";
    const fs::path teacher_ckpt = ov && !ov->teacher_ckpt.empty()
                                      ? fs::path(ov->teacher_ckpt)
                                      : stage_dir(cfg, "teacher") / "teacher.ckpt";
    const fs::path dir = ov && !ov->out_dir.empty() ? fs::path(ov->out_dir)
                                                    : stage_dir(cfg, "refine");
    require_artifact(data_dir / "train" / "manifest.csv", "refine", "data");
    require_artifact(teacher_ckpt, "refine", "teacher");
    require_artifact(stage_dir(cfg, "embed") / "embed.ckpt", "refine", "embed");
    require_artifact(fakes_dir / "manifest.csv", "refine", "gen");
    fs::create_directories(dir);

    const auto train = read_dataset((data_dir / "train").string());
    const auto val = read_dataset((data_dir / "val").string());
    auto pool = read_fake_pool(fakes_dir.string());
    RegressionModel<float> teacher = load_model(teacher_ckpt.string());
    teacher.freeze();
    EmbeddingNetworks nets =
        EmbeddingNetworks::load((stage_dir(cfg, "embed") / "embed.ckpt").string());
    const std::uint64_t seed = stage_seed(cfg, "refine");

    // classifier feature extractor
    int num_classes = 0;
    for (const auto& s : train) num_classes = std::max(num_classes, s.ship_class + 1);
    FeatureExtractor extractor(cfg.refinery.classifier_spec, cfg.resolution,
                               num_classes, Rng(seed).fork(1).next_u64());
    const double train_acc =
        train_feature_extractor(extractor, train, cfg.refinery,
                                Rng(seed).fork(2).next_u64());

    // feature tensors for DRE training
    auto extract_all = [&](auto&& images, auto&& label_of, int count) {
        Tensorf feats;
        Tensorf hs({count, cfg.embed.latent_dim});
        const int chunk = 64;
        for (int at = 0; at < count; at += chunk) {
            const int take = std::min(chunk, count - at);
            Tensorf batch({take, 3, cfg.resolution, cfg.resolution});
            Tensorf y({take, 1});
            for (int i = 0; i < take; ++i) {
                const Tensorf& px = images(at + i);
                std::copy_n(px.data(), px.numel(),
                            batch.data() + std::size_t(i) * px.numel());
                y.at(i, 0) = float(label_of(at + i));
            }
            Tensorf f = extractor.features(batch);
            if (feats.empty()) feats.resize({count, f.dim(1), f.dim(2), f.dim(3)});
            const std::size_t stride = f.numel() / std::size_t(take);
            std::copy_n(f.data(), f.numel(), feats.data() + std::size_t(at) * stride);
            Tensorf h = nets.t3_embed(y, false);
            std::copy_n(h.data(), h.numel(),
                        hs.data() + std::size_t(at) * cfg.embed.latent_dim);
        }
        return std::make_pair(feats, hs);
    };

    auto [real_feats, real_h] = extract_all(
        [&](int i) -> const Tensorf& { return train[std::size_t(i)].pixels; },
        [&](int i) { return train[std::size_t(i)].label.normalized(); }, int(train.size()));
    auto [fake_feats, fake_h] = extract_all(
        [&](int i) -> const Tensorf& { return pool[std::size_t(i)].image; },
        [&](int i) { return pool[std::size_t(i)].cond_label; }, int(pool.size()));

    DensityRatioModel dre(extractor.feature_shape(), cfg.embed.latent_dim,
                          Rng(seed).fork(3).next_u64());
    const DreTrainLog dre_log = train_dre(dre, real_feats, real_h, fake_feats, fake_h,
                                          cfg.refinery, Rng(seed).fork(4).next_u64());

    subsample(pool, dre, extractor, nets, Rng(seed).fork(5).next_u64());
    const double alpha = compute_alpha(teacher, val, cfg.refinery);
    filter(pool, teacher, alpha);

    extractor.save((dir / "extractor.ckpt").string(), seed);
    dre.save((dir / "dre.ckpt").string(), seed);
    std::vector<std::string> paths(pool.size());
    char name[32];
    for (std::size_t i = 0; i < pool.size(); ++i) {
        std::snprintf(name, sizeof(name), "fake_%06zu.png", i);
        paths[i] = name;
    }
    write_refined_manifest((dir / "refined.csv").string(), pool, paths);

    int kept_sub = 0, kept_filter = 0;
    for (const auto& s : pool) {
        kept_sub += s.kept_by_subsampling ? 1 : 0;
        kept_filter += s.kept_by_filtering ? 1 : 0;
    }
    nlohmann::json j;
    j["seed"] = seed;
    j["classifier_train_accuracy"] = train_acc;
    j["dre_loss"] = dre_log.loss;
    j["alpha_degrees"] = alpha;
    j["pool_size"] = pool.size();
    j["kept_by_subsampling"] = kept_sub;
    j["kept_by_filtering"] = kept_filter;
    j["config_fingerprint"] = config_fingerprint(cfg);
    write_json(dir / "record.json", j);
    if (!ov) write_marker(cfg, "refine");
}

// ---------------------------------------------------------------------------
// grid
// ---------------------------------------------------------------------------

void stage_grid(const RunConfig& cfg) {
    const fs::path data_dir = stage_dir(cfg, "data");
    require_artifact(data_dir / "train" / "manifest.csv", "grid", "data");
    require_artifact(stage_dir(cfg, "teacher") / "teacher.ckpt", "grid", "teacher");
    const fs::path dir = stage_dir(cfg, "grid");
    fs::create_directories(dir);

    const auto train = read_dataset((data_dir / "train").string());
    const auto val = read_dataset((data_dir / "val").string());
    RegressionModel<float> teacher =
        load_model((stage_dir(cfg, "teacher") / "teacher.ckpt").string());
    teacher.freeze();
    const std::uint64_t seed = stage_seed(cfg, "grid");

    TrainSchedule schedule = cfg.distill.schedule;
    if (!cfg.distill.grid_full_schedule) {
        schedule.epochs = cfg.distill.grid_epochs;
        schedule.lr_decay_epochs = {schedule.epochs / 2, schedule.epochs * 4 / 5};
    }
    const NetworkSpec student_spec = builtin_spec(cfg.distill.student, cfg.resolution);
    const GridSearchResult result =
        grid_search_lambda(cfg.distill.lambda_grid, train, val, teacher, student_spec,
                           default_head(cfg.distill.student), schedule, seed);

    nlohmann::json j;
    j["seed"] = seed;
    j["candidates"] = result.candidates;
    j["val_maes"] = result.val_maes;
    j["best_lambda"] = result.best_lambda;
    j["config_fingerprint"] = config_fingerprint(cfg);
    write_json(dir / "lambda.json", j);
    write_marker(cfg, "grid");
}

// ---------------------------------------------------------------------------
// distill
// ---------------------------------------------------------------------------

void stage_distill(const RunConfig& cfg, const ArtifactOverrides* ov) {
    const fs::path data_dir = stage_dir(cfg, "data");
    const fs::path fakes_dir = ov && !ov->fakes_dir.empty()
                                   ? fs::path(ov->fakes_dir)
                                   : stage_dir(cfg, "gen") / "fakes";
    const fs::path teacher_ckpt = ov && !ov->teacher_ckpt.empty()
                                      ? fs::path(ov->teacher_ckpt)
                                      : stage_dir(cfg, "teacher") / "teacher.ckpt";
    const fs::path refined_csv = ov && !ov->refined_csv.empty()
                                     ? fs::path(ov->refined_csv)
                                     : stage_dir(cfg, "refine") / "refined.csv";
    require_artifact(data_dir / "train" / "manifest.csv", "distill", "data");
    require_artifact(teacher_ckpt, "distill", "teacher");
    require_artifact(refined_csv, "distill", "refine");
    const fs::path dir = ov && !ov->out_dir.empty() ? fs::path(ov->out_dir)
                                                    : stage_dir(cfg, "distill");
    fs::create_directories(dir);

    const auto train = read_dataset((data_dir / "train").string());
    const auto val = read_dataset((data_dir / "val").string());
    const auto test = read_dataset((data_dir / "test").string());
    RegressionModel<float> teacher = load_model(teacher_ckpt.string());
    teacher.freeze();

    auto pool = read_fake_pool(fakes_dir.string());
    apply_refined_manifest(refined_csv.string(), pool);

    double lambda = cfg.distill.lambda;
    if (lambda < 0) {
        require_artifact(stage_dir(cfg, "grid") / "lambda.json", "distill", "grid");
        lambda = read_json(stage_dir(cfg, "grid") / "lambda.json")
                     .at("best_lambda")
                     .get<double>();
    }

    const std::uint64_t seed = stage_seed(cfg, "distill");
    const NetworkSpec student_spec = builtin_spec(cfg.distill.student, cfg.resolution);
    const HeadWidths head = default_head(cfg.distill.student);
    const std::vector<FakeSample> no_fakes;

    nlohmann::json j;
    j["seed"] = seed;
    j["lambda"] = lambda;
    j["student"] = cfg.distill.student;
    auto run_variant = [&](const std::string& name, double lam,
                           const std::vector<FakeSample>& fakes) {
        const std::uint64_t vseed = Rng(seed).fork(fnv1a64(name)).next_u64();
        RegressionModel<float> student(student_spec, head, vseed);
        Adapter<float> adapter =
            build_adapter<float>(student_spec, teacher.backbone_spec(), vseed);
        const RunRecord rec = train_student(student, train, fakes, teacher, adapter,
                                            lam, cfg.distill.schedule, vseed);
        save_model((dir / (name + ".ckpt")).string(), student, vseed, name);
        nlohmann::json v;
        v["lambda"] = lam;
        v["epoch_loss"] = rec.epoch_loss;
        v["fake_pool_used"] = rec.fake_pool_used;
        v["train_mae"] = rec.final_train_mae;
        v["val_mae"] = model_mae_degrees(student, val);
        v["test_mae"] = model_mae_degrees(student, test);
        j["variants"][name] = v;
    };
    run_variant("nokd", 0.0, no_fakes);
    run_variant("lkd", lambda, no_fakes);
    run_variant("soapkd", lambda, pool);

    j["teacher_test_mae"] = model_mae_degrees(teacher, test);
    j["config_fingerprint"] = config_fingerprint(cfg);
    write_json(dir / "record.json", j);
    if (!ov) write_marker(cfg, "distill");
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

void stage_eval(const RunConfig& cfg) {
    const fs::path dir = stage_dir(cfg, "eval");
    fs::create_directories(dir);

    EvalReport report;
    const std::string fp = config_fingerprint(cfg);
    const std::string seed_str = std::to_string(cfg.seed);

    const fs::path distill_record = stage_dir(cfg, "distill") / "record.json";
    if (fs::exists(distill_record)) {
        const nlohmann::json j = read_json(distill_record);
        const NetworkSpec tspec = builtin_spec(cfg.teacher_spec, cfg.resolution);
        const HeadWidths thead = default_head(cfg.teacher_spec);
        report.rows.push_back({cfg.teacher_spec,
                               double(count_params(tspec, thead)) / 1e6,
                               double(count_macs(tspec, thead)) / 1e9,
                               j.at("teacher_test_mae").get<double>(), seed_str, fp});
        const NetworkSpec sspec = builtin_spec(cfg.distill.student, cfg.resolution);
        const HeadWidths shead = default_head(cfg.distill.student);
        const double sparams = double(count_params(sspec, shead)) / 1e6;
        const double smacs = double(count_macs(sspec, shead)) / 1e9;
        for (const auto& name : {"nokd", "lkd", "soapkd"}) {
            const auto& v = j.at("variants").at(name);
            report.rows.push_back({cfg.distill.student + " (" + name + ")", sparams,
                                   smacs, v.at("test_mae").get<double>(), seed_str,
                                   fp});
        }
    } else {
        // counting-only report over the built-in zoo
        for (const auto& name : builtin_spec_names()) {
            const NetworkSpec spec = builtin_spec(name);
            const HeadWidths head = default_head(name);
            report.rows.push_back({name, double(count_params(spec, head)) / 1e6,
                                   double(count_macs(spec, head)) / 1e9, 0.0, seed_str,
                                   fp});
        }
    }
    emit_report(report, (dir / "report").string());
    write_marker(cfg, "eval");
}

// ---------------------------------------------------------------------------
// runner
// ---------------------------------------------------------------------------

void run_pipeline(const RunConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    {
        std::ofstream f(fs::path(cfg.out_dir) / "config.txt", std::ios::binary);
        f << config_to_text(cfg);
        f << "# fingerprint = " << config_fingerprint(cfg) << "\n";
    }
    for (const auto& stage : pipeline_stage_order()) {
        if (std::find(cfg.stages.begin(), cfg.stages.end(), stage) == cfg.stages.end())
            continue;
        if (stage_complete(cfg, stage)) {
            std::cout << "[pipeline] " << stage << ": up to date, skipping\n";
            continue;
        }
        std::cout << "[pipeline] " << stage << ": running\n";
        if (stage == "data") stage_data(cfg);
        else if (stage == "count") stage_count(cfg);
        else if (stage == "teacher") stage_teacher(cfg);
        else if (stage == "embed") stage_embed(cfg);
        else if (stage == "gan") stage_gan(cfg);
        else if (stage == "gen") stage_gen(cfg);
        else if (stage == "refine") stage_refine(cfg);
        else if (stage == "grid") stage_grid(cfg);
        else if (stage == "distill") stage_distill(cfg);
        else if (stage == "eval") stage_eval(cfg);
        else throw ConfigError("unknown stage '" + stage + "'");
    }
}

}  // namespace soapkd
