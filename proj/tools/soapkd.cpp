// soapkd: angle-regression distillation toolkit.
//
// Subcommands cover the pipeline stages individually plus a `pipeline`
// runner with resume. Exit codes: 0 ok, 2 config error, 3 data error,
// 4 contract violation.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "soapkd/ccgan.hpp"
#include "soapkd/common.hpp"
#include "soapkd/config.hpp"
#include "soapkd/data.hpp"
#include "soapkd/distill.hpp"
#include "soapkd/labelembed.hpp"
#include "soapkd/netspec.hpp"
#include "soapkd/pipeline.hpp"
#include "soapkd/refinery.hpp"

namespace fs = std::filesystem;
using namespace soapkd;

namespace {

struct GlobalOpts {
    std::string config_file;
    std::string out;
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool short_profile = false;
};

RunConfig resolve_config(const GlobalOpts& g) {
    RunConfig cfg = g.config_file.empty() ? RunConfig{} : load_config_file(g.config_file);
    if (g.seed_set) cfg.seed = g.seed;
    if (!g.out.empty()) cfg.out_dir = g.out;
    if (g.short_profile && !cfg.short_profile) apply_short_profile(cfg);
    return cfg;
}

void run_stages(const GlobalOpts& g, const std::vector<std::string>& stages) {
    RunConfig cfg = resolve_config(g);
    cfg.stages = stages;
    run_pipeline(cfg);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SOAP-KD: lightweight orientation-angle regression via "
                 "feature-guided distillation and label-conditioned synthesis"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags are valid after the subcommand too

    GlobalOpts g;
    app.add_option("--config", g.config_file, "config file (key = value sections)");
    app.add_option("--out", g.out, "output directory (overrides config)");
    auto* seed_opt = app.add_option("--seed", g.seed, "global seed (overrides config)");
    app.add_flag("--short", g.short_profile, "reduced-epochs desk profile");

    // synth-data
    auto* synth = app.add_subcommand("synth-data", "generate a procedural dataset");
    int synth_n = 1000, synth_res = 64;
    std::uint64_t synth_seed = 1;
    std::string synth_out = "synth";
    synth->add_option("--n", synth_n, "sample count")->required();
    synth->add_option("--resolution", synth_res, "image resolution");
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--out", synth_out, "output directory")->required();

    // count
    auto* count = app.add_subcommand("count", "parameter/MAC accounting for a spec");
    std::string count_spec = "mobile-soap";
    int count_input = 0;
    std::vector<int> count_head;
    count->add_option("--spec", count_spec, "built-in spec name")->required();
    count->add_option("--input-size", count_input, "override input resolution");
    count->add_option("--head", count_head, "three head widths (last must be 1)");

    // stage wrappers
    auto* train_teacher_cmd = app.add_subcommand("train-teacher", "train the teacher");
    auto* train_embed = app.add_subcommand("train-embed", "train T1/T2/T3");
    std::string embed_data, embed_out;
    train_embed->add_option("--data", embed_data, "dataset dir (train manifest inside)");
    train_embed->add_option("--out", embed_out, "output dir");
    auto* train_gan = app.add_subcommand("train-gan", "train the conditional GAN");
    auto* gen_fakes = app.add_subcommand("gen-fakes", "sample the fake pool");
    int gen_n = 0;
    std::string gen_out;
    gen_fakes->add_option("--n", gen_n, "fake count (overrides config)");
    gen_fakes->add_option("--out", gen_out, "output dir");
    auto* refine = app.add_subcommand("refine", "subsample + filter the fake pool");
    std::string refine_fakes, refine_teacher, refine_out;
    double refine_rho = -1.0;
    refine->add_option("--fakes", refine_fakes, "fake pool dir");
    refine->add_option("--teacher", refine_teacher, "teacher checkpoint");
    refine->add_option("--rho", refine_rho, "alpha quantile level");
    refine->add_option("--out", refine_out, "output dir");
    auto* grid = app.add_subcommand("grid-lambda", "grid-search lambda on validation");
    auto* distill_cmd = app.add_subcommand("distill", "train student variants");
    std::string distill_student, distill_fakes;
    double distill_lambda = -2.0;
    distill_cmd->add_option("--student", distill_student, "student spec name");
    distill_cmd->add_option("--fakes", distill_fakes, "refined pool dir");
    distill_cmd->add_option("--lambda", distill_lambda, "explicit lambda");
    auto* eval_cmd = app.add_subcommand("eval", "emit the comparison report");
    auto* pipeline_cmd = app.add_subcommand("pipeline", "run configured stages");
    std::string pipeline_stages;
    pipeline_cmd->add_option("--stages", pipeline_stages,
                             "comma-separated stage subset");

    try {
        app.parse(argc, argv);
        g.seed_set = seed_opt->count() > 0;

        if (*synth) {
            const auto samples = synth_generate(synth_n, synth_res, synth_seed);
            write_dataset(synth_out, samples);
            std::printf("wrote %d samples to %s\n", synth_n, synth_out.c_str());
            return kExitOk;
        }
        if (*count) {
            NetworkSpec spec = builtin_spec(count_spec, count_input);
            HeadWidths head = default_head(count_spec);
            if (!count_head.empty()) {
                if (count_head.size() != 3 || count_head[2] != 1)
                    throw ConfigError("--head needs three widths ending in 1");
                head = {count_head[0], count_head[1], count_head[2]};
            }
            const auto params = count_params(spec, head);
            const auto macs = count_macs(spec, head);
            std::printf("%s @ %dx%d head=(%d,%d,%d)\n", count_spec.c_str(),
                        spec.input_shape.h, spec.input_shape.w, head[0], head[1],
                        head[2]);
            std::printf("params: %lld  (%.3f x 1e6)\n", (long long)params,
                        double(params) / 1e6);
            std::printf("macs:   %lld  (%.3f x 1e9)\n", (long long)macs,
                        double(macs) / 1e9);
            return kExitOk;
        }
        if (*train_teacher_cmd) {
            run_stages(g, {"teacher"});
            return kExitOk;
        }
        if (*train_embed) {
            RunConfig cfg = resolve_config(g);
            if (!embed_out.empty()) cfg.out_dir = embed_out;
            if (!embed_data.empty()) {
                // train directly from an external dataset directory
                const auto train = read_dataset(embed_data);
                const std::uint64_t seed = cfg.seed;
                EmbeddingNetworks nets(cfg.embed.latent_dim, train[0].pixels.dim(1),
                                       seed);
                train_t1_t2(nets, train, cfg.embed, seed);
                nets.freeze_t2();
                std::vector<double> labels;
                for (const auto& s : train) labels.push_back(s.label.normalized());
                train_t3(nets, labels, cfg.embed, seed + 1);
                nets.freeze_t3();
                fs::create_directories(cfg.out_dir);
                nets.save((fs::path(cfg.out_dir) / "embed.ckpt").string(), cfg.embed,
                          seed);
                std::printf("round-trip max error: %.5f\n",
                            round_trip_max_error(nets));
                return kExitOk;
            }
            run_stages(g, {"embed"});
            return kExitOk;
        }
        if (*train_gan) {
            run_stages(g, {"gan"});
            return kExitOk;
        }
        if (*gen_fakes) {
            RunConfig cfg = resolve_config(g);
            if (gen_n > 0) cfg.gen.n_fakes = gen_n;
            if (!gen_out.empty()) cfg.out_dir = gen_out;
            cfg.stages = {"gen"};
            run_pipeline(cfg);
            return kExitOk;
        }
        if (*refine) {
            RunConfig cfg = resolve_config(g);
            if (refine_rho > 0) cfg.refinery.rho = refine_rho;
            if (refine_fakes.empty() && refine_teacher.empty() && refine_out.empty()) {
                cfg.stages = {"refine"};
                run_pipeline(cfg);
            } else {
                ArtifactOverrides ov;
                ov.fakes_dir = refine_fakes;
                ov.teacher_ckpt = refine_teacher;
                ov.out_dir = refine_out;
                stage_refine(cfg, &ov);
            }
            return kExitOk;
        }
        if (*grid) {
            run_stages(g, {"grid"});
            return kExitOk;
        }
        if (*distill_cmd) {
            RunConfig cfg = resolve_config(g);
            if (!distill_student.empty()) cfg.distill.student = distill_student;
            if (distill_lambda > -1.5) cfg.distill.lambda = distill_lambda;
            if (distill_fakes.empty()) {
                cfg.stages = {"distill"};
                run_pipeline(cfg);
            } else {
                // --fakes points at a pool dir holding manifest.csv and the
                // refined.csv produced by `refine`
                ArtifactOverrides ov;
                ov.fakes_dir = distill_fakes;
                ov.refined_csv = (fs::path(distill_fakes) / "refined.csv").string();
                stage_distill(cfg, &ov);
            }
            return kExitOk;
        }
        if (*eval_cmd) {
            run_stages(g, {"eval"});
            return kExitOk;
        }
        if (*pipeline_cmd) {
            RunConfig cfg = resolve_config(g);
            if (!pipeline_stages.empty()) {
                cfg.stages.clear();
                std::string item;
                std::istringstream is(pipeline_stages);
                while (std::getline(is, item, ','))
                    if (!item.empty()) cfg.stages.push_back(item);
            }
            run_pipeline(cfg);
            return kExitOk;
        }
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfigError;
    } catch (const ContractViolation& e) {
        std::fprintf(stderr, "contract violation: %s\n", e.what());
        return kExitContractViolation;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return kExitDataError;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitDataError;
    }
}
