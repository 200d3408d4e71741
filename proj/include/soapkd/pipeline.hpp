#pragma once

#include <string>
#include <vector>

#include "soapkd/config.hpp"

namespace soapkd {

// Canonical stage order; cfg.stages selects a subset.
const std::vector<std::string>& pipeline_stage_order();

// Executes the configured stages in canonical order with per-stage
// checkpointing. A completed stage whose config fingerprint matches is
// skipped, so interrupted runs resume without recomputing artifacts.
void run_pipeline(const RunConfig& cfg);

// Explicit artifact locations for the standalone refine/distill
// subcommands; empty fields fall back to the pipeline layout under
// cfg.out_dir.
struct ArtifactOverrides {
    std::string fakes_dir;      // fake pool (manifest.csv + PNGs)
    std::string teacher_ckpt;
    std::string refined_csv;    // refinement record for the fake pool
    std::string out_dir;        // where the stage writes its outputs
};

// Individual stage entry points (shared by the CLI subcommands). Each
// throws DataError naming the missing upstream artifact when dependencies
// are absent.
void stage_data(const RunConfig& cfg);
void stage_count(const RunConfig& cfg);
void stage_teacher(const RunConfig& cfg);
void stage_embed(const RunConfig& cfg);
void stage_gan(const RunConfig& cfg);
void stage_gen(const RunConfig& cfg);
void stage_refine(const RunConfig& cfg, const ArtifactOverrides* ov = nullptr);
void stage_grid(const RunConfig& cfg);
void stage_distill(const RunConfig& cfg, const ArtifactOverrides* ov = nullptr);
void stage_eval(const RunConfig& cfg);

// True when the stage's completion marker exists and matches the config
// fingerprint.
bool stage_complete(const RunConfig& cfg, const std::string& stage);

}  // namespace soapkd
