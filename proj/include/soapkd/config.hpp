#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace soapkd {

struct TrainSchedule {
    int epochs = 200;
    int batch_size = 128;
    double lr0 = 0.01;
    std::vector<int> lr_decay_epochs = {80, 150};
    double lr_decay_factor = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    // exact-label geometric augmentation (flips and 90-degree rotations);
    // part of the teacher recipe, off for students
    bool augment = false;
};

struct DataConfig {
    std::string source = "synth";  // "synth" or a manifest directory path
    int n_train_pool = 2000;
    int n_test = 500;
};

struct EmbedConfig {
    int latent_dim = 128;
    int t1t2_epochs = 10;
    int t3_iterations = 2000;
    int batch_size = 64;
    double noise_var = 0.02;  // gamma ~ N(0, noise_var)
    double epsilon_embed = 0.02;
    double t3_lr = 1e-3;
};

struct GanConfig {
    int iterations = 16000;
    int batch_size = 32;
    int noise_dim = 64;
    std::string vicinity = "hard";  // hard | soft
    double kappa = -1.0;            // <0: rule of thumb (2 x max adjacent gap)
    double label_noise_sigma = 0.05;
    double lr_g = 2e-4;
    double lr_d = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    int base_channels = 32;
    int checkpoint_every = 4000;
};

struct GenConfig {
    int n_fakes = 2500;
};

struct RefineryConfig {
    std::string classifier_spec = "resnet50-desk";
    int classifier_epochs = 15;
    int classifier_batch = 64;
    double classifier_lr = 0.01;
    int dre_iterations = 1500;
    int dre_batch = 64;
    double dre_lr = 1e-3;
    double dre_penalty = 10.0;  // weight on (E_fake[r] - 1)^2
    double rho = 0.9;           // quantile for the filtering threshold
    double alpha_override = -1.0;  // degrees; < 0 = quantile rule
};

struct DistillConfig {
    std::string student = "resnet8-desk";
    double lambda = -1.0;  // < 0: select by grid search
    std::vector<double> lambda_grid = {0.1, 1.0, 10.0, 100.0};
    TrainSchedule schedule;
    bool grid_full_schedule = false;  // grid search at full epochs
    int grid_epochs = 30;             // used when grid_full_schedule is false
};

// Whole-pipeline configuration. Defaults define the desk-scale run.
struct RunConfig {
    std::string out_dir = "runs/desk";
    std::uint64_t seed = 7;
    int resolution = 64;
    std::vector<std::string> stages = {"data", "teacher", "embed", "gan", "gen",
                                       "refine", "grid", "distill", "eval"};
    DataConfig data;
    TrainSchedule teacher = [] {
        TrainSchedule s;
        s.augment = true;  // flips/rot90 with exact angle relabeling
        return s;
    }();
    std::string teacher_spec = "mobile-soap-desk";
    EmbedConfig embed;
    GanConfig gan;
    GenConfig gen;
    RefineryConfig refinery;
    DistillConfig distill;
    bool short_profile = false;
};

// Key/value config file with [section] headers; unknown keys are hard
// errors. Missing keys keep their defaults.
RunConfig parse_config_text(const std::string& text);
RunConfig load_config_file(const std::string& path);

// Canonical serialization; also the fingerprint input.
std::string config_to_text(const RunConfig& cfg);
std::string config_fingerprint(const RunConfig& cfg);

// Reduced epochs/iterations preset that keeps the pipeline shape.
void apply_short_profile(RunConfig& cfg);

}  // namespace soapkd
