#pragma once

#include <memory>
#include <string>
#include <vector>

#include "soapkd/config.hpp"
#include "soapkd/data.hpp"
#include "soapkd/labelembed.hpp"
#include "soapkd/layers.hpp"

namespace soapkd {

// Synthetic image with its conditioning label and refinement state.
struct FakeSample {
    Tensorf image;             // {3, H, W}
    double cond_label = 0.0;   // normalized
    double dr_estimate = -1.0;   // density ratio; < 0 = not yet estimated
    double teacher_pred = -2.0;  // normalized; <= -2 = not yet predicted
    bool kept_by_subsampling = false;
    bool kept_by_filtering = false;

    bool has_dr() const { return dr_estimate >= 0.0; }
    bool has_teacher_pred() const { return teacher_pred > -1.5; }
};

// Conditional generator: z -> 4x4 seed -> four upsample+conv stages with
// conditional-batch-norm shifts driven by the embedded label, sigmoid output.
class Generator {
public:
    Generator() = default;
    Generator(int noise_dim, int cond_dim, int base_channels, int resolution,
              std::uint64_t seed);

    Tensorf forward(const Tensorf& z, const Tensorf& h, bool train);
    // dimages -> dz (unused by callers but completes the chain)
    Tensorf backward(const Tensorf& dimages);

    std::vector<Param<float>*> params();
    std::vector<Tensorf*> state_tensors();
    void zero_grad();
    std::uint64_t state_fingerprint();

    int noise_dim() const { return noise_dim_; }
    int cond_dim() const { return cond_dim_; }
    int base_channels() const { return base_; }
    int resolution() const { return resolution_; }

private:
    int noise_dim_ = 0, cond_dim_ = 0, base_ = 0, resolution_ = 0;
    int stages_ = 0, seed_hw_ = 4;
    std::unique_ptr<FCLayer<float>> fc_;
    std::vector<std::unique_ptr<Upsample2xLayer<float>>> up_;
    std::vector<std::unique_ptr<Conv2dLayer<float>>> conv_;
    std::vector<std::unique_ptr<BatchNormLayer<float>>> cbn_;
    std::vector<std::unique_ptr<ActivationLayer<float>>> act_;
    std::unique_ptr<Conv2dLayer<float>> out_conv_;
    std::unique_ptr<ActivationLayer<float>> out_act_;
    std::vector<int> fc_out_dims_;
};

// Projection discriminator: spectral-normalized conv stack, global sum
// pooling, then psi(feat) + <V h, feat>.
class Discriminator {
public:
    Discriminator() = default;
    Discriminator(int cond_dim, int base_channels, int resolution,
                  std::uint64_t seed);

    // Returns {N, 1} realness scores.
    Tensorf forward(const Tensorf& images, const Tensorf& h, bool train);
    // dscores -> dimages
    Tensorf backward(const Tensorf& dscores);

    std::vector<Param<float>*> params();
    std::vector<Tensorf*> state_tensors();
    void zero_grad();
    std::uint64_t state_fingerprint();

private:
    int cond_dim_ = 0, base_ = 0, resolution_ = 0, feat_dim_ = 0;
    std::vector<std::unique_ptr<Conv2dLayer<float>>> conv_;
    std::vector<std::unique_ptr<ActivationLayer<float>>> act_;
    std::unique_ptr<FCLayer<float>> psi_;     // feat -> 1
    std::unique_ptr<FCLayer<float>> embed_;   // h -> feat (projection term)
    Tensorf feat_, h_cache_, vh_cache_;
    std::vector<int> conv_in_dims_;
};

struct GanPair {
    Generator g;
    Discriminator d;
};

// Vicinity participation weight. Hard: 1 iff |y - y_target| <= kappa.
// Soft: exp(-nu * (y - y_target)^2).
double vicinity_weight(double y, double y_target, double kappa, bool hard,
                       double nu = 50.0);

// Rule of thumb when kappa is unset: twice the largest gap between
// adjacent sorted normalized training labels.
double kappa_rule_of_thumb(std::vector<double> labels);

struct GanTrainLog {
    std::vector<double> d_loss;  // sampled every 50 iterations
    std::vector<double> g_loss;
};

// Adversarial training with hinge loss. T3 must be frozen; its parameters
// are asserted unchanged. Periodic checkpoints go to checkpoint_dir when
// non-empty.
GanTrainLog train_ccgan(GanPair& gan, const std::vector<ImageSample>& train_set,
                        EmbeddingNetworks& embed_nets, const GanConfig& cfg,
                        std::uint64_t seed, const std::string& checkpoint_dir = "");

// One image per conditioning label; deterministic given seed.
std::vector<FakeSample> generate(Generator& g, EmbeddingNetworks& embed_nets,
                                 const std::vector<double>& labels,
                                 std::uint64_t seed);

void save_gan(const std::string& path, GanPair& gan, const GanConfig& cfg,
              std::uint64_t seed);
GanPair load_gan(const std::string& path);

// Fake-pool manifest I/O ("path,cond_angle_degrees").
void write_fake_pool(const std::string& dir, const std::vector<FakeSample>& pool);
std::vector<FakeSample> read_fake_pool(const std::string& dir);

}  // namespace soapkd
