#pragma once

#include <string>
#include <vector>

#include "soapkd/ccgan.hpp"
#include "soapkd/config.hpp"
#include "soapkd/data.hpp"
#include "soapkd/model.hpp"

namespace soapkd {

// Ship-class classifier whose penultimate spatial feature maps feed the
// density ratio model.
class FeatureExtractor {
public:
    FeatureExtractor() = default;
    FeatureExtractor(const std::string& spec_name, int resolution, int num_classes,
                     std::uint64_t seed);

    // Spatial feature maps {N, C, h, w} from the backbone tap.
    Tensorf features(const Tensorf& batch);
    // Class logits {N, K}.
    Tensorf logits(const Tensorf& batch, bool train);
    Tensorf backward_logits(const Tensorf& dlogits);

    Network<float>& net() { return net_; }
    Shape3 feature_shape() const { return feature_shape_; }
    int num_classes() const { return num_classes_; }

    void save(const std::string& path, std::uint64_t seed);
    static FeatureExtractor load(const std::string& path);

private:
    std::string spec_name_;
    int resolution_ = 0;
    int num_classes_ = 0;
    int tap_index_ = -1;
    Shape3 feature_shape_{};
    Network<float> net_;
};

// Cross-entropy training on ship classes; returns final train accuracy.
double train_feature_extractor(FeatureExtractor& extractor,
                               const std::vector<ImageSample>& train_set,
                               const RefineryConfig& cfg, std::uint64_t seed);

// Conditional density ratio model: a 5-layer conv net over classifier
// features with the embedded label broadcast-concatenated as channels;
// softplus keeps the output nonnegative.
class DensityRatioModel {
public:
    DensityRatioModel() = default;
    DensityRatioModel(Shape3 feature_shape, int cond_dim, std::uint64_t seed);

    // r(features, h) -> {N}; h may be empty when cond_dim == 0.
    std::vector<double> ratio(const Tensorf& features, const Tensorf& h, bool train);
    void backward(const std::vector<double>& dratio);

    std::vector<Param<float>*> params();
    std::vector<Tensorf*> state_tensors();
    void zero_grad();

    Shape3 feature_shape() const { return feature_shape_; }
    int cond_dim() const { return cond_dim_; }

    void save(const std::string& path, std::uint64_t seed);
    static DensityRatioModel load(const std::string& path);

private:
    Tensorf assemble_input(const Tensorf& features, const Tensorf& h) const;

    Shape3 feature_shape_{};
    int cond_dim_ = 0;
    Network<float> net_;
    std::vector<double> raw_cache_;  // pre-softplus outputs of the last forward
};

struct DreTrainLog {
    std::vector<double> loss;  // sampled every 50 iterations
};

// Penalized least-squares density ratio fit: minimize
//   0.5 E_fake[r^2] - E_real[r] + penalty (E_fake[r] - 1)^2,
// whose unpenalized minimizer is p_real / p_fake.
DreTrainLog train_dre(DensityRatioModel& model, const Tensorf& real_features,
                      const Tensorf& real_h, const Tensorf& fake_features,
                      const Tensorf& fake_h, const RefineryConfig& cfg,
                      std::uint64_t seed);

// Rejection sampling core: accept with probability min(1, r_i / max_j r_j).
// Per-sample streams derive from (seed, index); records dr_estimate.
void subsample_with_ratios(std::vector<FakeSample>& pool,
                           const std::vector<double>& ratios, std::uint64_t seed);

// Scores the pool with the DRE model, then rejection-samples.
void subsample(std::vector<FakeSample>& pool, DensityRatioModel& dre,
               FeatureExtractor& extractor, EmbeddingNetworks& embed_nets,
               std::uint64_t seed);

// rho-quantile (linear interpolation) of teacher absolute errors on the
// validation set, in degrees; alpha_override >= 0 bypasses the rule.
double compute_alpha(RegressionModel<float>& teacher,
                     const std::vector<ImageSample>& val_set,
                     const RefineryConfig& cfg);

// Linear-interpolation quantile of unsorted values, q in [0, 1].
double quantile_linear(std::vector<double> values, double q);

// Filtering core: keeps subsampling survivors whose prediction is within
// alpha degrees (circular) of the conditioning label; records the
// prediction on every sample.
void apply_filter(std::vector<FakeSample>& pool,
                  const std::vector<double>& teacher_preds_normalized,
                  double alpha_degrees);

// Predicts with the teacher, then applies the filter.
void filter(std::vector<FakeSample>& pool, RegressionModel<float>& teacher,
            double alpha_degrees);

// Refined-pool manifest
// ("path,cond_angle_degrees,dr_estimate,teacher_pred_degrees,kept_sub,kept_filter").
void write_refined_manifest(const std::string& path,
                            const std::vector<FakeSample>& pool,
                            const std::vector<std::string>& image_paths);
void apply_refined_manifest(const std::string& path, std::vector<FakeSample>& pool);

}  // namespace soapkd
