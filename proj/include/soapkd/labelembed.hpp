#pragma once

#include <string>
#include <vector>

#include "soapkd/config.hpp"
#include "soapkd/data.hpp"
#include "soapkd/network.hpp"

namespace soapkd {

// Label embedding triple. T1 maps images to a d-dimensional feature, T2
// maps features to normalized labels, and T3 inverts T2 so that a scalar
// label becomes a d-dimensional conditioning vector.
class EmbeddingNetworks {
public:
    EmbeddingNetworks() = default;
    EmbeddingNetworks(int latent_dim, int resolution, std::uint64_t seed);

    // h = T1(x): {N, d} features from an image batch.
    Tensorf t1_features(const Tensorf& batch, bool train);
    // y = T2(h): {N, 1} normalized labels from features.
    Tensorf t2_predict(const Tensorf& features, bool train);
    // h = T3(y): {N, d} embeddings from normalized labels.
    Tensorf t3_embed(const Tensorf& labels, bool train);

    Network<float>& t1() { return t1_; }
    Network<float>& t2() { return t2_; }
    Network<float>& t3() { return t3_; }

    int latent_dim() const { return latent_dim_; }
    int resolution() const { return resolution_; }

    void freeze_t2() { t2_frozen_ = true; }
    bool t2_frozen() const { return t2_frozen_; }
    void freeze_t3() { t3_frozen_ = true; }
    bool t3_frozen() const { return t3_frozen_; }

    void save(const std::string& path, const EmbedConfig& cfg, std::uint64_t seed);
    static EmbeddingNetworks load(const std::string& path);

private:
    int latent_dim_ = 0;
    int resolution_ = 0;
    Network<float> t1_;  // vgg8-desk backbone + global average pool
    Network<float> t2_;  // single linear map d -> 1
    Network<float> t3_;  // 5-layer MLP 1 -> d
    bool t2_frozen_ = false;
    bool t3_frozen_ = false;
};

struct EmbedTrainLog {
    std::vector<double> t1t2_epoch_loss;
    std::vector<double> t3_loss;  // sampled every 100 iterations
};

// Joint squared-error training of T1+T2 on normalized labels.
EmbedTrainLog train_t1_t2(EmbeddingNetworks& nets,
                          const std::vector<ImageSample>& train_set,
                          const EmbedConfig& cfg, std::uint64_t seed);

// Trains T3 to invert the frozen T2 under label noise gamma ~ N(0, var):
// min E_y E_gamma (T2(T3(y + gamma)) - (y + gamma))^2.
// Throws ContractViolation unless T2 was frozen first; asserts T2 unchanged.
void train_t3(EmbeddingNetworks& nets, const std::vector<double>& train_labels,
              const EmbedConfig& cfg, std::uint64_t seed, EmbedTrainLog* log = nullptr);

// Single-label embedding; y must lie in [0, 1).
std::vector<float> embed(EmbeddingNetworks& nets, double y);

// max_y |T2(T3(y)) - y| over an evenly spaced grid.
double round_trip_max_error(EmbeddingNetworks& nets, int grid_points = 512);

}  // namespace soapkd
