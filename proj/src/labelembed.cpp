#include "soapkd/labelembed.hpp"

#include <algorithm>
#include <numeric>

#include "soapkd/optim.hpp"
#include "soapkd/serialize.hpp"

namespace soapkd {

namespace {

NetworkSpec t1_spec(int resolution, int latent_dim) {
    NetworkSpec spec = builtin_spec("vgg8-desk", resolution);
    spec.layers.push_back(LayerSpec::gap());
    const int feat_c = tapped_shape(builtin_spec("vgg8-desk", resolution)).c;
    if (feat_c != latent_dim)
        spec.layers.push_back(LayerSpec::fc(feat_c, latent_dim));
    spec.feature_tap = int(spec.layers.size()) - 1;
    return spec;
}

NetworkSpec t2_spec(int latent_dim) {
    NetworkSpec spec;
    spec.name = "t2-linear";
    spec.input_shape = {latent_dim, 1, 1};
    spec.layers.push_back(LayerSpec::fc(latent_dim, 1));
    return spec;
}

NetworkSpec t3_spec(int latent_dim) {
    NetworkSpec spec;
    spec.name = "t3-mlp5";
    spec.input_shape = {1, 1, 1};
    spec.layers.push_back(LayerSpec::fc(1, latent_dim));
    spec.layers.push_back(LayerSpec::activation(ActKind::LeakyReLU, 0.1));
    for (int i = 0; i < 3; ++i) {
        spec.layers.push_back(LayerSpec::fc(latent_dim, latent_dim));
        spec.layers.push_back(LayerSpec::activation(ActKind::LeakyReLU, 0.1));
    }
    spec.layers.push_back(LayerSpec::fc(latent_dim, latent_dim));
    return spec;
}

}  // namespace

EmbeddingNetworks::EmbeddingNetworks(int latent_dim, int resolution,
                                     std::uint64_t seed)
    : latent_dim_(latent_dim), resolution_(resolution) {
    Rng rng(seed);
    // vgg8-desk ends in 128 channels; a linear projection bridges any other
    // latent width
    t1_ = Network<float>(t1_spec(resolution, latent_dim), rng.fork(1).next_u64());
    t2_ = Network<float>(t2_spec(latent_dim), rng.fork(2).next_u64());
    t3_ = Network<float>(t3_spec(latent_dim), rng.fork(3).next_u64());
}

Tensorf EmbeddingNetworks::t1_features(const Tensorf& batch, bool train) {
    const Tensorf& gap = t1_.forward(batch, train);
    return gap.reshaped({gap.dim(0), latent_dim_});
}

Tensorf EmbeddingNetworks::t2_predict(const Tensorf& features, bool train) {
    return t2_.forward(features, train);
}

Tensorf EmbeddingNetworks::t3_embed(const Tensorf& labels, bool train) {
    return t3_.forward(labels, train);
}

EmbedTrainLog train_t1_t2(EmbeddingNetworks& nets,
                          const std::vector<ImageSample>& train_set,
                          const EmbedConfig& cfg, std::uint64_t seed) {
    if (train_set.empty()) throw DataError("train_t1_t2: empty dataset");
    Rng rng(seed);
    auto t1_params = nets.t1().params();
    auto t2_params = nets.t2().params();
    std::vector<Param<float>*> all = t1_params;
    all.insert(all.end(), t2_params.begin(), t2_params.end());
    SGD<float> opt(all, 0.01, 0.9, 5e-4);

    std::vector<int> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    EmbedTrainLog log;
    for (int epoch = 0; epoch < cfg.t1t2_epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0;
        int batches = 0;
        for (std::size_t at = 0; at < order.size(); at += std::size_t(cfg.batch_size)) {
            const std::size_t take =
                std::min(std::size_t(cfg.batch_size), order.size() - at);
            std::vector<int> idx(order.begin() + long(at), order.begin() + long(at + take));
            Tensorf batch = make_batch(train_set, idx);
            const auto labels = batch_labels_normalized(train_set, idx);

            nets.t1().zero_grad();
            nets.t2().zero_grad();
            Tensorf feats = nets.t1_features(batch, true);
            Tensorf preds = nets.t2_predict(feats, true);

            const int n = int(take);
            Tensorf dpred({n, 1});
            double loss = 0;
            for (int i = 0; i < n; ++i) {
                const double err = double(preds.at(i, 0)) - double(labels[size_t(i)]);
                loss += err * err;
                dpred.at(i, 0) = float(2.0 * err / n);
            }
            loss /= n;

            Tensorf dfeat = nets.t2().backward({{0, dpred}});
            nets.t1().backward(
                {{nets.t1().layer_count() - 1,
                  dfeat.reshaped({n, nets.latent_dim(), 1, 1})}});
            opt.step();
            epoch_loss += loss;
            ++batches;
        }
        log.t1t2_epoch_loss.push_back(epoch_loss / std::max(1, batches));
    }
    return log;
}

void train_t3(EmbeddingNetworks& nets, const std::vector<double>& train_labels,
              const EmbedConfig& cfg, std::uint64_t seed, EmbedTrainLog* log) {
    if (!nets.t2_frozen())
        throw ContractViolation("train_t3: T2 must be frozen first");
    if (train_labels.empty()) throw DataError("train_t3: no labels");

    const std::uint64_t t2_before = nets.t2().state_fingerprint();
    Rng rng(seed);
    const double noise_std = std::sqrt(cfg.noise_var);

    Adam<float> opt(nets.t3().params(), cfg.t3_lr, 0.9, 0.999);

    const int batch = cfg.batch_size;
    for (int it = 0; it < cfg.t3_iterations; ++it) {
        Tensorf y({batch, 1});
        for (int i = 0; i < batch; ++i) {
            // y ~ empirical label distribution, gamma ~ N(0, noise_var)
            double v = train_labels[std::size_t(rng.below(train_labels.size()))];
            v += noise_std * rng.normal();
            y.at(i, 0) = float(std::clamp(v, 0.0, 1.0 - 1e-6));
        }
        nets.t3().zero_grad();
        nets.t2().zero_grad();
        Tensorf h = nets.t3_embed(y, true);
        Tensorf pred = nets.t2_predict(h, true);

        Tensorf dpred({batch, 1});
        double loss = 0;
        for (int i = 0; i < batch; ++i) {
            const double err = double(pred.at(i, 0)) - double(y.at(i, 0));
            loss += err * err;
            dpred.at(i, 0) = float(2.0 * err / batch);
        }
        loss /= batch;
        Tensorf dh = nets.t2().backward({{0, dpred}});
        nets.t3().backward({{nets.t3().layer_count() - 1, dh}});
        opt.step();  // T3 parameters only; T2 gradients are discarded

        if (log && it % 100 == 0) log->t3_loss.push_back(loss);
    }

    if (nets.t2().state_fingerprint() != t2_before)
        throw ContractViolation("train_t3: T2 parameters changed during training");
}

std::vector<float> embed(EmbeddingNetworks& nets, double y) {
    if (y < 0.0 || y >= 1.0)
        throw DataError("embed: label " + std::to_string(y) + " outside [0, 1)");
    Tensorf input({1, 1});
    input.at(0, 0) = float(y);
    Tensorf h = nets.t3_embed(input, false);
    return std::vector<float>(h.data(), h.data() + h.numel());
}

double round_trip_max_error(EmbeddingNetworks& nets, int grid_points) {
    Tensorf y({grid_points, 1});
    for (int i = 0; i < grid_points; ++i)
        y.at(i, 0) = float(double(i) / grid_points);
    Tensorf h = nets.t3_embed(y, false);
    Tensorf pred = nets.t2_predict(h, false);
    double worst = 0;
    for (int i = 0; i < grid_points; ++i)
        worst = std::max(worst, std::fabs(double(pred.at(i, 0)) - double(y.at(i, 0))));
    return worst;
}

void EmbeddingNetworks::save(const std::string& path, const EmbedConfig& cfg,
                             std::uint64_t seed) {
    nlohmann::json meta;
    meta["kind"] = "embedding";
    meta["latent_dim"] = latent_dim_;
    meta["resolution"] = resolution_;
    meta["seed"] = seed;
    meta["t1_spec"] = to_text(t1_.spec());
    meta["config"] = {{"t1t2_epochs", cfg.t1t2_epochs},
                      {"t3_iterations", cfg.t3_iterations},
                      {"noise_var", cfg.noise_var},
                      {"epsilon_embed", cfg.epsilon_embed}};
    std::vector<const Tensorf*> tensors;
    for (auto* t : t1_.state_tensors()) tensors.push_back(t);
    for (auto* t : t2_.state_tensors()) tensors.push_back(t);
    for (auto* t : t3_.state_tensors()) tensors.push_back(t);
    save_checkpoint(path, meta, tensors);
}

EmbeddingNetworks EmbeddingNetworks::load(const std::string& path) {
    const nlohmann::json meta = load_checkpoint_meta(path);
    if (meta.value("kind", "") != "embedding")
        throw DataError("not an embedding checkpoint: " + path);
    EmbeddingNetworks nets(meta.at("latent_dim").get<int>(),
                           meta.at("resolution").get<int>(), 0);
    std::vector<Tensorf*> tensors;
    for (auto* t : nets.t1_.state_tensors()) tensors.push_back(t);
    for (auto* t : nets.t2_.state_tensors()) tensors.push_back(t);
    for (auto* t : nets.t3_.state_tensors()) tensors.push_back(t);
    load_checkpoint_tensors(path, tensors);
    nets.freeze_t2();
    nets.freeze_t3();
    return nets;
}

}  // namespace soapkd
