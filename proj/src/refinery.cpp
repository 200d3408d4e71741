#include "soapkd/refinery.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "soapkd/optim.hpp"
#include "soapkd/serialize.hpp"

namespace soapkd {

// ---------------------------------------------------------------------------
// Feature extractor
// ---------------------------------------------------------------------------

FeatureExtractor::FeatureExtractor(const std::string& spec_name, int resolution,
                                   int num_classes, std::uint64_t seed)
    : spec_name_(spec_name), resolution_(resolution), num_classes_(num_classes) {
    NetworkSpec spec = builtin_spec(spec_name, resolution);
    feature_shape_ = tapped_shape(spec);
    tap_index_ = spec.tap_index();
    spec.layers.push_back(LayerSpec::gap());
    spec.layers.push_back(LayerSpec::fc(feature_shape_.c, num_classes));
    spec.feature_tap = tap_index_;
    net_ = Network<float>(spec, seed);
}

Tensorf FeatureExtractor::features(const Tensorf& batch) {
    net_.forward(batch, false);
    return net_.output(tap_index_);
}

Tensorf FeatureExtractor::logits(const Tensorf& batch, bool train) {
    return net_.forward(batch, train);
}

Tensorf FeatureExtractor::backward_logits(const Tensorf& dlogits) {
    return net_.backward({{net_.layer_count() - 1, dlogits}});
}

double train_feature_extractor(FeatureExtractor& extractor,
                               const std::vector<ImageSample>& train_set,
                               const RefineryConfig& cfg, std::uint64_t seed) {
    if (train_set.empty()) throw DataError("train_feature_extractor: empty dataset");
    int max_class = -1, min_class = 1 << 30;
    for (const auto& s : train_set) {
        if (s.ship_class < 0)
            throw DataError("train_feature_extractor: sample without class label");
        max_class = std::max(max_class, s.ship_class);
        min_class = std::min(min_class, s.ship_class);
    }
    if (max_class == min_class)
        throw ConfigError("train_feature_extractor: single-class dataset");
    if (max_class >= extractor.num_classes())
        throw DataError("train_feature_extractor: class id exceeds classifier width");

    Rng rng(seed);
    SGD<float> opt(extractor.net().params(), cfg.classifier_lr, 0.9, 5e-4);
    std::vector<int> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    double last_acc = 0;
    for (int epoch = 0; epoch < cfg.classifier_epochs; ++epoch) {
        rng.shuffle(order);
        int correct = 0;
        for (std::size_t at = 0; at < order.size();
             at += std::size_t(cfg.classifier_batch)) {
            const std::size_t take =
                std::min(std::size_t(cfg.classifier_batch), order.size() - at);
            std::vector<int> idx(order.begin() + long(at),
                                 order.begin() + long(at + take));
            Tensorf batch = make_batch(train_set, idx);
            Tensorf logits = extractor.logits(batch, true);
            const int n = int(take), k = extractor.num_classes();

            // softmax cross-entropy
            Tensorf dlogits({n, k});
            for (int i = 0; i < n; ++i) {
                const int target = train_set[std::size_t(idx[size_t(i)])].ship_class;
                float mx = logits.at(i, 0);
                for (int c = 1; c < k; ++c) mx = std::max(mx, logits.at(i, c));
                double denom = 0;
                int argmax = 0;
                for (int c = 0; c < k; ++c) {
                    denom += std::exp(double(logits.at(i, c) - mx));
                    if (logits.at(i, c) > logits.at(i, argmax)) argmax = c;
                }
                if (argmax == target) ++correct;
                for (int c = 0; c < k; ++c) {
                    const double p = std::exp(double(logits.at(i, c) - mx)) / denom;
                    dlogits.at(i, c) = float((p - (c == target ? 1.0 : 0.0)) / n);
                }
            }
            extractor.net().zero_grad();
            extractor.backward_logits(dlogits);
            opt.step();
        }
        last_acc = double(correct) / double(train_set.size());
    }
    return last_acc;
}

void FeatureExtractor::save(const std::string& path, std::uint64_t seed) {
    nlohmann::json meta;
    meta["kind"] = "feature_extractor";
    meta["spec"] = spec_name_;
    meta["resolution"] = resolution_;
    meta["num_classes"] = num_classes_;
    meta["seed"] = seed;
    std::vector<const Tensorf*> tensors;
    for (auto* t : net_.state_tensors()) tensors.push_back(t);
    save_checkpoint(path, meta, tensors);
}

FeatureExtractor FeatureExtractor::load(const std::string& path) {
    const nlohmann::json meta = load_checkpoint_meta(path);
    if (meta.value("kind", "") != "feature_extractor")
        throw DataError("not a feature extractor checkpoint: " + path);
    FeatureExtractor fx(meta.at("spec").get<std::string>(),
                        meta.at("resolution").get<int>(),
                        meta.at("num_classes").get<int>(), 0);
    std::vector<Tensorf*> tensors;
    for (auto* t : fx.net_.state_tensors()) tensors.push_back(t);
    load_checkpoint_tensors(path, tensors);
    return fx;
}

// ---------------------------------------------------------------------------
// Density ratio model
// ---------------------------------------------------------------------------

namespace {

NetworkSpec dre_spec(Shape3 feature_shape, int cond_dim) {
    // 5 weighted layers: conv, conv, conv, conv, fc; softplus applied by
    // the caller on the scalar output.
    const int in_c = feature_shape.c + cond_dim;
    NetworkSpec spec;
    spec.name = "dre-conv5";
    spec.input_shape = {in_c, feature_shape.h, feature_shape.w};
    auto act = [] { return LayerSpec::activation(ActKind::LeakyReLU, 0.1); };
    spec.layers.push_back(LayerSpec::conv(in_c, 64, 3, 1, 1));
    spec.layers.push_back(act());
    spec.layers.push_back(LayerSpec::conv(64, 64, 3, 1, 1));
    spec.layers.push_back(act());
    const int s = feature_shape.h > 1 ? 2 : 1;
    spec.layers.push_back(LayerSpec::conv(64, 32, 3, s, 1));
    spec.layers.push_back(act());
    spec.layers.push_back(LayerSpec::conv(32, 32, 3, 1, 1));
    spec.layers.push_back(act());
    spec.layers.push_back(LayerSpec::gap());
    spec.layers.push_back(LayerSpec::fc(32, 1));
    return spec;
}

}  // namespace

DensityRatioModel::DensityRatioModel(Shape3 feature_shape, int cond_dim,
                                     std::uint64_t seed)
    : feature_shape_(feature_shape), cond_dim_(cond_dim) {
    net_ = Network<float>(dre_spec(feature_shape, cond_dim), seed);
}

Tensorf DensityRatioModel::assemble_input(const Tensorf& features,
                                          const Tensorf& h) const {
    if (cond_dim_ == 0) return features;
    const int n = features.dim(0), c = features.dim(1);
    const int hh = features.dim(2), ww = features.dim(3);
    if (h.dim(0) != n || h.dim(1) != cond_dim_)
        throw DataError("dre: conditioning batch mismatch");
    Tensorf joined({n, c + cond_dim_, hh, ww});
    const std::size_t plane = std::size_t(hh) * ww;
    for (int i = 0; i < n; ++i) {
        std::copy_n(features.data() + std::size_t(i) * c * plane, c * plane,
                    joined.data() + std::size_t(i) * (c + cond_dim_) * plane);
        // broadcast each conditioning entry as a constant channel
        for (int j = 0; j < cond_dim_; ++j) {
            float* dst = joined.data() + (std::size_t(i) * (c + cond_dim_) + c + j) * plane;
            std::fill_n(dst, plane, h.at(i, j));
        }
    }
    return joined;
}

std::vector<double> DensityRatioModel::ratio(const Tensorf& features, const Tensorf& h,
                                             bool train) {
    if (features.dim(1) != feature_shape_.c || features.dim(2) != feature_shape_.h ||
        features.dim(3) != feature_shape_.w)
        throw DataError("dre: feature shape mismatch");
    const Tensorf joined = assemble_input(features, h);
    const Tensorf& raw = net_.forward(joined, train);
    const int n = features.dim(0);
    raw_cache_.resize(std::size_t(n));
    std::vector<double> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double v = double(raw.at(i, 0));
        raw_cache_[std::size_t(i)] = v;
        out[std::size_t(i)] = v > 20.0 ? v : std::log1p(std::exp(v));
    }
    return out;
}

void DensityRatioModel::backward(const std::vector<double>& dratio) {
    const int n = int(dratio.size());
    Tensorf draw({n, 1});
    for (int i = 0; i < n; ++i) {
        const double sig = 1.0 / (1.0 + std::exp(-raw_cache_[std::size_t(i)]));
        draw.at(i, 0) = float(dratio[std::size_t(i)] * sig);
    }
    net_.backward({{net_.layer_count() - 1, draw}});
}

std::vector<Param<float>*> DensityRatioModel::params() { return net_.params(); }
std::vector<Tensorf*> DensityRatioModel::state_tensors() {
    return net_.state_tensors();
}
void DensityRatioModel::zero_grad() { net_.zero_grad(); }

DreTrainLog train_dre(DensityRatioModel& model, const Tensorf& real_features,
                      const Tensorf& real_h, const Tensorf& fake_features,
                      const Tensorf& fake_h, const RefineryConfig& cfg,
                      std::uint64_t seed) {
    if (real_features.empty() || fake_features.empty())
        throw DataError("train_dre: empty feature set");
    if (real_features.dim(1) != fake_features.dim(1) ||
        real_features.dim(2) != fake_features.dim(2) ||
        real_features.dim(3) != fake_features.dim(3))
        throw DataError("train_dre: real/fake feature shapes differ");

    const int n_real = real_features.dim(0);
    const int n_fake = fake_features.dim(0);
    Rng rng(seed);
    Adam<float> opt(model.params(), cfg.dre_lr, 0.9, 0.999);
    const int B = cfg.dre_batch;
    DreTrainLog log;

    auto gather = [](const Tensorf& pool, const Tensorf& h_pool,
                     const std::vector<int>& idx, Tensorf& feats, Tensorf& hs,
                     int cond_dim) {
        std::vector<int> dims = pool.dims();
        dims[0] = int(idx.size());
        feats.resize(dims);
        const std::size_t stride = pool.numel() / std::size_t(pool.dim(0));
        for (std::size_t i = 0; i < idx.size(); ++i)
            std::copy_n(pool.data() + std::size_t(idx[i]) * stride, stride,
                        feats.data() + i * stride);
        if (cond_dim > 0) {
            hs.resize({int(idx.size()), cond_dim});
            for (std::size_t i = 0; i < idx.size(); ++i)
                std::copy_n(h_pool.data() + std::size_t(idx[i]) * cond_dim, cond_dim,
                            hs.data() + i * std::size_t(cond_dim));
        }
    };

    for (int it = 0; it < cfg.dre_iterations; ++it) {
        std::vector<int> ridx(static_cast<std::size_t>(B)), fidx(static_cast<std::size_t>(B));
        for (int j = 0; j < B; ++j) {
            ridx[std::size_t(j)] = int(rng.below(std::uint64_t(n_real)));
            fidx[std::size_t(j)] = int(rng.below(std::uint64_t(n_fake)));
        }
        Tensorf rf, rh, ff, fh;
        gather(real_features, real_h, ridx, rf, rh, model.cond_dim());
        gather(fake_features, fake_h, fidx, ff, fh, model.cond_dim());

        model.zero_grad();
        // fake pass: 0.5 E_q[r^2] + penalty (E_q[r] - 1)^2
        const auto r_fake = model.ratio(ff, fh, true);
        double mean_fake = 0, mean_sq = 0;
        for (const double r : r_fake) {
            mean_fake += r;
            mean_sq += r * r;
        }
        mean_fake /= B;
        mean_sq /= B;
        std::vector<double> dfake(static_cast<std::size_t>(B));
        const double pen_grad = 2.0 * cfg.dre_penalty * (mean_fake - 1.0) / B;
        for (int j = 0; j < B; ++j)
            dfake[std::size_t(j)] = r_fake[std::size_t(j)] / B + pen_grad;
        model.backward(dfake);

        // real pass: -E_p[r]
        const auto r_real = model.ratio(rf, rh, true);
        double mean_real = 0;
        for (const double r : r_real) mean_real += r;
        mean_real /= B;
        std::vector<double> dreal(std::size_t(B), -1.0 / B);
        model.backward(dreal);

        opt.step();
        if (it % 50 == 0)
            log.loss.push_back(0.5 * mean_sq - mean_real +
                               cfg.dre_penalty * (mean_fake - 1.0) * (mean_fake - 1.0));
    }
    return log;
}

void DensityRatioModel::save(const std::string& path, std::uint64_t seed) {
    nlohmann::json meta;
    meta["kind"] = "dre";
    meta["feature_shape"] = {feature_shape_.c, feature_shape_.h, feature_shape_.w};
    meta["cond_dim"] = cond_dim_;
    meta["seed"] = seed;
    std::vector<const Tensorf*> tensors;
    for (auto* t : net_.state_tensors()) tensors.push_back(t);
    save_checkpoint(path, meta, tensors);
}

DensityRatioModel DensityRatioModel::load(const std::string& path) {
    const nlohmann::json meta = load_checkpoint_meta(path);
    if (meta.value("kind", "") != "dre")
        throw DataError("not a dre checkpoint: " + path);
    const auto fs = meta.at("feature_shape").get<std::vector<int>>();
    DensityRatioModel model({fs[0], fs[1], fs[2]}, meta.at("cond_dim").get<int>(), 0);
    std::vector<Tensorf*> tensors;
    for (auto* t : model.net_.state_tensors()) tensors.push_back(t);
    load_checkpoint_tensors(path, tensors);
    return model;
}

// ---------------------------------------------------------------------------
// Subsampling
// ---------------------------------------------------------------------------

void subsample(std::vector<FakeSample>& pool, DensityRatioModel& dre,
               FeatureExtractor& extractor, EmbeddingNetworks& embed_nets,
               std::uint64_t seed) {
    if (pool.empty()) return;
    const int chunk = 64;
    std::vector<double> ratios(pool.size());
    for (std::size_t at = 0; at < pool.size(); at += chunk) {
        const int take = int(std::min(std::size_t(chunk), pool.size() - at));
        std::vector<int> dims = {take, pool[at].image.dim(0), pool[at].image.dim(1),
                                 pool[at].image.dim(2)};
        Tensorf batch(dims);
        Tensorf y({take, 1});
        for (int i = 0; i < take; ++i) {
            std::copy_n(pool[at + std::size_t(i)].image.data(),
                        pool[at + std::size_t(i)].image.numel(),
                        batch.data() + std::size_t(i) * pool[at].image.numel());
            y.at(i, 0) = float(pool[at + std::size_t(i)].cond_label);
        }
        Tensorf feats = extractor.features(batch);
        Tensorf h = embed_nets.t3_embed(y, false);
        const auto r = dre.ratio(feats, h, false);
        for (int i = 0; i < take; ++i) ratios[at + std::size_t(i)] = r[std::size_t(i)];
    }

    subsample_with_ratios(pool, ratios, seed);
}

void subsample_with_ratios(std::vector<FakeSample>& pool,
                           const std::vector<double>& ratios, std::uint64_t seed) {
    if (pool.size() != ratios.size())
        throw DataError("subsample: ratio count mismatch");
    if (pool.empty()) return;
    const double max_ratio = *std::max_element(ratios.begin(), ratios.end());
    Rng base(seed);
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (ratios[i] < 0) throw DataError("subsample: negative density ratio");
        pool[i].dr_estimate = ratios[i];
        const double p = max_ratio > 0 ? std::min(1.0, ratios[i] / max_ratio) : 1.0;
        Rng stream = base.fork(i);
        pool[i].kept_by_subsampling = stream.uniform() < p;
        pool[i].kept_by_filtering = false;
    }
}

// ---------------------------------------------------------------------------
// Filtering
// ---------------------------------------------------------------------------

double quantile_linear(std::vector<double> values, double q) {
    if (values.empty()) throw DataError("quantile: empty values");
    std::sort(values.begin(), values.end());
    if (values.size() == 1) return values[0];
    const double pos = q * double(values.size() - 1);
    const std::size_t lo = std::size_t(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - double(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

namespace {

std::vector<double> teacher_predictions(RegressionModel<float>& teacher,
                                        const std::vector<Tensorf*>& images) {
    std::vector<double> out(images.size());
    const int chunk = 64;
    for (std::size_t at = 0; at < images.size(); at += chunk) {
        const int take = int(std::min(std::size_t(chunk), images.size() - at));
        Tensorf batch({take, images[at]->dim(0), images[at]->dim(1), images[at]->dim(2)});
        for (int i = 0; i < take; ++i)
            std::copy_n(images[at + std::size_t(i)]->data(), images[at]->numel(),
                        batch.data() + std::size_t(i) * images[at]->numel());
        auto result = teacher.forward(batch, false);
        for (int i = 0; i < take; ++i)
            out[at + std::size_t(i)] = double(result.predictions.at(i, 0));
    }
    return out;
}

}  // namespace

double compute_alpha(RegressionModel<float>& teacher,
                     const std::vector<ImageSample>& val_set,
                     const RefineryConfig& cfg) {
    if (cfg.alpha_override >= 0) return cfg.alpha_override;
    if (val_set.empty()) throw DataError("compute_alpha: empty validation set");
    std::vector<Tensorf*> images;
    images.reserve(val_set.size());
    for (const auto& s : val_set) images.push_back(const_cast<Tensorf*>(&s.pixels));
    const auto preds = teacher_predictions(teacher, images);
    std::vector<double> errors(val_set.size());
    for (std::size_t i = 0; i < val_set.size(); ++i)
        errors[i] = circular_distance_degrees(wrap_degrees(preds[i] * 180.0),
                                              val_set[i].label.degrees);
    return quantile_linear(std::move(errors), cfg.rho);
}

void apply_filter(std::vector<FakeSample>& pool,
                  const std::vector<double>& teacher_preds_normalized,
                  double alpha_degrees) {
    if (alpha_degrees < 0) throw DataError("filter: alpha must be >= 0");
    if (pool.size() != teacher_preds_normalized.size())
        throw DataError("filter: prediction count mismatch");
    for (std::size_t i = 0; i < pool.size(); ++i) {
        pool[i].teacher_pred = teacher_preds_normalized[i];
        const double err =
            circular_distance_degrees(wrap_degrees(teacher_preds_normalized[i] * 180.0),
                                      wrap_degrees(pool[i].cond_label * 180.0));
        pool[i].kept_by_filtering = pool[i].kept_by_subsampling && err <= alpha_degrees;
    }
}

void filter(std::vector<FakeSample>& pool, RegressionModel<float>& teacher,
            double alpha_degrees) {
    if (pool.empty()) return;
    std::vector<Tensorf*> images;
    images.reserve(pool.size());
    for (auto& s : pool) images.push_back(&s.image);
    apply_filter(pool, teacher_predictions(teacher, images), alpha_degrees);
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

void write_refined_manifest(const std::string& path,
                            const std::vector<FakeSample>& pool,
                            const std::vector<std::string>& image_paths) {
    if (pool.size() != image_paths.size())
        throw DataError("write_refined_manifest: path count mismatch");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("write_refined_manifest: cannot open " + path);
    f << "path,cond_angle_degrees,dr_estimate,teacher_pred_degrees,kept_sub,"
         "kept_filter\n";
    char buf[160];
    for (std::size_t i = 0; i < pool.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f,%d,%d",
                      pool[i].cond_label * 180.0, pool[i].dr_estimate,
                      wrap_degrees(pool[i].teacher_pred * 180.0),
                      pool[i].kept_by_subsampling ? 1 : 0,
                      pool[i].kept_by_filtering ? 1 : 0);
        f << image_paths[i] << "," << buf << "\n";
    }
}

void apply_refined_manifest(const std::string& path, std::vector<FakeSample>& pool) {
    std::ifstream f(path);
    if (!f) throw DataError("apply_refined_manifest: missing " + path);
    std::string line;
    std::getline(f, line);
    std::size_t i = 0;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        if (i >= pool.size())
            throw DataError("apply_refined_manifest: more rows than pool samples");
        std::istringstream is(line);
        std::string p, cond, dr, pred, ks, kf;
        if (!std::getline(is, p, ',') || !std::getline(is, cond, ',') ||
            !std::getline(is, dr, ',') || !std::getline(is, pred, ',') ||
            !std::getline(is, ks, ',') || !std::getline(is, kf))
            throw DataError("apply_refined_manifest: malformed line");
        pool[i].cond_label = wrap_degrees(std::stod(cond)) / 180.0;
        pool[i].dr_estimate = std::stod(dr);
        pool[i].teacher_pred = wrap_degrees(std::stod(pred)) / 180.0;
        pool[i].kept_by_subsampling = ks == "1";
        pool[i].kept_by_filtering = kf == "1";
        ++i;
    }
    if (i != pool.size())
        throw DataError("apply_refined_manifest: fewer rows than pool samples");
}

}  // namespace soapkd
