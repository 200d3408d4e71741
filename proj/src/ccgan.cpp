#include "soapkd/ccgan.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "soapkd/optim.hpp"
#include "soapkd/png_io.hpp"
#include "soapkd/serialize.hpp"

namespace fs = std::filesystem;

namespace soapkd {

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

Generator::Generator(int noise_dim, int cond_dim, int base_channels, int resolution,
                     std::uint64_t seed)
    : noise_dim_(noise_dim), cond_dim_(cond_dim), base_(base_channels),
      resolution_(resolution) {
    if (resolution % 8 != 0 || resolution < 16)
        throw ConfigError("generator resolution must be a multiple of 8, >= 16");
    stages_ = 0;
    int size = seed_hw_;
    while (size < resolution) {
        size *= 2;
        ++stages_;
    }
    Rng rng(seed);
    // channel plan: widest at the 4x4 seed, halving down to base_channels
    std::vector<int> ch(std::size_t(stages_) + 1);
    ch[0] = base_ * (1 << std::min(stages_, 3));
    for (int s = 1; s <= stages_; ++s) ch[std::size_t(s)] = std::max(base_, ch[size_t(s - 1)] / 2);

    Rng fc_rng = rng.fork(0);
    fc_ = std::make_unique<FCLayer<float>>(noise_dim_, ch[0] * seed_hw_ * seed_hw_,
                                           true, fc_rng);
    for (int s = 0; s < stages_; ++s) {
        Rng conv_rng = rng.fork(100 + std::uint64_t(s));
        up_.push_back(std::make_unique<Upsample2xLayer<float>>());
        conv_.push_back(std::make_unique<Conv2dLayer<float>>(
            ch[size_t(s)], ch[size_t(s) + 1], 3, 1, 1, 1, false, conv_rng));
        cbn_.push_back(std::make_unique<BatchNormLayer<float>>(ch[size_t(s) + 1], cond_dim_));
        act_.push_back(std::make_unique<ActivationLayer<float>>(ActKind::ReLU));
    }
    Rng out_rng = rng.fork(999);
    out_conv_ = std::make_unique<Conv2dLayer<float>>(ch[size_t(stages_)], 3, 3, 1, 1, 1,
                                                     true, out_rng);
    out_act_ = std::make_unique<ActivationLayer<float>>(ActKind::Sigmoid);
    fc_out_dims_ = {0, ch[0], seed_hw_, seed_hw_};
}

Tensorf Generator::forward(const Tensorf& z, const Tensorf& h, bool train) {
    if (z.dim(1) != noise_dim_) throw DataError("generator: bad noise width");
    if (h.dim(1) != cond_dim_) throw DataError("generator: bad conditioning width");
    const int n = z.dim(0);
    Tensorf cur;
    fc_->forward(z, nullptr, cur, train);
    cur = cur.reshaped({n, fc_out_dims_[1], seed_hw_, seed_hw_});
    for (int s = 0; s < stages_; ++s) {
        Tensorf t;
        up_[size_t(s)]->forward(cur, nullptr, t, train);
        conv_[size_t(s)]->forward(t, nullptr, cur, train);
        cbn_[size_t(s)]->forward(cur, &h, t, train);
        act_[size_t(s)]->forward(t, nullptr, cur, train);
    }
    Tensorf t;
    out_conv_->forward(cur, nullptr, t, train);
    Tensorf out;
    out_act_->forward(t, nullptr, out, train);
    return out;
}

Tensorf Generator::backward(const Tensorf& dimages) {
    Tensorf dcur, t;
    out_act_->backward(dimages, t, nullptr);
    out_conv_->backward(t, dcur, nullptr);
    for (int s = stages_ - 1; s >= 0; --s) {
        act_[size_t(s)]->backward(dcur, t, nullptr);
        cbn_[size_t(s)]->backward(t, dcur, nullptr);
        conv_[size_t(s)]->backward(dcur, t, nullptr);
        up_[size_t(s)]->backward(t, dcur, nullptr);
    }
    const int n = dcur.dim(0);
    Tensorf dz;
    fc_->backward(dcur.reshaped({n, int(dcur.numel()) / n}), dz, nullptr);
    return dz;
}

std::vector<Param<float>*> Generator::params() {
    std::vector<Param<float>*> out;
    auto grab = [&out](auto& layer) {
        for (auto* p : layer->params()) out.push_back(p);
    };
    grab(fc_);
    for (int s = 0; s < stages_; ++s) {
        grab(conv_[size_t(s)]);
        grab(cbn_[size_t(s)]);
    }
    grab(out_conv_);
    return out;
}

std::vector<Tensorf*> Generator::state_tensors() {
    std::vector<Tensorf*> out;
    auto grab = [&out](auto& layer) {
        for (auto* p : layer->params()) out.push_back(&p->v);
        for (auto* b : layer->buffers()) out.push_back(b);
    };
    grab(fc_);
    for (int s = 0; s < stages_; ++s) {
        grab(conv_[size_t(s)]);
        grab(cbn_[size_t(s)]);
    }
    grab(out_conv_);
    return out;
}

void Generator::zero_grad() {
    for (auto* p : params()) p->g.zero();
}

std::uint64_t Generator::state_fingerprint() {
    std::uint64_t hash = 0xcbf29ce484222325ull;
    for (auto* t : state_tensors())
        hash = fnv1a64(t->data(), t->numel() * sizeof(float), hash);
    return hash;
}

// ---------------------------------------------------------------------------
// Discriminator
// ---------------------------------------------------------------------------

Discriminator::Discriminator(int cond_dim, int base_channels, int resolution,
                             std::uint64_t seed)
    : cond_dim_(cond_dim), base_(base_channels), resolution_(resolution) {
    Rng rng(seed);
    int size = resolution;
    int in_ch = 3, out_ch = base_;
    int idx = 0;
    Rng first_rng = rng.fork(idx++);
    conv_.push_back(std::make_unique<Conv2dLayer<float>>(in_ch, out_ch, 3, 1, 1, 1,
                                                         true, first_rng, true));
    act_.push_back(std::make_unique<ActivationLayer<float>>(ActKind::LeakyReLU, 0.1));
    in_ch = out_ch;
    while (size > 4) {
        out_ch = std::min(in_ch * 2, base_ * 8);
        Rng conv_rng = rng.fork(std::uint64_t(idx++));
        conv_.push_back(std::make_unique<Conv2dLayer<float>>(in_ch, out_ch, 4, 2, 1, 1,
                                                             true, conv_rng, true));
        act_.push_back(std::make_unique<ActivationLayer<float>>(ActKind::LeakyReLU, 0.1));
        in_ch = out_ch;
        size /= 2;
    }
    feat_dim_ = in_ch;
    Rng psi_rng = rng.fork(1000);
    psi_ = std::make_unique<FCLayer<float>>(feat_dim_, 1, true, psi_rng, true);
    Rng embed_rng = rng.fork(1001);
    embed_ = std::make_unique<FCLayer<float>>(cond_dim_, feat_dim_, false, embed_rng, true);
}

Tensorf Discriminator::forward(const Tensorf& images, const Tensorf& h, bool train) {
    const int n = images.dim(0);
    Tensorf cur = images;
    for (std::size_t i = 0; i < conv_.size(); ++i) {
        Tensorf t;
        conv_[i]->forward(cur, nullptr, t, train);
        act_[i]->forward(t, nullptr, cur, train);
    }
    // global sum pooling
    const int hw = cur.dim(2) * cur.dim(3);
    conv_in_dims_ = cur.dims();
    feat_.resize({n, feat_dim_});
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < feat_dim_; ++c) {
            const float* p = cur.data() + (std::size_t(i) * feat_dim_ + c) * hw;
            float acc = 0;
            for (int j = 0; j < hw; ++j) acc += p[j];
            feat_.at(i, c) = acc;
        }
    h_cache_ = h;
    Tensorf psi_out;
    psi_->forward(feat_, nullptr, psi_out, train);
    embed_->forward(h, nullptr, vh_cache_, train);
    Tensorf out({n, 1});
    for (int i = 0; i < n; ++i) {
        float proj = 0;
        for (int c = 0; c < feat_dim_; ++c) proj += vh_cache_.at(i, c) * feat_.at(i, c);
        out.at(i, 0) = psi_out.at(i, 0) + proj;
    }
    return out;
}

Tensorf Discriminator::backward(const Tensorf& dscores) {
    const int n = dscores.dim(0);
    // psi branch
    Tensorf dfeat_psi;
    psi_->backward(dscores, dfeat_psi, nullptr);
    // projection branch: d/dfeat = ds * Vh; d/d(Vh) = ds * feat
    Tensorf dvh({n, feat_dim_});
    Tensorf dfeat({n, feat_dim_});
    for (int i = 0; i < n; ++i) {
        const float ds = dscores.at(i, 0);
        for (int c = 0; c < feat_dim_; ++c) {
            dfeat.at(i, c) = dfeat_psi.at(i, c) + ds * vh_cache_.at(i, c);
            dvh.at(i, c) = ds * feat_.at(i, c);
        }
    }
    Tensorf dh_unused;
    embed_->backward(dvh, dh_unused, nullptr);
    // broadcast through the sum pool
    const int hw = conv_in_dims_[2] * conv_in_dims_[3];
    Tensorf dcur(conv_in_dims_);
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < feat_dim_; ++c) {
            float* p = dcur.data() + (std::size_t(i) * feat_dim_ + c) * hw;
            const float g = dfeat.at(i, c);
            for (int j = 0; j < hw; ++j) p[j] = g;
        }
    for (int i = int(conv_.size()) - 1; i >= 0; --i) {
        Tensorf t;
        act_[size_t(i)]->backward(dcur, t, nullptr);
        conv_[size_t(i)]->backward(t, dcur, nullptr);
    }
    return dcur;
}

std::vector<Param<float>*> Discriminator::params() {
    std::vector<Param<float>*> out;
    for (auto& c : conv_)
        for (auto* p : c->params()) out.push_back(p);
    for (auto* p : psi_->params()) out.push_back(p);
    for (auto* p : embed_->params()) out.push_back(p);
    return out;
}

std::vector<Tensorf*> Discriminator::state_tensors() {
    std::vector<Tensorf*> out;
    auto grab = [&out](auto& layer) {
        for (auto* p : layer->params()) out.push_back(&p->v);
        for (auto* b : layer->buffers()) out.push_back(b);
    };
    for (auto& c : conv_) grab(c);
    grab(psi_);
    grab(embed_);
    return out;
}

void Discriminator::zero_grad() {
    for (auto* p : params()) p->g.zero();
}

std::uint64_t Discriminator::state_fingerprint() {
    std::uint64_t hash = 0xcbf29ce484222325ull;
    for (auto* t : state_tensors())
        hash = fnv1a64(t->data(), t->numel() * sizeof(float), hash);
    return hash;
}

// ---------------------------------------------------------------------------
// Vicinity
// ---------------------------------------------------------------------------

double vicinity_weight(double y, double y_target, double kappa, bool hard, double nu) {
    const double d = std::fabs(y - y_target);
    if (hard) return d <= kappa ? 1.0 : 0.0;
    return std::exp(-nu * d * d);
}

double kappa_rule_of_thumb(std::vector<double> labels) {
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    if (labels.size() < 2)
        throw ConfigError(
            "kappa rule: fewer than 2 distinct labels; supply a larger kappa");
    double max_gap = 0;
    for (std::size_t i = 1; i < labels.size(); ++i)
        max_gap = std::max(max_gap, labels[i] - labels[i - 1]);
    return 2.0 * max_gap;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

// Labels sorted with original indices for vicinity lookups.
struct LabelIndex {
    std::vector<double> sorted_labels;
    std::vector<int> sample_of;  // sample index per sorted position

    explicit LabelIndex(const std::vector<ImageSample>& set) {
        std::vector<int> order(set.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            return set[size_t(a)].label.normalized() < set[size_t(b)].label.normalized();
        });
        for (const int i : order) {
            sorted_labels.push_back(set[size_t(i)].label.normalized());
            sample_of.push_back(i);
        }
    }

    // Uniform draw among samples with |label - target| <= kappa; falls back
    // to the nearest sample when the vicinity is empty.
    int draw(double target, double kappa, Rng& rng) const {
        const auto lo = std::lower_bound(sorted_labels.begin(), sorted_labels.end(),
                                         target - kappa);
        const auto hi = std::upper_bound(sorted_labels.begin(), sorted_labels.end(),
                                         target + kappa);
        const std::size_t a = std::size_t(lo - sorted_labels.begin());
        const std::size_t b = std::size_t(hi - sorted_labels.begin());
        if (b > a) return sample_of[a + std::size_t(rng.below(b - a))];
        // nearest fallback
        std::size_t pos = std::size_t(std::lower_bound(sorted_labels.begin(),
                                                       sorted_labels.end(), target) -
                                      sorted_labels.begin());
        if (pos == sorted_labels.size()) --pos;
        if (pos > 0 && target - sorted_labels[pos - 1] <
                           sorted_labels[pos] - target)
            --pos;
        return sample_of[pos];
    }
};

Tensorf embed_labels(EmbeddingNetworks& nets, const std::vector<double>& labels) {
    Tensorf y({int(labels.size()), 1});
    for (std::size_t i = 0; i < labels.size(); ++i) y.at(int(i), 0) = float(labels[i]);
    return nets.t3_embed(y, false);
}

}  // namespace

GanTrainLog train_ccgan(GanPair& gan, const std::vector<ImageSample>& train_set,
                        EmbeddingNetworks& embed_nets, const GanConfig& cfg,
                        std::uint64_t seed, const std::string& checkpoint_dir) {
    if (train_set.empty()) throw DataError("train_ccgan: empty dataset");
    if (!embed_nets.t3_frozen())
        throw ContractViolation("train_ccgan: T3 must be frozen");

    std::vector<double> labels;
    labels.reserve(train_set.size());
    for (const auto& s : train_set) labels.push_back(s.label.normalized());
    const double kappa = cfg.kappa >= 0 ? cfg.kappa : kappa_rule_of_thumb(labels);
    const bool hard = cfg.vicinity == "hard";
    const double nu = 1.0 / (2.0 * kappa * kappa);

    const std::uint64_t t3_before = embed_nets.t3().state_fingerprint();
    const LabelIndex index(train_set);

    Adam<float> opt_g(gan.g.params(), cfg.lr_g, cfg.beta1, cfg.beta2);
    Adam<float> opt_d(gan.d.params(), cfg.lr_d, cfg.beta1, cfg.beta2);

    Rng rng(seed);
    const int B = cfg.batch_size;
    GanTrainLog log;

    auto draw_targets = [&](std::vector<double>& out) {
        out.resize(std::size_t(B));
        for (int j = 0; j < B; ++j) {
            double t = labels[std::size_t(rng.below(labels.size()))] +
                       cfg.label_noise_sigma * rng.normal();
            out[std::size_t(j)] = std::clamp(t, 0.0, 1.0 - 1e-6);
        }
    };

    std::vector<double> targets, fake_targets;
    for (int it = 0; it < cfg.iterations; ++it) {
        // ---- D step
        gan.d.zero_grad();
        draw_targets(targets);
        std::vector<int> real_idx(static_cast<std::size_t>(B));
        std::vector<double> weights(std::size_t(B), 1.0);
        for (int j = 0; j < B; ++j) {
            real_idx[std::size_t(j)] = index.draw(targets[std::size_t(j)], kappa, rng);
            if (!hard)
                weights[std::size_t(j)] = vicinity_weight(
                    train_set[std::size_t(real_idx[std::size_t(j)])].label.normalized(),
                    targets[std::size_t(j)], kappa, false, nu);
        }
        Tensorf real = make_batch(train_set, real_idx);
        Tensorf h_real = embed_labels(embed_nets, targets);

        draw_targets(fake_targets);
        Tensorf h_fake = embed_labels(embed_nets, fake_targets);
        Tensorf z({B, gan.g.noise_dim()});
        z.fill_normal(rng, 0.0, 1.0);
        Tensorf fake = gan.g.forward(z, h_fake, true);

        Tensorf s_real = gan.d.forward(real, h_real, true);
        // hinge real term: mean w * relu(1 - s)
        Tensorf ds_real({B, 1});
        double d_loss = 0;
        for (int j = 0; j < B; ++j) {
            const double margin = 1.0 - double(s_real.at(j, 0));
            const double w = weights[std::size_t(j)];
            d_loss += w * std::max(margin, 0.0);
            ds_real.at(j, 0) = float(margin > 0 ? -w / B : 0.0);
        }
        gan.d.backward(ds_real);

        Tensorf s_fake = gan.d.forward(fake, h_fake, true);
        Tensorf ds_fake({B, 1});
        for (int j = 0; j < B; ++j) {
            const double margin = 1.0 + double(s_fake.at(j, 0));
            d_loss += std::max(margin, 0.0);
            ds_fake.at(j, 0) = float(margin > 0 ? 1.0 / B : 0.0);
        }
        gan.d.backward(ds_fake);
        d_loss /= B;
        opt_d.step();

        // ---- G step
        gan.g.zero_grad();
        gan.d.zero_grad();
        draw_targets(fake_targets);
        Tensorf h_g = embed_labels(embed_nets, fake_targets);
        z.fill_normal(rng, 0.0, 1.0);
        Tensorf gen = gan.g.forward(z, h_g, true);
        Tensorf s_gen = gan.d.forward(gen, h_g, true);
        double g_loss = 0;
        Tensorf ds_gen({B, 1});
        for (int j = 0; j < B; ++j) {
            g_loss -= double(s_gen.at(j, 0));
            ds_gen.at(j, 0) = float(-1.0 / B);
        }
        g_loss /= B;
        Tensorf dimages = gan.d.backward(ds_gen);
        gan.g.backward(dimages);
        opt_g.step();
        gan.d.zero_grad();  // G step must not leak gradients into D updates

        if (it % 50 == 0) {
            log.d_loss.push_back(d_loss);
            log.g_loss.push_back(g_loss);
        }
        if (!checkpoint_dir.empty() && cfg.checkpoint_every > 0 &&
            (it + 1) % cfg.checkpoint_every == 0) {
            save_gan((fs::path(checkpoint_dir) /
                      ("gan_iter" + std::to_string(it + 1) + ".ckpt"))
                         .string(),
                     gan, cfg, seed);
        }
    }

    if (embed_nets.t3().state_fingerprint() != t3_before)
        throw ContractViolation("train_ccgan: T3 changed during GAN training");
    return log;
}

std::vector<FakeSample> generate(Generator& g, EmbeddingNetworks& embed_nets,
                                 const std::vector<double>& labels,
                                 std::uint64_t seed) {
    for (const double y : labels)
        if (y < 0.0 || y >= 1.0)
            throw DataError("generate: label " + std::to_string(y) + " outside [0, 1)");
    std::vector<FakeSample> out;
    out.reserve(labels.size());
    Rng rng(seed);
    const int chunk = 64;
    for (std::size_t at = 0; at < labels.size(); at += chunk) {
        const int take = int(std::min(std::size_t(chunk), labels.size() - at));
        std::vector<double> part(labels.begin() + long(at), labels.begin() + long(at) + take);
        Tensorf h = embed_labels(embed_nets, part);
        Tensorf z({take, g.noise_dim()});
        z.fill_normal(rng, 0.0, 1.0);
        Tensorf images = g.forward(z, h, false);
        const int res = images.dim(2);
        for (int i = 0; i < take; ++i) {
            FakeSample s;
            s.image.resize({3, res, res});
            std::copy_n(images.data() + std::size_t(i) * s.image.numel(),
                        s.image.numel(), s.image.data());
            s.cond_label = part[std::size_t(i)];
            out.push_back(std::move(s));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

void save_gan(const std::string& path, GanPair& gan, const GanConfig& cfg,
              std::uint64_t seed) {
    nlohmann::json meta;
    meta["kind"] = "ccgan";
    meta["noise_dim"] = gan.g.noise_dim();
    meta["cond_dim"] = gan.g.cond_dim();
    meta["base_channels"] = gan.g.base_channels();
    meta["resolution"] = gan.g.resolution();
    meta["seed"] = seed;
    meta["config"] = {{"iterations", cfg.iterations},
                      {"batch_size", cfg.batch_size},
                      {"vicinity", cfg.vicinity},
                      {"kappa", cfg.kappa},
                      {"lr_g", cfg.lr_g},
                      {"lr_d", cfg.lr_d}};
    std::vector<const Tensorf*> tensors;
    for (auto* t : gan.g.state_tensors()) tensors.push_back(t);
    for (auto* t : gan.d.state_tensors()) tensors.push_back(t);
    save_checkpoint(path, meta, tensors);
}

GanPair load_gan(const std::string& path) {
    const nlohmann::json meta = load_checkpoint_meta(path);
    if (meta.value("kind", "") != "ccgan")
        throw DataError("not a ccgan checkpoint: " + path);
    GanPair gan;
    gan.g = Generator(meta.at("noise_dim").get<int>(), meta.at("cond_dim").get<int>(),
                      meta.at("base_channels").get<int>(),
                      meta.at("resolution").get<int>(), 0);
    gan.d = Discriminator(meta.at("cond_dim").get<int>(),
                          meta.at("base_channels").get<int>(),
                          meta.at("resolution").get<int>(), 0);
    std::vector<Tensorf*> tensors;
    for (auto* t : gan.g.state_tensors()) tensors.push_back(t);
    for (auto* t : gan.d.state_tensors()) tensors.push_back(t);
    load_checkpoint_tensors(path, tensors);
    return gan;
}

void write_fake_pool(const std::string& dir, const std::vector<FakeSample>& pool) {
    fs::create_directories(dir);
    std::ostringstream manifest;
    manifest << "path,cond_angle_degrees\n";
    char name[32];
    for (std::size_t i = 0; i < pool.size(); ++i) {
        std::snprintf(name, sizeof(name), "fake_%06zu.png", i);
        write_png((fs::path(dir) / name).string(), pool[i].image);
        char angle[32];
        std::snprintf(angle, sizeof(angle), "%.6f", pool[i].cond_label * 180.0);
        manifest << name << "," << angle << "\n";
    }
    std::ofstream f(fs::path(dir) / "manifest.csv", std::ios::binary);
    f << manifest.str();
    if (!f) throw DataError("write_fake_pool: cannot write manifest in " + dir);
}

std::vector<FakeSample> read_fake_pool(const std::string& dir) {
    std::ifstream f(fs::path(dir) / "manifest.csv");
    if (!f) throw DataError("read_fake_pool: missing manifest in " + dir);
    std::string line;
    if (!std::getline(f, line) || line != "path,cond_angle_degrees")
        throw DataError("read_fake_pool: bad manifest header in " + dir);
    std::vector<FakeSample> out;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream is(line);
        std::string path, angle;
        if (!std::getline(is, path, ',') || !std::getline(is, angle))
            throw DataError("read_fake_pool: malformed manifest line");
        FakeSample s;
        s.image = read_png((fs::path(dir) / path).string());
        s.cond_label = wrap_degrees(std::stod(angle)) / 180.0;
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace soapkd
