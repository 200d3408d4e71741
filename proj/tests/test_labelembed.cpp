#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <tuple>

#include "soapkd/common.hpp"
#include "soapkd/data.hpp"
#include "soapkd/labelembed.hpp"

using namespace soapkd;

namespace {

EmbedConfig tiny_config() {
    EmbedConfig cfg;
    cfg.latent_dim = 128;
    cfg.t1t2_epochs = 2;
    cfg.t3_iterations = 300;
    cfg.batch_size = 16;
    return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("labelembed");

TEST_CASE("t1 feature dimension equals the declared latent width") {
    for (const int d : {128, 64}) {
        EmbeddingNetworks nets(d, 32, 3);
        Tensorf batch({2, 3, 32, 32});
        Rng rng(1);
        batch.fill_uniform(rng, 0.0, 1.0);
        Tensorf h = nets.t1_features(batch, false);
        CHECK(h.dim(0) == 2);
        CHECK(h.dim(1) == d);
        Tensorf y({2, 1});
        y.at(0, 0) = 0.25f;
        y.at(1, 0) = 0.75f;
        Tensorf emb = nets.t3_embed(y, false);
        CHECK(emb.dim(1) == d);
    }
}

TEST_CASE("train_t1_t2: loss decreases; empty dataset errors") {
    const auto data = synth_generate(96, 32, 11);
    EmbeddingNetworks nets(128, 32, 5);
    EmbedConfig cfg = tiny_config();
    cfg.t1t2_epochs = 4;
    const EmbedTrainLog log = train_t1_t2(nets, data, cfg, 7);
    REQUIRE(log.t1t2_epoch_loss.size() == 4);
    CHECK(log.t1t2_epoch_loss.back() < log.t1t2_epoch_loss.front());

    std::vector<ImageSample> empty;
    EmbeddingNetworks fresh(128, 32, 5);
    CHECK_THROWS_AS(train_t1_t2(fresh, empty, cfg, 7), DataError);
}

TEST_CASE("train_t1_t2: single sample memorization drives loss toward zero") {
    const auto data = synth_generate(1, 32, 13);
    EmbeddingNetworks nets(128, 32, 9);
    EmbedConfig cfg = tiny_config();
    cfg.t1t2_epochs = 60;
    cfg.batch_size = 1;
    const EmbedTrainLog log = train_t1_t2(nets, data, cfg, 3);
    CHECK(log.t1t2_epoch_loss.back() < 1e-3);
}

TEST_CASE("train_t3: freeze contract") {
    EmbeddingNetworks nets(16, 32, 21);
    const std::vector<double> labels = {0.1, 0.3, 0.5, 0.7, 0.9};
    EmbedConfig cfg = tiny_config();
    cfg.latent_dim = 16;
    cfg.t3_iterations = 10;

    // not frozen -> contract violation
    CHECK_THROWS_AS(train_t3(nets, labels, cfg, 1), ContractViolation);

    nets.freeze_t2();
    const std::uint64_t before = nets.t2().state_fingerprint();
    train_t3(nets, labels, cfg, 1);
    CHECK(nets.t2().state_fingerprint() == before);
}

TEST_CASE("train_t3: inverts a fixed linear T2 on a 1-dim latent") {
    EmbeddingNetworks nets(1, 32, 33);
    // T2(h) = 2 h exactly
    auto t2_params = nets.t2().params();
    REQUIRE(t2_params.size() == 2);
    t2_params[0]->v[0] = 2.0f;  // weight
    t2_params[1]->v[0] = 0.0f;  // bias
    nets.freeze_t2();

    std::vector<double> labels;
    for (int i = 0; i < 64; ++i) labels.push_back((i + 0.5) / 64.0);
    EmbedConfig cfg;
    cfg.latent_dim = 1;
    cfg.t3_iterations = 4000;
    cfg.batch_size = 64;
    cfg.noise_var = 0.0004;  // keep draws inside [0,1)
    cfg.t3_lr = 5e-3;
    train_t3(nets, labels, cfg, 17);

    // minimizer is T3(y) = y / 2
    double worst = 0;
    for (int i = 1; i < 20; ++i) {
        const double y = i / 20.0;
        const auto h = embed(nets, y);
        worst = std::max(worst, std::fabs(double(h[0]) - y / 2.0));
    }
    CHECK(worst < 1e-3);
}

TEST_CASE("embed: determinism, range check, injectivity probe") {
    const auto data = synth_generate(64, 32, 51);
    EmbeddingNetworks nets(128, 32, 13);
    EmbedConfig cfg = tiny_config();
    train_t1_t2(nets, data, cfg, 19);
    nets.freeze_t2();
    std::vector<double> labels;
    for (const auto& s : data) labels.push_back(s.label.normalized());
    train_t3(nets, labels, cfg, 23);

    const auto a = embed(nets, 0.5);
    const auto b = embed(nets, 0.5);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);

    CHECK_THROWS_AS(embed(nets, 1.0), DataError);
    CHECK_THROWS_AS(embed(nets, -0.1), DataError);

    // labels at least 0.05 apart map to distinct embeddings
    for (double y1 = 0.0; y1 < 0.95; y1 += 0.1) {
        const auto h1 = embed(nets, y1);
        const auto h2 = embed(nets, y1 + 0.05);
        double dist2 = 0;
        for (std::size_t i = 0; i < h1.size(); ++i) {
            const double d = double(h1[i]) - double(h2[i]);
            dist2 += d * d;
        }
        CHECK(dist2 > 0.0);
    }
}

TEST_CASE("determinism: identical seeds give identical networks") {
    const auto data = synth_generate(48, 32, 61);
    std::vector<double> labels;
    for (const auto& s : data) labels.push_back(s.label.normalized());
    EmbedConfig cfg = tiny_config();
    cfg.t1t2_epochs = 1;
    cfg.t3_iterations = 50;

    auto run = [&] {
        EmbeddingNetworks nets(128, 32, 71);
        train_t1_t2(nets, data, cfg, 81);
        nets.freeze_t2();
        train_t3(nets, labels, cfg, 91);
        return std::tuple(nets.t1().state_fingerprint(), nets.t2().state_fingerprint(),
                          nets.t3().state_fingerprint());
    };
    CHECK(run() == run());
}

TEST_CASE("checkpoint round trip") {
    namespace fs = std::filesystem;
    const auto data = synth_generate(32, 32, 62);
    EmbeddingNetworks nets(128, 32, 63);
    EmbedConfig cfg = tiny_config();
    cfg.t1t2_epochs = 1;
    cfg.t3_iterations = 20;
    train_t1_t2(nets, data, cfg, 64);
    nets.freeze_t2();
    std::vector<double> labels;
    for (const auto& s : data) labels.push_back(s.label.normalized());
    train_t3(nets, labels, cfg, 65);
    nets.freeze_t3();

    const fs::path dir = fs::temp_directory_path() / "soapkd_embed_test";
    fs::create_directories(dir);
    const std::string path = (dir / "embed.ckpt").string();
    nets.save(path, cfg, 64);
    EmbeddingNetworks back = EmbeddingNetworks::load(path);
    CHECK(back.t1().state_fingerprint() == nets.t1().state_fingerprint());
    CHECK(back.t2().state_fingerprint() == nets.t2().state_fingerprint());
    CHECK(back.t3().state_fingerprint() == nets.t3().state_fingerprint());
    CHECK(back.t2_frozen());
    fs::remove_all(dir);
}

TEST_SUITE_END();
