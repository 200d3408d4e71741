#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "soapkd/ccgan.hpp"
#include "soapkd/common.hpp"

using namespace soapkd;

namespace {

EmbeddingNetworks trained_embed(int latent, int resolution, std::uint64_t seed) {
    EmbeddingNetworks nets(latent, resolution, seed);
    nets.freeze_t2();
    nets.freeze_t3();  // untrained but frozen; fine for contract tests
    return nets;
}

}  // namespace

TEST_SUITE_BEGIN("ccgan");

TEST_CASE("vicinity weight: hard participation predicate") {
    // participates iff |y - y'| <= kappa
    CHECK(vicinity_weight(0.50, 0.515, 0.02, true) == 1.0);
    CHECK(vicinity_weight(0.50, 0.53, 0.02, true) == 0.0);
    CHECK(vicinity_weight(0.50, 0.485, 0.02, true) == 1.0);
    CHECK(vicinity_weight(0.50, 0.75, 0.25, true) == 1.0);  // exact boundary
    CHECK(vicinity_weight(0.10, 0.90, 1.00, true) == 1.0);  // kappa=1: everyone

    // crafted label set: with kappa = 1 every label participates for every
    // target
    const double labels[] = {0.0, 0.2, 0.5, 0.77, 0.999};
    for (const double y : labels)
        for (const double t : labels) CHECK(vicinity_weight(y, t, 1.0, true) == 1.0);

    // soft weight decays smoothly
    CHECK(vicinity_weight(0.5, 0.5, 0.02, false, 50.0) == doctest::Approx(1.0));
    CHECK(vicinity_weight(0.5, 0.6, 0.02, false, 50.0) ==
          doctest::Approx(std::exp(-50.0 * 0.01)));
}

TEST_CASE("kappa rule of thumb: twice the largest adjacent gap") {
    CHECK(kappa_rule_of_thumb({0.1, 0.4, 0.5}) == doctest::Approx(0.6));
    CHECK(kappa_rule_of_thumb({0.5, 0.1, 0.4}) == doctest::Approx(0.6));  // unsorted
    CHECK(kappa_rule_of_thumb({0.2, 0.2, 0.25}) == doctest::Approx(0.1));
    CHECK_THROWS_AS(kappa_rule_of_thumb({0.5, 0.5}), ConfigError);
}

TEST_CASE("generator: output bounds and shape for arbitrary noise") {
    Generator g(8, 16, 8, 32, 3);
    Tensorf z({4, 8});
    Rng rng(1);
    z.fill_normal(rng, 0.0, 25.0);  // far outside the training regime
    Tensorf h({4, 16});
    h.fill_normal(rng, 0.0, 5.0);
    Tensorf out = g.forward(z, h, false);
    CHECK(out.dim(0) == 4);
    CHECK(out.dim(1) == 3);
    CHECK(out.dim(2) == 32);
    CHECK(out.dim(3) == 32);
    for (std::size_t i = 0; i < out.numel(); ++i) {
        CHECK(out[i] >= 0.0f);
        CHECK(out[i] <= 1.0f);
    }
}

TEST_CASE("generate: empty list, determinism, label validation") {
    Generator g(8, 16, 8, 32, 5);
    EmbeddingNetworks nets = trained_embed(16, 32, 7);

    CHECK(generate(g, nets, {}, 1).empty());

    const std::vector<double> labels = {0.1, 0.5, 0.9};
    const auto a = generate(g, nets, labels, 42);
    const auto b = generate(g, nets, labels, 42);
    REQUIRE(a.size() == 3);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].cond_label == labels[i]);
        for (std::size_t j = 0; j < a[i].image.numel(); ++j)
            CHECK(a[i].image[j] == b[i].image[j]);
    }
    const auto c = generate(g, nets, labels, 43);
    bool any_diff = false;
    for (std::size_t j = 0; j < a[0].image.numel(); ++j)
        any_diff |= a[0].image[j] != c[0].image[j];
    CHECK(any_diff);

    CHECK_THROWS_AS(generate(g, nets, {1.5}, 1), DataError);
}

TEST_CASE("train_ccgan: smoke run, contracts") {
    const auto data = synth_generate(48, 32, 17);
    EmbeddingNetworks nets(16, 32, 19);
    nets.freeze_t2();

    GanConfig cfg;
    cfg.iterations = 5;
    cfg.batch_size = 8;
    cfg.noise_dim = 8;
    cfg.base_channels = 8;

    GanPair gan;
    gan.g = Generator(cfg.noise_dim, 16, cfg.base_channels, 32, 23);
    gan.d = Discriminator(16, cfg.base_channels, 32, 29);

    // T3 not frozen -> contract violation
    CHECK_THROWS_AS(train_ccgan(gan, data, nets, cfg, 31), ContractViolation);

    nets.freeze_t3();
    const std::uint64_t t3_before = nets.t3().state_fingerprint();
    const GanTrainLog log = train_ccgan(gan, data, nets, cfg, 31);
    CHECK(nets.t3().state_fingerprint() == t3_before);
    CHECK(!log.d_loss.empty());

    // generator output still bounded after training updates
    const auto fakes = generate(gan.g, nets, {0.25, 0.75}, 37);
    for (const auto& f : fakes)
        for (std::size_t j = 0; j < f.image.numel(); ++j) {
            CHECK(f.image[j] >= 0.0f);
            CHECK(f.image[j] <= 1.0f);
        }
}

TEST_CASE("conditional batch norm: finite-difference gradients") {
    const int C = 3, D = 2;
    BatchNormLayer<double> cbn(C, D);
    Tensord x({2, C, 4, 4});
    Tensord h({2, D});
    Rng rng(3);
    x.fill_uniform(rng, -1.0, 1.0);
    h.fill_uniform(rng, -1.0, 1.0);
    Tensord weights({2, C, 4, 4});
    weights.fill_uniform(rng, -1.0, 1.0);

    auto loss = [&] {
        Tensord y;
        cbn.forward(x, &h, y, true);
        double acc = 0;
        for (std::size_t i = 0; i < y.numel(); ++i) acc += y[i] * weights[i];
        return acc;
    };
    loss();
    for (auto* p : cbn.params()) p->g.zero();
    Tensord dy = weights;
    Tensord dx;
    cbn.backward(dy, dx, nullptr);

    Rng pick(5);
    for (int trial = 0; trial < 8; ++trial) {
        auto params = cbn.params();
        auto* p = params[std::size_t(pick.below(params.size()))];
        const std::size_t j = std::size_t(pick.below(p->v.numel()));
        const double saved = p->v[j];
        const double step = 1e-6;
        p->v[j] = saved + step;
        const double up = loss();
        p->v[j] = saved - step;
        const double down = loss();
        p->v[j] = saved;
        const double numeric = (up - down) / (2 * step);
        const double analytic = p->g[j];
        const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
        CHECK(std::fabs(analytic - numeric) / denom < 1e-4);
    }
    // input gradient
    Rng pick2(7);
    for (int trial = 0; trial < 4; ++trial) {
        const std::size_t j = std::size_t(pick2.below(x.numel()));
        const double saved = x[j];
        const double step = 1e-6;
        x[j] = saved + step;
        const double up = loss();
        x[j] = saved - step;
        const double down = loss();
        x[j] = saved;
        const double numeric = (up - down) / (2 * step);
        const double analytic = dx[j];
        const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
        CHECK(std::fabs(analytic - numeric) / denom < 1e-4);
    }
}

TEST_CASE("spectral-normalized conv: finite-difference gradients in eval mode") {
    Rng init(11);
    Conv2dLayer<double> conv(2, 3, 3, 1, 1, 1, true, init, /*spectral_norm=*/true);
    Tensord x({2, 2, 5, 5});
    Rng rng(13);
    x.fill_uniform(rng, -1.0, 1.0);
    Tensord weights({2, 3, 5, 5});
    weights.fill_uniform(rng, -1.0, 1.0);

    // one train-mode pass fixes the power-iteration vectors
    Tensord warm;
    conv.forward(x, nullptr, warm, true);

    auto loss = [&] {
        Tensord y;
        conv.forward(x, nullptr, y, false);  // u, v held fixed
        double acc = 0;
        for (std::size_t i = 0; i < y.numel(); ++i) acc += y[i] * weights[i];
        return acc;
    };
    loss();
    for (auto* p : conv.params()) p->g.zero();
    Tensord dx;
    conv.backward(weights, dx, nullptr);

    Rng pick(17);
    auto params = conv.params();
    for (int trial = 0; trial < 8; ++trial) {
        auto* p = params[std::size_t(pick.below(params.size()))];
        const std::size_t j = std::size_t(pick.below(p->v.numel()));
        const double saved = p->v[j];
        const double step = 1e-6;
        p->v[j] = saved + step;
        const double up = loss();
        p->v[j] = saved - step;
        const double down = loss();
        p->v[j] = saved;
        const double numeric = (up - down) / (2 * step);
        const double analytic = p->g[j];
        const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
        CHECK(std::fabs(analytic - numeric) / denom < 1e-4);
    }
}

TEST_CASE("discriminator projection head: input gradients by finite differences") {
    Discriminator d(4, 4, 16, 41);
    Tensorf img({2, 3, 16, 16});
    Tensorf h({2, 4});
    Rng rng(43);
    img.fill_uniform(rng, 0.0, 1.0);
    h.fill_uniform(rng, -1.0, 1.0);

    auto loss = [&] {
        Tensorf s = d.forward(img, h, false);
        return double(s.at(0, 0)) + 2.0 * double(s.at(1, 0));
    };
    // warm the spectral norm vectors, then hold them fixed
    d.forward(img, h, true);
    loss();
    d.zero_grad();
    Tensorf ds({2, 1});
    ds.at(0, 0) = 1.0f;
    ds.at(1, 0) = 2.0f;
    Tensorf dimg = d.backward(ds);

    Rng pick(47);
    for (int trial = 0; trial < 6; ++trial) {
        const std::size_t j = std::size_t(pick.below(img.numel()));
        const float saved = img[j];
        const float step = 1e-3f;
        img[j] = saved + step;
        const double up = loss();
        img[j] = saved - step;
        const double down = loss();
        img[j] = saved;
        const double numeric = (up - down) / (2 * step);
        const double analytic = dimg[j];
        const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-2});
        CHECK(std::fabs(analytic - numeric) / denom < 0.05);  // float tolerance
    }
}

TEST_CASE("fake pool manifest round trip") {
    namespace fs = std::filesystem;
    Generator g(8, 16, 8, 32, 51);
    EmbeddingNetworks nets = trained_embed(16, 32, 53);
    const auto pool = generate(g, nets, {0.2, 0.8}, 55);
    const fs::path dir = fs::temp_directory_path() / "soapkd_pool_test";
    fs::remove_all(dir);
    write_fake_pool(dir.string(), pool);
    const auto back = read_fake_pool(dir.string());
    REQUIRE(back.size() == 2);
    CHECK(back[0].cond_label == doctest::Approx(0.2).epsilon(1e-5));
    CHECK(back[1].cond_label == doctest::Approx(0.8).epsilon(1e-5));
    fs::remove_all(dir);
}

TEST_SUITE_END();
