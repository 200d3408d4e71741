#include <doctest.h>

#include <cmath>

#include "soapkd/model.hpp"
#include "soapkd/netspec.hpp"
#include "soapkd/network.hpp"

using namespace soapkd;

namespace {

NetworkSpec toy_two_layer() {
    NetworkSpec spec;
    spec.name = "toy2";
    spec.input_shape = {3, 8, 8};
    spec.layers.push_back(LayerSpec::conv(3, 4, 3, 1, 1));
    spec.layers.push_back(LayerSpec::relu());
    spec.layers.push_back(LayerSpec::conv(4, 2, 3, 2, 1));
    spec.layers.push_back(LayerSpec::relu());
    spec.feature_tap = 3;
    return spec;
}

// mean of head predictions over the batch
template <class T>
T mean_prediction(RegressionModel<T>& model, const Tensor<T>& batch) {
    auto out = model.forward(batch, true);
    T acc = 0;
    for (int i = 0; i < batch.dim(0); ++i) acc += out.predictions.at(i, 0);
    return acc / T(batch.dim(0));
}

}  // namespace

TEST_SUITE_BEGIN("netzoo");

TEST_CASE("counting: closed-form oracles") {
    // empty network, no head
    NetworkSpec empty;
    empty.name = "empty";
    empty.input_shape = {3, 8, 8};
    CHECK(count_params(empty) == 0);

    // single conv 3x3, in=3, out=8, bias: 3*3*3*8 + 8 = 224
    NetworkSpec conv1;
    conv1.input_shape = {3, 32, 32};
    conv1.layers.push_back(LayerSpec::conv(3, 8, 3, 1, 1));
    CHECK(count_params(conv1) == 224);
    // MACs: 32*32*8*27 = 221184
    CHECK(count_macs(conv1) == 221184);

    // FC 1 -> 1: 1 MAC
    NetworkSpec fc1;
    fc1.input_shape = {1, 1, 1};
    fc1.layers.push_back(LayerSpec::fc(1, 1));
    CHECK(count_macs(fc1) == 1);
    CHECK(count_params(fc1) == 2);  // weight + bias

    // head params on a 256-channel backbone: 256*128+128 + 128*64+64 + 64*1+1
    NetworkSpec backbone;
    backbone.input_shape = {3, 16, 16};
    backbone.layers.push_back(LayerSpec::conv(3, 256, 1, 1, 0, 1, false));
    const std::int64_t backbone_only = count_params(backbone);
    CHECK(count_params(backbone, {128, 64, 1}) - backbone_only == 41217);
}

TEST_CASE("counting: crafted architectures") {
    // plain conv stack: conv(3->16,k3,p1,bias) + bn + conv(16->8,k5,s2,p2,no bias)
    // params: (27*16+16) + 2*16 + (25*16*8) = 448 + 32 + 3200 = 3680
    // macs at 32x32: 32*32*16*27 + 0 + 16*16*8*400 = 442368 + 819200 = 1261568
    NetworkSpec plain;
    plain.input_shape = {3, 32, 32};
    plain.layers.push_back(LayerSpec::conv(3, 16, 3, 1, 1));
    plain.layers.push_back(LayerSpec::bn(16));
    plain.layers.push_back(LayerSpec::conv(16, 8, 5, 2, 2, 1, false));
    CHECK(count_params(plain) == 3680);
    CHECK(count_macs(plain) == 1261568);

    // depthwise: dw(16,k3,p1) params 3*3*1*16 = 144, macs 16*16*16*9 = 36864
    NetworkSpec dw;
    dw.input_shape = {16, 16, 16};
    dw.layers.push_back(LayerSpec::dwconv(16, 3, 1, 1));
    CHECK(count_params(dw) == 144);
    CHECK(count_macs(dw) == 36864);

    // grouped: conv(8->12,k3,p1,g=4,bias) params 9*(8/4)*12+12 = 228
    // macs at 10x10: 10*10*12*(9*8/4) = 21600
    NetworkSpec grouped;
    grouped.input_shape = {8, 10, 10};
    grouped.layers.push_back(LayerSpec::conv(8, 12, 3, 1, 1, 4));
    CHECK(count_params(grouped) == 228);
    CHECK(count_macs(grouped) == 21600);

    // residual block: conv(4->4,k3,p1,nb)+bn+relu+conv(4->4,k3,p1,nb)+bn+add
    // params: 144 + 8 + 0 + 144 + 8 + 0 = 304
    // macs at 8x8: 8*8*4*36 * 2 = 18432
    NetworkSpec res;
    res.input_shape = {4, 8, 8};
    res.layers.push_back(LayerSpec::conv(4, 4, 3, 1, 1, 1, false));
    res.layers.push_back(LayerSpec::bn(4));
    res.layers.push_back(LayerSpec::relu());
    res.layers.push_back(LayerSpec::conv(4, 4, 3, 1, 1, 1, false));
    res.layers.push_back(LayerSpec::bn(4));
    res.layers.push_back(LayerSpec::add(2));  // skip from the first relu
    CHECK(count_params(res) == 304);
    CHECK(count_macs(res) == 18432);

    // fc-only: gap + fc(6->10) + fc(10->3,no bias): 6*10+10 + 10*3 = 100
    // macs: 60 + 30 = 90
    NetworkSpec fc;
    fc.input_shape = {6, 4, 4};
    fc.layers.push_back(LayerSpec::gap());
    fc.layers.push_back(LayerSpec::fc(6, 10));
    fc.layers.push_back(LayerSpec::fc(10, 3, false));
    CHECK(count_params(fc) == 100);
    CHECK(count_macs(fc) == 90);
}

TEST_CASE("counting additivity over spec concatenation") {
    NetworkSpec a;
    a.input_shape = {3, 16, 16};
    a.layers.push_back(LayerSpec::conv(3, 8, 3, 1, 1));
    a.layers.push_back(LayerSpec::relu());

    NetworkSpec b = a;
    b.layers.push_back(LayerSpec::conv(8, 4, 3, 1, 1));
    b.layers.push_back(LayerSpec::bn(4));

    NetworkSpec tail;
    tail.input_shape = {8, 16, 16};
    tail.layers.push_back(LayerSpec::conv(8, 4, 3, 1, 1));
    tail.layers.push_back(LayerSpec::bn(4));

    CHECK(count_params(b) == count_params(a) + count_params(tail));
    CHECK(count_macs(b) == count_macs(a) + count_macs(tail));
}

TEST_CASE("built-in specs: propagation and construction/counting consistency") {
    for (const auto& name : builtin_spec_names()) {
        CAPTURE(name);
        const NetworkSpec spec = builtin_spec(name);
        CHECK_NOTHROW(propagate_shapes(spec));

        // count_params equals the number of trainable scalars in the model
        const HeadWidths head = default_head(name);
        RegressionModel<float> model(spec, head, 42);
        CHECK(std::int64_t(model.net().param_count()) == count_params(spec, head));
    }
}

TEST_CASE("built-in specs: forward shapes at 64 and 224") {
    for (const auto& name : builtin_spec_names()) {
        for (const int res : {64, 224}) {
            CAPTURE(name);
            CAPTURE(res);
            NetworkSpec spec = builtin_spec(name, res);
            const auto shapes = propagate_shapes(spec);
            Network<float> net(spec, 3);
            Tensorf x({1, 3, res, res});
            Rng rng(5);
            x.fill_uniform(rng, 0.0, 1.0);
            net.forward(x, false);
            for (int i = 0; i < net.layer_count(); ++i) {
                const auto& out = net.output(i);
                const Shape3 want = shapes[std::size_t(i)];
                const std::size_t got = out.numel();
                CHECK(got == want.numel());
            }
        }
    }
}

TEST_CASE("spec text round trip") {
    for (const auto& name : {"mobile-soap-desk", "shufflenetv2x0.5", "wrn16x1"}) {
        const NetworkSpec spec = builtin_spec(name);
        const NetworkSpec back = spec_from_text(to_text(spec));
        CHECK(back.name == spec.name);
        CHECK(back.layers.size() == spec.layers.size());
        CHECK(to_text(back) == to_text(spec));
    }
    CHECK_THROWS_AS(spec_from_text("input 3 8 8\nlayer conv2d in=3 out=4 k=3 zz=1\n"),
                    ConfigError);
}

TEST_CASE("build_model: shape errors name the offending layer") {
    NetworkSpec bad;
    bad.name = "bad";
    bad.input_shape = {3, 16, 16};
    bad.layers.push_back(LayerSpec::conv(3, 8, 3, 1, 1));
    bad.layers.push_back(LayerSpec::conv(16, 8, 3, 1, 1));  // wrong in_channels
    try {
        propagate_shapes(bad);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("layer 1") != std::string::npos);
        CHECK(msg.find("conv2d") != std::string::npos);
    }
}

TEST_CASE("forward: zero batch yields the head bias (zero by init)") {
    RegressionModel<float> model(toy_two_layer().name == "toy2" ? toy_two_layer()
                                                                : toy_two_layer(),
                                 {8, 4, 1}, 7);
    Tensorf zeros({3, 3, 8, 8});
    auto out = model.forward(zeros, true);
    for (int i = 0; i < 3; ++i) CHECK(out.predictions.at(i, 0) == doctest::Approx(0.0));
}

TEST_CASE("forward: eval mode is bit-identical across calls") {
    NetworkSpec spec = builtin_spec("resnet8-desk");
    RegressionModel<float> model(spec, default_head("resnet8-desk"), 11);
    Tensorf x({2, 3, 64, 64});
    Rng rng(3);
    x.fill_uniform(rng, 0.0, 1.0);
    auto a = model.forward(x, false);
    auto b = model.forward(x, false);
    REQUIRE(a.predictions.numel() == b.predictions.numel());
    for (std::size_t i = 0; i < a.predictions.numel(); ++i)
        CHECK(a.predictions[i] == b.predictions[i]);
    for (std::size_t i = 0; i < a.features.numel(); ++i)
        CHECK(a.features[i] == b.features[i]);
}

TEST_CASE("build determinism: same seed, same parameters") {
    NetworkSpec spec = builtin_spec("wrn16x1-desk");
    RegressionModel<float> a(spec, default_head("wrn16x1-desk"), 99);
    RegressionModel<float> b(spec, default_head("wrn16x1-desk"), 99);
    CHECK(a.fingerprint() == b.fingerprint());
    RegressionModel<float> c(spec, default_head("wrn16x1-desk"), 100);
    CHECK(a.fingerprint() != c.fingerprint());
}

TEST_CASE("gradient of mean prediction matches central finite differences") {
    RegressionModel<double> model(toy_two_layer(), {8, 4, 1}, 13);
    Tensord x({3, 3, 8, 8});
    Rng rng(17);
    x.fill_uniform(rng, 0.0, 1.0);

    // analytic gradients
    auto out = model.forward(x, true);
    Tensord dpred({3, 1});
    dpred.fill(1.0 / 3.0);
    model.net().zero_grad();
    model.backward(dpred);

    auto params = model.net().params();
    Rng pick(23);
    int checked = 0;
    for (int trial = 0; trial < 10; ++trial) {
        auto* p = params[std::size_t(pick.below(params.size()))];
        const std::size_t j = std::size_t(pick.below(p->v.numel()));
        const double analytic = p->g[j];
        const double h = 1e-5;
        const double saved = p->v[j];
        p->v[j] = saved + h;
        const double up = mean_prediction(model, x);
        p->v[j] = saved - h;
        const double down = mean_prediction(model, x);
        p->v[j] = saved;
        const double numeric = (up - down) / (2 * h);
        const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
        CHECK(std::fabs(analytic - numeric) / denom < 1e-4);
        ++checked;
    }
    CHECK(checked == 10);
}

TEST_CASE("finite differences across every layer kind") {
    // one spec touching depthwise (stride 1 and 2), grouped conv, batch
    // norm, pooling, shuffle, slice, concat, and residual add
    NetworkSpec spec;
    spec.name = "all-kinds";
    spec.input_shape = {4, 12, 12};
    spec.layers.push_back(LayerSpec::conv(4, 8, 3, 1, 1));            // 0
    spec.layers.push_back(LayerSpec::bn(8));                          // 1
    spec.layers.push_back(LayerSpec::relu());                         // 2
    spec.layers.push_back(LayerSpec::dwconv(8, 3, 1, 1, true));       // 3
    spec.layers.push_back(LayerSpec::activation(ActKind::LeakyReLU, 0.1));  // 4
    spec.layers.push_back(LayerSpec::add(2));                         // 5
    spec.layers.push_back(LayerSpec::conv(8, 8, 3, 1, 1, 2));         // 6 grouped
    spec.layers.push_back(LayerSpec::shuffle(2));                     // 7
    spec.layers.push_back(LayerSpec::slice(0, 4));                    // 8
    LayerSpec right = LayerSpec::slice(4, 4);
    right.input = 7;
    spec.layers.push_back(right);                                     // 9
    spec.layers.push_back(LayerSpec::dwconv(4, 3, 2, 1, true));       // 10 stride 2
    LayerSpec pool_left = LayerSpec::pool(PoolOp::Max, 2, 2);  // 6x6 to match
    pool_left.input = 8;
    spec.layers.push_back(pool_left);                                 // 11
    LayerSpec cat = LayerSpec::concat(10);
    cat.input = 11;
    spec.layers.push_back(cat);                                       // 12
    spec.layers.push_back(LayerSpec::activation(ActKind::Tanh));      // 13
    spec.layers.push_back(LayerSpec::pool(PoolOp::Avg, 2, 2));        // 14
    spec.feature_tap = 14;
    REQUIRE_NOTHROW(propagate_shapes(spec));

    RegressionModel<double> model(spec, {6, 3, 1}, 31);
    Tensord x({2, 4, 12, 12});
    Rng rng(37);
    x.fill_uniform(rng, 0.0, 1.0);

    auto out = model.forward(x, true);
    Tensord dpred({2, 1});
    dpred.fill(0.5);
    model.net().zero_grad();
    model.backward(dpred);

    auto params = model.net().params();
    Rng pick(41);
    for (int trial = 0; trial < 20; ++trial) {
        auto* p = params[std::size_t(pick.below(params.size()))];
        const std::size_t j = std::size_t(pick.below(p->v.numel()));
        const double analytic = p->g[j];
        const double h = 1e-6;
        const double saved = p->v[j];
        p->v[j] = saved + h;
        const double up = mean_prediction(model, x) * 2 * 0.5;  // matches dpred scale
        p->v[j] = saved - h;
        const double down = mean_prediction(model, x) * 2 * 0.5;
        p->v[j] = saved;
        const double numeric = (up - down) / (2 * h);
        const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-6});
        CAPTURE(trial);
        CHECK(std::fabs(analytic - numeric) / denom < 2e-4);
    }
}

TEST_CASE("adapter: shape contract, identity init, parameter count") {
    // 64x8x8 student features -> 256x8x8 teacher features
    Adapter<float> adapter({64, 8, 8}, {256, 8, 8}, 5);
    CHECK(adapter.param_count() == 64 * 256 + 256);  // 16640
    Tensorf feat({2, 64, 8, 8});
    Rng rng(1);
    feat.fill_uniform(rng, -1.0, 1.0);
    Tensorf out = adapter.forward(feat, false);
    CHECK(out.dim(1) == 256);
    CHECK(out.dim(2) == 8);
    CHECK(out.dim(3) == 8);

    // identical shapes: identity at init
    Adapter<float> ident({16, 4, 4}, {16, 4, 4}, 6);
    Tensorf f2({1, 16, 4, 4});
    f2.fill_uniform(rng, -1.0, 1.0);
    Tensorf o2 = ident.forward(f2, false);
    for (std::size_t i = 0; i < f2.numel(); ++i)
        CHECK(o2[i] == doctest::Approx(f2[i]).epsilon(1e-6));

    // integer-stride bridge: 16x16 -> 4x4
    Adapter<float> strided({32, 16, 16}, {64, 4, 4}, 7);
    Tensorf f3({1, 32, 16, 16});
    f3.fill_uniform(rng, -1.0, 1.0);
    CHECK(strided.forward(f3, false).dim(2) == 4);

    // non-integer ratio falls back to adaptive pooling
    Adapter<float> pooled({32, 6, 6}, {64, 4, 4}, 8);
    Tensorf f4({1, 32, 6, 6});
    f4.fill_uniform(rng, -1.0, 1.0);
    CHECK(pooled.forward(f4, false).dim(2) == 4);
}

TEST_CASE("mobile-soap reference magnitudes reported in table units") {
    // full-scale teacher lands in the x1e6 params / x1e9 MACs regime of the
    // reference implementation (exact head widths are not published)
    const NetworkSpec spec = builtin_spec("mobile-soap");
    const auto params = count_params(spec, default_head("mobile-soap"));
    const auto macs = count_macs(spec, default_head("mobile-soap"));
    CHECK(params > 2'000'000);
    CHECK(params < 20'000'000);
    CHECK(macs > 100'000'000ll);
    CHECK(macs < 1'000'000'000ll);
}

TEST_SUITE_END();
