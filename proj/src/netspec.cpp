#include "soapkd/netspec.hpp"

#include <map>
#include <sstream>

#include "soapkd/common.hpp"

namespace soapkd {

const char* to_string(LayerKind k) {
    switch (k) {
        case LayerKind::Conv2d: return "conv2d";
        case LayerKind::DepthwiseConv2d: return "depthwise_conv2d";
        case LayerKind::FullyConnected: return "fully_connected";
        case LayerKind::BatchNorm: return "batch_norm";
        case LayerKind::Activation: return "activation";
        case LayerKind::Pool: return "pool";
        case LayerKind::GlobalAvgPool: return "global_avg_pool";
        case LayerKind::AddResidual: return "add_residual";
        case LayerKind::ChannelShuffle: return "channel_shuffle";
        case LayerKind::Concat: return "concat";
        case LayerKind::SliceChannels: return "slice_channels";
    }
    return "?";
}

const char* to_string(ActKind k) {
    switch (k) {
        case ActKind::ReLU: return "relu";
        case ActKind::ReLU6: return "relu6";
        case ActKind::LeakyReLU: return "leaky_relu";
        case ActKind::Sigmoid: return "sigmoid";
        case ActKind::Tanh: return "tanh";
    }
    return "?";
}

const char* to_string(PoolOp op) {
    return op == PoolOp::Max ? "max" : "avg";
}

namespace {

[[noreturn]] void spec_fail(const NetworkSpec& spec, int layer, const std::string& what) {
    std::ostringstream os;
    os << "spec '" << spec.name << "': layer " << layer;
    if (layer >= 0 && layer < int(spec.layers.size()))
        os << " (" << to_string(spec.layers[size_t(layer)].kind) << ")";
    os << ": " << what;
    throw ConfigError(os.str());
}

int conv_out(int in, int k, int s, int p) {
    return (in + 2 * p - k) / s + 1;
}

}  // namespace

std::vector<Shape3> propagate_shapes(const NetworkSpec& spec) {
    if (spec.input_shape.c < 1 || spec.input_shape.h < 1 || spec.input_shape.w < 1)
        throw ConfigError("spec '" + spec.name + "': non-positive input shape");

    std::vector<Shape3> out;
    out.reserve(spec.layers.size());

    auto producer = [&](int i, int ref) -> Shape3 {
        if (ref == -1) return i == 0 ? spec.input_shape : out[size_t(i - 1)];
        if (ref < 0 || ref >= i)
            spec_fail(spec, i, "input reference " + std::to_string(ref) +
                                   " is not an earlier layer");
        return out[size_t(ref)];
    };

    for (int i = 0; i < int(spec.layers.size()); ++i) {
        const LayerSpec& l = spec.layers[size_t(i)];
        const Shape3 x = producer(i, l.input);
        Shape3 y;
        switch (l.kind) {
            case LayerKind::Conv2d:
            case LayerKind::DepthwiseConv2d: {
                if (l.kernel < 1 || l.stride < 1 || l.in_channels < 1 || l.out_channels < 1)
                    spec_fail(spec, i, "non-positive conv dimensions");
                if (l.groups < 1 || l.in_channels % l.groups != 0 ||
                    l.out_channels % l.groups != 0)
                    spec_fail(spec, i, "groups must divide in/out channels");
                if (l.kind == LayerKind::DepthwiseConv2d && l.groups != l.in_channels)
                    spec_fail(spec, i, "depthwise conv requires groups == in_channels");
                if (x.c != l.in_channels)
                    spec_fail(spec, i, "in_channels " + std::to_string(l.in_channels) +
                                           " != producer channels " + std::to_string(x.c));
                const int oh = conv_out(x.h, l.kernel, l.stride, l.padding);
                const int ow = conv_out(x.w, l.kernel, l.stride, l.padding);
                if (oh < 1 || ow < 1)
                    spec_fail(spec, i, "kernel larger than padded input");
                y = {l.out_channels, oh, ow};
                break;
            }
            case LayerKind::FullyConnected: {
                if (l.units_in < 1 || l.units_out < 1)
                    spec_fail(spec, i, "non-positive fc dimensions");
                if (std::size_t(l.units_in) != x.numel())
                    spec_fail(spec, i, "units_in " + std::to_string(l.units_in) +
                                           " != flattened producer size " +
                                           std::to_string(x.numel()));
                y = {l.units_out, 1, 1};
                break;
            }
            case LayerKind::BatchNorm:
                if (l.in_channels != x.c)
                    spec_fail(spec, i, "channels " + std::to_string(l.in_channels) +
                                           " != producer channels " + std::to_string(x.c));
                y = x;
                break;
            case LayerKind::Activation:
                y = x;
                break;
            case LayerKind::Pool: {
                if (l.kernel < 1 || l.stride < 1)
                    spec_fail(spec, i, "non-positive pool dimensions");
                const int oh = conv_out(x.h, l.kernel, l.stride, l.padding);
                const int ow = conv_out(x.w, l.kernel, l.stride, l.padding);
                if (oh < 1 || ow < 1)
                    spec_fail(spec, i, "pool window larger than padded input");
                y = {x.c, oh, ow};
                break;
            }
            case LayerKind::GlobalAvgPool:
                y = {x.c, 1, 1};
                break;
            case LayerKind::AddResidual: {
                const Shape3 other = producer(i, l.from);
                if (!(other == x))
                    spec_fail(spec, i, "residual operand shapes differ");
                y = x;
                break;
            }
            case LayerKind::Concat: {
                const Shape3 other = producer(i, l.from);
                if (other.h != x.h || other.w != x.w)
                    spec_fail(spec, i, "concat spatial sizes differ");
                y = {x.c + other.c, x.h, x.w};
                break;
            }
            case LayerKind::ChannelShuffle:
                if (l.shuffle_groups < 1 || x.c % l.shuffle_groups != 0)
                    spec_fail(spec, i, "shuffle groups must divide channels");
                y = x;
                break;
            case LayerKind::SliceChannels:
                if (l.slice_begin < 0 || l.slice_count < 1 ||
                    l.slice_begin + l.slice_count > x.c)
                    spec_fail(spec, i, "slice range outside producer channels");
                y = {l.slice_count, x.h, x.w};
                break;
        }
        out.push_back(y);
    }

    const int tap = spec.tap_index();
    if (!spec.layers.empty() && (tap < 0 || tap >= int(spec.layers.size())))
        throw ConfigError("spec '" + spec.name + "': feature_tap out of range");
    return out;
}

Shape3 tapped_shape(const NetworkSpec& spec) {
    if (spec.layers.empty()) return spec.input_shape;
    return propagate_shapes(spec)[size_t(spec.tap_index())];
}

std::int64_t layer_params(const LayerSpec& l) {
    switch (l.kind) {
        case LayerKind::Conv2d:
        case LayerKind::DepthwiseConv2d: {
            std::int64_t w = std::int64_t(l.kernel) * l.kernel *
                             (l.in_channels / l.groups) * l.out_channels;
            return w + (l.bias ? l.out_channels : 0);
        }
        case LayerKind::FullyConnected:
            return std::int64_t(l.units_in) * l.units_out + (l.bias ? l.units_out : 0);
        case LayerKind::BatchNorm:
            return 2ll * l.in_channels;
        default:
            return 0;
    }
}

std::int64_t layer_macs(const LayerSpec& l, const Shape3& out) {
    switch (l.kind) {
        case LayerKind::Conv2d:
        case LayerKind::DepthwiseConv2d:
            return std::int64_t(out.h) * out.w * l.out_channels *
                   (std::int64_t(l.kernel) * l.kernel * l.in_channels / l.groups);
        case LayerKind::FullyConnected:
            return std::int64_t(l.units_in) * l.units_out;
        default:
            return 0;
    }
}

namespace {

std::int64_t head_params(int tapped_channels, const HeadWidths& head) {
    std::int64_t total = 0;
    int in = tapped_channels;
    for (const int w : head) {
        total += std::int64_t(in) * w + w;
        in = w;
    }
    return total;
}

std::int64_t head_macs(int tapped_channels, const HeadWidths& head) {
    std::int64_t total = 0;
    int in = tapped_channels;
    for (const int w : head) {
        total += std::int64_t(in) * w;
        in = w;
    }
    return total;
}

}  // namespace

std::int64_t count_params(const NetworkSpec& spec) {
    std::int64_t total = 0;
    for (const auto& l : spec.layers) total += layer_params(l);
    return total;
}

std::int64_t count_macs(const NetworkSpec& spec) {
    const auto shapes = propagate_shapes(spec);
    std::int64_t total = 0;
    for (std::size_t i = 0; i < spec.layers.size(); ++i)
        total += layer_macs(spec.layers[i], shapes[i]);
    return total;
}

std::int64_t count_params(const NetworkSpec& spec, const HeadWidths& head) {
    return count_params(spec) + head_params(tapped_shape(spec).c, head);
}

std::int64_t count_macs(const NetworkSpec& spec, const HeadWidths& head) {
    return count_macs(spec) + head_macs(tapped_shape(spec).c, head);
}

// ---------------------------------------------------------------------------
// Built-in specs
// ---------------------------------------------------------------------------

namespace {

// Incremental spec assembly; add() returns the new layer's index so branch
// topology can reference it.
struct Builder {
    NetworkSpec spec;

    explicit Builder(std::string name, Shape3 input) {
        spec.name = std::move(name);
        spec.input_shape = input;
    }

    int add(LayerSpec l) {
        spec.layers.push_back(l);
        return int(spec.layers.size()) - 1;
    }
    int last() const { return int(spec.layers.size()) - 1; }

    int conv_bn_act(int in, int out, int k, int s, int p, ActKind act,
                    int groups = 1) {
        add(LayerSpec::conv(in, out, k, s, p, groups, /*bias=*/false));
        add(LayerSpec::bn(out));
        return add(LayerSpec::activation(act));
    }

    NetworkSpec done() {
        spec.feature_tap = last();
        return spec;
    }
};

// MobileNetV2 inverted residual. Returns the index of the block output.
int inverted_residual(Builder& b, int in, int out, int expand, int stride) {
    const int block_in = b.last();
    int ch = in;
    if (expand != 1) {
        b.conv_bn_act(in, in * expand, 1, 1, 0, ActKind::ReLU6);
        ch = in * expand;
    }
    b.add(LayerSpec::dwconv(ch, 3, stride, 1));
    b.add(LayerSpec::bn(ch));
    b.add(LayerSpec::activation(ActKind::ReLU6));
    b.add(LayerSpec::conv(ch, out, 1, 1, 0, 1, false));
    int idx = b.add(LayerSpec::bn(out));
    if (stride == 1 && in == out) idx = b.add(LayerSpec::add(block_in));
    return idx;
}

NetworkSpec make_mobile_soap(bool desk) {
    if (!desk) {
        Builder b("mobile-soap", {3, 224, 224});
        b.conv_bn_act(3, 32, 3, 2, 1, ActKind::ReLU6);
        struct Row { int t, c, n, s; };
        // (expansion, channels, repeats, first stride)
        const Row rows[] = {{1, 16, 1, 1},  {6, 24, 2, 2}, {6, 32, 3, 2},
                            {6, 64, 4, 2},  {6, 96, 3, 1}, {6, 160, 3, 2},
                            {6, 320, 1, 1}};
        int in = 32;
        for (const Row& r : rows)
            for (int i = 0; i < r.n; ++i) {
                inverted_residual(b, in, r.c, r.t, i == 0 ? r.s : 1);
                in = r.c;
            }
        b.conv_bn_act(in, 1280, 1, 1, 0, ActKind::ReLU6);
        return b.done();
    }
    Builder b("mobile-soap-desk", {3, 64, 64});
    b.conv_bn_act(3, 24, 3, 2, 1, ActKind::ReLU6);  // 32x32
    struct Row { int t, c, n, s; };
    const Row rows[] = {{1, 24, 1, 2}, {6, 40, 2, 1}, {6, 80, 2, 2}, {6, 112, 1, 1}};
    int in = 24;
    for (const Row& r : rows)
        for (int i = 0; i < r.n; ++i) {
            inverted_residual(b, in, r.c, r.t, i == 0 ? r.s : 1);
            in = r.c;
        }
    b.conv_bn_act(in, 192, 1, 1, 0, ActKind::ReLU6);  // 192 x 8 x 8
    return b.done();
}

// Post-activation basic block (ResNet8 style).
int basic_block(Builder& b, int in, int out, int stride) {
    const int block_in = b.last();
    b.add(LayerSpec::conv(in, out, 3, stride, 1, 1, false));
    b.add(LayerSpec::bn(out));
    b.add(LayerSpec::relu());
    b.add(LayerSpec::conv(out, out, 3, 1, 1, 1, false));
    const int main_out = b.add(LayerSpec::bn(out));
    int shortcut = block_in;
    if (stride != 1 || in != out) {
        LayerSpec sc = LayerSpec::conv(in, out, 1, stride, 0, 1, false);
        sc.input = block_in;
        b.add(sc);
        shortcut = b.add(LayerSpec::bn(out));
    }
    LayerSpec add = LayerSpec::add(shortcut);
    add.input = main_out;
    b.add(add);
    return b.add(LayerSpec::relu());
}

NetworkSpec make_resnet8(bool desk) {
    if (!desk) {
        Builder b("resnet8", {3, 224, 224});
        b.conv_bn_act(3, 16, 3, 1, 1, ActKind::ReLU);
        basic_block(b, 16, 16, 1);
        basic_block(b, 16, 32, 2);
        basic_block(b, 32, 64, 2);
        return b.done();
    }
    Builder b("resnet8-desk", {3, 64, 64});
    b.conv_bn_act(3, 12, 3, 2, 1, ActKind::ReLU);  // 32x32
    basic_block(b, 12, 12, 1);
    basic_block(b, 12, 24, 2);  // 16x16
    basic_block(b, 24, 48, 2);  // 8x8
    return b.done();
}

// Pre-activation block (wide residual network style).
int preact_block(Builder& b, int in, int out, int stride) {
    const int block_in = b.last();
    b.add(LayerSpec::bn(in));
    const int preact = b.add(LayerSpec::relu());
    b.add(LayerSpec::conv(in, out, 3, stride, 1, 1, false));
    b.add(LayerSpec::bn(out));
    b.add(LayerSpec::relu());
    const int main_out = b.add(LayerSpec::conv(out, out, 3, 1, 1, 1, false));
    int shortcut = block_in;
    if (stride != 1 || in != out) {
        LayerSpec sc = LayerSpec::conv(in, out, 1, stride, 0, 1, false);
        sc.input = preact;
        shortcut = b.add(sc);
    }
    LayerSpec add = LayerSpec::add(shortcut);
    add.input = main_out;
    return b.add(add);
}

NetworkSpec make_wrn16x1(bool desk) {
    const int widths[3] = {16, 32, 64};
    if (!desk) {
        Builder b("wrn16x1", {3, 224, 224});
        b.add(LayerSpec::conv(3, 16, 3, 1, 1, 1, false));
        int in = 16;
        for (int g = 0; g < 3; ++g)
            for (int i = 0; i < 2; ++i) {
                preact_block(b, in, widths[g], (g > 0 && i == 0) ? 2 : 1);
                in = widths[g];
            }
        b.add(LayerSpec::bn(in));
        b.add(LayerSpec::relu());
        return b.done();
    }
    Builder b("wrn16x1-desk", {3, 64, 64});
    b.add(LayerSpec::conv(3, 16, 3, 2, 1, 1, false));  // 32x32
    int in = 16;
    for (int g = 0; g < 3; ++g)
        for (int i = 0; i < 2; ++i) {
            preact_block(b, in, widths[g], (g > 0 && i == 0) ? 2 : 1);
            in = widths[g];
        }
    b.add(LayerSpec::bn(in));
    b.add(LayerSpec::relu());
    return b.done();
}

// ShuffleNetV2 basic unit, stride 1, channels preserved.
void shuffle_unit_s1(Builder& b, int ch) {
    const int block_in = b.last();
    const int half = ch / 2;
    LayerSpec left = LayerSpec::slice(0, half);
    left.input = block_in;
    const int left_out = b.add(left);
    LayerSpec right_in = LayerSpec::slice(half, half);
    right_in.input = block_in;
    b.add(right_in);
    b.conv_bn_act(half, half, 1, 1, 0, ActKind::ReLU);
    b.add(LayerSpec::dwconv(half, 3, 1, 1));
    b.add(LayerSpec::bn(half));
    const int right_out = b.conv_bn_act(half, half, 1, 1, 0, ActKind::ReLU);
    LayerSpec cat = LayerSpec::concat(right_out);
    cat.input = left_out;
    b.add(cat);
    b.add(LayerSpec::shuffle(2));
}

// ShuffleNetV2 downsampling unit, stride 2, in -> out channels.
void shuffle_unit_s2(Builder& b, int in, int out) {
    const int block_in = b.last();
    const int half = out / 2;
    // left branch
    LayerSpec ldw = LayerSpec::dwconv(in, 3, 2, 1);
    ldw.input = block_in;
    b.add(ldw);
    b.add(LayerSpec::bn(in));
    const int left_out = b.conv_bn_act(in, half, 1, 1, 0, ActKind::ReLU);
    // right branch
    LayerSpec rconv = LayerSpec::conv(in, half, 1, 1, 0, 1, false);
    rconv.input = block_in;
    b.add(rconv);
    b.add(LayerSpec::bn(half));
    b.add(LayerSpec::relu());
    b.add(LayerSpec::dwconv(half, 3, 2, 1));
    b.add(LayerSpec::bn(half));
    const int right_out = b.conv_bn_act(half, half, 1, 1, 0, ActKind::ReLU);
    LayerSpec cat = LayerSpec::concat(right_out);
    cat.input = left_out;
    b.add(cat);
    b.add(LayerSpec::shuffle(2));
}

NetworkSpec make_shufflenetv2(double scale, bool desk) {
    const std::string suffix = scale == 0.5 ? "x0.5" : "x1.0";
    if (!desk) {
        Builder b("shufflenetv2" + suffix, {3, 224, 224});
        const int stage_out[3] = {scale == 0.5 ? 48 : 116, scale == 0.5 ? 96 : 232,
                                  scale == 0.5 ? 192 : 464};
        const int repeats[3] = {4, 8, 4};
        b.conv_bn_act(3, 24, 3, 2, 1, ActKind::ReLU);          // 112
        b.add(LayerSpec::pool(PoolOp::Max, 3, 2, 1));          // 56
        int in = 24;
        for (int s = 0; s < 3; ++s) {
            shuffle_unit_s2(b, in, stage_out[s]);
            for (int i = 1; i < repeats[s]; ++i) shuffle_unit_s1(b, stage_out[s]);
            in = stage_out[s];
        }
        b.conv_bn_act(in, 1024, 1, 1, 0, ActKind::ReLU);  // 1024 x 7 x 7
        return b.done();
    }
    Builder b("shufflenetv2" + suffix + "-desk", {3, 64, 64});
    const int stage_out[3] = {scale == 0.5 ? 32 : 48, scale == 0.5 ? 64 : 96,
                              scale == 0.5 ? 128 : 192};
    const int repeats[3] = {2, 3, 2};
    b.conv_bn_act(3, 16, 3, 2, 1, ActKind::ReLU);  // 32x32
    int in = 16;
    for (int s = 0; s < 3; ++s) {
        shuffle_unit_s2(b, in, stage_out[s]);
        for (int i = 1; i < repeats[s]; ++i) shuffle_unit_s1(b, stage_out[s]);
        in = stage_out[s];
    }
    b.conv_bn_act(in, scale == 0.5 ? 128 : 192, 1, 1, 0, ActKind::ReLU);  // 4x4
    return b.done();
}

NetworkSpec make_vgg8(bool desk) {
    if (!desk) {
        Builder b("vgg8", {3, 224, 224});
        const int widths[5] = {64, 128, 256, 512, 512};
        int in = 3;
        for (const int w : widths) {
            b.conv_bn_act(in, w, 3, 1, 1, ActKind::ReLU);
            b.add(LayerSpec::pool(PoolOp::Max, 2, 2));
            in = w;
        }
        return b.done();
    }
    Builder b("vgg8-desk", {3, 64, 64});
    const int widths[4] = {16, 32, 64, 128};
    int in = 3;
    for (const int w : widths) {
        b.conv_bn_act(in, w, 3, 1, 1, ActKind::ReLU);
        b.add(LayerSpec::pool(PoolOp::Max, 2, 2));
        in = w;
    }
    return b.done();  // 128 x 4 x 4
}

// Bottleneck residual block (ResNet50 style), expansion 4.
int bottleneck(Builder& b, int in, int mid, int stride) {
    const int out = mid * 4;
    const int block_in = b.last();
    b.conv_bn_act(in, mid, 1, 1, 0, ActKind::ReLU);
    b.conv_bn_act(mid, mid, 3, stride, 1, ActKind::ReLU);
    b.add(LayerSpec::conv(mid, out, 1, 1, 0, 1, false));
    const int main_out = b.add(LayerSpec::bn(out));
    int shortcut = block_in;
    if (stride != 1 || in != out) {
        LayerSpec sc = LayerSpec::conv(in, out, 1, stride, 0, 1, false);
        sc.input = block_in;
        b.add(sc);
        shortcut = b.add(LayerSpec::bn(out));
    }
    LayerSpec add = LayerSpec::add(shortcut);
    add.input = main_out;
    b.add(add);
    return b.add(LayerSpec::relu());
}

NetworkSpec make_resnet50(bool desk) {
    if (!desk) {
        Builder b("resnet50", {3, 224, 224});
        b.conv_bn_act(3, 64, 7, 2, 3, ActKind::ReLU);   // 112
        b.add(LayerSpec::pool(PoolOp::Max, 3, 2, 1));   // 56
        const int mids[4] = {64, 128, 256, 512};
        const int repeats[4] = {3, 4, 6, 3};
        int in = 64;
        for (int s = 0; s < 4; ++s) {
            for (int i = 0; i < repeats[s]; ++i) {
                bottleneck(b, in, mids[s], (s > 0 && i == 0) ? 2 : 1);
                in = mids[s] * 4;
            }
        }
        return b.done();
    }
    // Reduced residual classifier backbone for 64x64 work.
    Builder b("resnet50-desk", {3, 64, 64});
    b.conv_bn_act(3, 16, 3, 2, 1, ActKind::ReLU);  // 32x32
    basic_block(b, 16, 16, 1);
    basic_block(b, 16, 32, 2);  // 16x16
    basic_block(b, 32, 64, 2);  // 8x8 spatial feature output
    return b.done();
}

}  // namespace

NetworkSpec builtin_spec(const std::string& name, int input_resolution) {
    NetworkSpec spec;
    if (name == "mobile-soap") spec = make_mobile_soap(false);
    else if (name == "mobile-soap-desk") spec = make_mobile_soap(true);
    else if (name == "resnet8") spec = make_resnet8(false);
    else if (name == "resnet8-desk") spec = make_resnet8(true);
    else if (name == "wrn16x1") spec = make_wrn16x1(false);
    else if (name == "wrn16x1-desk") spec = make_wrn16x1(true);
    else if (name == "shufflenetv2x0.5") spec = make_shufflenetv2(0.5, false);
    else if (name == "shufflenetv2x0.5-desk") spec = make_shufflenetv2(0.5, true);
    else if (name == "shufflenetv2x1.0") spec = make_shufflenetv2(1.0, false);
    else if (name == "shufflenetv2x1.0-desk") spec = make_shufflenetv2(1.0, true);
    else if (name == "vgg8") spec = make_vgg8(false);
    else if (name == "vgg8-desk") spec = make_vgg8(true);
    else if (name == "resnet50") spec = make_resnet50(false);
    else if (name == "resnet50-desk") spec = make_resnet50(true);
    else throw ConfigError("unknown spec name '" + name + "'");

    if (input_resolution > 0) {
        spec.input_shape.h = input_resolution;
        spec.input_shape.w = input_resolution;
    }
    propagate_shapes(spec);  // validate before handing out
    return spec;
}

std::vector<std::string> builtin_spec_names() {
    return {"mobile-soap",       "mobile-soap-desk",
            "resnet8",           "resnet8-desk",
            "wrn16x1",           "wrn16x1-desk",
            "shufflenetv2x0.5",  "shufflenetv2x0.5-desk",
            "shufflenetv2x1.0",  "shufflenetv2x1.0-desk",
            "vgg8",              "vgg8-desk",
            "resnet50",          "resnet50-desk"};
}

HeadWidths default_head(const std::string& spec_name) {
    const bool desk = spec_name.size() > 5 &&
                      spec_name.compare(spec_name.size() - 5, 5, "-desk") == 0;
    if (desk) return {128, 64, 1};
    return {512, 128, 1};
}

// ---------------------------------------------------------------------------
// Text serialization
// ---------------------------------------------------------------------------

std::string to_text(const NetworkSpec& spec) {
    std::ostringstream os;
    os << "name " << spec.name << "\n";
    os << "input " << spec.input_shape.c << " " << spec.input_shape.h << " "
       << spec.input_shape.w << "\n";
    os << "feature_tap " << spec.tap_index() << "\n";
    for (const auto& l : spec.layers) {
        os << "layer " << to_string(l.kind);
        switch (l.kind) {
            case LayerKind::Conv2d:
            case LayerKind::DepthwiseConv2d:
                os << " in=" << l.in_channels << " out=" << l.out_channels
                   << " k=" << l.kernel << " s=" << l.stride << " p=" << l.padding
                   << " g=" << l.groups << " bias=" << (l.bias ? 1 : 0);
                break;
            case LayerKind::FullyConnected:
                os << " in=" << l.units_in << " out=" << l.units_out
                   << " bias=" << (l.bias ? 1 : 0);
                break;
            case LayerKind::BatchNorm:
                os << " ch=" << l.in_channels;
                break;
            case LayerKind::Activation:
                os << " fn=" << to_string(l.act);
                if (l.act == ActKind::LeakyReLU) os << " alpha=" << l.act_alpha;
                break;
            case LayerKind::Pool:
                os << " op=" << to_string(l.pool_op) << " k=" << l.kernel
                   << " s=" << l.stride << " p=" << l.padding;
                break;
            case LayerKind::GlobalAvgPool:
                break;
            case LayerKind::AddResidual:
            case LayerKind::Concat:
                os << " from=" << l.from;
                break;
            case LayerKind::ChannelShuffle:
                os << " g=" << l.shuffle_groups;
                break;
            case LayerKind::SliceChannels:
                os << " begin=" << l.slice_begin << " count=" << l.slice_count;
                break;
        }
        if (l.input != -1) os << " src=" << l.input;
        os << "\n";
    }
    return os.str();
}

namespace {

std::map<std::string, std::string> parse_kv(std::istringstream& is, int line_no) {
    std::map<std::string, std::string> kv;
    std::string tok;
    while (is >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos)
            throw ConfigError("spec text line " + std::to_string(line_no) +
                              ": expected key=value, got '" + tok + "'");
        kv[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    return kv;
}

int take_int(std::map<std::string, std::string>& kv, const std::string& key,
             int line_no, bool required = true, int fallback = 0) {
    auto it = kv.find(key);
    if (it == kv.end()) {
        if (required)
            throw ConfigError("spec text line " + std::to_string(line_no) +
                              ": missing key '" + key + "'");
        return fallback;
    }
    const int v = std::stoi(it->second);
    kv.erase(it);
    return v;
}

ActKind act_from_string(const std::string& s, int line_no) {
    if (s == "relu") return ActKind::ReLU;
    if (s == "relu6") return ActKind::ReLU6;
    if (s == "leaky_relu") return ActKind::LeakyReLU;
    if (s == "sigmoid") return ActKind::Sigmoid;
    if (s == "tanh") return ActKind::Tanh;
    throw ConfigError("spec text line " + std::to_string(line_no) +
                      ": unknown activation '" + s + "'");
}

}  // namespace

NetworkSpec spec_from_text(const std::string& text) {
    NetworkSpec spec;
    std::istringstream lines(text);
    std::string line;
    int line_no = 0;
    bool saw_input = false;
    while (std::getline(lines, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream is(line);
        std::string head;
        is >> head;
        if (head == "name") {
            is >> spec.name;
        } else if (head == "input") {
            if (!(is >> spec.input_shape.c >> spec.input_shape.h >> spec.input_shape.w))
                throw ConfigError("spec text line " + std::to_string(line_no) +
                                  ": input needs 3 integers");
            saw_input = true;
        } else if (head == "feature_tap") {
            is >> spec.feature_tap;
        } else if (head == "layer") {
            std::string kind;
            is >> kind;
            auto kv = parse_kv(is, line_no);
            LayerSpec l;
            if (kind == "conv2d" || kind == "depthwise_conv2d") {
                l.kind = kind == "conv2d" ? LayerKind::Conv2d : LayerKind::DepthwiseConv2d;
                l.in_channels = take_int(kv, "in", line_no);
                l.out_channels = take_int(kv, "out", line_no);
                l.kernel = take_int(kv, "k", line_no);
                l.stride = take_int(kv, "s", line_no, false, 1);
                l.padding = take_int(kv, "p", line_no, false, 0);
                l.groups = take_int(kv, "g", line_no, false, 1);
                l.bias = take_int(kv, "bias", line_no, false, 1) != 0;
            } else if (kind == "fully_connected") {
                l.kind = LayerKind::FullyConnected;
                l.units_in = take_int(kv, "in", line_no);
                l.units_out = take_int(kv, "out", line_no);
                l.bias = take_int(kv, "bias", line_no, false, 1) != 0;
            } else if (kind == "batch_norm") {
                l.kind = LayerKind::BatchNorm;
                l.in_channels = l.out_channels = take_int(kv, "ch", line_no);
            } else if (kind == "activation") {
                l.kind = LayerKind::Activation;
                auto it = kv.find("fn");
                if (it == kv.end())
                    throw ConfigError("spec text line " + std::to_string(line_no) +
                                      ": activation needs fn=");
                l.act = act_from_string(it->second, line_no);
                kv.erase(it);
                if (auto a = kv.find("alpha"); a != kv.end()) {
                    l.act_alpha = std::stod(a->second);
                    kv.erase(a);
                }
            } else if (kind == "pool") {
                l.kind = LayerKind::Pool;
                auto it = kv.find("op");
                if (it == kv.end())
                    throw ConfigError("spec text line " + std::to_string(line_no) +
                                      ": pool needs op=");
                if (it->second == "max") l.pool_op = PoolOp::Max;
                else if (it->second == "avg") l.pool_op = PoolOp::Avg;
                else throw ConfigError("spec text line " + std::to_string(line_no) +
                                       ": unknown pool op '" + it->second + "'");
                kv.erase(it);
                l.kernel = take_int(kv, "k", line_no);
                l.stride = take_int(kv, "s", line_no);
                l.padding = take_int(kv, "p", line_no, false, 0);
            } else if (kind == "global_avg_pool") {
                l.kind = LayerKind::GlobalAvgPool;
            } else if (kind == "add_residual" || kind == "concat") {
                l.kind = kind == "add_residual" ? LayerKind::AddResidual : LayerKind::Concat;
                l.from = take_int(kv, "from", line_no);
            } else if (kind == "channel_shuffle") {
                l.kind = LayerKind::ChannelShuffle;
                l.shuffle_groups = take_int(kv, "g", line_no);
            } else if (kind == "slice_channels") {
                l.kind = LayerKind::SliceChannels;
                l.slice_begin = take_int(kv, "begin", line_no);
                l.slice_count = take_int(kv, "count", line_no);
            } else {
                throw ConfigError("spec text line " + std::to_string(line_no) +
                                  ": unknown layer kind '" + kind + "'");
            }
            l.input = take_int(kv, "src", line_no, false, -1);
            if (!kv.empty())
                throw ConfigError("spec text line " + std::to_string(line_no) +
                                  ": unknown key '" + kv.begin()->first + "'");
            spec.layers.push_back(l);
        } else {
            throw ConfigError("spec text line " + std::to_string(line_no) +
                              ": unknown directive '" + head + "'");
        }
    }
    if (!saw_input) throw ConfigError("spec text: missing input line");
    propagate_shapes(spec);
    return spec;
}

}  // namespace soapkd
