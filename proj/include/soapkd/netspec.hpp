#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace soapkd {

enum class LayerKind {
    Conv2d,
    DepthwiseConv2d,
    FullyConnected,
    BatchNorm,
    Activation,
    Pool,
    GlobalAvgPool,
    AddResidual,
    ChannelShuffle,
    Concat,         // channel concatenation of two producers
    SliceChannels,  // channel range view of one producer
};

enum class ActKind { ReLU, ReLU6, LeakyReLU, Sigmoid, Tanh };
enum class PoolOp { Max, Avg };

const char* to_string(LayerKind k);
const char* to_string(ActKind k);
const char* to_string(PoolOp op);

// One layer of a declarative network description. Fields that do not apply
// to a kind are left at their defaults and ignored.
struct LayerSpec {
    LayerKind kind = LayerKind::Conv2d;

    // conv2d / depthwise_conv2d
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 0;
    int stride = 1;
    int padding = 0;
    int groups = 1;
    bool bias = true;

    // fully_connected (consumes the flattened producer output)
    int units_in = 0;
    int units_out = 0;

    // activation
    ActKind act = ActKind::ReLU;
    double act_alpha = 0.0;  // leaky slope

    // pool
    PoolOp pool_op = PoolOp::Max;

    // channel_shuffle
    int shuffle_groups = 1;

    // slice_channels
    int slice_begin = 0;
    int slice_count = 0;

    // Topology. `input` is the producing layer index (-1 = previous layer,
    // or the network input for layer 0). `from` is the second operand of
    // add_residual / concat.
    int input = -1;
    int from = -1;

    static LayerSpec conv(int in, int out, int k, int stride = 1, int padding = 0,
                          int groups = 1, bool bias = true) {
        LayerSpec s;
        s.kind = LayerKind::Conv2d;
        s.in_channels = in;
        s.out_channels = out;
        s.kernel = k;
        s.stride = stride;
        s.padding = padding;
        s.groups = groups;
        s.bias = bias;
        return s;
    }
    static LayerSpec dwconv(int channels, int k, int stride = 1, int padding = 0,
                            bool bias = false) {
        LayerSpec s = conv(channels, channels, k, stride, padding, channels, bias);
        s.kind = LayerKind::DepthwiseConv2d;
        return s;
    }
    static LayerSpec fc(int in, int out, bool bias = true) {
        LayerSpec s;
        s.kind = LayerKind::FullyConnected;
        s.units_in = in;
        s.units_out = out;
        s.bias = bias;
        return s;
    }
    static LayerSpec bn(int channels) {
        LayerSpec s;
        s.kind = LayerKind::BatchNorm;
        s.in_channels = channels;
        s.out_channels = channels;
        return s;
    }
    static LayerSpec activation(ActKind a, double alpha = 0.0) {
        LayerSpec s;
        s.kind = LayerKind::Activation;
        s.act = a;
        s.act_alpha = alpha;
        return s;
    }
    static LayerSpec relu() { return activation(ActKind::ReLU); }
    static LayerSpec relu6() { return activation(ActKind::ReLU6); }
    static LayerSpec pool(PoolOp op, int k, int stride, int padding = 0) {
        LayerSpec s;
        s.kind = LayerKind::Pool;
        s.pool_op = op;
        s.kernel = k;
        s.stride = stride;
        s.padding = padding;
        return s;
    }
    static LayerSpec gap() {
        LayerSpec s;
        s.kind = LayerKind::GlobalAvgPool;
        return s;
    }
    static LayerSpec add(int from) {
        LayerSpec s;
        s.kind = LayerKind::AddResidual;
        s.from = from;
        return s;
    }
    static LayerSpec concat(int from) {
        LayerSpec s;
        s.kind = LayerKind::Concat;
        s.from = from;
        return s;
    }
    static LayerSpec shuffle(int groups) {
        LayerSpec s;
        s.kind = LayerKind::ChannelShuffle;
        s.shuffle_groups = groups;
        return s;
    }
    static LayerSpec slice(int begin, int count) {
        LayerSpec s;
        s.kind = LayerKind::SliceChannels;
        s.slice_begin = begin;
        s.slice_count = count;
        return s;
    }
};

struct Shape3 {
    int c = 0, h = 0, w = 0;
    bool operator==(const Shape3&) const = default;
    std::size_t numel() const {
        return std::size_t(c) * std::size_t(h) * std::size_t(w);
    }
};

// A complete convolutional backbone description. The regression head
// (global average pool + three fully-connected layers) is appended by
// build_model and is not part of `layers`.
struct NetworkSpec {
    std::string name;
    Shape3 input_shape;
    std::vector<LayerSpec> layers;
    // Layer whose output feeds both the regression head and the feature
    // guidance loss. Defaults to the last layer.
    int feature_tap = -1;

    int tap_index() const {
        return feature_tap >= 0 ? feature_tap : int(layers.size()) - 1;
    }
};

// Per-layer output shapes, computed from input_shape. Throws ConfigError
// naming the offending layer on any inconsistency.
std::vector<Shape3> propagate_shapes(const NetworkSpec& spec);

Shape3 tapped_shape(const NetworkSpec& spec);

// Exact trainable-parameter count of one layer.
std::int64_t layer_params(const LayerSpec& l);

// Exact multiply-accumulate count of one layer given its output shape.
// Convention: conv = outH*outW*out*(k*k*in/groups), fc = in*out,
// everything else (bias adds, BN, activations, pooling, reshuffles) = 0.
std::int64_t layer_macs(const LayerSpec& l, const Shape3& out);

// Head widths for the three fully-connected layers; last must be 1.
using HeadWidths = std::array<int, 3>;

std::int64_t count_params(const NetworkSpec& spec, const HeadWidths& head);
std::int64_t count_macs(const NetworkSpec& spec, const HeadWidths& head);

// Backbone-only variants (no regression head).
std::int64_t count_params(const NetworkSpec& spec);
std::int64_t count_macs(const NetworkSpec& spec);

// Built-in specs, addressable by name:
//   mobile-soap, resnet8, wrn16x1, shufflenetv2x0.5, shufflenetv2x1.0,
//   vgg8, resnet50, plus a "-desk" variant of each scaled for 64x64 input.
NetworkSpec builtin_spec(const std::string& name, int input_resolution = 0);
std::vector<std::string> builtin_spec_names();

// Default head widths used when a spec name is instantiated as a
// regression model.
HeadWidths default_head(const std::string& spec_name);

// One-layer-per-line text serialization, round-trip stable.
std::string to_text(const NetworkSpec& spec);
NetworkSpec spec_from_text(const std::string& text);

}  // namespace soapkd
