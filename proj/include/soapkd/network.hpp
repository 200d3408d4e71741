#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "soapkd/layers.hpp"
#include "soapkd/netspec.hpp"

namespace soapkd {

// Executes a NetworkSpec layer DAG. Layer i reads its main input from
// spec.layers[i].input (-1 = previous layer, network input for layer 0)
// and its optional second operand from .from. Backward supports gradient
// seeds at arbitrary layers so a feature tap and the head output can both
// receive loss gradients.
template <class T>
class Network {
public:
    Network() = default;

    Network(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
        shapes_ = propagate_shapes(spec_);
        Rng rng(seed);
        for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
            Rng layer_rng = rng.fork(i);
            layers_.push_back(make_layer(spec_.layers[i], layer_rng));
        }
        outputs_.resize(layers_.size());
    }

    const NetworkSpec& spec() const { return spec_; }
    const std::vector<Shape3>& shapes() const { return shapes_; }
    int layer_count() const { return int(layers_.size()); }

    const Tensor<T>& forward(const Tensor<T>& x, bool train) {
        input_ = x;
        for (int i = 0; i < layer_count(); ++i) {
            const LayerSpec& l = spec_.layers[size_t(i)];
            const Tensor<T>& main = resolve(i, l.input);
            const Tensor<T>* second = l.from >= 0 ? &outputs_[size_t(l.from)] : nullptr;
            layers_[size_t(i)]->forward(main, second, outputs_[size_t(i)], train);
        }
        return outputs_.back();
    }

    const Tensor<T>& output(int layer) const { return outputs_[size_t(layer)]; }
    const Tensor<T>& last_output() const { return outputs_.back(); }

    // Backpropagate from (layer index, output gradient) seeds; returns the
    // gradient with respect to the network input.
    Tensor<T> backward(const std::vector<std::pair<int, Tensor<T>>>& seeds) {
        std::vector<Tensor<T>> grads(layers_.size());
        std::vector<bool> has(layers_.size(), false);
        Tensor<T> dinput(input_.dims());
        bool has_input_grad = false;

        // Gradients must carry the producer's output shape; consumers like a
        // fully-connected layer return flattened views.
        auto add_grad = [&](int idx, const Tensor<T>& g) {
            if (idx < 0) {
                if (!has_input_grad) {
                    dinput = g.same_shape(input_) ? g : g.reshaped(input_.dims());
                    has_input_grad = true;
                } else {
                    dinput.add(g);
                }
                return;
            }
            const Tensor<T>& out = outputs_[size_t(idx)];
            if (!has[size_t(idx)]) {
                grads[size_t(idx)] = g.same_shape(out) ? g : g.reshaped(out.dims());
                has[size_t(idx)] = true;
            } else {
                grads[size_t(idx)].add(g);
            }
        };

        for (const auto& [idx, g] : seeds) add_grad(idx, g);

        for (int i = layer_count() - 1; i >= 0; --i) {
            if (!has[size_t(i)]) continue;
            const LayerSpec& l = spec_.layers[size_t(i)];
            Tensor<T> dx;
            Tensor<T> dsecond;
            layers_[size_t(i)]->backward(grads[size_t(i)], dx,
                                         l.from >= 0 ? &dsecond : nullptr);
            add_grad(producer_index(i, l.input), dx);
            if (l.from >= 0) add_grad(l.from, dsecond);
            grads[size_t(i)] = Tensor<T>();  // release
        }
        return has_input_grad ? dinput : Tensor<T>(input_.dims());
    }

    std::vector<Param<T>*> params() {
        std::vector<Param<T>*> out;
        for (auto& l : layers_)
            for (auto* p : l->params()) out.push_back(p);
        return out;
    }

    std::vector<Tensor<T>*> state_tensors() {
        std::vector<Tensor<T>*> out;
        for (auto& l : layers_) {
            for (auto* p : l->params()) out.push_back(&p->v);
            for (auto* b : l->buffers()) out.push_back(b);
        }
        return out;
    }

    void zero_grad() {
        for (auto* p : params()) p->g.zero();
    }

    std::size_t param_count() {
        std::size_t n = 0;
        for (auto* p : params()) n += p->v.numel();
        return n;
    }

    std::uint64_t state_fingerprint() {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (auto* t : state_tensors())
            h = fnv1a64(t->data(), t->numel() * sizeof(T), h);
        return h;
    }

private:
    static std::unique_ptr<LayerObj<T>> make_layer(const LayerSpec& l, Rng& rng) {
        switch (l.kind) {
            case LayerKind::Conv2d:
            case LayerKind::DepthwiseConv2d:
                return std::make_unique<Conv2dLayer<T>>(l.in_channels, l.out_channels,
                                                        l.kernel, l.stride, l.padding,
                                                        l.groups, l.bias, rng);
            case LayerKind::FullyConnected:
                return std::make_unique<FCLayer<T>>(l.units_in, l.units_out, l.bias, rng);
            case LayerKind::BatchNorm:
                return std::make_unique<BatchNormLayer<T>>(l.in_channels);
            case LayerKind::Activation:
                return std::make_unique<ActivationLayer<T>>(l.act, l.act_alpha);
            case LayerKind::Pool:
                return std::make_unique<PoolLayer<T>>(l.pool_op, l.kernel, l.stride,
                                                      l.padding);
            case LayerKind::GlobalAvgPool:
                return std::make_unique<GlobalAvgPoolLayer<T>>();
            case LayerKind::AddResidual:
                return std::make_unique<AddLayer<T>>();
            case LayerKind::Concat:
                return std::make_unique<ConcatLayer<T>>();
            case LayerKind::ChannelShuffle:
                return std::make_unique<ChannelShuffleLayer<T>>(l.shuffle_groups);
            case LayerKind::SliceChannels:
                return std::make_unique<SliceLayer<T>>(l.slice_begin, l.slice_count);
        }
        throw ConfigError("unhandled layer kind");
    }

    int producer_index(int i, int ref) const { return ref == -1 ? i - 1 : ref; }

    const Tensor<T>& resolve(int i, int ref) const {
        const int idx = producer_index(i, ref);
        return idx < 0 ? input_ : outputs_[size_t(idx)];
    }

    NetworkSpec spec_;
    std::vector<Shape3> shapes_;
    std::vector<std::unique_ptr<LayerObj<T>>> layers_;
    std::vector<Tensor<T>> outputs_;
    Tensor<T> input_;
};

}  // namespace soapkd
