#pragma once

#include <string>
#include <utility>

#include "soapkd/network.hpp"

namespace soapkd {

// Convolutional backbone plus the regression head: global average pooling
// followed by three fully-connected layers (ReLU after the first two, final
// output linear). The head output is a normalized angle in [0, 1) scale;
// no activation clamps it during training.
template <class T>
class RegressionModel {
public:
    RegressionModel() = default;

    RegressionModel(const NetworkSpec& backbone, const HeadWidths& head,
                    std::uint64_t seed)
        : backbone_spec_(backbone), head_(head) {
        if (head[2] != 1) throw ConfigError("regression head must end in width 1");
        NetworkSpec full = backbone;
        full.name = backbone.name;
        const Shape3 tap = tapped_shape(backbone);
        tap_index_ = backbone.tap_index();
        full.layers.push_back(LayerSpec::gap());
        full.layers.push_back(LayerSpec::fc(tap.c, head[0]));
        full.layers.push_back(LayerSpec::relu());
        full.layers.push_back(LayerSpec::fc(head[0], head[1]));
        full.layers.push_back(LayerSpec::relu());
        full.layers.push_back(LayerSpec::fc(head[1], head[2]));
        full.feature_tap = tap_index_;
        net_ = Network<T>(full, seed);
    }

    struct Output {
        Tensor<T> features;     // backbone tap output, N x C x H x W
        Tensor<T> predictions;  // N x 1, normalized label scale
    };

    Output forward(const Tensor<T>& batch, bool train) {
        net_.forward(batch, train);
        Output out;
        out.features = net_.output(tap_index_);
        out.predictions = net_.last_output();
        return out;
    }

    // Backward from head-prediction gradients and optional feature-tap
    // gradients (the feature guidance loss seeds the tap directly).
    void backward(const Tensor<T>& dpred, const Tensor<T>* dfeatures = nullptr) {
        std::vector<std::pair<int, Tensor<T>>> seeds;
        seeds.emplace_back(net_.layer_count() - 1, dpred);
        if (dfeatures) seeds.emplace_back(tap_index_, *dfeatures);
        net_.backward(seeds);
    }

    Network<T>& net() { return net_; }
    const NetworkSpec& backbone_spec() const { return backbone_spec_; }
    const HeadWidths& head() const { return head_; }
    int tap_index() const { return tap_index_; }
    Shape3 feature_shape() const { return tapped_shape(backbone_spec_); }

    void freeze() { frozen_ = true; }
    bool frozen() const { return frozen_; }

    std::uint64_t fingerprint() { return net_.state_fingerprint(); }

private:
    NetworkSpec backbone_spec_;
    HeadWidths head_{};
    int tap_index_ = -1;
    Network<T> net_;
    bool frozen_ = false;
};

template <class T>
RegressionModel<T> build_model(const NetworkSpec& spec, const HeadWidths& head,
                               std::uint64_t seed) {
    return RegressionModel<T>(spec, head, seed);
}

// Single-convolution feature adapter mapping student features onto the
// teacher's feature shape. When the spatial ratio is not an integer stride,
// an adaptive average pool in front of the 1x1 conv bridges the sizes.
template <class T>
class Adapter {
public:
    Adapter() = default;

    Adapter(Shape3 student_feat, Shape3 teacher_feat, std::uint64_t seed)
        : in_(student_feat), out_(teacher_feat) {
        Rng rng(seed);
        int stride = 1;
        if (student_feat.h == teacher_feat.h && student_feat.w == teacher_feat.w) {
            stride = 1;
        } else if (student_feat.h % teacher_feat.h == 0 &&
                   student_feat.w % teacher_feat.w == 0 &&
                   student_feat.h / teacher_feat.h == student_feat.w / teacher_feat.w) {
            stride = student_feat.h / teacher_feat.h;
        } else {
            pool_ = std::make_unique<AdaptiveAvgPoolLayer<T>>(teacher_feat.h,
                                                              teacher_feat.w);
        }
        conv_ = std::make_unique<Conv2dLayer<T>>(student_feat.c, teacher_feat.c, 1,
                                                 stride, 0, 1, true, rng);
        if (student_feat.c == teacher_feat.c && stride == 1 && !pool_)
            conv_->set_identity();
    }

    Adapter(Adapter&&) = default;
    Adapter& operator=(Adapter&&) = default;

    Tensor<T> forward(const Tensor<T>& student_features, bool train) {
        Tensor<T> cur = student_features;
        if (pool_) {
            Tensor<T> pooled;
            pool_->forward(cur, nullptr, pooled, train);
            cur = std::move(pooled);
        }
        Tensor<T> out;
        conv_->forward(cur, nullptr, out, train);
        return out;
    }

    Tensor<T> backward(const Tensor<T>& dout) {
        Tensor<T> dcur;
        conv_->backward(dout, dcur, nullptr);
        if (pool_) {
            Tensor<T> dprev;
            pool_->backward(dcur, dprev, nullptr);
            return dprev;
        }
        return dcur;
    }

    std::vector<Param<T>*> params() { return conv_->params(); }
    std::vector<Tensor<T>*> state_tensors() {
        std::vector<Tensor<T>*> out;
        for (auto* p : conv_->params()) out.push_back(&p->v);
        return out;
    }
    void zero_grad() {
        for (auto* p : params()) p->g.zero();
    }

    std::int64_t param_count() const {
        return std::int64_t(in_.c) * out_.c + out_.c;
    }

    Shape3 input_shape() const { return in_; }
    Shape3 output_shape() const { return out_; }

private:
    Shape3 in_{}, out_{};
    std::unique_ptr<AdaptiveAvgPoolLayer<T>> pool_;
    std::unique_ptr<Conv2dLayer<T>> conv_;
};

template <class T>
Adapter<T> build_adapter(const NetworkSpec& student_spec,
                         const NetworkSpec& teacher_spec, std::uint64_t seed) {
    return Adapter<T>(tapped_shape(student_spec), tapped_shape(teacher_spec), seed);
}

}  // namespace soapkd
