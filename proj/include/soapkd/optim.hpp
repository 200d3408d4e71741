#pragma once

#include <cmath>
#include <vector>

#include "soapkd/layers.hpp"

namespace soapkd {

// SGD with momentum and decoupled-from-loss L2 weight decay:
//   g <- grad + wd * w;  v <- mu * v + g;  w <- w - lr * v
template <class T>
class SGD {
public:
    SGD(std::vector<Param<T>*> params, double lr, double momentum = 0.9,
        double weight_decay = 0.0)
        : params_(std::move(params)), lr_(lr), mu_(momentum), wd_(weight_decay) {
        for (auto* p : params_) velocity_.emplace_back(p->v.dims());
    }

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

    void step() {
        for (std::size_t k = 0; k < params_.size(); ++k) {
            Param<T>& p = *params_[k];
            Tensor<T>& v = velocity_[k];
            for (std::size_t i = 0; i < p.v.numel(); ++i) {
                const T g = p.g[i] + T(wd_) * p.v[i];
                v[i] = T(mu_) * v[i] + g;
                p.v[i] -= T(lr_) * v[i];
            }
        }
    }

private:
    std::vector<Param<T>*> params_;
    double lr_, mu_, wd_;
    std::vector<Tensor<T>> velocity_;
};

// Step-decay schedule: lr0 scaled by `factor` at each milestone epoch.
inline double scheduled_lr(double lr0, double factor, const std::vector<int>& milestones,
                           int epoch) {
    double lr = lr0;
    for (const int m : milestones)
        if (epoch >= m) lr *= factor;
    return lr;
}

template <class T>
class Adam {
public:
    Adam(std::vector<Param<T>*> params, double lr, double beta1 = 0.5,
         double beta2 = 0.999, double eps = 1e-8)
        : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (std::size_t k = 0; k < params_.size(); ++k) {
            m_[k].assign(params_[k]->v.numel(), 0.0);
            v_[k].assign(params_[k]->v.numel(), 0.0);
        }
    }

    void set_lr(double lr) { lr_ = lr; }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(b1_, t_);
        const double bc2 = 1.0 - std::pow(b2_, t_);
        for (std::size_t k = 0; k < params_.size(); ++k) {
            Param<T>& p = *params_[k];
            for (std::size_t i = 0; i < p.v.numel(); ++i) {
                const double g = double(p.g[i]);
                double& m = m_[k][i];
                double& v = v_[k][i];
                m = b1_ * m + (1.0 - b1_) * g;
                v = b2_ * v + (1.0 - b2_) * g * g;
                p.v[i] -= T(lr_ * (m / bc1) / (std::sqrt(v / bc2) + eps_));
            }
        }
    }

private:
    std::vector<Param<T>*> params_;
    double lr_, b1_, b2_, eps_;
    int t_ = 0;
    // Moment accumulators kept in double regardless of T.
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace soapkd
