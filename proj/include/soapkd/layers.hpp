#pragma once

#include <Eigen/Dense>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <cmath>
#include <memory>
#include <vector>

#include "soapkd/common.hpp"
#include "soapkd/netspec.hpp"
#include "soapkd/rng.hpp"
#include "soapkd/tensor.hpp"

namespace soapkd {

template <class T>
struct Param {
    Tensor<T> v;  // value
    Tensor<T> g;  // gradient, same shape

    void init_shape(const std::vector<int>& dims) {
        v.resize(dims);
        g.resize(dims);
    }
};

template <class T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapM = Eigen::Map<MatRM<T>>;
template <class T>
using CMapM = Eigen::Map<const MatRM<T>>;

// He fan-in initialization, deterministic from rng.
template <class T>
void he_init(Tensor<T>& w, std::size_t fan_in, Rng& rng) {
    const double stddev = std::sqrt(2.0 / double(fan_in));
    w.fill_normal(rng, 0.0, stddev);
}

// ---------------------------------------------------------------------------
// Layer interface
// ---------------------------------------------------------------------------

// A layer consumes one main input `x` and optionally a second operand
// (residual branch, concat branch, or conditioning vector). Parameter
// gradients accumulate across backward calls until zero_grad.
template <class T>
class LayerObj {
public:
    virtual ~LayerObj() = default;
    virtual void forward(const Tensor<T>& x, const Tensor<T>* second, Tensor<T>& y,
                         bool train) = 0;
    virtual void backward(const Tensor<T>& dy, Tensor<T>& dx, Tensor<T>* dsecond) = 0;
    virtual std::vector<Param<T>*> params() { return {}; }
    // Non-trainable state that still belongs in checkpoints (BN running
    // stats, spectral norm power-iteration vectors).
    virtual std::vector<Tensor<T>*> buffers() { return {}; }
};

// ---------------------------------------------------------------------------
// Convolution (grouped im2col + GEMM; dedicated depthwise path)
// ---------------------------------------------------------------------------

template <class T>
class Conv2dLayer : public LayerObj<T> {
public:
    Conv2dLayer(int in_ch, int out_ch, int kernel, int stride, int padding,
                int groups, bool bias, Rng& rng, bool spectral_norm = false)
        : in_(in_ch), out_(out_ch), k_(kernel), s_(stride), p_(padding),
          g_(groups), has_bias_(bias), sn_(spectral_norm) {
        if (in_ % g_ != 0 || out_ % g_ != 0)
            throw ConfigError("conv groups must divide channels");
        weight_.init_shape({out_, in_ / g_, k_, k_});
        he_init(weight_.v, std::size_t(in_ / g_) * k_ * k_, rng);
        if (has_bias_) bias_.init_shape({out_});
        if (sn_) {
            sn_u_.resize({out_});
            sn_u_.fill_normal(rng, 0.0, 1.0);
            normalize_vec(sn_u_);
            sn_v_.resize({(in_ / g_) * k_ * k_});
            sn_sigma_ = T(1);
        }
    }

    void set_identity() {
        // 1x1 channel-preserving passthrough; used by adapters.
        weight_.v.zero();
        if (in_ == out_ && k_ == 1 && g_ == 1)
            for (int c = 0; c < out_; ++c) weight_.v.at(c, c, 0, 0) = T(1);
        if (has_bias_) bias_.v.zero();
    }

    void forward(const Tensor<T>& x, const Tensor<T>*, Tensor<T>& y,
                 bool train) override {
        const int n = x.dim(0);
        if (x.dim(1) != in_) throw DataError("conv2d: input channel mismatch");
        ih_ = x.dim(2);
        iw_ = x.dim(3);
        oh_ = (ih_ + 2 * p_ - k_) / s_ + 1;
        ow_ = (iw_ + 2 * p_ - k_) / s_ + 1;
        if (oh_ < 1 || ow_ < 1) throw DataError("conv2d: kernel exceeds input");
        x_cache_ = x;
        y.ensure({n, out_, oh_, ow_});

        const Tensor<T>& w = effective_weight(train);
        if (g_ == in_ && g_ == out_) {
            depthwise_forward(x, w, y);
        } else {
            const int kdim = (in_ / g_) * k_ * k_;
            const int mg = out_ / g_;
            const bool pointwise = k_ == 1 && s_ == 1 && p_ == 0;
            const int nthreads = max_threads();
            col_pool_.resize(std::size_t(nthreads));
#pragma omp parallel for schedule(static) num_threads(nthreads)
            for (int i = 0; i < n; ++i) {
                Tensor<T>& col = col_pool_[thread_index()];
                for (int grp = 0; grp < g_; ++grp) {
                    const T* col_data;
                    if (pointwise) {
                        // im2col of a 1x1/stride-1 conv is the input itself
                        col_data = x.data() + (std::size_t(i) * in_ +
                                               std::size_t(grp) * (in_ / g_)) *
                                                  oh_ * ow_;
                    } else {
                        col.ensure({kdim, oh_ * ow_});
                        im2col(x, i, grp, col);
                        col_data = col.data();
                    }
                    CMapM<T> wm(w.data() + std::size_t(grp) * mg * kdim, mg, kdim);
                    CMapM<T> cm(col_data, kdim, oh_ * ow_);
                    MapM<T> ym(y.data() + (std::size_t(i) * out_ + std::size_t(grp) * mg) *
                                              oh_ * ow_,
                               mg, oh_ * ow_);
                    ym.noalias() = wm * cm;
                }
            }
        }
        if (has_bias_) {
            for (int i = 0; i < n; ++i)
                for (int c = 0; c < out_; ++c) {
                    T* row = y.data() + (std::size_t(i) * out_ + c) * oh_ * ow_;
                    const T b = bias_.v[c];
                    for (int j = 0; j < oh_ * ow_; ++j) row[j] += b;
                }
        }
    }

    void backward(const Tensor<T>& dy, Tensor<T>& dx, Tensor<T>*) override {
        const int n = x_cache_.dim(0);
        dx.resize(x_cache_.dims());
        Tensor<T> dweff;
        dweff.resize(weight_.v.dims());
        const Tensor<T>& w = sn_ ? w_sn_ : weight_.v;

        if (g_ == in_ && g_ == out_) {
            depthwise_backward(dy, w, dx, dweff);
        } else {
            const int kdim = (in_ / g_) * k_ * k_;
            const int mg = out_ / g_;
            const bool pointwise = k_ == 1 && s_ == 1 && p_ == 0;
            const int nthreads = max_threads();
            col_pool_.resize(std::size_t(nthreads));
            dcol_pool_.resize(std::size_t(nthreads));
            // per-thread weight-gradient accumulators, reduced in thread
            // order afterwards so results do not depend on scheduling
            std::vector<Tensor<T>> dw_pool(static_cast<std::size_t>(nthreads));
            for (auto& t : dw_pool) t.resize(weight_.v.dims());
#pragma omp parallel for schedule(static) num_threads(nthreads)
            for (int i = 0; i < n; ++i) {
                const std::size_t tid = thread_index();
                Tensor<T>& col = col_pool_[tid];
                Tensor<T>& dcol = dcol_pool_[tid];
                for (int grp = 0; grp < g_; ++grp) {
                    CMapM<T> dym(dy.data() + (std::size_t(i) * out_ +
                                              std::size_t(grp) * mg) *
                                                 oh_ * ow_,
                                 mg, oh_ * ow_);
                    // weight gradient
                    const T* col_data;
                    if (pointwise) {
                        col_data = x_cache_.data() + (std::size_t(i) * in_ +
                                                      std::size_t(grp) * (in_ / g_)) *
                                                         oh_ * ow_;
                    } else {
                        col.ensure({kdim, oh_ * ow_});
                        im2col(x_cache_, i, grp, col);
                        col_data = col.data();
                    }
                    CMapM<T> cm(col_data, kdim, oh_ * ow_);
                    MapM<T> dwm(dw_pool[tid].data() + std::size_t(grp) * mg * kdim, mg,
                                kdim);
                    dwm.noalias() += dym * cm.transpose();
                    // data gradient
                    CMapM<T> wm(w.data() + std::size_t(grp) * mg * kdim, mg, kdim);
                    if (pointwise) {
                        MapM<T> dxm(dx.data() + (std::size_t(i) * in_ +
                                                 std::size_t(grp) * (in_ / g_)) *
                                                    oh_ * ow_,
                                    kdim, oh_ * ow_);
                        dxm.noalias() = wm.transpose() * dym;
                    } else {
                        dcol.ensure({kdim, oh_ * ow_});
                        MapM<T> dcm(dcol.data(), kdim, oh_ * ow_);
                        dcm.noalias() = wm.transpose() * dym;
                        col2im(dcol, dx, i, grp);
                    }
                }
            }
            for (const auto& t : dw_pool) dweff.add(t);
        }
        if (has_bias_) {
            for (int i = 0; i < n; ++i)
                for (int c = 0; c < out_; ++c) {
                    const T* row = dy.data() + (std::size_t(i) * out_ + c) * oh_ * ow_;
                    T acc = 0;
                    for (int j = 0; j < oh_ * ow_; ++j) acc += row[j];
                    bias_.g[c] += acc;
                }
        }
        accumulate_weight_grad(dweff);
    }

    std::vector<Param<T>*> params() override {
        std::vector<Param<T>*> out{&weight_};
        if (has_bias_) out.push_back(&bias_);
        return out;
    }
    std::vector<Tensor<T>*> buffers() override {
        if (!sn_) return {};
        return {&sn_u_, &sn_v_};
    }

    Param<T>& weight() { return weight_; }
    Param<T>& bias() { return bias_; }

private:
    const Tensor<T>& effective_weight(bool train) {
        if (!sn_) return weight_.v;
        const int m = out_;
        const int kdim = (in_ / g_) * k_ * k_;
        CMapM<T> wm(weight_.v.data(), m, kdim);
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> u(sn_u_.data(), m);
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> v(sn_v_.data(), kdim);
        if (train) {
            // one power iteration per step
            v = (wm.transpose() * u).normalized();
            u = (wm * v).normalized();
        }
        sn_sigma_ = u.dot(wm * v);
        if (std::abs(double(sn_sigma_)) < 1e-12) sn_sigma_ = T(1e-12);
        w_sn_ = weight_.v;
        w_sn_.scale(T(1) / sn_sigma_);
        return w_sn_;
    }

    void accumulate_weight_grad(const Tensor<T>& dweff) {
        if (!sn_) {
            weight_.g.add(dweff);
            return;
        }
        // W_sn = W / sigma with sigma = u^T W v and u, v held constant:
        // dW = dW_sn / sigma - (<dW_sn, W_sn> / sigma) u v^T
        const int m = out_;
        const int kdim = (in_ / g_) * k_ * k_;
        T inner = 0;
        for (std::size_t i = 0; i < dweff.numel(); ++i) inner += dweff[i] * w_sn_[i];
        const T scale = inner / sn_sigma_;
        for (int r = 0; r < m; ++r)
            for (int c = 0; c < kdim; ++c)
                weight_.g[std::size_t(r) * kdim + c] +=
                    dweff[std::size_t(r) * kdim + c] / sn_sigma_ -
                    scale * sn_u_[r] * sn_v_[c];
    }

    static void normalize_vec(Tensor<T>& t) {
        T norm = 0;
        for (std::size_t i = 0; i < t.numel(); ++i) norm += t[i] * t[i];
        norm = std::sqrt(norm);
        if (norm > 0)
            for (std::size_t i = 0; i < t.numel(); ++i) t[i] /= norm;
    }

    void im2col(const Tensor<T>& x, int sample, int grp, Tensor<T>& col_out) {
        const int cpg = in_ / g_;
        const T* xs = x.data() + (std::size_t(sample) * in_ + std::size_t(grp) * cpg) *
                                     ih_ * iw_;
        T* col = col_out.data();
        for (int c = 0; c < cpg; ++c)
            for (int kh = 0; kh < k_; ++kh)
                for (int kw = 0; kw < k_; ++kw) {
                    T* dst = col;
                    col += oh_ * ow_;
                    const T* src = xs + std::size_t(c) * ih_ * iw_;
                    for (int oh = 0; oh < oh_; ++oh) {
                        const int ihh = oh * s_ - p_ + kh;
                        if (ihh < 0 || ihh >= ih_) {
                            for (int ow = 0; ow < ow_; ++ow) *dst++ = T(0);
                            continue;
                        }
                        const T* srow = src + std::size_t(ihh) * iw_;
                        int iww = -p_ + kw;
                        for (int ow = 0; ow < ow_; ++ow, iww += s_)
                            *dst++ = (iww >= 0 && iww < iw_) ? srow[iww] : T(0);
                    }
                }
    }

    void col2im(const Tensor<T>& dcol, Tensor<T>& dx, int sample, int grp) {
        const int cpg = in_ / g_;
        T* xs = dx.data() + (std::size_t(sample) * in_ + std::size_t(grp) * cpg) *
                                ih_ * iw_;
        const T* col = dcol.data();
        for (int c = 0; c < cpg; ++c)
            for (int kh = 0; kh < k_; ++kh)
                for (int kw = 0; kw < k_; ++kw) {
                    const T* src = col;
                    col += oh_ * ow_;
                    T* dst = xs + std::size_t(c) * ih_ * iw_;
                    for (int oh = 0; oh < oh_; ++oh) {
                        const int ihh = oh * s_ - p_ + kh;
                        if (ihh < 0 || ihh >= ih_) {
                            src += ow_;
                            continue;
                        }
                        T* drow = dst + std::size_t(ihh) * iw_;
                        int iww = -p_ + kw;
                        for (int ow = 0; ow < ow_; ++ow, iww += s_) {
                            if (iww >= 0 && iww < iw_) drow[iww] += src[ow];
                        }
                        src += ow_;
                    }
                }
    }

    void depthwise_forward(const Tensor<T>& x, const Tensor<T>& w, Tensor<T>& y) {
        const int n = x.dim(0);
        const std::size_t planes = std::size_t(n) * in_;
#pragma omp parallel for schedule(static)
        for (std::size_t plane = 0; plane < planes; ++plane) {
            const int c = int(plane % std::size_t(in_));
            const T* xs = x.data() + plane * std::size_t(ih_) * iw_;
            const T* wc = w.data() + std::size_t(c) * k_ * k_;
            T* ys = y.data() + plane * std::size_t(oh_) * ow_;
            for (int oh = 0; oh < oh_; ++oh) {
                const int ih0 = oh * s_ - p_;
                const bool h_interior = ih0 >= 0 && ih0 + k_ <= ih_;
                for (int ow = 0; ow < ow_; ++ow) {
                    const int iw0 = ow * s_ - p_;
                    T acc = 0;
                    if (h_interior && iw0 >= 0 && iw0 + k_ <= iw_) {
                        const T* base = xs + std::size_t(ih0) * iw_ + iw0;
                        for (int kh = 0; kh < k_; ++kh) {
                            const T* row = base + std::size_t(kh) * iw_;
                            const T* wr = wc + kh * k_;
                            for (int kw = 0; kw < k_; ++kw) acc += wr[kw] * row[kw];
                        }
                    } else {
                        for (int kh = 0; kh < k_; ++kh) {
                            const int ihh = ih0 + kh;
                            if (ihh < 0 || ihh >= ih_) continue;
                            for (int kw = 0; kw < k_; ++kw) {
                                const int iww = iw0 + kw;
                                if (iww < 0 || iww >= iw_) continue;
                                acc += wc[kh * k_ + kw] * xs[std::size_t(ihh) * iw_ + iww];
                            }
                        }
                    }
                    ys[std::size_t(oh) * ow_ + ow] = acc;
                }
            }
        }
    }

    void depthwise_backward(const Tensor<T>& dy, const Tensor<T>& w, Tensor<T>& dx,
                            Tensor<T>& dweff) {
        const int n = x_cache_.dim(0);
        // weight gradient: one vectorizable 2-D dot product per kernel tap,
        // parallel over channels (each owns its dw slice)
#pragma omp parallel for schedule(static)
        for (int c = 0; c < in_; ++c) {
            T* dwc = dweff.data() + std::size_t(c) * k_ * k_;
            for (int i = 0; i < n; ++i) {
                const std::size_t plane = std::size_t(i) * in_ + c;
                const T* xs = x_cache_.data() + plane * std::size_t(ih_) * iw_;
                const T* dys = dy.data() + plane * std::size_t(oh_) * ow_;
                for (int kh = 0; kh < k_; ++kh)
                    for (int kw = 0; kw < k_; ++kw) {
                        T acc = 0;
                        for (int oh = 0; oh < oh_; ++oh) {
                            const int ihh = oh * s_ - p_ + kh;
                            if (ihh < 0 || ihh >= ih_) continue;
                            const T* dyrow = dys + std::size_t(oh) * ow_;
                            const T* xrow = xs + std::size_t(ihh) * iw_;
                            for (int ow = 0; ow < ow_; ++ow) {
                                const int iww = ow * s_ - p_ + kw;
                                if (iww < 0 || iww >= iw_) continue;
                                acc += dyrow[ow] * xrow[iww];
                            }
                        }
                        dwc[kh * k_ + kw] += acc;
                    }
            }
        }
        // data gradient; stride 1 reduces to a correlation with the
        // flipped kernel, which reuses the vectorized forward path
        if (s_ == 1 && k_ <= 7) {
            const std::size_t planes = std::size_t(n) * in_;
#pragma omp parallel for schedule(static)
            for (std::size_t plane = 0; plane < planes; ++plane) {
                const int c = int(plane % std::size_t(in_));
                const T* wc = w.data() + std::size_t(c) * k_ * k_;
                T flipped[49];
                for (int kh = 0; kh < k_; ++kh)
                    for (int kw = 0; kw < k_; ++kw)
                        flipped[kh * k_ + kw] = wc[(k_ - 1 - kh) * k_ + (k_ - 1 - kw)];
                const int pad = k_ - 1 - p_;
                const T* dys = dy.data() + plane * std::size_t(oh_) * ow_;
                T* dxs = dx.data() + plane * std::size_t(ih_) * iw_;
                correlate_plane(dys, oh_, ow_, flipped, k_, pad, dxs, ih_, iw_);
            }
        } else {
#pragma omp parallel for schedule(static)
            for (int c = 0; c < in_; ++c) {
                const T* wc = w.data() + std::size_t(c) * k_ * k_;
                for (int i = 0; i < n; ++i) {
                    const std::size_t plane = std::size_t(i) * in_ + c;
                    const T* dys = dy.data() + plane * std::size_t(oh_) * ow_;
                    T* dxs = dx.data() + plane * std::size_t(ih_) * iw_;
                    for (int oh = 0; oh < oh_; ++oh)
                        for (int ow = 0; ow < ow_; ++ow) {
                            const T g = dys[std::size_t(oh) * ow_ + ow];
                            if (g == T(0)) continue;
                            for (int kh = 0; kh < k_; ++kh) {
                                const int ihh = oh * s_ - p_ + kh;
                                if (ihh < 0 || ihh >= ih_) continue;
                                for (int kw = 0; kw < k_; ++kw) {
                                    const int iww = ow * s_ - p_ + kw;
                                    if (iww < 0 || iww >= iw_) continue;
                                    dxs[std::size_t(ihh) * iw_ + iww] +=
                                        g * wc[kh * k_ + kw];
                                }
                            }
                        }
                }
            }
        }
    }

    // out[a][b] = sum_k kernel[k] * in[a - pad + kh][b - pad + kw]
    static void correlate_plane(const T* in, int in_h, int in_w, const T* kernel,
                                int k, int pad, T* out, int out_h, int out_w) {
        for (int a = 0; a < out_h; ++a) {
            const int ih0 = a - pad;
            const bool h_interior = ih0 >= 0 && ih0 + k <= in_h;
            for (int b = 0; b < out_w; ++b) {
                const int iw0 = b - pad;
                T acc = 0;
                if (h_interior && iw0 >= 0 && iw0 + k <= in_w) {
                    const T* base = in + std::size_t(ih0) * in_w + iw0;
                    for (int kh = 0; kh < k; ++kh) {
                        const T* row = base + std::size_t(kh) * in_w;
                        const T* wr = kernel + kh * k;
                        for (int kw = 0; kw < k; ++kw) acc += wr[kw] * row[kw];
                    }
                } else {
                    for (int kh = 0; kh < k; ++kh) {
                        const int ihh = ih0 + kh;
                        if (ihh < 0 || ihh >= in_h) continue;
                        for (int kw = 0; kw < k; ++kw) {
                            const int iww = iw0 + kw;
                            if (iww < 0 || iww >= in_w) continue;
                            acc += kernel[kh * k + kw] * in[std::size_t(ihh) * in_w + iww];
                        }
                    }
                }
                out[std::size_t(a) * out_w + b] = acc;
            }
        }
    }

    static int max_threads() {
#ifdef _OPENMP
        return omp_get_max_threads();
#else
        return 1;
#endif
    }
    static std::size_t thread_index() {
#ifdef _OPENMP
        return std::size_t(omp_get_thread_num());
#else
        return 0;
#endif
    }

    int in_, out_, k_, s_, p_, g_;
    bool has_bias_;
    bool sn_;
    int ih_ = 0, iw_ = 0, oh_ = 0, ow_ = 0;
    Param<T> weight_, bias_;
    Tensor<T> x_cache_;
    std::vector<Tensor<T>> col_pool_, dcol_pool_;
    Tensor<T> sn_u_, sn_v_, w_sn_;
    T sn_sigma_ = T(1);
};

// ---------------------------------------------------------------------------
// Fully connected
// ---------------------------------------------------------------------------

template <class T>
class FCLayer : public LayerObj<T> {
public:
    FCLayer(int in, int out, bool bias, Rng& rng, bool spectral_norm = false,
            double init_scale = 1.0)
        : in_(in), out_(out), has_bias_(bias), sn_(spectral_norm) {
        weight_.init_shape({out_, in_});
        he_init(weight_.v, std::size_t(in_), rng);
        if (init_scale != 1.0) weight_.v.scale(T(init_scale));
        if (has_bias_) bias_.init_shape({out_});
        if (sn_) {
            sn_u_.resize({out_});
            sn_u_.fill_normal(rng, 0.0, 1.0);
            T norm = 0;
            for (std::size_t i = 0; i < sn_u_.numel(); ++i) norm += sn_u_[i] * sn_u_[i];
            norm = std::sqrt(norm);
            for (std::size_t i = 0; i < sn_u_.numel(); ++i) sn_u_[i] /= norm;
            sn_v_.resize({in_});
        }
    }

    void forward(const Tensor<T>& x, const Tensor<T>*, Tensor<T>& y,
                 bool train) override {
        const int n = x.dim(0);
        if (int(x.numel()) / n != in_) throw DataError("fc: input size mismatch");
        x_cache_ = x.reshaped({n, in_});
        y.ensure({n, out_});
        const Tensor<T>& w = effective_weight(train);
        CMapM<T> xm(x_cache_.data(), n, in_);
        CMapM<T> wm(w.data(), out_, in_);
        MapM<T> ym(y.data(), n, out_);
        ym.noalias() = xm * wm.transpose();
        if (has_bias_)
            for (int i = 0; i < n; ++i)
                for (int c = 0; c < out_; ++c) y.at(i, c) += bias_.v[c];
    }

    void backward(const Tensor<T>& dy, Tensor<T>& dx, Tensor<T>*) override {
        const int n = x_cache_.dim(0);
        const Tensor<T>& w = sn_ ? w_sn_ : weight_.v;
        Tensor<T> dweff;
        dweff.ensure({out_, in_});
        CMapM<T> dym(dy.data(), n, out_);
        CMapM<T> xm(x_cache_.data(), n, in_);
        MapM<T> dwm(dweff.data(), out_, in_);
        dwm.noalias() = dym.transpose() * xm;
        dx.ensure({n, in_});
        CMapM<T> wm(w.data(), out_, in_);
        MapM<T> dxm(dx.data(), n, in_);
        dxm.noalias() = dym * wm;
        if (has_bias_)
            for (int i = 0; i < n; ++i)
                for (int c = 0; c < out_; ++c) bias_.g[c] += dy.at(i, c);
        accumulate_weight_grad(dweff);
    }

    std::vector<Param<T>*> params() override {
        std::vector<Param<T>*> out{&weight_};
        if (has_bias_) out.push_back(&bias_);
        return out;
    }
    std::vector<Tensor<T>*> buffers() override {
        if (!sn_) return {};
        return {&sn_u_, &sn_v_};
    }

    Param<T>& weight() { return weight_; }
    Param<T>& bias() { return bias_; }

private:
    const Tensor<T>& effective_weight(bool train) {
        if (!sn_) return weight_.v;
        CMapM<T> wm(weight_.v.data(), out_, in_);
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> u(sn_u_.data(), out_);
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> v(sn_v_.data(), in_);
        if (train) {
            v = (wm.transpose() * u).normalized();
            u = (wm * v).normalized();
        }
        sn_sigma_ = u.dot(wm * v);
        if (std::abs(double(sn_sigma_)) < 1e-12) sn_sigma_ = T(1e-12);
        w_sn_ = weight_.v;
        w_sn_.scale(T(1) / sn_sigma_);
        return w_sn_;
    }

    void accumulate_weight_grad(const Tensor<T>& dweff) {
        if (!sn_) {
            weight_.g.add(dweff);
            return;
        }
        T inner = 0;
        for (std::size_t i = 0; i < dweff.numel(); ++i) inner += dweff[i] * w_sn_[i];
        const T scale = inner / sn_sigma_;
        for (int r = 0; r < out_; ++r)
            for (int c = 0; c < in_; ++c)
                weight_.g[std::size_t(r) * in_ + c] +=
                    dweff[std::size_t(r) * in_ + c] / sn_sigma_ -
                    scale * sn_u_[r] * sn_v_[c];
    }

    int in_, out_;
    bool has_bias_, sn_;
    Param<T> weight_, bias_;
    Tensor<T> x_cache_, sn_u_, sn_v_, w_sn_;
    T sn_sigma_ = T(1);
};

// ---------------------------------------------------------------------------
// Batch normalization (optionally with a conditioning-vector shift)
// ---------------------------------------------------------------------------

template <class T>
class BatchNormLayer : public LayerObj<T> {
public:
    // cond_dim > 0 adds a learned per-channel shift W_h * h for a
    // per-sample conditioning vector passed as `second`.
    BatchNormLayer(int channels, int cond_dim = 0, double momentum = 0.1)
        : c_(channels), cond_dim_(cond_dim), momentum_(T(momentum)) {
        gamma_.init_shape({c_});
        gamma_.v.fill(T(1));
        beta_.init_shape({c_});
        running_mean_.resize({c_});
        running_var_.resize({c_});
        running_var_.fill(T(1));
        if (cond_dim_ > 0) cond_w_.init_shape({c_, cond_dim_});
    }

    void forward(const Tensor<T>& x, const Tensor<T>* second, Tensor<T>& y,
                 bool train) override {
        if (x.dim(1) != c_) throw DataError("batch_norm: channel mismatch");
        const int n = x.dim(0);
        const int hw = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
        const std::size_t per_c = std::size_t(n) * hw;
        in_dims_ = x.dims();
        train_ = train;
        xhat_.ensure(x.dims());
        y.ensure(x.dims());
        mean_.ensure({c_});
        invstd_.ensure({c_});

#pragma omp parallel for schedule(static)
        for (int c = 0; c < c_; ++c) {
            T mean, var;
            if (train) {
                T acc = 0, acc2 = 0;
                for_channel(x, c, [&](const T* p, int len) {
                    for (int j = 0; j < len; ++j) {
                        acc += p[j];
                        acc2 += p[j] * p[j];
                    }
                });
                mean = acc / T(per_c);
                var = std::max(T(0), acc2 / T(per_c) - mean * mean);
                running_mean_[c] = (T(1) - momentum_) * running_mean_[c] + momentum_ * mean;
                running_var_[c] = (T(1) - momentum_) * running_var_[c] + momentum_ * var;
            } else {
                mean = running_mean_[c];
                var = running_var_[c];
            }
            mean_[c] = mean;
            invstd_[c] = T(1) / std::sqrt(var + eps_);
            for (int i = 0; i < n; ++i) {
                const T* xs = x.data() + (std::size_t(i) * c_ + c) * hw;
                T* xh = xhat_.data() + (std::size_t(i) * c_ + c) * hw;
                T* ys = y.data() + (std::size_t(i) * c_ + c) * hw;
                T shift = beta_.v[c];
                if (cond_dim_ > 0) {
                    const T* h = second->data() + std::size_t(i) * cond_dim_;
                    const T* wrow = cond_w_.v.data() + std::size_t(c) * cond_dim_;
                    for (int j = 0; j < cond_dim_; ++j) shift += wrow[j] * h[j];
                }
                const T m = mean_[c], is = invstd_[c], gm = gamma_.v[c];
                for (int j = 0; j < hw; ++j) {
                    xh[j] = (xs[j] - m) * is;
                    ys[j] = gm * xh[j] + shift;
                }
            }
        }
        if (cond_dim_ > 0) h_cache_ = *second;
    }

    void backward(const Tensor<T>& dy, Tensor<T>& dx, Tensor<T>*) override {
        const int n = in_dims_[0];
        const int hw = in_dims_.size() == 4 ? in_dims_[2] * in_dims_[3] : 1;
        const std::size_t per_c = std::size_t(n) * hw;
        dx.ensure(in_dims_);

#pragma omp parallel for schedule(static)
        for (int c = 0; c < c_; ++c) {
            T sum_dy = 0, sum_dy_xh = 0;
            for (int i = 0; i < n; ++i) {
                const T* dys = dy.data() + (std::size_t(i) * c_ + c) * hw;
                const T* xh = xhat_.data() + (std::size_t(i) * c_ + c) * hw;
                for (int j = 0; j < hw; ++j) {
                    sum_dy += dys[j];
                    sum_dy_xh += dys[j] * xh[j];
                }
            }
            gamma_.g[c] += sum_dy_xh;
            beta_.g[c] += sum_dy;
            const T gm = gamma_.v[c], is = invstd_[c];
            if (train_) {
                const T mean_dy = sum_dy / T(per_c);
                const T mean_dy_xh = sum_dy_xh / T(per_c);
                for (int i = 0; i < n; ++i) {
                    const T* dys = dy.data() + (std::size_t(i) * c_ + c) * hw;
                    const T* xh = xhat_.data() + (std::size_t(i) * c_ + c) * hw;
                    T* dxs = dx.data() + (std::size_t(i) * c_ + c) * hw;
                    for (int j = 0; j < hw; ++j)
                        dxs[j] = gm * is * (dys[j] - mean_dy - xh[j] * mean_dy_xh);
                }
            } else {
                for (int i = 0; i < n; ++i) {
                    const T* dys = dy.data() + (std::size_t(i) * c_ + c) * hw;
                    T* dxs = dx.data() + (std::size_t(i) * c_ + c) * hw;
                    for (int j = 0; j < hw; ++j) dxs[j] = gm * is * dys[j];
                }
            }
        }
        if (cond_dim_ > 0) {
            for (int i = 0; i < n; ++i)
                for (int c = 0; c < c_; ++c) {
                    const T* dys = dy.data() + (std::size_t(i) * c_ + c) * hw;
                    T acc = 0;
                    for (int j = 0; j < hw; ++j) acc += dys[j];
                    const T* h = h_cache_.data() + std::size_t(i) * cond_dim_;
                    T* wg = cond_w_.g.data() + std::size_t(c) * cond_dim_;
                    for (int j = 0; j < cond_dim_; ++j) wg[j] += acc * h[j];
                }
        }
    }

    std::vector<Param<T>*> params() override {
        std::vector<Param<T>*> out{&gamma_, &beta_};
        if (cond_dim_ > 0) out.push_back(&cond_w_);
        return out;
    }
    std::vector<Tensor<T>*> buffers() override {
        return {&running_mean_, &running_var_};
    }

private:
    template <class F>
    void for_channel(const Tensor<T>& t, int c, F&& f) const {
        const int n = t.dim(0);
        const int hw = t.rank() == 4 ? t.dim(2) * t.dim(3) : 1;
        for (int i = 0; i < n; ++i)
            f(t.data() + (std::size_t(i) * c_ + c) * hw, hw);
    }

    int c_, cond_dim_;
    T momentum_;
    static constexpr T eps_ = T(1e-5);
    bool train_ = true;
    Param<T> gamma_, beta_, cond_w_;
    Tensor<T> running_mean_, running_var_;
    std::vector<int> in_dims_;
    Tensor<T> xhat_, mean_, invstd_, h_cache_;
};

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <class T>
class ActivationLayer : public LayerObj<T> {
public:
    explicit ActivationLayer(ActKind kind, double alpha = 0.0)
        : kind_(kind), alpha_(T(alpha)) {}

    void forward(const Tensor<T>& x, const Tensor<T>*, Tensor<T>& y, bool) override {
        y.ensure(x.dims());
        switch (kind_) {
            case ActKind::ReLU:
                for (std::size_t i = 0; i < x.numel(); ++i)
                    y[i] = x[i] > T(0) ? x[i] : T(0);
                break;
            case ActKind::ReLU6:
                for (std::size_t i = 0; i < x.numel(); ++i)
                    y[i] = x[i] < T(0) ? T(0) : (x[i] > T(6) ? T(6) : x[i]);
                break;
            case ActKind::LeakyReLU:
                for (std::size_t i = 0; i < x.numel(); ++i)
                    y[i] = x[i] > T(0) ? x[i] : alpha_ * x[i];
                break;
            case ActKind::Sigmoid:
                for (std::size_t i = 0; i < x.numel(); ++i)
                    y[i] = T(1) / (T(1) + std::exp(-x[i]));
                break;
            case ActKind::Tanh:
                for (std::size_t i = 0; i < x.numel(); ++i) y[i] = std::tanh(x[i]);
                break;
        }
        y_cache_ = y;  // masks are recoverable from the output alone
    }

    void backward(const Tensor<T>& dy, Tensor<T>& dx, Tensor<T>*) override {
        dx.ensure(dy.dims());
        switch (kind_) {
            case ActKind::ReLU:
            case ActKind::LeakyReLU:
                for (std::size_t i = 0; i < dy.numel(); ++i)
                    dx[i] = y_cache_[i] > T(0) ? dy[i] : alpha_ * dy[i];
                break;
            case ActKind::ReLU6:
                for (std::size_t i = 0; i < dy.numel(); ++i)
                    dx[i] = (y_cache_[i] > T(0) && y_cache_[i] < T(6)) ? dy[i] : T(0);
                break;
            case ActKind::Sigmoid:
                for (std::size_t i = 0; i < dy.numel(); ++i)
                    dx[i] = dy[i] * y_cache_[i] * (T(1) - y_cache_[i]);
                break;
            case ActKind::Tanh:
                for (std::size_t i = 0; i < dy.numel(); ++i)
                    dx[i] = dy[i] * (T(1) - y_cache_[i] * y_cache_[i]);
                break;
        }
    }

private:
    ActKind kind_;
    T alpha_;  // leaky slope; zero for plain relu
    Tensor<T> y_cache_;
};

// Numerically stable softplus output, used by the density ratio head.
template <class T>
class SoftplusLayer : public LayerObj<T> {
public:
    void forward(const Tensor<T>& x, const Tensor<T>*, Tensor<T>& y, bool) override {
        y.resize(x.dims());
        for (std::size_t i = 0; i < x.numel(); ++i) {
            const T v = x[i];
            y[i] = v > T(20) ? v : std::log1p(std::exp(v));
        }
        x_cache_ = x;
    }
    void backward(const Tensor<T>& dy, Tensor<T>& dx, Tensor<T>*) override {
        dx.resize(dy.dims());
        for (std::size_t i = 0; i < dy.numel(); ++i)
            dx[i] = dy[i] / (T(1) + std::exp(-x_cache_[i]));
    }

private:
    Tensor<T> x_cache_;
};

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

template <class T>
class PoolLayer : public LayerObj<T> {
public:
    PoolLayer(PoolOp op, int k, int s, int p) : op_(op), k_(k), s_(s), p_(p) {}

    void forward(const Tensor<T>& x, const Tensor<T>*, Tensor<T>& y, bool) override {
        const int n = x.dim(0), c = x.dim(1), ih = x.dim(2), iw = x.dim(3);
        oh_ = (ih + 2 * p_ - k_) / s_ + 1;
        ow_ = (iw + 2 * p_ - k_) / s_ + 1;
        in_dims_ = x.dims();
        y.resize({n, c, oh_, ow_});
        if (op_ == PoolOp::Max) argmax_.assign(y.numel(), -1);
        std::size_t oi = 0;
        for (int i = 0; i < n; ++i)
            for (int ch = 0; ch < c; ++ch) {
                const T* xs = x.data() + (std::size_t(i) * c + ch) * ih * iw;
                for (int oh = 0; oh < oh_; ++oh)
                    for (int ow = 0; ow < ow_; ++ow, ++oi) {
                        if (op_ == PoolOp::Max) {
                            T best = -std::numeric_limits<T>::infinity();
                            int best_idx = -1;
                            for (int kh = 0; kh < k_; ++kh) {
                                const int ihh = oh * s_ - p_ + kh;
                                if (ihh < 0 || ihh >= ih) continue;
                                for (int kw = 0; kw < k_; ++kw) {
                                    const int iww = ow * s_ - p_ + kw;
                                    if (iww < 0 || iww >= iw) continue;
                                    const T v = xs[std::size_t(ihh) * iw + iww];
                                    if (v > best) {
                                        best = v;
                                        best_idx = ihh * iw + iww;
                                    }
                                }
                            }
                            y[oi] = best;
                            argmax_[oi] = best_idx;
                        } else {
                            T acc = 0;
                            for (int kh = 0; kh < k_; ++kh) {
                                const int ihh = oh * s_ - p_ + kh;
                                if (ihh < 0 || ihh >= ih) continue;
                                for (int kw = 0; kw < k_; ++kw) {
                                    const int iww = ow * s_ - p_ + kw;
                                    if (iww < 0 || iww >= iw) continue;
                                    acc += xs[std::size_t(ihh) * iw + iww];
                                }
                            }
                            y[oi] = acc / T(k_ * k_);
                        }
                    }
            }
    }

    void backward(const Tensor<T>& dy, Tensor<T>& dx, Tensor<T>*) override {
        const int n = in_dims_[0], c = in_dims_[1], ih = in_dims_[2], iw = in_dims_[3];
        dx.resize(in_dims_);
        std::size_t oi = 0;
        for (int i = 0; i < n; ++i)
            for (int ch = 0; ch < c; ++ch) {
                T* dxs = dx.data() + (std::size_t(i) * c + ch) * ih * iw;
                for (int oh = 0; oh < oh_; ++oh)
                    for (int ow = 0; ow < ow_; ++ow, ++oi) {
                        if (op_ == PoolOp::Max) {
                            if (argmax_[oi] >= 0) dxs[argmax_[oi]] += dy[oi];
                        } else {
                            const T g = dy[oi] / T(k_ * k_);
                            for (int kh = 0; kh < k_; ++kh) {
                                const int ihh = oh * s_ - p_ + kh;
                                if (ihh < 0 || ihh >= ih) continue;
                                for (int kw = 0; kw < k_; ++kw) {
                                    const int iww = ow * s_ - p_ + kw;
                                    if (iww < 0 || iww >= iw) continue;
                                    dxs[std::size_t(ihh) * iw + iww] += g;
                                }
                            }
                        }
                    }
            }
    }

private:
    PoolOp op_;
    int k_, s_, p_;
    int oh_ = 0, ow_ = 0;
    std::vector<int> in_dims_;
    std::vector<int> argmax_;
};

template <class T>
class GlobalAvgPoolLayer : public LayerObj<T> {
public:
    void forward(const Tensor<T>& x, const Tensor<T>*, Tensor<T>& y, bool) override {
        const int n = x.dim(0), c = x.dim(1);
        hw_ = x.dim(2) * x.dim(3);
        in_dims_ = x.dims();
        y.resize({n, c, 1, 1});
        for (int i = 0; i < n; ++i)
            for (int ch = 0; ch < c; ++ch) {
                const T* xs = x.data() + (std::size_t(i) * c + ch) * hw_;
                T acc = 0;
                for (int j = 0; j < hw_; ++j) acc += xs[j];
                y.at(i, ch, 0, 0) = acc / T(hw_);
            }
    }
    void backward(const Tensor<T>& dy, Tensor<T>& dx, Tensor<T>*) override {
        const int n = in_dims_[0], c = in_dims_[1];
        dx.resize(in_dims_);
        for (int i = 0; i < n; ++i)
            for (int ch = 0; ch < c; ++ch) {
                const T g = dy.at(i, ch, 0, 0) / T(hw_);
                T* dxs = dx.data() + (std::size_t(i) * c + ch) * hw_;
                for (int j = 0; j < hw_; ++j) dxs[j] = g;
            }
    }

private:
    int hw_ = 0;
    std::vector<int> in_dims_;
};

// Average pool to a fixed output size; used by feature adapters when the
// student/teacher spatial ratio is not an integer stride.
template <class T>
class AdaptiveAvgPoolLayer : public LayerObj<T> {
public:
    explicit AdaptiveAvgPoolLayer(int out_h, int out_w) : oh_(out_h), ow_(out_w) {}

    void forward(const Tensor<T>& x, const Tensor<T>*, Tensor<T>& y, bool) override {
        const int n = x.dim(0), c = x.dim(1), ih = x.dim(2), iw = x.dim(3);
        in_dims_ = x.dims();
        y.resize({n, c, oh_, ow_});
        for (int i = 0; i < n; ++i)
            for (int ch = 0; ch < c; ++ch) {
                const T* xs = x.data() + (std::size_t(i) * c + ch) * ih * iw;
                for (int oh = 0; oh < oh_; ++oh) {
                    const int h0 = oh * ih / oh_, h1 = (oh + 1) * ih / oh_ + ((oh + 1) * ih % oh_ ? 1 : 0);
                    for (int ow = 0; ow < ow_; ++ow) {
                        const int w0 = ow * iw / ow_, w1 = (ow + 1) * iw / ow_ + ((ow + 1) * iw % ow_ ? 1 : 0);
                        T acc = 0;
                        for (int hh = h0; hh < h1; ++hh)
                            for (int ww = w0; ww < w1; ++ww)
                                acc += xs[std::size_t(hh) * iw + ww];
                        y.at(i, ch, oh, ow) = acc / T((h1 - h0) * (w1 - w0));
                    }
                }
            }
    }

    void backward(const Tensor<T>& dy, Tensor<T>& dx, Tensor<T>*) override {
        const int n = in_dims_[0], c = in_dims_[1], ih = in_dims_[2], iw = in_dims_[3];
        dx.resize(in_dims_);
        for (int i = 0; i < n; ++i)
            for (int ch = 0; ch < c; ++ch) {
                T* dxs = dx.data() + (std::size_t(i) * c + ch) * ih * iw;
                for (int oh = 0; oh < oh_; ++oh) {
                    const int h0 = oh * ih / oh_, h1 = (oh + 1) * ih / oh_ + ((oh + 1) * ih % oh_ ? 1 : 0);
                    for (int ow = 0; ow < ow_; ++ow) {
                        const int w0 = ow * iw / ow_, w1 = (ow + 1) * iw / ow_ + ((ow + 1) * iw % ow_ ? 1 : 0);
                        const T g = dy.at(i, ch, oh, ow) / T((h1 - h0) * (w1 - w0));
                        for (int hh = h0; hh < h1; ++hh)
                            for (int ww = w0; ww < w1; ++ww)
                                dxs[std::size_t(hh) * iw + ww] += g;
                    }
                }
            }
    }

private:
    int oh_, ow_;
    std::vector<int> in_dims_;
};

// ---------------------------------------------------------------------------
// Structural layers
// ---------------------------------------------------------------------------

template <class T>
class AddLayer : public LayerObj<T> {
public:
    void forward(const Tensor<T>& x, const Tensor<T>* second, Tensor<T>& y,
                 bool) override {
        if (!second || !x.same_shape(*second))
            throw DataError("add_residual: operand shapes differ");
        y = x;
        y.add(*second);
    }
    void backward(const Tensor<T>& dy, Tensor<T>& dx, Tensor<T>* dsecond) override {
        dx = dy;
        if (dsecond) *dsecond = dy;
    }
};

template <class T>
class ConcatLayer : public LayerObj<T> {
public:
    void forward(const Tensor<T>& x, const Tensor<T>* second, Tensor<T>& y,
                 bool) override {
        if (!second) throw DataError("concat: missing second operand");
        const int n = x.dim(0), c1 = x.dim(1), c2 = second->dim(1);
        const int h = x.dim(2), w = x.dim(3);
        c1_ = c1;
        c2_ = c2;
        y.resize({n, c1 + c2, h, w});
        const std::size_t plane = std::size_t(h) * w;
        for (int i = 0; i < n; ++i) {
            std::copy_n(x.data() + std::size_t(i) * c1 * plane, c1 * plane,
                        y.data() + std::size_t(i) * (c1 + c2) * plane);
            std::copy_n(second->data() + std::size_t(i) * c2 * plane, c2 * plane,
                        y.data() + (std::size_t(i) * (c1 + c2) + c1) * plane);
        }
    }
    void backward(const Tensor<T>& dy, Tensor<T>& dx, Tensor<T>* dsecond) override {
        const int n = dy.dim(0), h = dy.dim(2), w = dy.dim(3);
        const std::size_t plane = std::size_t(h) * w;
        dx.resize({n, c1_, h, w});
        if (dsecond) dsecond->resize({n, c2_, h, w});
        for (int i = 0; i < n; ++i) {
            std::copy_n(dy.data() + std::size_t(i) * (c1_ + c2_) * plane, c1_ * plane,
                        dx.data() + std::size_t(i) * c1_ * plane);
            if (dsecond)
                std::copy_n(dy.data() + (std::size_t(i) * (c1_ + c2_) + c1_) * plane,
                            c2_ * plane, dsecond->data() + std::size_t(i) * c2_ * plane);
        }
    }

private:
    int c1_ = 0, c2_ = 0;
};

template <class T>
class SliceLayer : public LayerObj<T> {
public:
    SliceLayer(int begin, int count) : begin_(begin), count_(count) {}

    void forward(const Tensor<T>& x, const Tensor<T>*, Tensor<T>& y, bool) override {
        const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        in_c_ = c;
        const std::size_t plane = std::size_t(h) * w;
        y.resize({n, count_, h, w});
        for (int i = 0; i < n; ++i)
            std::copy_n(x.data() + (std::size_t(i) * c + begin_) * plane,
                        count_ * plane, y.data() + std::size_t(i) * count_ * plane);
    }
    void backward(const Tensor<T>& dy, Tensor<T>& dx, Tensor<T>*) override {
        const int n = dy.dim(0), h = dy.dim(2), w = dy.dim(3);
        const std::size_t plane = std::size_t(h) * w;
        dx.resize({n, in_c_, h, w});
        for (int i = 0; i < n; ++i)
            std::copy_n(dy.data() + std::size_t(i) * count_ * plane, count_ * plane,
                        dx.data() + (std::size_t(i) * in_c_ + begin_) * plane);
    }

private:
    int begin_, count_;
    int in_c_ = 0;
};

template <class T>
class ChannelShuffleLayer : public LayerObj<T> {
public:
    explicit ChannelShuffleLayer(int groups) : g_(groups) {}

    void forward(const Tensor<T>& x, const Tensor<T>*, Tensor<T>& y, bool) override {
        const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        c_ = c;
        const int per = c / g_;
        const std::size_t plane = std::size_t(h) * w;
        y.resize(x.dims());
        // view (g, per) transposed to (per, g)
        for (int i = 0; i < n; ++i)
            for (int src = 0; src < c; ++src) {
                const int grp = src / per, j = src % per;
                const int dst = j * g_ + grp;
                std::copy_n(x.data() + (std::size_t(i) * c + src) * plane, plane,
                            y.data() + (std::size_t(i) * c + dst) * plane);
            }
    }
    void backward(const Tensor<T>& dy, Tensor<T>& dx, Tensor<T>*) override {
        const int n = dy.dim(0), h = dy.dim(2), w = dy.dim(3);
        const int per = c_ / g_;
        const std::size_t plane = std::size_t(h) * w;
        dx.resize(dy.dims());
        for (int i = 0; i < n; ++i)
            for (int src = 0; src < c_; ++src) {
                const int grp = src / per, j = src % per;
                const int dst = j * g_ + grp;
                std::copy_n(dy.data() + (std::size_t(i) * c_ + dst) * plane, plane,
                            dx.data() + (std::size_t(i) * c_ + src) * plane);
            }
    }

private:
    int g_;
    int c_ = 0;
};

// Nearest-neighbor 2x upsampling, used by the generator.
template <class T>
class Upsample2xLayer : public LayerObj<T> {
public:
    void forward(const Tensor<T>& x, const Tensor<T>*, Tensor<T>& y, bool) override {
        const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        in_dims_ = x.dims();
        y.resize({n, c, 2 * h, 2 * w});
        for (int i = 0; i < n; ++i)
            for (int ch = 0; ch < c; ++ch) {
                const T* xs = x.data() + (std::size_t(i) * c + ch) * h * w;
                T* ys = y.data() + (std::size_t(i) * c + ch) * 4 * h * w;
                for (int r = 0; r < h; ++r)
                    for (int col = 0; col < w; ++col) {
                        const T v = xs[std::size_t(r) * w + col];
                        T* base = ys + (std::size_t(2 * r) * 2 * w + 2 * col);
                        base[0] = v;
                        base[1] = v;
                        base[2 * w] = v;
                        base[2 * w + 1] = v;
                    }
            }
    }
    void backward(const Tensor<T>& dy, Tensor<T>& dx, Tensor<T>*) override {
        const int n = in_dims_[0], c = in_dims_[1], h = in_dims_[2], w = in_dims_[3];
        dx.resize(in_dims_);
        for (int i = 0; i < n; ++i)
            for (int ch = 0; ch < c; ++ch) {
                const T* dys = dy.data() + (std::size_t(i) * c + ch) * 4 * h * w;
                T* dxs = dx.data() + (std::size_t(i) * c + ch) * h * w;
                for (int r = 0; r < h; ++r)
                    for (int col = 0; col < w; ++col) {
                        const T* base = dys + (std::size_t(2 * r) * 2 * w + 2 * col);
                        dxs[std::size_t(r) * w + col] =
                            base[0] + base[1] + base[2 * w] + base[2 * w + 1];
                    }
            }
    }

private:
    std::vector<int> in_dims_;
};

}  // namespace soapkd
