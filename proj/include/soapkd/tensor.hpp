#pragma once

#include <algorithm>
#include <array>
#include <cassert>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "soapkd/rng.hpp"

namespace soapkd {

// Dense row-major tensor, rank <= 4. Batches are NCHW; vectors are {N, D}.
template <class T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::initializer_list<int> dims) { resize(dims); }
    explicit Tensor(const std::vector<int>& dims) { resize(dims); }

    void resize(std::initializer_list<int> dims) {
        resize(std::vector<int>(dims));
    }
    void resize(const std::vector<int>& dims) {
        assert(dims.size() >= 1 && dims.size() <= 4);
        dims_ = dims;
        std::size_t n = 1;
        for (const int d : dims_) n *= static_cast<std::size_t>(d);
        data_.assign(n, T(0));
    }
    // Like resize but leaves contents unspecified; for buffers that are
    // fully overwritten right after.
    void ensure(const std::vector<int>& dims) {
        std::size_t n = 1;
        for (const int d : dims) n *= static_cast<std::size_t>(d);
        dims_ = dims;
        data_.resize(n);
    }
    void ensure(std::initializer_list<int> dims) { ensure(std::vector<int>(dims)); }

    bool empty() const { return data_.empty(); }
    std::size_t numel() const { return data_.size(); }
    int rank() const { return static_cast<int>(dims_.size()); }
    int dim(int i) const { return dims_[static_cast<std::size_t>(i)]; }
    const std::vector<int>& dims() const { return dims_; }

    bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    // NCHW addressing.
    T& at(int n, int c, int h, int w) {
        return data_[idx(n, c, h, w)];
    }
    const T& at(int n, int c, int h, int w) const {
        return data_[idx(n, c, h, w)];
    }
    // {N, D} addressing.
    T& at(int n, int d) { return data_[std::size_t(n) * dims_[1] + d]; }
    const T& at(int n, int d) const { return data_[std::size_t(n) * dims_[1] + d]; }
    // {C, H, W} addressing for single images.
    T& at3(int c, int h, int w) {
        return data_[(std::size_t(c) * dims_[1] + h) * dims_[2] + w];
    }
    const T& at3(int c, int h, int w) const {
        return data_[(std::size_t(c) * dims_[1] + h) * dims_[2] + w];
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
    void zero() { fill(T(0)); }

    void fill_normal(Rng& rng, double mean, double stddev) {
        for (auto& x : data_) x = static_cast<T>(rng.normal(mean, stddev));
    }
    void fill_uniform(Rng& rng, double lo, double hi) {
        for (auto& x : data_) x = static_cast<T>(rng.uniform(lo, hi));
    }

    void add(const Tensor& o) {
        assert(numel() == o.numel());
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    }
    void scale(T s) {
        for (auto& x : data_) x *= s;
    }

    T sum() const { return std::accumulate(data_.begin(), data_.end(), T(0)); }

    // View the same storage under a different shape (numel must match).
    Tensor reshaped(const std::vector<int>& dims) const {
        Tensor out;
        out.dims_ = dims;
        out.data_ = data_;
        std::size_t n = 1;
        for (const int d : dims) n *= static_cast<std::size_t>(d);
        assert(n == data_.size());
        return out;
    }

    // Slice of the leading (batch) dimension: samples [begin, begin+count).
    Tensor batch_slice(int begin, int count) const {
        std::vector<int> d = dims_;
        d[0] = count;
        Tensor out(d);
        const std::size_t stride = numel() / static_cast<std::size_t>(dims_[0]);
        std::copy_n(data_.begin() + std::size_t(begin) * stride,
                    std::size_t(count) * stride, out.data_.begin());
        return out;
    }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.resize(dims_);
        for (std::size_t i = 0; i < data_.size(); ++i)
            out[i] = static_cast<U>(data_[i]);
        return out;
    }

private:
    std::size_t idx(int n, int c, int h, int w) const {
        return ((std::size_t(n) * dims_[1] + c) * dims_[2] + h) * dims_[3] + w;
    }

    std::vector<int> dims_;
    std::vector<T> data_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

}  // namespace soapkd
