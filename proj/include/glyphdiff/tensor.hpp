// Copyright (c) 2026 The glyphdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "glyphdiff/errors.hpp"
#include "glyphdiff/random.hpp"

namespace glyphdiff {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) {
        if (d < 0) throw UsageError("negative dimension in shape");
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

/// Dense row-major tensor with value semantics. The scalar type is a
/// template parameter: float for training/inference, double where
/// finite-difference accuracy matters.
template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(static_cast<size_t>(shape_numel(shape)), T(0)) {}
    Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
        if (static_cast<int64_t>(data.size()) != shape_numel(shape))
            throw UsageError("tensor data size does not match shape " + shape_str(shape));
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

    static Tensor full(Shape s, T v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    static Tensor randn(Shape s, Rng& rng, T stddev = T(1), T mean = T(0)) {
        Tensor t(std::move(s));
        for (auto& x : t.data) x = mean + stddev * static_cast<T>(rng.gaussian());
        return t;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int64_t dim(int i) const { return shape.at(static_cast<size_t>(i)); }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    Tensor reshaped(Shape s) const {
        if (shape_numel(s) != numel())
            throw UsageError("reshape " + shape_str(shape) + " -> " + shape_str(s) + ": element count differs");
        Tensor t;
        t.shape = std::move(s);
        t.data = data;
        return t;
    }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    T max_abs() const {
        T m = 0;
        for (T v : data) m = std::max(m, static_cast<T>(std::abs(v)));
        return m;
    }

    T max_abs_diff(const Tensor& o) const {
        if (!same_shape(o)) throw UsageError("max_abs_diff: shape mismatch");
        T m = 0;
        for (int64_t i = 0; i < numel(); ++i) m = std::max(m, static_cast<T>(std::abs(data[i] - o.data[i])));
        return m;
    }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    void add_(const Tensor& o) {
        if (!same_shape(o)) throw UsageError("add_: shape mismatch");
        for (int64_t i = 0; i < numel(); ++i) data[i] += o.data[i];
    }

    void axpy_(T alpha, const Tensor& o) {
        if (!same_shape(o)) throw UsageError("axpy_: shape mismatch");
        for (int64_t i = 0; i < numel(); ++i) data[i] += alpha * o.data[i];
    }

    void scale_(T alpha) {
        for (auto& v : data) v *= alpha;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> t;
        t.shape = shape;
        t.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) t.data[i] = static_cast<U>(data[i]);
        return t;
    }
};

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

namespace detail {
template <typename T>
using EigenRowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<EigenRowMajor<T>>;
template <typename T>
using CMapRM = Eigen::Map<const EigenRowMajor<T>>;
}  // namespace detail

/// C[M,N] = A[M,K] * B[K,N] (all row-major contiguous); += if accumulate.
template <typename T>
inline void gemm(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate = false) {
    detail::CMapRM<T> A(a, m, k);
    detail::CMapRM<T> B(b, k, n);
    detail::MapRM<T> C(c, m, n);
    if (accumulate)
        C.noalias() += A * B;
    else
        C.noalias() = A * B;
}

/// C[M,N] = A[M,K] * B^T, where B is stored as [N,K].
template <typename T>
inline void gemm_nt(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate = false) {
    detail::CMapRM<T> A(a, m, k);
    detail::CMapRM<T> B(b, n, k);
    detail::MapRM<T> C(c, m, n);
    if (accumulate)
        C.noalias() += A * B.transpose();
    else
        C.noalias() = A * B.transpose();
}

/// C[M,N] = A^T * B, where A is stored as [K,M].
template <typename T>
inline void gemm_tn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate = false) {
    detail::CMapRM<T> A(a, k, m);
    detail::CMapRM<T> B(b, k, n);
    detail::MapRM<T> C(c, m, n);
    if (accumulate)
        C.noalias() += A.transpose() * B;
    else
        C.noalias() = A.transpose() * B;
}

}  // namespace glyphdiff
