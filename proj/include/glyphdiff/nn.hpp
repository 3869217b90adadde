// Copyright (c) 2026 The glyphdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "glyphdiff/autograd.hpp"
#include "glyphdiff/tensor.hpp"

// Differentiable building blocks. Each op computes its forward value
// eagerly and, when a tape is supplied and an input wants gradients,
// records a closure that accumulates into the inputs' grad buffers.
// Batch loops that run under OpenMP only ever write disjoint slices;
// cross-image reductions (weight gradients) happen afterwards in fixed
// image order, so results are bit-identical for any thread count.

namespace glyphdiff::nn {

template <typename T>
Var<T> add(Tape<T>* tape, const Var<T>& a, const Var<T>& b) {
    if (!a->value.same_shape(b->value)) throw UsageError("add: shape mismatch");
    auto out = make_var(Tensor<T>(a->value.shape));
    for (int64_t i = 0; i < out->value.numel(); ++i) out->value[i] = a->value[i] + b->value[i];
    if (detail::setup_grads(tape, out, a, b)) {
        tape->record([a, b, out] {
            if (a->requires_grad) a->grad.add_(out->grad);
            if (b->requires_grad) b->grad.add_(out->grad);
        });
    }
    return out;
}

template <typename T>
Var<T> mul_scalar(Tape<T>* tape, const Var<T>& a, T s) {
    auto out = make_var(Tensor<T>(a->value.shape));
    for (int64_t i = 0; i < out->value.numel(); ++i) out->value[i] = s * a->value[i];
    if (detail::setup_grads(tape, out, a)) {
        tape->record([a, out, s] { a->grad.axpy_(s, out->grad); });
    }
    return out;
}

template <typename T>
Var<T> reshape(Tape<T>* tape, const Var<T>& a, Shape shape) {
    auto out = make_var(a->value.reshaped(std::move(shape)));
    if (detail::setup_grads(tape, out, a)) {
        tape->record([a, out] {
            for (int64_t i = 0; i < a->grad.numel(); ++i) a->grad[i] += out->grad[i];
        });
    }
    return out;
}

template <typename T>
Var<T> silu(Tape<T>* tape, const Var<T>& x) {
    const int64_t n = x->value.numel();
    auto out = make_var(Tensor<T>(x->value.shape));
    std::vector<T> sig(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const T s = T(1) / (T(1) + std::exp(-x->value[i]));
        sig[static_cast<size_t>(i)] = s;
        out->value[i] = x->value[i] * s;
    }
    if (detail::setup_grads(tape, out, x)) {
        tape->record([x, out, sig = std::move(sig)] {
            for (int64_t i = 0; i < x->grad.numel(); ++i) {
                const T s = sig[static_cast<size_t>(i)];
                const T d = s * (T(1) + x->value[i] * (T(1) - s));
                x->grad[i] += out->grad[i] * d;
            }
        });
    }
    return out;
}

/// y[M,N] = x[M,K] * w[N,K]^T (+ bias[N]). Pass bias = nullptr to skip.
/// The forward runs row by row so a sample's output never depends on what
/// else shares its batch; batched sampling stays bit-identical to
/// generating each lane alone.
template <typename T>
Var<T> linear(Tape<T>* tape, const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
    if (x->value.rank() != 2 || w->value.rank() != 2 || x->value.dim(1) != w->value.dim(1))
        throw UsageError("linear: incompatible shapes " + shape_str(x->value.shape) + " x " +
                         shape_str(w->value.shape));
    const int64_t m = x->value.dim(0), k = x->value.dim(1), n = w->value.dim(0);
    auto out = make_var(Tensor<T>({m, n}));
    for (int64_t r = 0; r < m; ++r)
        gemm_nt(x->value.ptr() + r * k, w->value.ptr(), out->value.ptr() + r * n, 1, k, n);
    if (bias) {
        if (bias->value.numel() != n) throw UsageError("linear: bias size mismatch");
        for (int64_t r = 0; r < m; ++r)
            for (int64_t c = 0; c < n; ++c) out->value[r * n + c] += bias->value[c];
    }
    const bool recorded = bias ? detail::setup_grads(tape, out, x, w, bias)
                               : detail::setup_grads(tape, out, x, w);
    if (recorded) {
        tape->record([x, w, bias, out, m, k, n] {
            if (x->requires_grad) gemm(out->grad.ptr(), w->value.ptr(), x->grad.ptr(), m, n, k, true);
            if (w->requires_grad) gemm_tn(out->grad.ptr(), x->value.ptr(), w->grad.ptr(), n, m, k, true);
            if (bias && bias->requires_grad) {
                for (int64_t r = 0; r < m; ++r)
                    for (int64_t c = 0; c < n; ++c) bias->grad[c] += out->grad[r * n + c];
            }
        });
    }
    return out;
}

/// c[M,N] = a[M,K] * b[K,N].
template <typename T>
Var<T> matmul(Tape<T>* tape, const Var<T>& a, const Var<T>& b) {
    if (a->value.rank() != 2 || b->value.rank() != 2 || a->value.dim(1) != b->value.dim(0))
        throw UsageError("matmul: incompatible shapes");
    const int64_t m = a->value.dim(0), k = a->value.dim(1), n = b->value.dim(1);
    auto out = make_var(Tensor<T>({m, n}));
    gemm(a->value.ptr(), b->value.ptr(), out->value.ptr(), m, k, n);
    if (detail::setup_grads(tape, out, a, b)) {
        tape->record([a, b, out, m, k, n] {
            if (a->requires_grad) gemm_nt(out->grad.ptr(), b->value.ptr(), a->grad.ptr(), m, n, k, true);
            if (b->requires_grad) gemm_tn(a->value.ptr(), out->grad.ptr(), b->grad.ptr(), k, m, n, true);
        });
    }
    return out;
}

namespace convdetail {

struct ConvDims {
    int64_t batch, cin, h, w, cout, kh, kw, oh, ow;
    int stride, pad;
    int64_t k() const { return cin * kh * kw; }
    int64_t p() const { return oh * ow; }
};

template <typename T>
inline void im2col(const T* img, const ConvDims& d, T* cols) {
    const int64_t P = d.p();
    for (int64_t c = 0; c < d.cin; ++c) {
        for (int64_t ki = 0; ki < d.kh; ++ki) {
            for (int64_t kj = 0; kj < d.kw; ++kj) {
                T* row = cols + ((c * d.kh + ki) * d.kw + kj) * P;
                for (int64_t oy = 0; oy < d.oh; ++oy) {
                    const int64_t iy = oy * d.stride - d.pad + ki;
                    T* dst = row + oy * d.ow;
                    if (iy < 0 || iy >= d.h) {
                        std::fill(dst, dst + d.ow, T(0));
                        continue;
                    }
                    const T* src = img + (c * d.h + iy) * d.w;
                    for (int64_t ox = 0; ox < d.ow; ++ox) {
                        const int64_t ix = ox * d.stride - d.pad + kj;
                        dst[ox] = (ix >= 0 && ix < d.w) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
inline void col2im_add(const T* cols, const ConvDims& d, T* img) {
    const int64_t P = d.p();
    for (int64_t c = 0; c < d.cin; ++c) {
        for (int64_t ki = 0; ki < d.kh; ++ki) {
            for (int64_t kj = 0; kj < d.kw; ++kj) {
                const T* row = cols + ((c * d.kh + ki) * d.kw + kj) * P;
                for (int64_t oy = 0; oy < d.oh; ++oy) {
                    const int64_t iy = oy * d.stride - d.pad + ki;
                    if (iy < 0 || iy >= d.h) continue;
                    T* dst = img + (c * d.h + iy) * d.w;
                    const T* src = row + oy * d.ow;
                    for (int64_t ox = 0; ox < d.ow; ++ox) {
                        const int64_t ix = ox * d.stride - d.pad + kj;
                        if (ix >= 0 && ix < d.w) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

}  // namespace convdetail

/// 2-D convolution, NCHW, square kernel given by the weight shape.
template <typename T>
Var<T> conv2d(Tape<T>* tape, const Var<T>& x, const Var<T>& w, const Var<T>& bias, int stride = 1,
              int pad = 1) {
    if (x->value.rank() != 4 || w->value.rank() != 4) throw UsageError("conv2d: expects 4-D tensors");
    if (x->value.dim(1) != w->value.dim(1))
        throw UsageError("conv2d: input channels " + std::to_string(x->value.dim(1)) +
                         " != weight channels " + std::to_string(w->value.dim(1)));
    convdetail::ConvDims d;
    d.batch = x->value.dim(0);
    d.cin = x->value.dim(1);
    d.h = x->value.dim(2);
    d.w = x->value.dim(3);
    d.cout = w->value.dim(0);
    d.kh = w->value.dim(2);
    d.kw = w->value.dim(3);
    d.stride = stride;
    d.pad = pad;
    d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
    d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
    if (d.oh < 1 || d.ow < 1) throw UsageError("conv2d: output would be empty");
    if (bias && bias->value.numel() != d.cout) throw UsageError("conv2d: bias size mismatch");

    const int64_t K = d.k(), P = d.p();
    auto out = make_var(Tensor<T>({d.batch, d.cout, d.oh, d.ow}));

#pragma omp parallel for schedule(static)
    for (int64_t b = 0; b < d.batch; ++b) {
        std::vector<T> cols(static_cast<size_t>(K * P));
        convdetail::im2col(x->value.ptr() + b * d.cin * d.h * d.w, d, cols.data());
        T* out_b = out->value.ptr() + b * d.cout * P;
        gemm(w->value.ptr(), cols.data(), out_b, d.cout, K, P);
        if (bias) {
            for (int64_t co = 0; co < d.cout; ++co) {
                const T bv = bias->value[co];
                for (int64_t p = 0; p < P; ++p) out_b[co * P + p] += bv;
            }
        }
    }

    const bool recorded = bias ? detail::setup_grads(tape, out, x, w, bias)
                               : detail::setup_grads(tape, out, x, w);
    if (recorded) {
        tape->record([x, w, bias, out, d, K, P] {
            std::vector<Tensor<T>> dw_buf;
            const bool need_w = w->requires_grad;
            if (need_w) dw_buf.assign(static_cast<size_t>(d.batch), Tensor<T>(w->value.shape));
#pragma omp parallel for schedule(static)
            for (int64_t b = 0; b < d.batch; ++b) {
                std::vector<T> cols(static_cast<size_t>(K * P));
                convdetail::im2col(x->value.ptr() + b * d.cin * d.h * d.w, d, cols.data());
                const T* go_b = out->grad.ptr() + b * d.cout * P;
                if (need_w) gemm_nt(go_b, cols.data(), dw_buf[static_cast<size_t>(b)].ptr(), d.cout, P, K);
                if (x->requires_grad) {
                    std::vector<T> dcols(static_cast<size_t>(K * P));
                    gemm_tn(w->value.ptr(), go_b, dcols.data(), K, d.cout, P);
                    convdetail::col2im_add(dcols.data(), d, x->grad.ptr() + b * d.cin * d.h * d.w);
                }
            }
            if (need_w)
                for (int64_t b = 0; b < d.batch; ++b) w->grad.add_(dw_buf[static_cast<size_t>(b)]);
            if (bias && bias->requires_grad) {
                for (int64_t b = 0; b < d.batch; ++b) {
                    const T* go_b = out->grad.ptr() + b * d.cout * P;
                    for (int64_t co = 0; co < d.cout; ++co)
                        for (int64_t p = 0; p < P; ++p) bias->grad[co] += go_b[co * P + p];
                }
            }
        });
    }
    return out;
}

/// Group normalization over [B,C,H,W]; groups must divide C.
template <typename T>
Var<T> group_norm(Tape<T>* tape, const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, int groups,
                  T eps = T(1e-5)) {
    if (x->value.rank() != 4) throw UsageError("group_norm: expects 4-D input");
    const int64_t B = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
    if (groups < 1 || C % groups != 0) throw UsageError("group_norm: groups must divide channels");
    if (gamma->value.numel() != C || beta->value.numel() != C) throw UsageError("group_norm: affine size mismatch");
    const int64_t cpg = C / groups;
    const int64_t spatial = H * W;
    const int64_t n = cpg * spatial;

    auto out = make_var(Tensor<T>(x->value.shape));
    std::vector<T> means(static_cast<size_t>(B * groups)), invstds(static_cast<size_t>(B * groups));
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t g = 0; g < groups; ++g) {
            const T* xs = x->value.ptr() + (b * C + g * cpg) * spatial;
            double sum = 0.0, sq = 0.0;
            for (int64_t i = 0; i < n; ++i) {
                sum += xs[i];
                sq += static_cast<double>(xs[i]) * xs[i];
            }
            const double mean = sum / n;
            const double var = std::max(0.0, sq / n - mean * mean);
            const T invstd = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
            means[static_cast<size_t>(b * groups + g)] = static_cast<T>(mean);
            invstds[static_cast<size_t>(b * groups + g)] = invstd;
            T* ys = out->value.ptr() + (b * C + g * cpg) * spatial;
            for (int64_t c = 0; c < cpg; ++c) {
                const T ga = gamma->value[g * cpg + c];
                const T be = beta->value[g * cpg + c];
                for (int64_t s = 0; s < spatial; ++s) {
                    const T xh = (xs[c * spatial + s] - static_cast<T>(mean)) * invstd;
                    ys[c * spatial + s] = ga * xh + be;
                }
            }
        }
    }
    if (detail::setup_grads(tape, out, x, gamma, beta)) {
        tape->record([x, gamma, beta, out, B, C, groups, cpg, spatial, n, means = std::move(means),
                      invstds = std::move(invstds)] {
            for (int64_t b = 0; b < B; ++b) {
                for (int64_t g = 0; g < groups; ++g) {
                    const T mean = means[static_cast<size_t>(b * groups + g)];
                    const T invstd = invstds[static_cast<size_t>(b * groups + g)];
                    const T* xs = x->value.ptr() + (b * C + g * cpg) * spatial;
                    const T* go = out->grad.ptr() + (b * C + g * cpg) * spatial;
                    double sum_gi = 0.0, sum_gixh = 0.0;
                    for (int64_t c = 0; c < cpg; ++c) {
                        const T ga = gamma->value[g * cpg + c];
                        for (int64_t s = 0; s < spatial; ++s) {
                            const T xh = (xs[c * spatial + s] - mean) * invstd;
                            const T gi = go[c * spatial + s] * ga;
                            sum_gi += gi;
                            sum_gixh += static_cast<double>(gi) * xh;
                            if (gamma->requires_grad) gamma->grad[g * cpg + c] += go[c * spatial + s] * xh;
                            if (beta->requires_grad) beta->grad[g * cpg + c] += go[c * spatial + s];
                        }
                    }
                    if (x->requires_grad) {
                        const T m1 = static_cast<T>(sum_gi / n);
                        const T m2 = static_cast<T>(sum_gixh / n);
                        T* gx = x->grad.ptr() + (b * C + g * cpg) * spatial;
                        for (int64_t c = 0; c < cpg; ++c) {
                            const T ga = gamma->value[g * cpg + c];
                            for (int64_t s = 0; s < spatial; ++s) {
                                const T xh = (xs[c * spatial + s] - mean) * invstd;
                                const T gi = go[c * spatial + s] * ga;
                                gx[c * spatial + s] += invstd * (gi - m1 - xh * m2);
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

/// Adds a per-(batch, channel) vector across the spatial extent.
template <typename T>
Var<T> add_channel_vec(Tape<T>* tape, const Var<T>& x, const Var<T>& v) {
    if (x->value.rank() != 4 || v->value.rank() != 2 || x->value.dim(0) != v->value.dim(0) ||
        x->value.dim(1) != v->value.dim(1))
        throw UsageError("add_channel_vec: shape mismatch");
    const int64_t B = x->value.dim(0), C = x->value.dim(1), spatial = x->value.dim(2) * x->value.dim(3);
    auto out = make_var(Tensor<T>(x->value.shape));
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            const T add = v->value[b * C + c];
            const T* xs = x->value.ptr() + (b * C + c) * spatial;
            T* ys = out->value.ptr() + (b * C + c) * spatial;
            for (int64_t s = 0; s < spatial; ++s) ys[s] = xs[s] + add;
        }
    if (detail::setup_grads(tape, out, x, v)) {
        tape->record([x, v, out, B, C, spatial] {
            if (x->requires_grad) x->grad.add_(out->grad);
            if (v->requires_grad) {
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t c = 0; c < C; ++c) {
                        const T* go = out->grad.ptr() + (b * C + c) * spatial;
                        T acc = 0;
                        for (int64_t s = 0; s < spatial; ++s) acc += go[s];
                        v->grad[b * C + c] += acc;
                    }
            }
        });
    }
    return out;
}

template <typename T>
Var<T> concat_channels(Tape<T>* tape, const Var<T>& a, const Var<T>& b) {
    if (a->value.rank() != 4 || b->value.rank() != 4 || a->value.dim(0) != b->value.dim(0) ||
        a->value.dim(2) != b->value.dim(2) || a->value.dim(3) != b->value.dim(3))
        throw UsageError("concat_channels: shape mismatch");
    const int64_t B = a->value.dim(0), Ca = a->value.dim(1), Cb = b->value.dim(1);
    const int64_t spatial = a->value.dim(2) * a->value.dim(3);
    auto out = make_var(Tensor<T>({B, Ca + Cb, a->value.dim(2), a->value.dim(3)}));
    for (int64_t i = 0; i < B; ++i) {
        std::copy(a->value.ptr() + i * Ca * spatial, a->value.ptr() + (i + 1) * Ca * spatial,
                  out->value.ptr() + i * (Ca + Cb) * spatial);
        std::copy(b->value.ptr() + i * Cb * spatial, b->value.ptr() + (i + 1) * Cb * spatial,
                  out->value.ptr() + i * (Ca + Cb) * spatial + Ca * spatial);
    }
    if (detail::setup_grads(tape, out, a, b)) {
        tape->record([a, b, out, B, Ca, Cb, spatial] {
            for (int64_t i = 0; i < B; ++i) {
                const T* go = out->grad.ptr() + i * (Ca + Cb) * spatial;
                if (a->requires_grad) {
                    T* ga = a->grad.ptr() + i * Ca * spatial;
                    for (int64_t j = 0; j < Ca * spatial; ++j) ga[j] += go[j];
                }
                if (b->requires_grad) {
                    T* gb = b->grad.ptr() + i * Cb * spatial;
                    for (int64_t j = 0; j < Cb * spatial; ++j) gb[j] += go[Ca * spatial + j];
                }
            }
        });
    }
    return out;
}

template <typename T>
Var<T> upsample_nearest2(Tape<T>* tape, const Var<T>& x) {
    if (x->value.rank() != 4) throw UsageError("upsample_nearest2: expects 4-D input");
    const int64_t B = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
    auto out = make_var(Tensor<T>({B, C, 2 * H, 2 * W}));
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const T* src = x->value.ptr() + bc * H * W;
        T* dst = out->value.ptr() + bc * 4 * H * W;
        for (int64_t y = 0; y < 2 * H; ++y)
            for (int64_t x2 = 0; x2 < 2 * W; ++x2) dst[y * 2 * W + x2] = src[(y / 2) * W + x2 / 2];
    }
    if (detail::setup_grads(tape, out, x)) {
        tape->record([x, out, B, C, H, W] {
            for (int64_t bc = 0; bc < B * C; ++bc) {
                T* gx = x->grad.ptr() + bc * H * W;
                const T* go = out->grad.ptr() + bc * 4 * H * W;
                for (int64_t y = 0; y < 2 * H; ++y)
                    for (int64_t x2 = 0; x2 < 2 * W; ++x2) gx[(y / 2) * W + x2 / 2] += go[y * 2 * W + x2];
            }
        });
    }
    return out;
}

template <typename T>
Var<T> global_avg_pool(Tape<T>* tape, const Var<T>& x) {
    if (x->value.rank() != 4) throw UsageError("global_avg_pool: expects 4-D input");
    const int64_t B = x->value.dim(0), C = x->value.dim(1), spatial = x->value.dim(2) * x->value.dim(3);
    auto out = make_var(Tensor<T>({B, C}));
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const T* src = x->value.ptr() + bc * spatial;
        double acc = 0.0;
        for (int64_t s = 0; s < spatial; ++s) acc += src[s];
        out->value[bc] = static_cast<T>(acc / spatial);
    }
    if (detail::setup_grads(tape, out, x)) {
        tape->record([x, out, B, C, spatial] {
            for (int64_t bc = 0; bc < B * C; ++bc) {
                const T g = out->grad[bc] / static_cast<T>(spatial);
                T* gx = x->grad.ptr() + bc * spatial;
                for (int64_t s = 0; s < spatial; ++s) gx[s] += g;
            }
        });
    }
    return out;
}

/// Gather rows of an embedding table; backward scatter-adds.
template <typename T>
Var<T> embedding_rows(Tape<T>* tape, const Var<T>& table, std::vector<int> ids) {
    if (table->value.rank() != 2) throw UsageError("embedding_rows: table must be 2-D");
    const int64_t V = table->value.dim(0), D = table->value.dim(1);
    const int64_t n = static_cast<int64_t>(ids.size());
    for (int id : ids)
        if (id < 0 || id >= V) throw UsageError("embedding_rows: id " + std::to_string(id) + " out of range");
    auto out = make_var(Tensor<T>({n, D}));
    for (int64_t i = 0; i < n; ++i)
        std::copy(table->value.ptr() + ids[static_cast<size_t>(i)] * D,
                  table->value.ptr() + (ids[static_cast<size_t>(i)] + 1) * D, out->value.ptr() + i * D);
    if (detail::setup_grads(tape, out, table)) {
        tape->record([table, out, ids = std::move(ids), D] {
            for (size_t i = 0; i < ids.size(); ++i) {
                T* dst = table->grad.ptr() + static_cast<int64_t>(ids[i]) * D;
                const T* src = out->grad.ptr() + static_cast<int64_t>(i) * D;
                for (int64_t d = 0; d < D; ++d) dst[d] += src[d];
            }
        });
    }
    return out;
}

/// Vertically stacks two 2-D tables: [V1,D] + [V2,D] -> [V1+V2,D].
template <typename T>
Var<T> concat_rows(Tape<T>* tape, const Var<T>& a, const Var<T>& b) {
    if (a->value.rank() != 2 || b->value.rank() != 2 || a->value.dim(1) != b->value.dim(1))
        throw UsageError("concat_rows: column count mismatch");
    const int64_t v1 = a->value.dim(0), v2 = b->value.dim(0), D = a->value.dim(1);
    auto out = make_var(Tensor<T>({v1 + v2, D}));
    std::copy(a->value.data.begin(), a->value.data.end(), out->value.data.begin());
    std::copy(b->value.data.begin(), b->value.data.end(), out->value.data.begin() + static_cast<size_t>(v1 * D));
    if (detail::setup_grads(tape, out, a, b)) {
        tape->record([a, b, out, v1, v2, D] {
            if (a->requires_grad)
                for (int64_t i = 0; i < v1 * D; ++i) a->grad[i] += out->grad[i];
            if (b->requires_grad)
                for (int64_t i = 0; i < v2 * D; ++i) b->grad[i] += out->grad[v1 * D + i];
        });
    }
    return out;
}

/// Stacks three [B,D] token tensors into a [B,3,D] context sequence.
template <typename T>
Var<T> stack3(Tape<T>* tape, const Var<T>& t0, const Var<T>& t1, const Var<T>& t2) {
    if (t0->value.rank() != 2 || !t0->value.same_shape(t1->value) || !t0->value.same_shape(t2->value))
        throw UsageError("stack3: all tokens must share [B,D]");
    const int64_t B = t0->value.dim(0), D = t0->value.dim(1);
    auto out = make_var(Tensor<T>({B, 3, D}));
    const Var<T> parts[3] = {t0, t1, t2};
    for (int64_t b = 0; b < B; ++b)
        for (int s = 0; s < 3; ++s)
            std::copy(parts[s]->value.ptr() + b * D, parts[s]->value.ptr() + (b + 1) * D,
                      out->value.ptr() + (b * 3 + s) * D);
    if (detail::setup_grads(tape, out, t0, t1, t2)) {
        tape->record([t0, t1, t2, out, B, D] {
            const Var<T> parts[3] = {t0, t1, t2};
            for (int64_t b = 0; b < B; ++b)
                for (int s = 0; s < 3; ++s) {
                    if (!parts[s]->requires_grad) continue;
                    const T* src = out->grad.ptr() + (b * 3 + s) * D;
                    T* dst = parts[s]->grad.ptr() + b * D;
                    for (int64_t d = 0; d < D; ++d) dst[d] += src[d];
                }
        });
    }
    return out;
}

/// x[B,R,D] + rows[R,D], broadcast over the batch.
template <typename T>
Var<T> add_broadcast_rows(Tape<T>* tape, const Var<T>& x, const Var<T>& rows) {
    if (x->value.rank() != 3 || rows->value.rank() != 2 || x->value.dim(1) != rows->value.dim(0) ||
        x->value.dim(2) != rows->value.dim(1))
        throw UsageError("add_broadcast_rows: shape mismatch");
    const int64_t B = x->value.dim(0), RD = rows->value.numel();
    auto out = make_var(Tensor<T>(x->value.shape));
    for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < RD; ++i) out->value[b * RD + i] = x->value[b * RD + i] + rows->value[i];
    if (detail::setup_grads(tape, out, x, rows)) {
        tape->record([x, rows, out, B, RD] {
            if (x->requires_grad) x->grad.add_(out->grad);
            if (rows->requires_grad)
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t i = 0; i < RD; ++i) rows->grad[i] += out->grad[b * RD + i];
        });
    }
    return out;
}

/// Row-wise stable softmax on a [rows, cols] buffer.
template <typename T>
inline void softmax_rows(T* data, int64_t rows, int64_t cols) {
    for (int64_t r = 0; r < rows; ++r) {
        T* row = data + r * cols;
        T mx = row[0];
        for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
        T sum = 0;
        for (int64_t c = 0; c < cols; ++c) {
            row[c] = std::exp(row[c] - mx);
            sum += row[c];
        }
        for (int64_t c = 0; c < cols; ++c) row[c] /= sum;
    }
}

/// Plain single-head attention on raw matrices, returning the weighted sum
/// and the attention weights. Not differentiable; shared by the fused op's
/// forward path and used directly by tests.
template <typename T>
inline void scaled_dot_attention(const T* q, int64_t nq, const T* k, const T* v, int64_t nk, int64_t dh,
                                 T* out, T* weights) {
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    for (int64_t i = 0; i < nq; ++i)
        for (int64_t j = 0; j < nk; ++j) {
            T s = 0;
            for (int64_t d = 0; d < dh; ++d) s += q[i * dh + d] * k[j * dh + d];
            weights[i * nk + j] = s * scale;
        }
    softmax_rows(weights, nq, nk);
    for (int64_t i = 0; i < nq; ++i)
        for (int64_t d = 0; d < dh; ++d) {
            T s = 0;
            for (int64_t j = 0; j < nk; ++j) s += weights[i * nk + j] * v[j * dh + d];
            out[i * dh + d] = s;
        }
}

/// Multi-head cross-attention core: spatial features attend over a short
/// context sequence. Returns the output projection only (no residual); the
/// caller adds it back. x: [B,C,H,W] (already normalized), ctx: [B,Tk,D],
/// wq/wo: [C,C], wk/wv: [C,D].
template <typename T>
Var<T> attention_core(Tape<T>* tape, const Var<T>& x, const Var<T>& ctx, const Var<T>& wq,
                      const Var<T>& wk, const Var<T>& wv, const Var<T>& wo, int heads) {
    if (x->value.rank() != 4 || ctx->value.rank() != 3) throw UsageError("attention_core: bad ranks");
    const int64_t B = x->value.dim(0), C = x->value.dim(1), P = x->value.dim(2) * x->value.dim(3);
    const int64_t Tk = ctx->value.dim(1), D = ctx->value.dim(2);
    if (ctx->value.dim(0) != B) throw UsageError("attention_core: batch mismatch");
    if (wq->value.shape != Shape{C, C} || wo->value.shape != Shape{C, C} ||
        wk->value.shape != Shape{C, D} || wv->value.shape != Shape{C, D})
        throw UsageError("attention_core: projection shape mismatch");
    if (heads < 1 || C % heads != 0) throw UsageError("attention_core: heads must divide channels");
    if (Tk > 8) throw UsageError("attention_core: context longer than supported");
    const int64_t dh = C / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));

    auto out = make_var(Tensor<T>(x->value.shape));
    // Per-image intermediates kept for backward.
    std::vector<std::vector<T>> qt_all(static_cast<size_t>(B)), k_all(static_cast<size_t>(B)),
        v_all(static_cast<size_t>(B)), a_all(static_cast<size_t>(B)), ot_all(static_cast<size_t>(B));

    for (int64_t b = 0; b < B; ++b) {
        const T* xc = x->value.ptr() + b * C * P;       // [C,P]
        const T* cb = ctx->value.ptr() + b * Tk * D;    // [Tk,D]
        auto& qt = qt_all[static_cast<size_t>(b)];      // [C,P]
        auto& kk = k_all[static_cast<size_t>(b)];       // [Tk,C]
        auto& vv = v_all[static_cast<size_t>(b)];       // [Tk,C]
        auto& at = a_all[static_cast<size_t>(b)];       // [heads,P,Tk]
        auto& ot = ot_all[static_cast<size_t>(b)];      // [C,P]
        qt.resize(static_cast<size_t>(C * P));
        kk.resize(static_cast<size_t>(Tk * C));
        vv.resize(static_cast<size_t>(Tk * C));
        at.resize(static_cast<size_t>(heads * P * Tk));
        ot.assign(static_cast<size_t>(C * P), T(0));
        gemm(wq->value.ptr(), xc, qt.data(), C, C, P);
        gemm_nt(cb, wk->value.ptr(), kk.data(), Tk, D, C);
        gemm_nt(cb, wv->value.ptr(), vv.data(), Tk, D, C);
        for (int h = 0; h < heads; ++h) {
            const int64_t off = h * dh;
            T* ah = at.data() + static_cast<int64_t>(h) * P * Tk;
            for (int64_t p = 0; p < P; ++p) {
                for (int64_t j = 0; j < Tk; ++j) {
                    T s = 0;
                    for (int64_t d = 0; d < dh; ++d) s += qt[(off + d) * P + p] * kk[j * C + off + d];
                    ah[p * Tk + j] = s * scale;
                }
            }
            softmax_rows(ah, P, Tk);
            for (int64_t p = 0; p < P; ++p)
                for (int64_t d = 0; d < dh; ++d) {
                    T s = 0;
                    for (int64_t j = 0; j < Tk; ++j) s += ah[p * Tk + j] * vv[j * C + off + d];
                    ot[(off + d) * P + p] = s;
                }
        }
        gemm(wo->value.ptr(), ot.data(), out->value.ptr() + b * C * P, C, C, P);
    }

    if (detail::setup_grads(tape, out, x, ctx, wq, wk, wv, wo)) {
        tape->record([x, ctx, wq, wk, wv, wo, out, B, C, P, Tk, D, heads, dh, scale,
                      qt_all = std::move(qt_all), k_all = std::move(k_all), v_all = std::move(v_all),
                      a_all = std::move(a_all), ot_all = std::move(ot_all)] {
            std::vector<T> dot(static_cast<size_t>(C * P)), dqt(static_cast<size_t>(C * P)),
                dk(static_cast<size_t>(Tk * C)), dv(static_cast<size_t>(Tk * C));
            for (int64_t b = 0; b < B; ++b) {
                const T* go = out->grad.ptr() + b * C * P;
                const auto& qt = qt_all[static_cast<size_t>(b)];
                const auto& kk = k_all[static_cast<size_t>(b)];
                const auto& vv = v_all[static_cast<size_t>(b)];
                const auto& at = a_all[static_cast<size_t>(b)];
                const auto& ot = ot_all[static_cast<size_t>(b)];
                const T* cb = ctx->value.ptr() + b * Tk * D;

                if (wo->requires_grad) gemm_nt(go, ot.data(), wo->grad.ptr(), C, P, C, true);
                gemm_tn(wo->value.ptr(), go, dot.data(), C, C, P);

                std::fill(dqt.begin(), dqt.end(), T(0));
                std::fill(dk.begin(), dk.end(), T(0));
                std::fill(dv.begin(), dv.end(), T(0));
                for (int h = 0; h < heads; ++h) {
                    const int64_t off = h * dh;
                    const T* ah = at.data() + static_cast<int64_t>(h) * P * Tk;
                    for (int64_t p = 0; p < P; ++p) {
                        T da[8];  // Tk is tiny (3 context tokens)
                        T ds[8];
                        for (int64_t j = 0; j < Tk; ++j) {
                            T s = 0;
                            for (int64_t d = 0; d < dh; ++d) s += dot[(off + d) * P + p] * vv[j * C + off + d];
                            da[j] = s;
                        }
                        T dot_a = 0;
                        for (int64_t j = 0; j < Tk; ++j) dot_a += da[j] * ah[p * Tk + j];
                        for (int64_t j = 0; j < Tk; ++j) ds[j] = ah[p * Tk + j] * (da[j] - dot_a) * scale;
                        for (int64_t j = 0; j < Tk; ++j) {
                            const T a_pj = ah[p * Tk + j];
                            const T ds_pj = ds[j];
                            for (int64_t d = 0; d < dh; ++d) {
                                dv[j * C + off + d] += a_pj * dot[(off + d) * P + p];
                                dqt[(off + d) * P + p] += ds_pj * kk[j * C + off + d];
                                dk[j * C + off + d] += ds_pj * qt[(off + d) * P + p];
                            }
                        }
                    }
                }
                if (x->requires_grad)
                    gemm_tn(wq->value.ptr(), dqt.data(), x->grad.ptr() + b * C * P, C, C, P, true);
                if (wq->requires_grad) gemm_nt(dqt.data(), x->value.ptr() + b * C * P, wq->grad.ptr(), C, P, C, true);
                if (ctx->requires_grad) {
                    gemm(dk.data(), wk->value.ptr(), ctx->grad.ptr() + b * Tk * D, Tk, C, D, true);
                    gemm(dv.data(), wv->value.ptr(), ctx->grad.ptr() + b * Tk * D, Tk, C, D, true);
                }
                if (wk->requires_grad) gemm_tn(dk.data(), cb, wk->grad.ptr(), C, Tk, D, true);
                if (wv->requires_grad) gemm_tn(dv.data(), cb, wv->grad.ptr(), C, Tk, D, true);
            }
        });
    }
    return out;
}

/// Mean squared error against a fixed target.
template <typename T>
Var<T> mse_loss(Tape<T>* tape, const Var<T>& pred, Tensor<T> target) {
    if (!pred->value.same_shape(target)) throw UsageError("mse_loss: shape mismatch");
    const int64_t n = pred->value.numel();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(pred->value[i]) - static_cast<double>(target[i]);
        acc += d * d;
    }
    auto out = make_var(Tensor<T>({1}));
    out->value[0] = static_cast<T>(acc / n);
    if (detail::setup_grads(tape, out, pred)) {
        tape->record([pred, out, target = std::move(target), n] {
            const T g = out->grad[0] * T(2) / static_cast<T>(n);
            for (int64_t i = 0; i < n; ++i) pred->grad[i] += g * (pred->value[i] - target[i]);
        });
    }
    return out;
}

/// Mean cross-entropy over rows of [B,K] logits with integer labels.
template <typename T>
Var<T> softmax_cross_entropy(Tape<T>* tape, const Var<T>& logits, std::vector<int> labels) {
    if (logits->value.rank() != 2) throw UsageError("softmax_cross_entropy: logits must be [B,K]");
    const int64_t B = logits->value.dim(0), K = logits->value.dim(1);
    if (static_cast<int64_t>(labels.size()) != B) throw UsageError("softmax_cross_entropy: label count mismatch");
    for (int l : labels)
        if (l < 0 || l >= K) throw UsageError("softmax_cross_entropy: label out of range");

    std::vector<T> probs(static_cast<size_t>(B * K));
    std::copy(logits->value.data.begin(), logits->value.data.end(), probs.begin());
    softmax_rows(probs.data(), B, K);
    double acc = 0.0;
    for (int64_t b = 0; b < B; ++b) {
        const double p = std::max(static_cast<double>(probs[static_cast<size_t>(b * K + labels[static_cast<size_t>(b)])]),
                                  1e-30);
        acc -= std::log(p);
    }
    auto out = make_var(Tensor<T>({1}));
    out->value[0] = static_cast<T>(acc / B);
    if (detail::setup_grads(tape, out, logits)) {
        tape->record([logits, out, probs = std::move(probs), labels = std::move(labels), B, K] {
            const T g = out->grad[0] / static_cast<T>(B);
            for (int64_t b = 0; b < B; ++b)
                for (int64_t k = 0; k < K; ++k) {
                    const T onehot = labels[static_cast<size_t>(b)] == k ? T(1) : T(0);
                    logits->grad[b * K + k] += g * (probs[static_cast<size_t>(b * K + k)] - onehot);
                }
        });
    }
    return out;
}

}  // namespace glyphdiff::nn
