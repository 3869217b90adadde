// Copyright (c) 2026 The glyphdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "glyphdiff/tensor.hpp"

namespace glyphdiff {

/// Node in the dynamic compute graph. Long-lived nodes are parameters;
/// everything else is created per forward pass and dropped with the tape.
template <typename T>
struct TensorNode {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;

    void ensure_grad() {
        if (!grad.same_shape(value)) grad = Tensor<T>::zeros(value.shape);
    }
    void zero_grad() {
        if (grad.same_shape(value))
            grad.fill(T(0));
        else
            grad = Tensor<T>::zeros(value.shape);
    }
};

template <typename T>
using Var = std::shared_ptr<TensorNode<T>>;

template <typename T>
inline Var<T> make_var(Tensor<T> value, bool requires_grad = false) {
    auto n = std::make_shared<TensorNode<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

template <typename T>
inline Var<T> make_param(Tensor<T> value) {
    return make_var(std::move(value), true);
}

template <typename T>
inline Var<T> constant(Tensor<T> value) {
    return make_var(std::move(value), false);
}

/// Reverse-mode tape. Ops append backward closures in forward order;
/// backward() seeds a scalar loss with grad 1 and replays them reversed.
/// Pass a null tape to any op for inference without recording.
template <typename T>
class Tape {
public:
    void record(std::function<void()> op) { ops_.push_back(std::move(op)); }

    void backward(const Var<T>& loss) {
        if (loss->value.numel() != 1) throw UsageError("backward: loss must be scalar");
        loss->ensure_grad();
        loss->grad.fill(T(1));
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    }

    void clear() { ops_.clear(); }
    size_t size() const { return ops_.size(); }

private:
    std::vector<std::function<void()>> ops_;
};

namespace detail {

/// Shared preamble of every op: decide whether the output participates in
/// the graph and pre-allocate grads so closures can accumulate blindly.
template <typename T, typename... Vars>
inline bool setup_grads(Tape<T>* tape, const Var<T>& out, const Vars&... inputs) {
    const bool need = (inputs->requires_grad || ...);
    out->requires_grad = need;
    if (tape != nullptr && need) {
        out->ensure_grad();
        (void)std::initializer_list<int>{((inputs->requires_grad ? inputs->ensure_grad() : void()), 0)...};
        return true;
    }
    return false;
}

}  // namespace detail

}  // namespace glyphdiff
