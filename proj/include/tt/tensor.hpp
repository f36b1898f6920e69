// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "tt/errors.hpp"

namespace tt {

// One node of a reverse-mode differentiation graph. Values are written once
// during the forward pass; backward accumulates additively into grad, so a
// node feeding several consumers collects every contribution. Graphs are
// rebuilt per step and dropped when the last shared_ptr goes away.
template <class S>
class TensorNode {
public:
    std::vector<std::size_t> shape;
    std::vector<S> value;
    std::vector<S> grad;
    bool requires_grad = false;

    std::vector<std::shared_ptr<TensorNode<S>>> parents;
    std::function<void()> backward_fn;

    std::size_t numel() const { return value.size(); }
    std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
    std::size_t cols() const {
        std::size_t c = 1;
        for (std::size_t i = 1; i < shape.size(); ++i) c *= shape[i];
        return c;
    }
    bool is_scalar() const { return numel() == 1; }

    S* val() { return value.data(); }
    const S* val() const { return value.data(); }
    S* g() { return grad.data(); }
    const S* g() const { return grad.data(); }
};

template <class S>
using Tensor = std::shared_ptr<TensorNode<S>>;

namespace detail {
inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// Disables graph construction in scope; forward values are still computed.
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

template <class S>
std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        if (d == 0) throw ContractError("tensor extents must be positive");
        n *= d;
    }
    return n;
}

template <class S>
Tensor<S> make_node(std::vector<std::size_t> shape, bool requires_grad) {
    auto node = std::make_shared<TensorNode<S>>();
    std::size_t n = shape_numel<S>(shape);
    node->shape = std::move(shape);
    node->value.resize(n);
    node->grad.assign(n, S(0));
    node->requires_grad = requires_grad && grad_enabled();
    return node;
}

template <class S>
Tensor<S> constant(std::vector<std::size_t> shape, const std::vector<S>& data) {
    auto node = make_node<S>(std::move(shape), false);
    if (data.size() != node->numel())
        throw ContractError("constant: data length does not match shape");
    node->value = data;
    return node;
}

template <class S>
Tensor<S> param(std::vector<std::size_t> shape, std::vector<S> data) {
    auto node = std::make_shared<TensorNode<S>>();
    std::size_t n = shape_numel<S>(shape);
    if (data.size() != n) throw ContractError("param: data length does not match shape");
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->grad.assign(n, S(0));
    node->requires_grad = true;
    return node;
}

template <class S>
Tensor<S> scalar(S v) {
    auto node = make_node<S>({1}, false);
    node->value[0] = v;
    return node;
}

// Collects the subgraph reachable from root in topological order (parents
// before children). A boundary node, if given, is treated as a leaf: its
// parents are not visited and its backward_fn will not run.
template <class S>
std::vector<TensorNode<S>*> graph_nodes(const Tensor<S>& root,
                                        const TensorNode<S>* boundary = nullptr) {
    std::vector<TensorNode<S>*> order;
    std::unordered_set<const TensorNode<S>*> seen;
    struct Frame {
        TensorNode<S>* node;
        std::size_t next_parent;
    };
    std::vector<Frame> stack;
    if (!root) throw ContractError("graph_nodes: null root");
    if (seen.insert(root.get()).second) stack.push_back({root.get(), 0});
    while (!stack.empty()) {
        Frame& f = stack.back();
        bool is_boundary = (f.node == boundary);
        if (is_boundary || f.next_parent >= f.node->parents.size()) {
            order.push_back(f.node);
            stack.pop_back();
            continue;
        }
        TensorNode<S>* p = f.node->parents[f.next_parent++].get();
        if (seen.insert(p).second) stack.push_back({p, 0});
    }
    return order;
}

template <class S>
void zero_grads(const std::vector<TensorNode<S>*>& nodes) {
    for (auto* n : nodes) std::fill(n->grad.begin(), n->grad.end(), S(0));
}

namespace detail {
// Propagates exactly this pass's contribution even when grads already hold
// values from an earlier pass: a node whose grad is nonzero before the pass
// temporarily exposes only the delta to its backward_fn, then restores the
// prior amount, so repeated backward calls accumulate 1x each.
template <class S>
void run_backward(const Tensor<S>& root, const TensorNode<S>* boundary) {
    if (!root->is_scalar())
        throw ContractError("backward: root must be a scalar");
    auto order = graph_nodes(root, boundary);

    std::vector<std::vector<S>> prior(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        TensorNode<S>* n = order[i];
        if (!n->backward_fn || n == boundary) continue;
        bool dirty = false;
        for (S g : n->grad)
            if (g != S(0)) {
                dirty = true;
                break;
            }
        if (dirty) prior[i] = n->grad;
    }

    root->grad[0] += S(1);
    for (std::size_t i = order.size(); i-- > 0;) {
        TensorNode<S>* n = order[i];
        if (n == boundary || !n->backward_fn) continue;
        if (!prior[i].empty()) {
            for (std::size_t j = 0; j < n->grad.size(); ++j) n->grad[j] -= prior[i][j];
            n->backward_fn();
            for (std::size_t j = 0; j < n->grad.size(); ++j) n->grad[j] += prior[i][j];
        } else {
            n->backward_fn();
        }
    }
}
}  // namespace detail

// Fills dL/dnode for every node reachable from the scalar root. Repeated
// calls without zeroing accumulate.
template <class S>
void backward(const Tensor<S>& root) {
    detail::run_backward<S>(root, nullptr);
}

// Backward that stops at a boundary node: the boundary receives its gradient
// but nothing below it is touched. Used to measure loss gradients at the
// shared representation without paying for a full backbone pass.
template <class S>
void backward_scoped(const Tensor<S>& root, const TensorNode<S>* boundary) {
    detail::run_backward<S>(root, boundary);
}

template <class S>
bool all_finite(const std::vector<S>& v) {
    for (S x : v)
        if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
}

// Frobenius norm with double accumulation regardless of S.
template <class S>
double frobenius_norm(const std::vector<S>& v) {
    double acc = 0.0;
    for (S x : v) acc += static_cast<double>(x) * static_cast<double>(x);
    return std::sqrt(acc);
}

}  // namespace tt
