#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "mseg/tensor.hpp"

namespace mseg {

template <class T>
class GraphT;

// One recorded operation. Nodes are appended in execution order, which is
// a topological order by construction; the backward sweep walks it once in
// reverse.
template <class T>
struct NodeT {
    std::string op;
    std::vector<int> inputs;
    TensorT<T> value;
    TensorT<T> grad;  // same shape as value, allocated before backward
    bool requires_grad = false;
    // Accumulates into the grads of input nodes (and param grads for leaves).
    std::function<void(GraphT<T>&, NodeT<T>&)> backward;
    // For parameter leaves: where to deposit the gradient after backward.
    TensorT<T>* param_grad_sink = nullptr;
};

template <class T>
class GraphT {
public:
    NodeT<T>& node(int id) { return *nodes_[id]; }
    const NodeT<T>& node(int id) const { return *nodes_[id]; }
    int size() const { return static_cast<int>(nodes_.size()); }

    const TensorT<T>& value(int id) const { return nodes_[id]->value; }
    TensorT<T>& grad(int id) { return nodes_[id]->grad; }

    int add(NodeT<T> n) {
        if (!n.value.all_finite())
            throw std::runtime_error("non-finite values in forward output of op '" + n.op + "'");
        nodes_.push_back(std::make_unique<NodeT<T>>(std::move(n)));
        return static_cast<int>(nodes_.size()) - 1;
    }

    // Leaf holding non-trainable data (network input, constants).
    int leaf(TensorT<T> value) {
        NodeT<T> n;
        n.op = "leaf";
        n.value = std::move(value);
        n.requires_grad = false;
        return add(std::move(n));
    }

    // Leaf holding a trainable parameter; its gradient is added into
    // *grad_sink after the backward sweep.
    int leaf_param(const TensorT<T>& value, TensorT<T>* grad_sink) {
        NodeT<T> n;
        n.op = "param";
        n.value = value;
        n.requires_grad = true;
        n.param_grad_sink = grad_sink;
        return add(std::move(n));
    }

    bool any_requires_grad(const std::vector<int>& ids) const {
        for (int id : ids)
            if (nodes_[id]->requires_grad) return true;
        return false;
    }

    // Reverse-mode sweep from a scalar output node. Visits every node at
    // most once, in reverse creation order.
    void backward(int output_id) {
        NodeT<T>& out = *nodes_[output_id];
        if (out.value.numel() != 1)
            throw std::runtime_error("backward requires a scalar output, got " +
                                     shape_str(out.value.shape));
        for (auto& n : nodes_) {
            n->grad = TensorT<T>(n->value.shape, T(0));
        }
        out.grad[0] = T(1);
        for (int i = output_id; i >= 0; --i) {
            NodeT<T>& n = *nodes_[i];
            if (n.backward && n.requires_grad) n.backward(*this, n);
            if (n.param_grad_sink) {
                if (n.param_grad_sink->shape != n.grad.shape)
                    throw std::runtime_error("param grad sink shape mismatch");
                for (std::size_t k = 0; k < n.grad.numel(); ++k)
                    (*n.param_grad_sink)[k] += n.grad[k];
            }
            if (!n.grad.all_finite())
                throw std::runtime_error("non-finite gradient in backward of op '" + n.op + "'");
        }
    }

private:
    std::vector<std::unique_ptr<NodeT<T>>> nodes_;
};

using Graph = GraphT<float>;
using GraphD = GraphT<double>;

}  // namespace mseg
