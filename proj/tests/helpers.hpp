#pragma once

// Shared test utilities: random tensors, a scalar projection node for
// reducing any op output to a scalar, and a central-difference gradient
// checker running in 64-bit mode.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "mseg/graph.hpp"
#include "mseg/tensor.hpp"

namespace testutil {

using mseg::GraphD;
using mseg::GraphT;
using mseg::NodeT;
using mseg::TensorD;
using mseg::TensorT;

template <class T>
TensorT<T> random_tensor(std::vector<std::size_t> shape, std::mt19937& rng, double lo = -1.0,
                         double hi = 1.0) {
    TensorT<T> t(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (T& v : t.data) v = static_cast<T>(dist(rng));
    return t;
}

// All-distinct values in random order; keeps maxpool argmax away from ties.
template <class T>
TensorT<T> distinct_tensor(std::vector<std::size_t> shape, std::mt19937& rng) {
    TensorT<T> t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(i) * T(0.37) - T(3.1);
    std::shuffle(t.data.begin(), t.data.end(), rng);
    return t;
}

// Scalar projection sum_i w_i x_i; weights fixed per call so the checker
// exercises every output element with a distinct sensitivity.
template <class T>
int project(GraphT<T>& g, int input_id, const TensorT<T>& w) {
    const TensorT<T>& x = g.value(input_id);
    if (x.numel() != w.numel()) throw std::invalid_argument("project: weight size mismatch");
    double acc = 0;
    for (std::size_t i = 0; i < x.numel(); ++i)
        acc += static_cast<double>(x[i]) * static_cast<double>(w[i]);
    NodeT<T> n;
    n.op = "project";
    n.inputs = {input_id};
    n.value = TensorT<T>({1});
    n.value[0] = static_cast<T>(acc);
    n.requires_grad = g.any_requires_grad(n.inputs);
    auto wc = std::make_shared<TensorT<T>>(w);
    n.backward = [=](GraphT<T>& gr, NodeT<T>& self) {
        if (!gr.node(input_id).requires_grad) return;
        TensorT<T>& dx = gr.grad(input_id);
        for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += self.grad[0] * (*wc)[i];
    };
    return g.add(std::move(n));
}

// Builds a graph from leaf nodes over `inputs` and returns a scalar node.
using BuildFn = std::function<int(GraphD&, const std::vector<int>&)>;

// Max relative error between analytic gradients and central differences over
// all elements of all inputs. step 1e-5, denominator floored to keep noise on
// true-zero gradients from reading as relative error.
inline double gradcheck(std::vector<TensorD> inputs, const BuildFn& build, double step = 1e-5) {
    const std::size_t n = inputs.size();
    std::vector<TensorD> sinks;
    for (const auto& t : inputs) sinks.emplace_back(t.shape, 0.0);

    GraphD g;
    std::vector<int> leaves;
    for (std::size_t i = 0; i < n; ++i) leaves.push_back(g.leaf_param(inputs[i], &sinks[i]));
    int out = build(g, leaves);
    g.backward(out);

    auto eval = [&](const std::vector<TensorD>& xs) {
        GraphD h;
        std::vector<int> ls;
        for (const auto& t : xs) ls.push_back(h.leaf(t));
        return static_cast<double>(h.value(build(h, ls))[0]);
    };

    double worst = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < inputs[i].numel(); ++j) {
            const double saved = inputs[i][j];
            inputs[i][j] = saved + step;
            const double fp = eval(inputs);
            inputs[i][j] = saved - step;
            const double fm = eval(inputs);
            inputs[i][j] = saved;
            const double numeric = (fp - fm) / (2.0 * step);
            const double analytic = sinks[i][j];
            const double denom =
                std::max({std::abs(analytic), std::abs(numeric), 1e-6});
            worst = std::max(worst, std::abs(analytic - numeric) / denom);
        }
    return worst;
}

}  // namespace testutil
