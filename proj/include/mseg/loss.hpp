#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "mseg/graph.hpp"
#include "mseg/ops.hpp"
#include "mseg/tensor.hpp"

namespace mseg {

// Per-class loss mass fractions t_c. Sum must be 1.
struct TargetWeights {
    std::vector<double> t;

    explicit TargetWeights(std::vector<double> fractions) : t(std::move(fractions)) {
        if (t.empty()) throw std::invalid_argument("target weights: empty");
        double sum = 0;
        for (double v : t) {
            if (v < 0.0 || v > 1.0)
                throw std::invalid_argument("target weights: fraction outside [0,1]");
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-12)
            throw std::invalid_argument("target weights must sum to 1");
    }

    std::size_t classes() const { return t.size(); }
};

struct LossBreakdown {
    double main_loss = 0;
    std::vector<double> subnetwork_losses;
    double combined = 0;
    double c_main = 1;
    std::vector<double> c_k;
};

// Voxel weight t_c / N_b^c. Classes absent from the batch get zero weight
// and the remaining targets are renormalized so the grand total stays 1.
template <class T>
TensorT<T> compute_voxel_weights(const LabelVolume& labels, const TargetWeights& targets) {
    if (labels.numel() == 0) throw std::invalid_argument("compute_voxel_weights: empty labels");
    const std::size_t C = targets.classes();
    std::vector<std::size_t> counts(C, 0);
    for (std::uint8_t l : labels.data) {
        if (l >= C) throw std::invalid_argument("label value out of range");
        ++counts[l];
    }
    double present_mass = 0;
    for (std::size_t c = 0; c < C; ++c)
        if (counts[c] > 0) present_mass += targets.t[c];
    if (present_mass <= 0)
        throw std::invalid_argument("compute_voxel_weights: no present class carries target mass");
    std::vector<double> per_voxel(C, 0.0);
    for (std::size_t c = 0; c < C; ++c)
        if (counts[c] > 0)
            per_voxel[c] = (targets.t[c] / present_mass) / static_cast<double>(counts[c]);
    TensorT<T> w(labels.shape);
    for (std::size_t i = 0; i < labels.numel(); ++i)
        w[i] = static_cast<T>(per_voxel[labels[i]]);
    return w;
}

// Eq-style weighted cross-entropy: -(1/V) sum_i w_i log p_i(true class),
// implemented verbatim with the 1/V prefactor. V is the ground-truth voxel
// (or pixel) count of the batch. Recorded on the graph so gradients reach
// the probability node.
template <class T>
int weighted_cross_entropy(GraphT<T>& g, int prob_id, const LabelVolume& labels,
                           const TensorT<T>& weights, std::size_t normalizer) {
    const TensorT<T>& p = g.value(prob_id);
    const std::size_t N = p.shape[0], C = p.shape[1];
    std::size_t sp = 1;
    for (std::size_t d = 2; d < p.rank(); ++d) sp *= p.shape[d];
    if (labels.numel() != N * sp || weights.numel() != N * sp)
        throw std::invalid_argument("weighted_cross_entropy: label/weight volume mismatch");
    if (normalizer == 0) throw std::invalid_argument("weighted_cross_entropy: zero normalizer");
    constexpr double kClamp = 1e-12;

    double acc = 0;
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < sp; ++i) {
            const std::size_t v = n * sp + i;
            const std::uint8_t l = labels[v];
            if (l >= C) throw std::invalid_argument("label value out of range");
            double pl = static_cast<double>(p.data[(n * C + l) * sp + i]);
            acc += static_cast<double>(weights[v]) * std::log(std::max(pl, kClamp));
        }
    double loss = -acc / static_cast<double>(normalizer);

    NodeT<T> node;
    node.op = "wce";
    node.inputs = {prob_id};
    node.value = TensorT<T>({1});
    node.value[0] = static_cast<T>(loss);
    node.requires_grad = g.any_requires_grad(node.inputs);
    auto lab = std::make_shared<LabelVolume>(labels);
    auto wgt = std::make_shared<TensorT<T>>(weights);
    node.backward = [=](GraphT<T>& gr, NodeT<T>& self) {
        if (!gr.node(prob_id).requires_grad) return;
        const TensorT<T>& pv = gr.value(prob_id);
        TensorT<T>& dp = gr.grad(prob_id);
        const double up = static_cast<double>(self.grad[0]);
        const double inv_v = 1.0 / static_cast<double>(normalizer);
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t i = 0; i < sp; ++i) {
                const std::size_t v = n * sp + i;
                const std::uint8_t l = (*lab)[v];
                const std::size_t k = (n * C + l) * sp + i;
                double pl = static_cast<double>(pv.data[k]);
                if (pl < kClamp) continue;  // clamped region: flat
                dp.data[k] += static_cast<T>(-up * inv_v * static_cast<double>((*wgt)[v]) / pl);
            }
    };
    return g.add(std::move(node));
}

// Convex combination of the main loss and the K+1 subnetwork losses.
inline LossBreakdown combined_loss(double main, const std::vector<double>& subnetwork,
                                   double c_main, const std::vector<double>& c_k) {
    if (c_k.size() != subnetwork.size())
        throw std::invalid_argument("combined_loss: coefficient count mismatch");
    double sum = c_main;
    for (double c : c_k) sum += c;
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("combined_loss: coefficients must sum to 1");
    LossBreakdown b;
    b.main_loss = main;
    b.subnetwork_losses = subnetwork;
    b.c_main = c_main;
    b.c_k = c_k;
    b.combined = c_main * main;
    for (std::size_t k = 0; k < c_k.size(); ++k) b.combined += c_k[k] * subnetwork[k];
    return b;
}

}  // namespace mseg
