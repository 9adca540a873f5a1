#pragma once

#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mseg/arch.hpp"
#include "mseg/graph.hpp"
#include "mseg/loss.hpp"
#include "mseg/ops.hpp"
#include "mseg/params.hpp"

namespace mseg {

enum class ModelVariant { TwoD_1, TwoD_2, ThreeD_standard, TwoThreeD_A, TwoThreeD_B, TwoThreeD_C };
enum class RunMode { Train, Infer };

inline bool is_2d_variant(ModelVariant v) {
    return v == ModelVariant::TwoD_1 || v == ModelVariant::TwoD_2;
}
inline bool needs_features(ModelVariant v) {
    return v == ModelVariant::TwoThreeD_A || v == ModelVariant::TwoThreeD_B ||
           v == ModelVariant::TwoThreeD_C;
}

ModelVariant variant_from_string(const std::string& s);
std::string variant_to_string(ModelVariant v);

struct ModelConfig {
    ModelVariant variant = ModelVariant::ThreeD_standard;
    std::size_t classes = 4;
    std::size_t modalities = 4;  // K
    ArchitectureSpec subnetwork;  // 2D variants
    ArchitectureSpec trunk;       // 2D variants, 3D standard, A, B
    ArchitectureSpec stream;      // variant C streams
    ArchitectureSpec head;        // variant C classification head
};

ModelConfig parse_model_config(const std::string& json_text);
ModelConfig load_model_config(const std::string& path);

template <class T>
struct ForwardResult {
    int main_logits = -1;
    int last_hidden = -1;  // pre-classification features of the main path
    std::vector<int> aux_logits;
};

namespace detail {

// Channel count after each layer of a stack, given its input channels.
inline std::vector<std::size_t> stack_channels(const ArchitectureSpec& spec, std::size_t in_ch,
                                               std::size_t classes, std::size_t feature_ch) {
    std::vector<std::size_t> ch;
    std::size_t cur = in_ch;
    for (const auto& l : spec.layers) {
        switch (l.kind) {
            case LayerKind::Conv:
                cur = l.maps;
                break;
            case LayerKind::Classify:
                cur = classes;
                break;
            case LayerKind::Concat:
                cur += l.concat_with == -1 ? 0 : ch[l.concat_with];
                break;
            case LayerKind::ImportFeatures:
                cur += feature_ch;
                break;
            default:
                break;
        }
        ch.push_back(cur);
    }
    return ch;
}

}  // namespace detail

// A built network: immutable wiring plus a mutable parameter store. The same
// trunk spec serves the standard 3D model and the 2D-3D variants; only the
// input channel count differs.
template <class T>
class Network {
public:
    Network(ModelConfig cfg, std::uint32_t seed) : cfg_(std::move(cfg)) {
        std::mt19937 rng(seed);
        build_params(rng);
    }

    // Standalone modality-specific subnetwork (with its auxiliary head) for
    // independent pretraining; parameter names match the full bundle so the
    // trained values can be copied back in.
    static Network subnetwork_only(ModelConfig cfg, std::size_t modality_index,
                                   std::uint32_t seed) {
        if (!is_2d_variant(cfg.variant))
            throw std::invalid_argument("subnetwork pretraining applies to 2D variants only");
        if (modality_index >= cfg.modalities)
            throw std::invalid_argument("modality index out of range");
        Network n(PrivateTag{}, std::move(cfg));
        n.sub_only_ = static_cast<int>(modality_index);
        std::mt19937 rng(seed);
        n.plan_stack(n.cfg_.subnetwork, "sub" + std::to_string(modality_index), 1, 0, rng);
        n.plan_aux("sub" + std::to_string(modality_index), rng);
        return n;
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return store_; }
    const ParamStore<T>& params() const { return store_; }
    std::size_t classes() const { return cfg_.classes; }
    std::size_t dims() const { return is_2d_variant(cfg_.variant) ? 2 : 3; }

    std::size_t input_channels() const {
        if (sub_only_ >= 0) return 1;
        if (is_2d_variant(cfg_.variant) || cfg_.variant == ModelVariant::ThreeD_standard)
            return cfg_.modalities;
        return cfg_.modalities + 3 * cfg_.classes;
    }

    ForwardResult<T> forward(GraphT<T>& g, const TensorT<T>& input, RunMode mode) {
        if (input.rank() != dims() + 2)
            throw std::invalid_argument("network input rank mismatch: " + shape_str(input.shape));
        if (input.shape[1] != input_channels())
            throw std::invalid_argument(
                "network expects " + std::to_string(input_channels()) + " input channels, got " +
                std::to_string(input.shape[1]));
        int in_node = g.leaf(input);
        ForwardResult<T> res;

        if (sub_only_ >= 0) {
            const std::string prefix = "sub" + std::to_string(sub_only_);
            int feat = run_stack(g, cfg_.subnetwork, prefix, in_node, -1, mode);
            res.last_hidden = feat;
            res.main_logits = run_aux(g, prefix, feat);
            return res;
        }

        switch (cfg_.variant) {
            case ModelVariant::TwoD_1:
            case ModelVariant::TwoD_2: {
                const std::size_t K = cfg_.modalities;
                std::vector<int> finals;
                std::vector<int> aux;
                for (std::size_t k = 0; k < K; ++k) {
                    int sub_in = slice_channels(g, in_node, k, 1);
                    int f = run_stack(g, cfg_.subnetwork, "sub" + std::to_string(k), sub_in, -1,
                                      mode);
                    finals.push_back(f);
                    if (mode == RunMode::Train)
                        aux.push_back(run_aux(g, "sub" + std::to_string(k), f));
                }
                int f = run_stack(g, cfg_.subnetwork, "suball", in_node, -1, mode);
                finals.push_back(f);
                if (mode == RunMode::Train) aux.push_back(run_aux(g, "suball", f));
                int trunk_in = concat_channels(g, finals);
                auto [logits, hidden] = run_stack2(g, cfg_.trunk, "trunk", trunk_in, -1, mode);
                res.main_logits = logits;
                res.last_hidden = hidden;
                res.aux_logits = std::move(aux);
                return res;
            }
            case ModelVariant::ThreeD_standard:
            case ModelVariant::TwoThreeD_A: {
                auto [logits, hidden] = run_stack2(g, cfg_.trunk, "trunk", in_node, -1, mode);
                res.main_logits = logits;
                res.last_hidden = hidden;
                return res;
            }
            case ModelVariant::TwoThreeD_B: {
                const std::size_t K = cfg_.modalities;
                int image = slice_channels(g, in_node, 0, K);
                int feats = slice_channels(g, in_node, K, 3 * cfg_.classes);
                auto [logits, hidden] = run_stack2(g, cfg_.trunk, "trunk", image, feats, mode);
                res.main_logits = logits;
                res.last_hidden = hidden;
                return res;
            }
            case ModelVariant::TwoThreeD_C: {
                const std::size_t K = cfg_.modalities;
                int image = slice_channels(g, in_node, 0, K);
                int s1 = run_stack(g, cfg_.stream, "stream_img", image, -1, mode);
                int s2 = run_stack(g, cfg_.stream, "stream_feat", in_node, -1, mode);
                int merged = concat_channels(g, {s1, s2});
                auto [logits, hidden] = run_stack2(g, cfg_.head, "head", merged, -1, mode);
                res.main_logits = logits;
                res.last_hidden = hidden;
                return res;
            }
        }
        throw std::logic_error("unreachable");
    }

private:
    struct PrivateTag {};
    Network(PrivateTag, ModelConfig cfg) : cfg_(std::move(cfg)) {}

    void build_params(std::mt19937& rng) {
        const std::size_t C = cfg_.classes;
        const std::size_t K = cfg_.modalities;
        switch (cfg_.variant) {
            case ModelVariant::TwoD_1:
            case ModelVariant::TwoD_2: {
                cfg_.subnetwork.validate(false);
                if (cfg_.subnetwork.has_classify())
                    throw std::invalid_argument(
                        "subnetwork spec must not contain a classification layer");
                cfg_.trunk.validate(true);
                const auto sub_ch = detail::stack_channels(cfg_.subnetwork, 1, C, 0);
                for (std::size_t k = 0; k < K; ++k) {
                    plan_stack(cfg_.subnetwork, "sub" + std::to_string(k), 1, 0, rng);
                    plan_aux("sub" + std::to_string(k), rng);
                }
                plan_stack(cfg_.subnetwork, "suball", K, 0, rng);
                plan_aux("suball", rng);
                const auto suball_ch = detail::stack_channels(cfg_.subnetwork, K, C, 0);
                const std::size_t trunk_in = K * sub_ch.back() + suball_ch.back();
                plan_stack(cfg_.trunk, "trunk", trunk_in, 0, rng);
                break;
            }
            case ModelVariant::ThreeD_standard:
                cfg_.trunk.validate(true);
                plan_stack(cfg_.trunk, "trunk", K, 0, rng);
                break;
            case ModelVariant::TwoThreeD_A:
                cfg_.trunk.validate(true);
                plan_stack(cfg_.trunk, "trunk", K + 3 * C, 0, rng);
                break;
            case ModelVariant::TwoThreeD_B: {
                cfg_.trunk.validate(true);
                int imports = 0;
                for (const auto& l : cfg_.trunk.layers)
                    if (l.kind == LayerKind::ImportFeatures) ++imports;
                if (imports != 1)
                    throw std::invalid_argument(
                        "variant B trunk needs exactly one import_features layer");
                plan_stack(cfg_.trunk, "trunk", K, 3 * C, rng);
                break;
            }
            case ModelVariant::TwoThreeD_C: {
                cfg_.stream.validate(false);
                cfg_.head.validate(true);
                plan_stack(cfg_.stream, "stream_img", K, 0, rng);
                plan_stack(cfg_.stream, "stream_feat", K + 3 * C, 0, rng);
                const auto s1 = detail::stack_channels(cfg_.stream, K, C, 0);
                const auto s2 = detail::stack_channels(cfg_.stream, K + 3 * C, C, 0);
                plan_stack(cfg_.head, "head", s1.back() + s2.back(), 0, rng);
                break;
            }
        }
    }

    std::size_t kernel_volume(std::size_t k) const {
        std::size_t v = 1;
        for (std::size_t d = 0; d < dims(); ++d) v *= k;
        return v;
    }

    void plan_stack(const ArchitectureSpec& spec, const std::string& prefix, std::size_t in_ch,
                    std::size_t feature_ch, std::mt19937& rng) {
        const auto ch = detail::stack_channels(spec, in_ch, cfg_.classes, feature_ch);
        std::size_t cur = in_ch;
        for (std::size_t i = 0; i < spec.layers.size(); ++i) {
            const auto& l = spec.layers[i];
            const std::string base = prefix + ".L" + std::to_string(i);
            if (l.kind == LayerKind::Conv || l.kind == LayerKind::Classify) {
                const std::size_t maps = l.kind == LayerKind::Classify ? cfg_.classes : l.maps;
                std::vector<std::size_t> kshape{maps, cur};
                for (std::size_t d = 0; d < dims(); ++d) kshape.push_back(l.kernel);
                store_.create_uniform(base + ".w", kshape, cur * kernel_volume(l.kernel), rng);
                store_.create(base + ".b", {maps});
            } else if (l.kind == LayerKind::Batchnorm) {
                Param<T>& gamma = store_.create(base + ".gamma", {cur});
                gamma.value.fill(T(1));
                store_.create(base + ".beta", {cur});
                store_.create(base + ".rmean", {cur}, false);
                Param<T>& rvar = store_.create(base + ".rvar", {cur}, false);
                rvar.value.fill(T(1));
            }
            cur = ch[i];
        }
    }

    void plan_aux(const std::string& prefix, std::mt19937& rng) {
        const std::size_t in_ch =
            detail::stack_channels(cfg_.subnetwork,
                                   prefix == "suball" ? cfg_.modalities : 1, cfg_.classes, 0)
                .back();
        std::vector<std::size_t> kshape{cfg_.classes, in_ch};
        for (std::size_t d = 0; d < dims(); ++d) kshape.push_back(1);
        store_.create_uniform(prefix + ".aux.w", kshape, in_ch, rng);
        store_.create(prefix + ".aux.b", {cfg_.classes});
    }

    int param_node(GraphT<T>& g, const std::string& name) {
        Param<T>& p = store_.get(name);
        return g.leaf_param(p.value, &p.grad);
    }

    int run_aux(GraphT<T>& g, const std::string& prefix, int feat) {
        int w = param_node(g, prefix + ".aux.w");
        int b = param_node(g, prefix + ".aux.b");
        return conv_nd(g, feat, w, b, {}, Padding::Same);
    }

    // Executes a stack; returns the node of the last layer (logits when the
    // stack ends with classify).
    int run_stack(GraphT<T>& g, const ArchitectureSpec& spec, const std::string& prefix,
                  int input, int feature_node, RunMode mode) {
        return run_stack2(g, spec, prefix, input, feature_node, mode).first;
    }

    // Same, also returning the input node of the classification layer.
    std::pair<int, int> run_stack2(GraphT<T>& g, const ArchitectureSpec& spec,
                                   const std::string& prefix, int input, int feature_node,
                                   RunMode mode) {
        std::vector<int> nodes;
        int cur = input;
        int pre_classify = input;
        for (std::size_t i = 0; i < spec.layers.size(); ++i) {
            const auto& l = spec.layers[i];
            const std::string base = prefix + ".L" + std::to_string(i);
            switch (l.kind) {
                case LayerKind::Conv: {
                    int w = param_node(g, base + ".w");
                    int b = param_node(g, base + ".b");
                    std::vector<std::size_t> stride(dims(), l.stride);
                    cur = conv_nd(g, cur, w, b, stride, Padding::Same);
                    const bool bn_next = i + 1 < spec.layers.size() &&
                                         spec.layers[i + 1].kind == LayerKind::Batchnorm;
                    if (!bn_next) cur = relu(g, cur);
                    break;
                }
                case LayerKind::Batchnorm: {
                    int gamma = param_node(g, base + ".gamma");
                    int beta = param_node(g, base + ".beta");
                    RunningStats<T> rs{&store_.get(base + ".rmean").value,
                                       &store_.get(base + ".rvar").value};
                    cur = batchnorm(g, cur, gamma, beta,
                                    mode == RunMode::Train ? BnMode::Train : BnMode::Infer, rs);
                    cur = relu(g, cur);
                    break;
                }
                case LayerKind::Pool:
                    cur = maxpool_nd(g, cur, {l.window}, {l.window});
                    break;
                case LayerKind::Upsample:
                    cur = upsample_linear_nd(g, cur, l.factor);
                    break;
                case LayerKind::Concat:
                    cur = concat_channels(g, {cur, nodes[l.concat_with]});
                    break;
                case LayerKind::ImportFeatures:
                    if (feature_node < 0)
                        throw std::invalid_argument("stack has import_features but no features");
                    cur = concat_channels(g, {cur, feature_node});
                    break;
                case LayerKind::Classify: {
                    pre_classify = cur;
                    int w = param_node(g, base + ".w");
                    int b = param_node(g, base + ".b");
                    cur = conv_nd(g, cur, w, b, {}, Padding::Same);
                    break;
                }
            }
            nodes.push_back(cur);
        }
        if (!spec.has_classify()) pre_classify = cur;
        return {cur, pre_classify};
    }

    ModelConfig cfg_;
    ParamStore<T> store_;
    int sub_only_ = -1;
};

}  // namespace mseg
