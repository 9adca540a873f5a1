#include "mseg/trainer.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <stdexcept>

#include "mseg/mvol.hpp"
#include "mseg/optimizer.hpp"

namespace mseg {

namespace {

struct Batch {
    Tensor input;       // [B, C, spatial...]
    LabelVolume labels; // [B, spatial...]
};

LabelVolume label_slice(const LabelVolume& labels, Orientation o, std::size_t index) {
    const std::size_t Z = labels.shape[0], Y = labels.shape[1], X = labels.shape[2];
    auto at = [&](std::size_t z, std::size_t y, std::size_t x) {
        return labels.data[(z * Y + y) * X + x];
    };
    switch (o) {
        case Orientation::Axial: {
            LabelVolume s({Y, X});
            std::size_t i = 0;
            for (std::size_t y = 0; y < Y; ++y)
                for (std::size_t x = 0; x < X; ++x) s[i++] = at(index, y, x);
            return s;
        }
        case Orientation::Coronal: {
            LabelVolume s({Z, X});
            std::size_t i = 0;
            for (std::size_t z = 0; z < Z; ++z)
                for (std::size_t x = 0; x < X; ++x) s[i++] = at(z, index, x);
            return s;
        }
        case Orientation::Sagittal: {
            LabelVolume s({Z, Y});
            std::size_t i = 0;
            for (std::size_t z = 0; z < Z; ++z)
                for (std::size_t y = 0; y < Y; ++y) s[i++] = at(z, y, index);
            return s;
        }
    }
    throw std::logic_error("unreachable");
}

// Batch of random slices: input [B, C, H, W], labels [B, H, W]. When
// modality_index >= 0, only that channel is kept (subnetwork pretraining).
Batch make_slice_batch(const std::vector<const VolumeSet*>& vols, Orientation o, std::size_t count,
                       int modality_index, std::mt19937& rng) {
    Batch b;
    for (std::size_t i = 0; i < count; ++i) {
        std::uniform_int_distribution<std::size_t> pv(0, vols.size() - 1);
        const VolumeSet& vol = *vols[pv(rng)];
        const std::size_t n_slices = slice_count(vol.spatial(), o);
        std::uniform_int_distribution<std::size_t> ps(0, n_slices - 1);
        const std::size_t s = ps(rng);
        Tensor slice = extract_slice(vol.image, o, s);
        LabelVolume lab = label_slice(*vol.labels, o, s);
        const std::size_t C = modality_index >= 0 ? 1 : slice.shape[0];
        const std::size_t H = slice.shape[1], W = slice.shape[2];
        if (i == 0) {
            b.input = Tensor({count, C, H, W});
            b.labels = LabelVolume({count, H, W});
        }
        const float* src = slice.data.data() +
                           (modality_index >= 0 ? modality_index * H * W : 0);
        std::copy_n(src, C * H * W, b.input.data.data() + i * C * H * W);
        std::copy_n(lab.data.data(), H * W, b.labels.data.data() + i * H * W);
    }
    return b;
}

Batch make_patch_batch(const std::vector<const VolumeSet*>& vols,
                       const std::vector<const FeatureVolume*>* features,
                       const std::array<std::size_t, 3>& patch, std::size_t count,
                       bool class_balanced, std::mt19937& rng) {
    Batch b;
    for (std::size_t i = 0; i < count; ++i) {
        std::uniform_int_distribution<std::size_t> pv(0, vols.size() - 1);
        const std::size_t vi = pv(rng);
        const VolumeSet& vol = *vols[vi];
        const FeatureVolume* fv = features ? (*features)[vi] : nullptr;
        TrainingPatch p;
        for (int attempt = 0;; ++attempt) {
            p = std::move(sample_patches(vol, fv, patch, 1, rng())[0]);
            if (!class_balanced || attempt >= 9) break;
            if (std::any_of(p.labels.data.begin(), p.labels.data.end(),
                            [](std::uint8_t l) { return l != 0; }))
                break;
        }
        const std::size_t C = p.image.shape[0];
        const std::size_t sp = p.labels.numel();
        if (i == 0) {
            b.input = Tensor({count, C, patch[0], patch[1], patch[2]});
            b.labels = LabelVolume({count, patch[0], patch[1], patch[2]});
        }
        std::copy_n(p.image.data.data(), C * sp, b.input.data.data() + i * C * sp);
        std::copy_n(p.labels.data.data(), sp, b.labels.data.data() + i * sp);
    }
    return b;
}

// Forward + combined loss + backward on one batch; returns the loss value.
// Parameter gradients land in the network's store (caller zeroes them).
double batch_pass(Network<float>& net, const Batch& batch, const TargetWeights& targets,
                  double c_main, const std::vector<double>& c_k, bool use_aux) {
    Graph g;
    auto res = net.forward(g, batch.input, RunMode::Train);
    Tensor weights = compute_voxel_weights<float>(batch.labels, targets);
    const std::size_t normalizer = batch.labels.numel();
    int main_prob = softmax_channels(g, res.main_logits);
    int main_loss = weighted_cross_entropy(g, main_prob, batch.labels, weights, normalizer);
    int combined = main_loss;
    if (use_aux && !res.aux_logits.empty()) {
        if (c_k.size() != res.aux_logits.size())
            throw std::invalid_argument("loss coefficients: expected " +
                                        std::to_string(res.aux_logits.size()) + " c_k entries, got " +
                                        std::to_string(c_k.size()));
        std::vector<int> terms{main_loss};
        std::vector<float> coefs{static_cast<float>(c_main)};
        for (std::size_t k = 0; k < res.aux_logits.size(); ++k) {
            int p = softmax_channels(g, res.aux_logits[k]);
            terms.push_back(weighted_cross_entropy(g, p, batch.labels, weights, normalizer));
            coefs.push_back(static_cast<float>(c_k[k]));
        }
        combined = weighted_sum_scalars(g, terms, coefs);
    }
    g.backward(combined);
    return static_cast<double>(g.value(combined)[0]);
}

struct MonitorSets {
    const std::vector<const VolumeSet*>* volumes = nullptr;
};

void append_monitor(TrainLogEntry& entry, Network<float>& net, Orientation o,
                    const std::vector<const VolumeSet*>& monitor_set, bool is_2d,
                    const std::array<std::size_t, 3>& patch) {
    std::vector<LabelVolume> preds;
    for (const VolumeSet* v : monitor_set)
        preds.push_back(is_2d ? segment_2d(net, *v, o) : segment_3d(net, *v, nullptr, patch));
    RegionScores s = mean_region_scores(preds, monitor_set);
    entry.monitor_wt = s.wt;
    entry.monitor_tc = s.tc;
    entry.monitor_ec = s.ec;
}

TrainOutcome train_loop(Network<float> net, const OptimizerConfig& opt_cfg,
                        std::size_t iterations, const TargetWeights& targets, double c_main,
                        const std::vector<double>& c_k, bool use_aux,
                        const std::function<Batch(std::mt19937&)>& next_batch, std::uint32_t seed,
                        const std::vector<const VolumeSet*>& monitor_set, Orientation orientation,
                        bool is_2d, const std::array<std::size_t, 3>& patch,
                        std::size_t monitor_every) {
    std::mt19937 rng(seed);
    NormSgd<float> opt(opt_cfg, net.params().trainable_count());
    std::vector<TrainLogEntry> log;
    std::vector<float> total(net.params().trainable_count());
    for (std::size_t it = 1; it <= iterations; ++it) {
        std::fill(total.begin(), total.end(), 0.0f);
        double loss_n = 0;
        for (std::size_t b = 0; b < opt_cfg.batches_per_iteration; ++b) {
            Batch batch = next_batch(rng);
            net.params().zero_grads();
            double loss;
            try {
                loss = batch_pass(net, batch, targets, c_main, c_k, use_aux);
            } catch (const std::runtime_error& e) {
                throw std::runtime_error("iteration " + std::to_string(it) + ": " + e.what());
            }
            loss_n += loss;
            accumulate_gradient(total, net.params().flatten_grads(), b);
        }
        std::vector<float> params = net.params().flatten_values();
        if (!opt.step(params, total))
            std::cerr << "warning: zero-norm gradient at iteration " << it << ", update skipped\n";
        net.params().assign_values(params);
        opt.schedule_update(loss_n);
        TrainLogEntry entry{it, loss_n, opt.alpha(), opt.window()};
        if (monitor_every > 0 && !monitor_set.empty() &&
            (it % monitor_every == 0 || it == iterations))
            append_monitor(entry, net, orientation, monitor_set, is_2d, patch);
        log.push_back(entry);
    }
    return TrainOutcome{std::move(net), std::move(log)};
}

void require_labels(const std::vector<const VolumeSet*>& vols, const char* who) {
    if (vols.empty()) throw std::invalid_argument(std::string(who) + ": empty training set");
    for (const VolumeSet* v : vols)
        if (!v->labels)
            throw std::invalid_argument(std::string(who) + ": volume " + v->patient_id +
                                        " has no labels");
}

}  // namespace

TrainOutcome train_2d(const ModelConfig& model_cfg, const std::vector<const VolumeSet*>& train_set,
                      Orientation orientation, const RunConfig& cfg, std::uint32_t seed,
                      const std::vector<const VolumeSet*>& monitor_set,
                      const ParamStore<float>* pretrained) {
    require_labels(train_set, "train_2d");
    if (!is_2d_variant(model_cfg.variant))
        throw std::invalid_argument("train_2d: model config is not a 2D variant");
    for (const VolumeSet* v : train_set)
        for (bool present : v->modality_present)
            if (!present)
                throw std::invalid_argument("train_2d: volume " + v->patient_id +
                                            " is missing a modality; joint training needs all");
    Network<float> net(model_cfg, seed);
    if (pretrained) net.params().copy_matching(*pretrained);
    TargetWeights targets(cfg.targets_2d);
    auto next = [&](std::mt19937& rng) {
        return make_slice_batch(train_set, orientation, cfg.slices_per_batch, -1, rng);
    };
    return train_loop(std::move(net), cfg.optimizer_2d, cfg.iterations_2d, targets, cfg.c_main,
                      cfg.c_k, true, next, seed + 1, monitor_set, orientation, true, cfg.patch,
                      cfg.monitor_every);
}

TrainOutcome pretrain_subnetwork(const ModelConfig& model_cfg, std::size_t modality_index,
                                 const std::vector<const VolumeSet*>& train_set,
                                 Orientation orientation, const RunConfig& cfg,
                                 std::uint32_t seed) {
    require_labels(train_set, "pretrain_subnetwork");
    std::vector<const VolumeSet*> with_modality;
    for (const VolumeSet* v : train_set)
        if (modality_index < v->modality_present.size() && v->modality_present[modality_index])
            with_modality.push_back(v);
    if (with_modality.empty())
        throw std::invalid_argument("pretrain_subnetwork: no volume provides modality " +
                                    std::to_string(modality_index));
    Network<float> net =
        Network<float>::subnetwork_only(model_cfg, modality_index, seed);
    TargetWeights targets(cfg.targets_2d);
    auto next = [&](std::mt19937& rng) {
        return make_slice_batch(with_modality, orientation, cfg.slices_per_batch,
                                static_cast<int>(modality_index), rng);
    };
    // The subnetwork trains against its auxiliary loss alone.
    return train_loop(std::move(net), cfg.optimizer_2d, cfg.iterations_2d, targets, 1.0, {},
                      false, next, seed + 1, {}, orientation, true, cfg.patch, 0);
}

TrainOutcome train_3d(const ModelConfig& model_cfg, const std::vector<const VolumeSet*>& train_set,
                      const std::vector<const FeatureVolume*>* features, const RunConfig& cfg,
                      std::uint32_t seed) {
    require_labels(train_set, "train_3d");
    if (is_2d_variant(model_cfg.variant))
        throw std::invalid_argument("train_3d: model config is a 2D variant");
    if (needs_features(model_cfg.variant)) {
        if (!features || features->size() != train_set.size())
            throw std::invalid_argument("train_3d: variant " +
                                        variant_to_string(model_cfg.variant) +
                                        " requires a feature volume per training patient");
        for (const FeatureVolume* f : *features)
            if (!f) throw std::invalid_argument("train_3d: missing feature volume");
    } else if (features) {
        std::cerr << "warning: standard 3D model ignores provided feature files\n";
        features = nullptr;
    }
    Network<float> net(model_cfg, seed);
    TargetWeights targets(cfg.targets_3d);
    auto next = [&](std::mt19937& rng) {
        return make_patch_batch(train_set, features, cfg.patch, cfg.patches_per_batch,
                                cfg.class_balanced_sampling, rng);
    };
    return train_loop(std::move(net), cfg.optimizer_3d, cfg.iterations_3d, targets, 1.0, {},
                      false, next, seed + 1, {}, Orientation::Axial, false, cfg.patch,
                      cfg.monitor_every);
}

std::vector<FeatureVolume> extract_dataset_features(const std::vector<const VolumeSet*>& dataset,
                                                    Network<float>& axial_net,
                                                    Network<float>& coronal_net,
                                                    Network<float>& sagittal_net) {
    std::vector<FeatureVolume> out;
    out.reserve(dataset.size());
    for (const VolumeSet* v : dataset)
        out.push_back(extract_features(*v, axial_net, coronal_net, sagittal_net));
    return out;
}

void extract_training_features(const std::vector<const VolumeSet*>& dataset,
                               Network<float>& axial_net, Network<float>& coronal_net,
                               Network<float>& sagittal_net, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    const std::size_t C = axial_net.classes();
    for (const VolumeSet* v : dataset) {
        FeatureVolume f = extract_features(*v, axial_net, coronal_net, sagittal_net);
        const std::string base = out_dir + "/" + v->patient_id;
        write_mvol(f.features, base + ".mvol");
        std::ofstream sidecar(base + ".channels.txt");
        for (std::size_t oi = 0; oi < 3; ++oi)
            sidecar << orientation_name(kOrientations[oi]) << ": channels " << oi * C << "-"
                    << (oi + 1) * C - 1 << " (logits, classes 0-" << C - 1 << ")\n";
    }
}

namespace {

LabelVolume argmax_labels(const Tensor& logits_volume) {
    // logits_volume: [C, Z, Y, X]
    const std::size_t C = logits_volume.shape[0];
    const std::size_t sp = logits_volume.numel() / C;
    LabelVolume out({logits_volume.shape[1], logits_volume.shape[2], logits_volume.shape[3]});
    for (std::size_t i = 0; i < sp; ++i) {
        std::size_t best = 0;
        float best_v = logits_volume.data[i];
        for (std::size_t c = 1; c < C; ++c) {
            const float v = logits_volume.data[c * sp + i];
            if (v > best_v) {
                best_v = v;
                best = c;
            }
        }
        out[i] = static_cast<std::uint8_t>(best);
    }
    return out;
}

}  // namespace

LabelVolume segment_2d(Network<float>& net, const VolumeSet& volume, Orientation orientation) {
    const auto sp = volume.spatial();
    const std::size_t C = net.classes();
    Tensor logits_vol({C, sp[0], sp[1], sp[2]});
    const std::size_t n = slice_count(sp, orientation);
    for (std::size_t s = 0; s < n; ++s) {
        Tensor slice = extract_slice(volume.image, orientation, s);
        Tensor batch({1, slice.shape[0], slice.shape[1], slice.shape[2]});
        batch.data = slice.data;
        Graph g;
        auto res = net.forward(g, batch, RunMode::Infer);
        const Tensor& logits = g.value(res.main_logits);
        Tensor out_slice({C, slice.shape[1], slice.shape[2]});
        out_slice.data.assign(logits.data.begin(), logits.data.end());
        insert_slice(logits_vol, out_slice, orientation, s);
    }
    return argmax_labels(logits_vol);
}

LabelVolume segment_3d(Network<float>& net, const VolumeSet& volume, const FeatureVolume* features,
                       const std::array<std::size_t, 3>& patch) {
    const auto sp = volume.spatial();
    for (std::size_t d = 0; d < 3; ++d)
        if (patch[d] > sp[d]) throw std::invalid_argument("segment_3d: patch exceeds volume");
    const std::size_t K = volume.modalities();
    const std::size_t FC = features ? features->features.shape[0] : 0;
    if (net.input_channels() != K + FC)
        throw std::invalid_argument("segment_3d: network expects " +
                                    std::to_string(net.input_channels()) + " channels, data has " +
                                    std::to_string(K + FC));
    const std::size_t C = net.classes();
    Tensor logits_vol({C, sp[0], sp[1], sp[2]});

    auto origins = [&](std::size_t extent, std::size_t p) {
        std::vector<std::size_t> o;
        for (std::size_t v = 0;; v += p) {
            o.push_back(std::min(v, extent - p));
            if (v + p >= extent) break;
        }
        return o;
    };
    for (std::size_t oz : origins(sp[0], patch[0]))
        for (std::size_t oy : origins(sp[1], patch[1]))
            for (std::size_t ox : origins(sp[2], patch[2])) {
                Tensor in({1, K + FC, patch[0], patch[1], patch[2]});
                auto copy_block = [&](const Tensor& src, std::size_t src_c, std::size_t dst_c) {
                    for (std::size_t z = 0; z < patch[0]; ++z)
                        for (std::size_t y = 0; y < patch[1]; ++y) {
                            const float* s = src.data.data() +
                                             ((src_c * sp[0] + oz + z) * sp[1] + oy + y) * sp[2] +
                                             ox;
                            float* d = in.data.data() +
                                       ((dst_c * patch[0] + z) * patch[1] + y) * patch[2];
                            std::copy_n(s, patch[2], d);
                        }
                };
                for (std::size_t c = 0; c < K; ++c) copy_block(volume.image, c, c);
                for (std::size_t c = 0; c < FC; ++c) copy_block(features->features, c, K + c);
                Graph g;
                auto res = net.forward(g, in, RunMode::Infer);
                const Tensor& logits = g.value(res.main_logits);
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t z = 0; z < patch[0]; ++z)
                        for (std::size_t y = 0; y < patch[1]; ++y) {
                            const float* s = logits.data.data() +
                                             ((c * patch[0] + z) * patch[1] + y) * patch[2];
                            float* d = logits_vol.data.data() +
                                       ((c * sp[0] + oz + z) * sp[1] + oy + y) * sp[2] + ox;
                            std::copy_n(s, patch[2], d);
                        }
            }
    return argmax_labels(logits_vol);
}

RegionScores mean_region_scores(const std::vector<LabelVolume>& predictions,
                                const std::vector<const VolumeSet*>& truth_volumes) {
    if (predictions.size() != truth_volumes.size() || predictions.empty())
        throw std::invalid_argument("mean_region_scores: size mismatch or empty");
    RegionScores mean;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (!truth_volumes[i]->labels)
            throw std::invalid_argument("mean_region_scores: missing ground truth");
        RegionScores s = evaluate(predictions[i], *truth_volumes[i]->labels);
        mean.wt += s.wt;
        mean.tc += s.tc;
        mean.ec += s.ec;
    }
    const double n = static_cast<double>(predictions.size());
    mean.wt /= n;
    mean.tc /= n;
    mean.ec /= n;
    return mean;
}

EnsembleOutcome run_ensemble_protocol(const std::vector<const VolumeSet*>& train_set,
                                      const std::vector<const VolumeSet*>& test_set,
                                      const ModelConfig& model1_cfg, const ModelConfig& model2_cfg,
                                      const ModelConfig& variant_a, const ModelConfig& variant_b,
                                      const ModelConfig& variant_c, const RunConfig& cfg,
                                      std::uint32_t seed) {
    EnsembleOutcome out;
    const ModelConfig* sources[2] = {&model1_cfg, &model2_cfg};
    const ModelConfig* variants[3] = {&variant_a, &variant_b, &variant_c};
    for (int src = 0; src < 2; ++src) {
        // Three orientation versions of the 2D network for this source.
        std::vector<Network<float>> nets;
        for (std::size_t oi = 0; oi < 3; ++oi) {
            auto r = train_2d(*sources[src], train_set, kOrientations[oi], cfg,
                              seed + 100 * (src + 1) + static_cast<std::uint32_t>(oi));
            nets.push_back(std::move(r.net));
        }
        std::vector<FeatureVolume> train_feats =
            extract_dataset_features(train_set, nets[0], nets[1], nets[2]);
        std::vector<FeatureVolume> test_feats =
            extract_dataset_features(test_set, nets[0], nets[1], nets[2]);
        std::vector<const FeatureVolume*> train_feat_ptrs;
        for (const auto& f : train_feats) train_feat_ptrs.push_back(&f);
        for (int var = 0; var < 3; ++var) {
            auto r = train_3d(*variants[var], train_set, &train_feat_ptrs, cfg,
                              seed + 1000 * (src + 1) + static_cast<std::uint32_t>(var));
            std::vector<LabelVolume> segs;
            for (std::size_t p = 0; p < test_set.size(); ++p)
                segs.push_back(segment_3d(r.net, *test_set[p], &test_feats[p], cfg.patch));
            out.member_segmentations.push_back(std::move(segs));
            out.member_names.push_back(variant_to_string(variants[var]->variant) +
                                       "+features_model" + std::to_string(src + 1));
        }
    }
    for (std::size_t p = 0; p < test_set.size(); ++p) {
        std::vector<LabelVolume> votes;
        for (const auto& member : out.member_segmentations) votes.push_back(member[p]);
        out.merged.push_back(merge_segmentations(votes, cfg.thresholds));
    }
    return out;
}

void write_training_log(const std::vector<TrainLogEntry>& log, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open log file: " + path);
    f << "iteration\tloss\talpha\twindow\tmonitor_wt\tmonitor_tc\tmonitor_ec\n";
    for (const auto& e : log)
        f << e.iteration << '\t' << e.loss << '\t' << e.alpha << '\t' << e.window << '\t'
          << e.monitor_wt << '\t' << e.monitor_tc << '\t' << e.monitor_ec << '\n';
}

}  // namespace mseg
