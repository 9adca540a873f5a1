#pragma once

#include <array>
#include <string>
#include <vector>

#include "mseg/config.hpp"
#include "mseg/metrics.hpp"
#include "mseg/network.hpp"
#include "mseg/volume.hpp"

namespace mseg {

struct TrainLogEntry {
    std::size_t iteration = 0;
    double loss = 0;       // Loss^N of the iteration (sum over the N batches)
    double alpha = 0;
    std::size_t window = 0;
    // Monitoring Dice on the held-out split; -1 when not evaluated.
    double monitor_wt = -1, monitor_tc = -1, monitor_ec = -1;
};

struct TrainOutcome {
    Network<float> net;
    std::vector<TrainLogEntry> log;
};

// Step 1 of the cascade: one 2D network on one slicing orientation, trained
// with the convex combination of the main and auxiliary losses (2D targets).
TrainOutcome train_2d(const ModelConfig& model_cfg, const std::vector<const VolumeSet*>& train_set,
                      Orientation orientation, const RunConfig& cfg, std::uint32_t seed,
                      const std::vector<const VolumeSet*>& monitor_set = {},
                      const ParamStore<float>* pretrained = nullptr);

// Independent pretraining of one modality-specific subnetwork against its
// auxiliary classification loss, on the volumes that provide the modality.
TrainOutcome pretrain_subnetwork(const ModelConfig& model_cfg, std::size_t modality_index,
                                 const std::vector<const VolumeSet*>& train_set,
                                 Orientation orientation, const RunConfig& cfg,
                                 std::uint32_t seed);

// Step 3: a 3D network on sampled patches (3D targets), optionally with
// extracted 2D feature channels. `features`, when given, aligns with
// `train_set` by index.
TrainOutcome train_3d(const ModelConfig& model_cfg, const std::vector<const VolumeSet*>& train_set,
                      const std::vector<const FeatureVolume*>* features, const RunConfig& cfg,
                      std::uint32_t seed);

// Step 2: features for every patient, written as MVOL plus a channel sidecar.
void extract_training_features(const std::vector<const VolumeSet*>& dataset,
                               Network<float>& axial_net, Network<float>& coronal_net,
                               Network<float>& sagittal_net, const std::string& out_dir);

std::vector<FeatureVolume> extract_dataset_features(const std::vector<const VolumeSet*>& dataset,
                                                    Network<float>& axial_net,
                                                    Network<float>& coronal_net,
                                                    Network<float>& sagittal_net);

LabelVolume segment_2d(Network<float>& net, const VolumeSet& volume, Orientation orientation);
LabelVolume segment_3d(Network<float>& net, const VolumeSet& volume, const FeatureVolume* features,
                       const std::array<std::size_t, 3>& patch);

struct EnsembleOutcome {
    // member_segmentations[m][p]: member m's segmentation of test patient p.
    std::vector<std::vector<LabelVolume>> member_segmentations;
    std::vector<LabelVolume> merged;
    std::vector<std::string> member_names;
};

// Full protocol: variants {A, B, C} x feature sources {2D model 1, 2D model 2},
// merged with the vote tree.
EnsembleOutcome run_ensemble_protocol(const std::vector<const VolumeSet*>& train_set,
                                      const std::vector<const VolumeSet*>& test_set,
                                      const ModelConfig& model1_cfg, const ModelConfig& model2_cfg,
                                      const ModelConfig& variant_a, const ModelConfig& variant_b,
                                      const ModelConfig& variant_c, const RunConfig& cfg,
                                      std::uint32_t seed);

// Mean per-region Dice of predictions against the volumes' ground truth.
RegionScores mean_region_scores(const std::vector<LabelVolume>& predictions,
                                const std::vector<const VolumeSet*>& truth_volumes);

void write_training_log(const std::vector<TrainLogEntry>& log, const std::string& path);

}  // namespace mseg
