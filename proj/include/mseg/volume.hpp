#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mseg/network.hpp"
#include "mseg/tensor.hpp"

namespace mseg {

// One patient's co-registered multi-channel scan. Image layout [K, Z, Y, X];
// labels, when present, share the spatial extents with values in {0..3}.
struct VolumeSet {
    std::string patient_id;
    Tensor image;
    std::optional<LabelVolume> labels;
    std::vector<bool> modality_present;

    std::size_t modalities() const { return image.shape[0]; }
    std::vector<std::size_t> spatial() const {
        return {image.shape[1], image.shape[2], image.shape[3]};
    }
};

enum class Orientation { Axial, Coronal, Sagittal };
constexpr std::array<Orientation, 3> kOrientations{Orientation::Axial, Orientation::Coronal,
                                                   Orientation::Sagittal};
const char* orientation_name(Orientation o);

// Stack of per-orientation 2D class logits restacked into a volume:
// channels [3*C, Z, Y, X] in fixed axial, coronal, sagittal block order,
// without softmax normalization.
struct FeatureVolume {
    Tensor features;
    std::string source_model;
};

// Divide each present modality by the median of its non-zero voxels, then
// multiply by `constant`. Zero voxels stay zero.
void normalize_intensity(VolumeSet& volume, double constant = 1.0);

// Number of slices of a volume along one orientation.
std::size_t slice_count(const std::vector<std::size_t>& spatial, Orientation o);

// One slice as a [C, H, W] tensor (axial: H=Y W=X; coronal: H=Z W=X;
// sagittal: H=Z W=Y).
Tensor extract_slice(const Tensor& volume, Orientation o, std::size_t index);

// Writes a [C, H, W] slice back at the given index (inverse of extract_slice).
void insert_slice(Tensor& volume, const Tensor& slice, Orientation o, std::size_t index);

// Per-slice inference of the three orientation networks, restacked and
// concatenated in fixed order.
FeatureVolume extract_features(const VolumeSet& volume, Network<float>& axial_net,
                               Network<float>& coronal_net, Network<float>& sagittal_net);

struct TrainingPatch {
    Tensor image;  // [K (+3C), pz, py, px]
    LabelVolume labels;
    std::array<std::size_t, 3> origin{};  // z, y, x
};

// Uniformly sampled patch origins; deterministic under a fixed seed.
std::vector<TrainingPatch> sample_patches(const VolumeSet& volume,
                                          const FeatureVolume* features,
                                          const std::array<std::size_t, 3>& patch,
                                          std::size_t count, std::uint32_t rng_seed);

// Desk-scale synthetic stand-in volumes: nested ellipsoidal tumor regions
// (edema shell > core > enhancing core) with modality-dependent intensity
// offsets and Gaussian noise, all four classes present.
std::vector<VolumeSet> generate_synthetic(std::uint32_t rng_seed, std::size_t size,
                                          std::size_t num_patients);

}  // namespace mseg
