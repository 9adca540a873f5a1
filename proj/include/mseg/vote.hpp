#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <vector>

#include "mseg/tensor.hpp"

namespace mseg {

// Per-voxel vote tally across ensemble members.
struct VoteCounts {
    std::uint32_t v0 = 0, v1 = 0, v2 = 0, v3 = 0;
    std::uint32_t total() const { return v0 + v1 + v2 + v3; }
};

// "Proportion >= threshold passes" keeps unanimity (T = 1) satisfiable; the
// strict variant is exposed as an option.
enum class VoteComparison { GreaterEqual, Greater };

struct Thresholds {
    double t_tumor = 0.4;
    double t_core = 0.3;
    double t_enhancing = 0.4;
    VoteComparison comparison = VoteComparison::GreaterEqual;

    void validate() const {
        for (double t : {t_tumor, t_core, t_enhancing})
            if (t <= 0.0 || t > 1.0)
                throw std::invalid_argument("vote threshold must be in (0, 1]");
    }
};

// Hierarchical vote tree: whole tumor, then core, then enhancing core.
std::uint8_t decide_voxel(const VoteCounts& votes, const Thresholds& t);

// Per-voxel tally + decide over n co-registered label volumes.
LabelVolume merge_segmentations(const std::vector<LabelVolume>& segmentations,
                                const Thresholds& t);

struct RegionSizes {
    std::size_t whole_tumor = 0;
    std::size_t tumor_core = 0;
    std::size_t enhancing_core = 0;
};

struct SweepPoint {
    Thresholds thresholds;
    RegionSizes sizes;
};

// Region sizes of the merged output over a grid of threshold triples; used
// to pick thresholds by cross-validation.
std::vector<SweepPoint> sensitivity_sweep(const std::vector<LabelVolume>& segmentations,
                                          const std::vector<Thresholds>& threshold_grid);

}  // namespace mseg
