#pragma once

#include <array>
#include <string>
#include <vector>

#include "mseg/tensor.hpp"

namespace mseg {

// BRATS tumor subregions as class sets: WT = {1,2,3}, TC = {1,3}, EC = {3}.
enum class Region { WholeTumor, TumorCore, EnhancingCore };

inline const char* region_name(Region r) {
    switch (r) {
        case Region::WholeTumor: return "WT";
        case Region::TumorCore: return "TC";
        case Region::EnhancingCore: return "EC";
    }
    return "?";
}

inline bool in_region(std::uint8_t label, Region r) {
    switch (r) {
        case Region::WholeTumor: return label == 1 || label == 2 || label == 3;
        case Region::TumorCore: return label == 1 || label == 3;
        case Region::EnhancingCore: return label == 3;
    }
    return false;
}

constexpr std::array<Region, 3> kRegions{Region::WholeTumor, Region::TumorCore,
                                         Region::EnhancingCore};

// 2|P∩T| / (|P|+|T|); both-empty returns 1 (correctly predicted absence).
double dice(const std::vector<bool>& prediction, const std::vector<bool>& truth);

struct RegionScores {
    double wt = 0, tc = 0, ec = 0;
    double operator[](Region r) const {
        switch (r) {
            case Region::WholeTumor: return wt;
            case Region::TumorCore: return tc;
            case Region::EnhancingCore: return ec;
        }
        return 0;
    }
};

// Per-region Dice of one multiclass segmentation against the ground truth.
RegionScores evaluate(const LabelVolume& prediction, const LabelVolume& truth);

struct SummaryStats {
    double mean = 0, stddev = 0, median = 0, q25 = 0, q75 = 0;
};

SummaryStats summarize(std::vector<double> scores);

}  // namespace mseg
