#include "mseg/vote.hpp"

#include <cassert>

namespace mseg {

namespace {
inline bool passes(double proportion, double threshold, VoteComparison cmp) {
    return cmp == VoteComparison::GreaterEqual ? proportion >= threshold
                                               : proportion > threshold;
}
}  // namespace

std::uint8_t decide_voxel(const VoteCounts& votes, const Thresholds& t) {
    t.validate();
    const std::uint32_t n = votes.total();
    if (n < 1) throw std::invalid_argument("decide_voxel: empty vote tally");
    const std::uint32_t tumor = votes.v1 + votes.v2 + votes.v3;
    if (!passes(static_cast<double>(tumor) / n, t.t_tumor, t.comparison)) return 0;
    const std::uint32_t core = votes.v1 + votes.v3;
    if (!passes(static_cast<double>(core) / tumor, t.t_core, t.comparison)) return 2;
    // Reaching here requires core/tumor to pass a positive threshold, so
    // v1 + v3 >= 1 and the final ratio is well defined.
    assert(core >= 1);
    if (!passes(static_cast<double>(votes.v3) / core, t.t_enhancing, t.comparison)) return 1;
    return 3;
}

LabelVolume merge_segmentations(const std::vector<LabelVolume>& segmentations,
                                const Thresholds& t) {
    if (segmentations.empty()) throw std::invalid_argument("merge: no segmentations");
    const auto& shape = segmentations[0].shape;
    for (const auto& s : segmentations)
        if (s.shape != shape)
            throw std::invalid_argument("merge: extent mismatch " + shape_str(s.shape) + " vs " +
                                        shape_str(shape));
    LabelVolume out(shape);
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) {
        VoteCounts v;
        for (const auto& s : segmentations) {
            switch (s[i]) {
                case 0: ++v.v0; break;
                case 1: ++v.v1; break;
                case 2: ++v.v2; break;
                case 3: ++v.v3; break;
                default: throw std::invalid_argument("merge: label value out of range");
            }
        }
        out[i] = decide_voxel(v, t);
    }
    return out;
}

std::vector<SweepPoint> sensitivity_sweep(const std::vector<LabelVolume>& segmentations,
                                          const std::vector<Thresholds>& threshold_grid) {
    std::vector<SweepPoint> out;
    out.reserve(threshold_grid.size());
    for (const auto& t : threshold_grid) {
        LabelVolume merged = merge_segmentations(segmentations, t);
        SweepPoint p;
        p.thresholds = t;
        for (std::uint8_t l : merged.data) {
            if (l == 1 || l == 2 || l == 3) ++p.sizes.whole_tumor;
            if (l == 1 || l == 3) ++p.sizes.tumor_core;
            if (l == 3) ++p.sizes.enhancing_core;
        }
        out.push_back(p);
    }
    return out;
}

}  // namespace mseg
