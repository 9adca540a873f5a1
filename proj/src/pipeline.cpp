#include "mseg/volume.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace mseg {

const char* orientation_name(Orientation o) {
    switch (o) {
        case Orientation::Axial: return "axial";
        case Orientation::Coronal: return "coronal";
        case Orientation::Sagittal: return "sagittal";
    }
    return "?";
}

void normalize_intensity(VolumeSet& volume, double constant) {
    const std::size_t K = volume.modalities();
    const std::size_t sp = volume.image.numel() / K;
    for (std::size_t k = 0; k < K; ++k) {
        if (k < volume.modality_present.size() && !volume.modality_present[k]) continue;
        float* m = volume.image.data.data() + k * sp;
        std::vector<float> nonzero;
        nonzero.reserve(sp);
        for (std::size_t i = 0; i < sp; ++i)
            if (m[i] != 0.0f) nonzero.push_back(m[i]);
        if (nonzero.empty())
            throw std::runtime_error("normalize_intensity: all-zero modality " +
                                     std::to_string(k) + " of patient " + volume.patient_id);
        const std::size_t mid = nonzero.size() / 2;
        std::nth_element(nonzero.begin(), nonzero.begin() + mid, nonzero.end());
        double median = nonzero[mid];
        if (nonzero.size() % 2 == 0) {
            const float lower = *std::max_element(nonzero.begin(), nonzero.begin() + mid);
            median = (median + lower) / 2.0;
        }
        const float scale = static_cast<float>(constant / median);
        for (std::size_t i = 0; i < sp; ++i) m[i] *= scale;
    }
}

std::size_t slice_count(const std::vector<std::size_t>& spatial, Orientation o) {
    switch (o) {
        case Orientation::Axial: return spatial[0];     // along z
        case Orientation::Coronal: return spatial[1];   // along y
        case Orientation::Sagittal: return spatial[2];  // along x
    }
    return 0;
}

Tensor extract_slice(const Tensor& volume, Orientation o, std::size_t index) {
    const std::size_t C = volume.shape[0], Z = volume.shape[1], Y = volume.shape[2],
                      X = volume.shape[3];
    auto at = [&](std::size_t c, std::size_t z, std::size_t y, std::size_t x) {
        return volume.data[((c * Z + z) * Y + y) * X + x];
    };
    switch (o) {
        case Orientation::Axial: {
            if (index >= Z) throw std::out_of_range("axial slice index");
            Tensor s({C, Y, X});
            std::size_t i = 0;
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t y = 0; y < Y; ++y)
                    for (std::size_t x = 0; x < X; ++x) s[i++] = at(c, index, y, x);
            return s;
        }
        case Orientation::Coronal: {
            if (index >= Y) throw std::out_of_range("coronal slice index");
            Tensor s({C, Z, X});
            std::size_t i = 0;
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t z = 0; z < Z; ++z)
                    for (std::size_t x = 0; x < X; ++x) s[i++] = at(c, z, index, x);
            return s;
        }
        case Orientation::Sagittal: {
            if (index >= X) throw std::out_of_range("sagittal slice index");
            Tensor s({C, Z, Y});
            std::size_t i = 0;
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t z = 0; z < Z; ++z)
                    for (std::size_t y = 0; y < Y; ++y) s[i++] = at(c, z, y, index);
            return s;
        }
    }
    throw std::logic_error("unreachable");
}

void insert_slice(Tensor& volume, const Tensor& slice, Orientation o, std::size_t index) {
    const std::size_t C = volume.shape[0], Z = volume.shape[1], Y = volume.shape[2],
                      X = volume.shape[3];
    if (slice.shape[0] != C) throw std::invalid_argument("insert_slice: channel mismatch");
    auto at = [&](std::size_t c, std::size_t z, std::size_t y, std::size_t x) -> float& {
        return volume.data[((c * Z + z) * Y + y) * X + x];
    };
    std::size_t i = 0;
    switch (o) {
        case Orientation::Axial:
            if (slice.shape[1] != Y || slice.shape[2] != X)
                throw std::invalid_argument("insert_slice: axial extent mismatch");
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t y = 0; y < Y; ++y)
                    for (std::size_t x = 0; x < X; ++x) at(c, index, y, x) = slice[i++];
            return;
        case Orientation::Coronal:
            if (slice.shape[1] != Z || slice.shape[2] != X)
                throw std::invalid_argument("insert_slice: coronal extent mismatch");
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t z = 0; z < Z; ++z)
                    for (std::size_t x = 0; x < X; ++x) at(c, z, index, x) = slice[i++];
            return;
        case Orientation::Sagittal:
            if (slice.shape[1] != Z || slice.shape[2] != Y)
                throw std::invalid_argument("insert_slice: sagittal extent mismatch");
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t z = 0; z < Z; ++z)
                    for (std::size_t y = 0; y < Y; ++y) at(c, z, y, index) = slice[i++];
            return;
    }
}

FeatureVolume extract_features(const VolumeSet& volume, Network<float>& axial_net,
                               Network<float>& coronal_net, Network<float>& sagittal_net) {
    const std::size_t C = axial_net.classes();
    if (coronal_net.classes() != C || sagittal_net.classes() != C)
        throw std::invalid_argument("extract_features: class count mismatch between networks");
    const auto sp = volume.spatial();
    FeatureVolume out;
    out.features = Tensor({3 * C, sp[0], sp[1], sp[2]});

    Network<float>* nets[3] = {&axial_net, &coronal_net, &sagittal_net};
    for (std::size_t oi = 0; oi < 3; ++oi) {
        const Orientation o = kOrientations[oi];
        Network<float>& net = *nets[oi];
        // Per-orientation C-channel logit volume, restacked slice by slice.
        Tensor block({C, sp[0], sp[1], sp[2]});
        const std::size_t n_slices = slice_count(sp, o);
        for (std::size_t s = 0; s < n_slices; ++s) {
            Tensor slice = extract_slice(volume.image, o, s);
            Tensor batch({1, slice.shape[0], slice.shape[1], slice.shape[2]});
            batch.data = slice.data;
            Graph g;
            auto res = net.forward(g, batch, RunMode::Infer);
            const Tensor& logits = g.value(res.main_logits);
            if (logits.shape[2] != slice.shape[1] || logits.shape[3] != slice.shape[2])
                throw std::runtime_error("extract_features: network changed slice extents");
            Tensor out_slice({C, slice.shape[1], slice.shape[2]});
            out_slice.data.assign(logits.data.begin(), logits.data.end());
            insert_slice(block, out_slice, o, s);
        }
        std::copy(block.data.begin(), block.data.end(),
                  out.features.data.begin() + oi * C * sp[0] * sp[1] * sp[2]);
    }
    return out;
}

std::vector<TrainingPatch> sample_patches(const VolumeSet& volume,
                                          const FeatureVolume* features,
                                          const std::array<std::size_t, 3>& patch,
                                          std::size_t count, std::uint32_t rng_seed) {
    const auto sp = volume.spatial();
    for (std::size_t d = 0; d < 3; ++d)
        if (patch[d] > sp[d])
            throw std::invalid_argument("sample_patches: patch extent exceeds volume extent");
    if (!volume.labels) throw std::invalid_argument("sample_patches: volume has no labels");
    if (features && features->features.shape[1] != sp[0])
        throw std::invalid_argument("sample_patches: feature volume extent mismatch");

    const std::size_t K = volume.modalities();
    const std::size_t FC = features ? features->features.shape[0] : 0;
    std::mt19937 rng(rng_seed);
    std::vector<TrainingPatch> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::array<std::size_t, 3> origin{};
        for (std::size_t d = 0; d < 3; ++d) {
            std::uniform_int_distribution<std::size_t> dist(0, sp[d] - patch[d]);
            origin[d] = dist(rng);
        }
        TrainingPatch p;
        p.origin = origin;
        p.image = Tensor({K + FC, patch[0], patch[1], patch[2]});
        p.labels = LabelVolume({patch[0], patch[1], patch[2]});
        auto copy_block = [&](const Tensor& src, std::size_t src_c, std::size_t dst_c) {
            for (std::size_t z = 0; z < patch[0]; ++z)
                for (std::size_t y = 0; y < patch[1]; ++y) {
                    const float* s = src.data.data() +
                                     (((src_c * sp[0] + origin[0] + z) * sp[1] + origin[1] + y) *
                                      sp[2]) +
                                     origin[2];
                    float* d = p.image.data.data() +
                               ((dst_c * patch[0] + z) * patch[1] + y) * patch[2];
                    std::copy_n(s, patch[2], d);
                }
        };
        for (std::size_t c = 0; c < K; ++c) copy_block(volume.image, c, c);
        for (std::size_t c = 0; c < FC; ++c) copy_block(features->features, c, K + c);
        for (std::size_t z = 0; z < patch[0]; ++z)
            for (std::size_t y = 0; y < patch[1]; ++y) {
                const std::uint8_t* s = volume.labels->data.data() +
                                        ((origin[0] + z) * sp[1] + origin[1] + y) * sp[2] +
                                        origin[2];
                std::uint8_t* d =
                    p.labels.data.data() + (z * patch[1] + y) * patch[2];
                std::copy_n(s, patch[2], d);
            }
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<VolumeSet> generate_synthetic(std::uint32_t rng_seed, std::size_t size,
                                          std::size_t num_patients) {
    if (size < 32) throw std::invalid_argument("generate_synthetic: size must be >= 32");
    std::mt19937 rng(rng_seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 0.08);

    // Mean intensity per (modality, tissue): brain, edema, non-enhancing
    // core, enhancing core. Channel roles mirror T1 / post-contrast T1 /
    // T2 / FLAIR behavior.
    constexpr double kMeans[4][4] = {
        {1.00, 0.90, 0.80, 0.85},  // t1-like
        {1.00, 1.00, 0.90, 1.60},  // contrast-t1-like: enhancing core bright
        {1.00, 1.30, 1.40, 1.30},  // t2-like
        {1.00, 1.60, 1.30, 1.20},  // flair-like: edema bright
    };

    std::vector<VolumeSet> out;
    const double s = static_cast<double>(size);
    for (std::size_t pid = 0; pid < num_patients; ++pid) {
        VolumeSet v;
        v.patient_id = "synthetic-" + std::to_string(rng_seed) + "-" + std::to_string(pid);
        v.image = Tensor({4, size, size, size});
        v.labels = LabelVolume({size, size, size});
        v.modality_present.assign(4, true);

        const double brain_r = s * (0.40 + 0.04 * unit(rng));
        const double cx = s / 2, cy = s / 2, cz = s / 2;
        // Nested radii with voxel-scale gaps so every class occupies a
        // non-empty shell on the lattice.
        const double r_wt = std::max(7.5, brain_r * (0.45 + 0.15 * unit(rng)));
        const double r_tc = r_wt - (2.0 + unit(rng));
        const double r_ec = std::max(2.2, r_tc - (2.0 + unit(rng)));
        // Tumor center inside the brain with the whole tumor fully enclosed.
        const double max_off = std::max(0.0, brain_r - 1.2 * r_wt - 2.0);
        const double tx = cx + (unit(rng) * 2 - 1) * max_off * 0.6;
        const double ty = cy + (unit(rng) * 2 - 1) * max_off * 0.6;
        const double tz = cz + (unit(rng) * 2 - 1) * max_off * 0.6;
        // Shared per-axis anisotropy preserves the nesting gaps.
        double ax[3], bx[3], ex[3];
        for (int d = 0; d < 3; ++d) {
            const double f = 0.85 + 0.3 * unit(rng);
            ax[d] = r_wt * f;
            bx[d] = r_tc * f;
            ex[d] = r_ec * f;
        }
        // Per-patient global scale per modality; normalization removes it.
        double lambda[4];
        for (int k = 0; k < 4; ++k) lambda[k] = 0.5 + 1.5 * unit(rng);

        for (std::size_t z = 0; z < size; ++z)
            for (std::size_t y = 0; y < size; ++y)
                for (std::size_t x = 0; x < size; ++x) {
                    const double dzb = (z - cz) / brain_r, dyb = (y - cy) / brain_r,
                                 dxb = (x - cx) / brain_r;
                    const std::size_t li = (z * size + y) * size + x;
                    if (dzb * dzb + dyb * dyb + dxb * dxb > 1.0) continue;  // background stays 0
                    auto inside = [&](const double r[3]) {
                        const double dz = (z - tz) / r[0], dy = (y - ty) / r[1],
                                     dx = (x - tx) / r[2];
                        return dz * dz + dy * dy + dx * dx <= 1.0;
                    };
                    int tissue = 0;  // brain
                    std::uint8_t label = 0;
                    if (inside(ex)) {
                        tissue = 3;
                        label = 3;
                    } else if (inside(bx)) {
                        tissue = 2;
                        label = 1;
                    } else if (inside(ax)) {
                        tissue = 1;
                        label = 2;
                    }
                    (*v.labels)[li] = label;
                    for (int k = 0; k < 4; ++k) {
                        const double val = (kMeans[k][tissue] + noise(rng)) * lambda[k];
                        v.image.data[((static_cast<std::size_t>(k) * size + z) * size + y) * size +
                                     x] = static_cast<float>(std::max(0.05, val));
                    }
                }
        out.push_back(std::move(v));
    }
    return out;
}

}  // namespace mseg
