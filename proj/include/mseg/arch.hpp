#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace mseg {

enum class LayerKind { Conv, Pool, Upsample, Concat, Batchnorm, Classify, ImportFeatures };

struct LayerDesc {
    LayerKind kind = LayerKind::Conv;
    std::size_t kernel = 3;   // conv/classify
    std::size_t maps = 0;     // conv output channels
    std::size_t stride = 1;   // conv stride (isotropic)
    std::size_t window = 2;   // pool window; pool stride equals window
    std::size_t factor = 2;   // upsample factor
    int concat_with = -1;     // index of an earlier layer
};

// Declarative stack of layers. Channel counts at build time come from the
// input; the classification layer always has C maps.
struct ArchitectureSpec {
    std::size_t dims = 3;  // spatial rank
    std::vector<LayerDesc> layers;

    // Checks structural invariants: concat targets are earlier layers at the
    // same spatial scale; at most one classify layer and only at the end.
    void validate(bool require_classify) const;

    bool has_classify() const;
};

// Theoretical receptive field along each axis via the standard recurrence
// rf <- rf + (k-1)*jump, jump <- jump*stride; upsampling divides the jump
// and a concat merge takes the larger field.
std::vector<std::size_t> receptive_field(const ArchitectureSpec& spec);

// Parses a spec from its JSON text form.
ArchitectureSpec parse_architecture(const std::string& json_text);
ArchitectureSpec load_architecture(const std::string& path);

}  // namespace mseg
