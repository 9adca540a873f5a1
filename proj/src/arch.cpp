#include "mseg/arch.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace mseg {

namespace {

// Spatial scale of each layer's output relative to the input (denominator
// form: scale 1 = full resolution, 2 = halved, ...).
std::vector<double> layer_scales(const ArchitectureSpec& spec) {
    std::vector<double> scales;
    double cur = 1.0;
    for (const auto& l : spec.layers) {
        switch (l.kind) {
            case LayerKind::Conv:
            case LayerKind::Classify:
                cur *= static_cast<double>(l.stride);
                break;
            case LayerKind::Pool:
                cur *= static_cast<double>(l.window);
                break;
            case LayerKind::Upsample:
                cur /= static_cast<double>(l.factor);
                break;
            default:
                break;
        }
        scales.push_back(cur);
    }
    return scales;
}

}  // namespace

bool ArchitectureSpec::has_classify() const {
    return std::any_of(layers.begin(), layers.end(),
                       [](const LayerDesc& l) { return l.kind == LayerKind::Classify; });
}

void ArchitectureSpec::validate(bool require_classify) const {
    if (dims != 2 && dims != 3) throw std::invalid_argument("architecture: dims must be 2 or 3");
    if (layers.empty()) throw std::invalid_argument("architecture: no layers");
    const auto scales = layer_scales(*this);
    int classify_count = 0;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        if (l.kind == LayerKind::Classify) {
            ++classify_count;
            if (i + 1 != layers.size())
                throw std::invalid_argument("architecture: classify must be the final layer");
        }
        if (l.kind == LayerKind::Conv && l.maps == 0)
            throw std::invalid_argument("architecture: conv layer needs a positive map count");
        if (l.kind == LayerKind::Concat) {
            if (l.concat_with < 0 || static_cast<std::size_t>(l.concat_with) >= i)
                throw std::invalid_argument(
                    "architecture: concat must reference an earlier layer");
            const double here = i == 0 ? 1.0 : scales[i - 1];
            if (scales[l.concat_with] != here)
                throw std::invalid_argument(
                    "architecture: concat target is at a different spatial scale");
        }
    }
    if (classify_count > 1)
        throw std::invalid_argument("architecture: more than one classification layer");
    if (require_classify && classify_count != 1)
        throw std::invalid_argument("architecture: missing classification layer");
}

std::vector<std::size_t> receptive_field(const ArchitectureSpec& spec) {
    // rf/jump tracked per layer so concat can merge branch fields.
    std::vector<double> rfs, jumps;
    double rf = 1.0, jump = 1.0;
    for (const auto& l : spec.layers) {
        switch (l.kind) {
            case LayerKind::Conv:
                rf += static_cast<double>(l.kernel - 1) * jump;
                jump *= static_cast<double>(l.stride);
                break;
            case LayerKind::Classify:
                rf += static_cast<double>(l.kernel - 1) * jump;
                break;
            case LayerKind::Pool:
                rf += static_cast<double>(l.window - 1) * jump;
                jump *= static_cast<double>(l.window);
                break;
            case LayerKind::Upsample:
                jump /= static_cast<double>(l.factor);
                break;
            case LayerKind::Concat:
                rf = std::max(rf, rfs[l.concat_with]);
                break;
            case LayerKind::Batchnorm:
            case LayerKind::ImportFeatures:
                break;
        }
        rfs.push_back(rf);
        jumps.push_back(jump);
    }
    return std::vector<std::size_t>(spec.dims, static_cast<std::size_t>(rf + 0.5));
}

ArchitectureSpec parse_architecture(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    ArchitectureSpec spec;
    spec.dims = j.value("dims", 3);
    static const std::map<std::string, LayerKind> kinds = {
        {"conv", LayerKind::Conv},       {"pool", LayerKind::Pool},
        {"upsample", LayerKind::Upsample}, {"concat", LayerKind::Concat},
        {"batchnorm", LayerKind::Batchnorm}, {"classify", LayerKind::Classify},
        {"import_features", LayerKind::ImportFeatures}};
    for (const auto& lj : j.at("layers")) {
        LayerDesc l;
        const std::string kind = lj.at("kind");
        auto it = kinds.find(kind);
        if (it == kinds.end()) throw std::invalid_argument("unknown layer kind: " + kind);
        l.kind = it->second;
        l.kernel = lj.value("kernel", l.kind == LayerKind::Classify ? 1 : 3);
        l.maps = lj.value("maps", 0);
        l.stride = lj.value("stride", 1);
        l.window = lj.value("window", 2);
        l.factor = lj.value("factor", 2);
        l.concat_with = lj.value("with", -1);
        spec.layers.push_back(l);
    }
    return spec;
}

ArchitectureSpec load_architecture(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open architecture file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_architecture(ss.str());
}

}  // namespace mseg
