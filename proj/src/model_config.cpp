#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "mseg/network.hpp"

namespace mseg {

namespace {
const std::map<std::string, ModelVariant> kVariantNames = {
    {"2d_model1", ModelVariant::TwoD_1},      {"2d_model2", ModelVariant::TwoD_2},
    {"3d_standard", ModelVariant::ThreeD_standard}, {"2d3d_a", ModelVariant::TwoThreeD_A},
    {"2d3d_b", ModelVariant::TwoThreeD_B},    {"2d3d_c", ModelVariant::TwoThreeD_C}};
}

ModelVariant variant_from_string(const std::string& s) {
    auto it = kVariantNames.find(s);
    if (it == kVariantNames.end()) throw std::invalid_argument("unknown model variant: " + s);
    return it->second;
}

std::string variant_to_string(ModelVariant v) {
    for (const auto& [name, var] : kVariantNames)
        if (var == v) return name;
    return "?";
}

ModelConfig parse_model_config(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    ModelConfig cfg;
    cfg.variant = variant_from_string(j.at("variant"));
    cfg.classes = j.value("classes", 4);
    cfg.modalities = j.value("modalities", 4);
    auto sub_spec = [&](const char* key) {
        if (!j.contains(key)) throw std::invalid_argument(std::string("model config missing ") + key);
        return parse_architecture(j.at(key).dump());
    };
    const std::size_t dims = is_2d_variant(cfg.variant) ? 2 : 3;
    if (is_2d_variant(cfg.variant)) {
        cfg.subnetwork = sub_spec("subnetwork");
        cfg.trunk = sub_spec("trunk");
        cfg.subnetwork.dims = cfg.trunk.dims = dims;
    } else if (cfg.variant == ModelVariant::TwoThreeD_C) {
        cfg.stream = sub_spec("stream");
        cfg.head = sub_spec("head");
        cfg.stream.dims = cfg.head.dims = dims;
    } else {
        cfg.trunk = sub_spec("trunk");
        cfg.trunk.dims = dims;
    }
    return cfg;
}

ModelConfig load_model_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open model config: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_model_config(ss.str());
}

}  // namespace mseg
