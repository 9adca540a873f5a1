#include "mseg/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace mseg {

void RunConfig::validate() const {
    optimizer_2d.validate();
    optimizer_3d.validate();
    TargetWeights check_2d(targets_2d);
    TargetWeights check_3d(targets_3d);
    (void)check_2d;
    (void)check_3d;
    double sum = c_main;
    for (double c : c_k) {
        if (c < 0 || c > 1) throw std::invalid_argument("config: c_k outside [0,1]");
        sum += c;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("config: loss coefficients must sum to 1");
    thresholds.validate();
    for (std::size_t p : patch)
        if (p == 0) throw std::invalid_argument("config: zero patch extent");
    if (normalization_constant <= 0)
        throw std::invalid_argument("config: normalization constant must be positive");
    if (slices_per_batch == 0 || patches_per_batch == 0)
        throw std::invalid_argument("config: batch sizes must be positive");
}

namespace {

OptimizerConfig parse_optimizer(const nlohmann::json& j, OptimizerConfig base) {
    base.mu = j.value("mu", base.mu);
    base.batches_per_iteration = j.value("batches", base.batches_per_iteration);
    base.alpha_init = j.value("alpha_init", base.alpha_init);
    base.alpha_min = j.value("alpha_min", base.alpha_min);
    base.window = j.value("window", base.window);
    base.d_loss = j.value("d_loss", base.d_loss);
    return base;
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    RunConfig cfg;
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("optimizer_2d")) cfg.optimizer_2d = parse_optimizer(j["optimizer_2d"], cfg.optimizer_2d);
    if (j.contains("optimizer_3d")) cfg.optimizer_3d = parse_optimizer(j["optimizer_3d"], cfg.optimizer_3d);
    if (j.contains("loss")) {
        const auto& l = j["loss"];
        cfg.targets_2d = l.value("targets_2d", cfg.targets_2d);
        cfg.targets_3d = l.value("targets_3d", cfg.targets_3d);
        cfg.c_main = l.value("c_main", cfg.c_main);
        cfg.c_k = l.value("c_k", cfg.c_k);
    }
    if (j.contains("ensemble")) {
        const auto& e = j["ensemble"];
        cfg.thresholds.t_tumor = e.value("t_tumor", cfg.thresholds.t_tumor);
        cfg.thresholds.t_core = e.value("t_core", cfg.thresholds.t_core);
        cfg.thresholds.t_enhancing = e.value("t_enh", cfg.thresholds.t_enhancing);
        const std::string cmp = e.value("comparison", "ge");
        if (cmp == "ge") cfg.thresholds.comparison = VoteComparison::GreaterEqual;
        else if (cmp == "gt") cfg.thresholds.comparison = VoteComparison::Greater;
        else throw std::invalid_argument("config: comparison must be 'ge' or 'gt'");
    }
    if (j.contains("pipeline")) {
        const auto& p = j["pipeline"];
        if (p.contains("patch")) {
            auto v = p["patch"].get<std::vector<std::size_t>>();
            if (v.size() != 3) throw std::invalid_argument("config: patch needs 3 extents");
            cfg.patch = {v[0], v[1], v[2]};
        }
        cfg.normalization_constant = p.value("normalization_constant", cfg.normalization_constant);
        cfg.class_balanced_sampling = p.value("class_balanced_sampling", cfg.class_balanced_sampling);
    }
    if (j.contains("training")) {
        const auto& t = j["training"];
        cfg.iterations_2d = t.value("iterations_2d", cfg.iterations_2d);
        cfg.iterations_3d = t.value("iterations_3d", cfg.iterations_3d);
        cfg.slices_per_batch = t.value("slices_per_batch", cfg.slices_per_batch);
        cfg.patches_per_batch = t.value("patches_per_batch", cfg.patches_per_batch);
        cfg.monitor_every = t.value("monitor_every", cfg.monitor_every);
    }
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open run config: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_run_config(ss.str());
}

}  // namespace mseg
