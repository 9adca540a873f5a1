#pragma once

#include <array>
#include <string>
#include <vector>

#include "mseg/loss.hpp"
#include "mseg/optimizer.hpp"
#include "mseg/vote.hpp"

namespace mseg {

// All run-level hyperparameters in one place. Defaults are the reference
// values: target weights 0.4/0.2/0.2/0.2 (3D) and 0.7/0.1/0.1/0.1 (2D),
// loss coefficients 0.75 + 5 x 0.05, N = 10 (2D) / 5 (3D),
// alpha 0.25 -> 0.001, F = 200, d_loss = 0.98, vote thresholds
// 0.4 / 0.3 / 0.4.
struct RunConfig {
    std::uint32_t seed = 7;

    OptimizerConfig optimizer_2d{0.9, 10, 0.25, 0.001, 200, 0.98};
    OptimizerConfig optimizer_3d{0.9, 5, 0.25, 0.001, 200, 0.98};

    std::vector<double> targets_2d{0.7, 0.1, 0.1, 0.1};
    std::vector<double> targets_3d{0.4, 0.2, 0.2, 0.2};
    double c_main = 0.75;
    std::vector<double> c_k{0.05, 0.05, 0.05, 0.05, 0.05};

    Thresholds thresholds{};

    std::array<std::size_t, 3> patch{24, 24, 24};
    double normalization_constant = 1.0;
    bool class_balanced_sampling = false;

    std::size_t iterations_2d = 2000;
    std::size_t iterations_3d = 1000;
    std::size_t slices_per_batch = 2;
    std::size_t patches_per_batch = 1;
    std::size_t monitor_every = 0;  // 0 disables monitoring-dice evaluation

    void validate() const;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

}  // namespace mseg
