#pragma once

// Experiment configuration: one JSON document holding everything a run needs,
// so every artifact can be regenerated from its config alone. Unknown keys are
// rejected to catch typos.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "icl/taskgen.hpp"
#include "icl/trainer.hpp"
#include "json.hpp"

namespace icl {

struct ProbeSettings {
    std::vector<std::string> matrices;
    std::optional<std::size_t> rank;
    std::size_t max_lag = 0;
    std::size_t window = 0;
    double prominence_factor = 3.0;
    bool centered = false;

    bool operator==(const ProbeSettings&) const = default;
};

struct ValidateSettings {
    std::size_t wishart_samples = 100000;
    std::size_t gradient_samples = 10000;
    double sigma = 3.0;  // z threshold for both checks

    bool operator==(const ValidateSettings&) const = default;
};

struct CompareTolerances {
    double loss_rmse_fraction = 0.05;    // of L(0) - L(inf)
    double fixed_point_relative = 0.05;  // per mode
    double conserved_drift = 1e-3;       // absolute
    double tail_fraction = 0.2;          // epochs averaged for the fixed point

    bool operator==(const CompareTolerances&) const = default;
};

struct TheorySettings {
    double t_max = 0.0;      // 0: the run's epoch count
    std::size_t points = 0;  // 0: 4 per epoch plus one

    bool operator==(const TheorySettings&) const = default;
};

struct ExperimentConfig {
    std::size_t d = 4;
    std::size_t context_length = 40;  // N
    std::size_t task_count = 64;      // P
    SpectrumSpec spectrum = SpectrumSpec::explicit_list({2.0, 1.3, 0.8, 0.5});
    std::uint64_t seed = 0;
    TrainConfig train;  // its seed is ignored; `seed` above drives everything
    std::string output_dir = "run";
    ProbeSettings probes;
    ValidateSettings validate;
    CompareTolerances compare;
    TheorySettings theory;

    /// Throws ConfigError on inconsistent or out-of-range values.
    void check() const;
    TrainConfig train_config() const;
    SpectralTaskDistribution distribution() const;
    /// Time grid (epochs) for theory curves.
    std::vector<double> theory_grid() const;

    bool operator==(const ExperimentConfig&) const = default;
};

nlohmann::json to_json(const ExperimentConfig& config);
/// Missing keys keep their defaults; unknown keys and type errors throw ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
void save_config(const ExperimentConfig& config, const std::string& path);

}  // namespace icl
