#pragma once

// The five subcommands as library calls. Each cmd_* returns a process exit
// status; the run_* / compare_* helpers return the structured results the
// commands serialise, for use from tests.

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "icl/config.hpp"
#include "icl/probes.hpp"
#include "icl/theory.hpp"
#include "icl/trainer.hpp"
#include "json.hpp"

namespace icl {

enum ExitCode : int { exit_ok = 0, exit_usage = 2, exit_divergence = 3, exit_tolerance = 4 };

/// Approximate number of prompts behind the fixed-set loss recorded at each
/// snapshot (at least one per task).
inline constexpr std::size_t kEvalPrompts = 256;

struct SimulationResult {
    SpectralTaskDistribution distribution;
    TrainingTrace trace;
    std::vector<double> snapshot_loss;  // fixed-set loss per snapshot
    double final_loss = 0.0;            // mean batch loss of the last epoch
    Vector final_a;
    double conserved_drift = 0.0;       // max |C - C(0)| over snapshots and epoch ends
};

SimulationResult run_simulation(const ExperimentConfig& config);

/// Per-mode closed-form theory anchored at the run's actual initial state.
struct TheoryResult {
    ModeTheory theory;
    std::vector<double> p0, q0;  // U-basis diagonals of the initial p2, q1
    bool closed_form = true;     // false: balanced form does not apply, curves integrated
    std::vector<double> t;
    std::vector<std::vector<double>> a;  // a[i][mode]
    std::vector<double> loss;
    double loss_inf = 0.0;
    InitialSlope slope;
};

TheoryResult run_theory(const ExperimentConfig& config);

/// Theory values at arbitrary times, either from the closed form or by
/// linear interpolation of the stored curves.
struct TheoryEvaluator {
    TheoryResult result;
    std::vector<double> a_at(double t) const;
    double loss_at(double t) const;
};

struct ComparisonReport {
    std::vector<double> mode_rmse;           // a_alpha(epoch) vs theory
    std::vector<double> mode_rmse_relative;  // divided by a_inf
    double loss_rmse = 0.0;
    double loss_rmse_fraction = 0.0;  // of L(0) - L(inf)
    double conserved_drift = 0.0;
    std::vector<double> fixed_point_relative;  // tail mean of a vs a_inf
    double terminal_loss = 0.0;
    double terminal_loss_relative = 0.0;  // vs L(inf)
    bool loss_ok = false, fixed_point_ok = false, conserved_ok = false;
    bool pass = false;
    std::size_t epochs = 0;
};

/// Throws InvalidInput listing differing fields when the runs' d, N, P, eta or
/// spectrum differ. Either directory may be a simulate or a theory output.
ComparisonReport compare_runs(const std::string& sim_dir, const std::string& theory_dir);

nlohmann::json to_json(const ComparisonReport& r);

struct ValidationResult {
    WishartReport wishart;
    double wishart_rel_error = 0.0;  // ||mean - expected||_F / ||expected||_F for the second moment
    double wishart_max_z = 0.0;      // max over entries of |mean - expected| / standard error
    NullGradientReport gradients;
    bool wishart_ok = false;
    bool gradients_ok = false;
    bool precision_ok = false;
    bool pass = false;  // both checks pass, or precision too low to judge
};

ValidationResult run_validation(const ExperimentConfig& config);
nlohmann::json to_json(const ValidationResult& r);

int cmd_simulate(const ExperimentConfig& config, const std::string& out_dir, std::ostream& log);
int cmd_theory(const ExperimentConfig& config, const std::string& out_dir, std::ostream& log);
int cmd_compare(const std::string& sim_dir, const std::string& theory_dir, const std::string& out_path,
                std::ostream& log);
int cmd_probe(const std::string& trace_dir, const ProbeConfig& probe, const std::string& out_dir, std::ostream& log);
int cmd_validate(const ExperimentConfig& config, const std::string& out_dir, std::ostream& log);

ProbeConfig probe_config(const ProbeSettings& settings);

}  // namespace icl
