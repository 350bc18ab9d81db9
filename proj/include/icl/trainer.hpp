#pragma once

// Online SGD over task-centric epochs. One step presents one task: `batch`
// fresh prompts are drawn for it, their gradients averaged, and a single
// update applied. An epoch visits tasks 0..P-1 in order.

#include <cstdint>
#include <optional>
#include <vector>

#include "icl/model.hpp"
#include "icl/taskgen.hpp"

namespace icl {

struct InitSpec {
    double scale = 0.05;  // epsilon
    /// true: p2 = q1 = epsilon I (all modes start at a = epsilon^2).
    /// false: diagonals of U^T p2 U and U^T q1 U drawn i.i.d. N(0, epsilon^2).
    bool symmetric = true;
    /// Entry scale for p1 and q2 in full mode; negative means `scale`.
    double null_scale = -1.0;

    bool operator==(const InitSpec&) const = default;
};

struct TrainConfig {
    double eta = 5e-3;
    std::size_t epochs = 100;
    std::size_t batch = 256;
    CovarianceMode covariance_mode = CovarianceMode::exclude_query;
    TrainMode train_mode = TrainMode::restricted;
    InitSpec init;
    std::size_t record_every = 64;
    std::uint64_t seed = 0;

    /// Throws InvalidInput if any field is out of range.
    void validate() const;

    bool operator==(const TrainConfig&) const = default;
};

/// Any |parameter| above this aborts training.
inline constexpr double kDivergenceThreshold = 1e8;

struct EffectiveProduct {
    Vector diagonal;  // diag(U^T p2 q1 U)
    double offdiag_norm = 0.0;
};

EffectiveProduct effective_product(const ModelParams& params, const Matrix& eigenbasis);

/// ||p2||_F^2 - ||q1||_F^2. Equals the difference of the diagonal U-basis norms
/// when both blocks are diagonal in U.
double conserved_quantity(const ModelParams& params);

struct Snapshot {
    std::int64_t step = 0;
    double loss = 0.0;  // batch-mean loss of this step's batch, before its update
    ModelParams params;
    Vector a;               // effective_product diagonal
    double conserved = 0.0;
    double offdiag_norm = 0.0;  // of the effective product
};

struct EpochSummary {
    std::size_t epoch = 0;   // 1-based
    double mean_loss = 0.0;  // mean of the epoch's step losses
    Vector a;                // at the end of the epoch
    double conserved = 0.0;
    double offdiag_norm = 0.0;
};

struct TrainingTrace {
    TrainConfig config;
    Matrix eigenbasis;
    std::vector<double> step_losses;  // step s at index s - 1
    std::vector<Snapshot> snapshots;  // step 0, every record_every steps, and the final step
    Snapshot initial;
    std::vector<EpochSummary> epochs;
    std::size_t steps_per_epoch = 0;  // P
};

/// Initial parameters per `config.init` (deterministic in config.seed).
ModelParams initial_params(const SpectralTaskDistribution& dist, const TrainConfig& config);

/// Runs SGD from `initial_params`. Throws DivergenceError naming the step if a
/// parameter leaves [-1e8, 1e8] or becomes non-finite.
TrainingTrace train(const SpectralTaskDistribution& dist, const TrainConfig& config);

/// Same, starting from explicit parameters.
TrainingTrace train_from(const SpectralTaskDistribution& dist, const TrainConfig& config, ModelParams start);

/// Expected-loss evaluation on a fixed prompt set: the same (task, sample)
/// streams for every call, so differences between parameter sets are paired.
double evaluate_loss(const SpectralTaskDistribution& dist, const ModelParams& params, CovarianceMode mode,
                     std::size_t prompts_per_task, std::uint64_t seed);

}  // namespace icl
