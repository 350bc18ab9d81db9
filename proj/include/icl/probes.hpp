#pragma once

// Model-agnostic diagnostics for a sequence of weight checkpoints: spectral
// entropy of the weights, directional convergence toward the final
// checkpoint, and curvature-based transition detection on scalar series.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "icl/numerics.hpp"
#include "icl/theory.hpp"

namespace icl {

struct Checkpoint {
    std::int64_t step = 0;
    std::map<std::string, Matrix> matrices;
    std::map<std::string, double> metrics;
};

class CheckpointTrace {
public:
    std::string source;

    /// Throws InvalidInput unless `c.step` exceeds the last step and every
    /// matrix name already seen keeps its shape.
    void append(Checkpoint c);

    const std::vector<Checkpoint>& checkpoints() const noexcept { return checkpoints_; }
    std::size_t size() const noexcept { return checkpoints_.size(); }
    bool empty() const noexcept { return checkpoints_.empty(); }

    std::vector<std::int64_t> steps() const;
    /// Names present in the first checkpoint, sorted.
    std::vector<std::string> matrix_names() const;
    /// Throws InvalidInput if any checkpoint lacks the metric.
    std::vector<double> metric_series(const std::string& name) const;
    bool has_metric(const std::string& name) const;

private:
    std::vector<Checkpoint> checkpoints_;
};

struct CurvatureSeries {
    std::vector<double> x;          // lag or step of each smoothed value
    std::vector<double> values;     // smoothed
    std::vector<double> curvature;  // central second difference; entry i sits at x[i + 1]
    std::vector<std::size_t> peaks; // indices into `curvature`, ascending

    std::vector<double> peak_positions() const;
};

struct CurvatureOptions {
    /// Smoothing width is max(3, window / 8), rounded up to odd.
    std::size_t window = 0;
    /// Peaks need topographic prominence above factor * median |curvature|.
    double prominence_factor = 3.0;
};

std::size_t smoothing_width(std::size_t window);

/// Moving average (valid mode), central second difference, prominent maxima.
/// `x` and `raw` must have equal length, at least smoothing width + 2.
CurvatureSeries curvature_series(std::span<const double> x, std::span<const double> raw,
                                 const CurvatureOptions& options);

/// exp of the Shannon entropy of sigma / sum(sigma). Throws on a zero matrix.
double effective_rank(const Matrix& m);

/// Effective rank of the singular spectrum with the k largest values removed.
double marginalized_effective_rank(const Matrix& m, std::size_t k);

/// Same, from singular values already sorted non-increasing.
double effective_rank_of_spectrum(std::span<const double> singular, std::size_t k = 0);

/// Residual of projecting the rows of `m_final` onto the top-k right singular
/// subspace of `m_t`; k = round(effective_rank(m_t)) when `rank` is empty.
double subspace_distance(const Matrix& m_t, const Matrix& m_final, std::optional<std::size_t> rank = std::nullopt,
                         bool normalize = true);

struct AutocorrelationOptions {
    double prominence_factor = 3.0;
    /// Subtract the series mean first (the raw product is the default).
    bool centered = false;
};

/// A(tau) = mean_{t < window} L(t) L(t + tau) for tau = 0..max_lag, then the
/// curvature pipeline with `window` as its knob.
CurvatureSeries loss_autocorrelation(std::span<const double> series, std::size_t max_lag, std::size_t window,
                                     const AutocorrelationOptions& options = {});

/// Frobenius-norm series of one named matrix through the curvature pipeline;
/// x is the checkpoint step.
CurvatureSeries norm_curvature(const CheckpointTrace& trace, const std::string& name,
                               const CurvatureOptions& options = {});

struct ProbeConfig {
    std::vector<std::string> matrices;  // empty: every matrix in the trace
    std::optional<std::size_t> rank;    // subspace truncation; empty: auto
    std::size_t max_lag = 0;            // 0: as long as the series allows
    std::size_t window = 0;             // 0: max(4, n / 64)
    double prominence_factor = 3.0;
    bool centered = false;
    std::string loss_metric = "loss";
};

struct MatrixProbes {
    std::string name;
    /// effrank[k][i]: k-th marginalized effective rank at checkpoint i (NaN
    /// where the remaining spectrum is empty).
    std::vector<std::vector<double>> effrank;
    std::vector<double> subspace_distance;
    std::optional<CurvatureSeries> norm_curvature;
};

struct ProbeReport {
    std::string source;
    std::vector<std::int64_t> steps;
    std::vector<MatrixProbes> per_matrix;
    /// Unweighted means across `per_matrix`.
    std::vector<std::vector<double>> mean_effrank;
    std::vector<double> mean_subspace_distance;
    std::optional<CurvatureSeries> loss_curvature;
    /// Loss-autocorrelation curvature peaks mapped to steps: a peak at lag L
    /// reports the step of checkpoint L.
    std::vector<std::int64_t> transition_steps;
    /// Argmin checkpoint step of each mean marginalized effective-rank curve,
    /// k = 0..K-2 where K is the smallest matrix dimension.
    std::vector<std::int64_t> dip_steps;
    bool staggered_dips = false;
    std::size_t max_lag = 0;
    std::size_t window = 0;
};

ProbeReport probe_report(const CheckpointTrace& trace, const ProbeConfig& config = {});

/// Writes probes.csv, curvature.csv and report.json into `dir`.
void write_probe_report(const ProbeReport& report, const std::string& dir);

struct SynthOptions {
    double a0 = 1e-4;    // uniform initial product per mode
    double noise = 0.0;  // std-dev of additive Gaussian entries
    std::uint64_t seed = 0;
};

/// Checkpoints i = 0..n-1 at times t_grid[i]: p2 = q1 = U diag(sqrt(a(t))) U^T
/// from the closed-form trajectories, with metrics "t" and "loss" = L(t).
CheckpointTrace synth_trace(const ModeTheory& theory, const Matrix& eigenbasis, std::span<const double> t_grid,
                            const SynthOptions& options = {});

}  // namespace icl
