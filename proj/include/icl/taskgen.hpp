#pragma once

// Task distribution and prompt sampling for in-context linear regression.
//
// Inputs follow N(0, Sigma_x) with Sigma_x = U diag(S) U^T. Every task matrix
// shares the same eigenbasis: W_mu = U diag(Lambda_mu) U^T with Lambda_mu
// entries i.i.d. N(0, 1). Tasks are drawn once per distribution; contexts are
// drawn fresh for every prompt.

#include <cstdint>
#include <string>
#include <vector>

#include "icl/numerics.hpp"

namespace icl {

struct SpectrumSpec {
    enum class Kind { explicit_values, uniform, geometric };
    Kind kind = Kind::explicit_values;
    std::vector<double> values;  // explicit
    double s_max = 1.0;          // uniform, geometric
    double ratio = 2.0;          // geometric: s_a = s_max / ratio^a

    static SpectrumSpec explicit_list(std::vector<double> v);
    static SpectrumSpec uniform_value(double s);
    static SpectrumSpec geometric_decay(double s_max, double ratio);

    /// Eigenvalues for dimension d. Throws InvalidInput on non-positive values
    /// or a length mismatch.
    std::vector<double> resolve(std::size_t d) const;

    bool operator==(const SpectrumSpec&) const = default;
};

std::string to_string(SpectrumSpec::Kind kind);
SpectrumSpec::Kind spectrum_kind_from_string(const std::string& name);

struct SpectralTaskDistribution {
    std::size_t d = 0;
    std::size_t context_length = 0;  // N
    std::size_t task_count = 0;      // P
    Matrix eigenbasis;               // U, d x d orthogonal
    Vector spectrum;                 // S, eigenvalues of Sigma_x
    std::vector<Vector> task_spectra;  // Lambda_mu
    std::vector<Matrix> tasks;         // W_mu = U diag(Lambda_mu) U^T
    std::uint64_t seed = 0;

    Matrix input_covariance() const;  // U diag(S) U^T
    double trace() const { return spectrum.sum(); }
};

SpectralTaskDistribution make_distribution(std::size_t d, std::size_t context_length, std::size_t task_count,
                                           const SpectrumSpec& spectrum, std::uint64_t seed);

/// Rebuilds a distribution from stored parts (U, S, Lambda), e.g. from a trace
/// manifest. Validates orthogonality and positivity.
SpectralTaskDistribution distribution_from_parts(std::size_t context_length, Matrix eigenbasis, Vector spectrum,
                                                 std::vector<Vector> task_spectra, std::uint64_t seed);

struct PromptInstance {
    Matrix xs;  // d x N, context inputs as columns
    Matrix ys;  // d x N, ys = W xs
    Vector xq;
    Vector yq;
    Matrix embedding;  // Z, 2d x (N+1)
    std::size_t task = 0;
};

/// Assembles a prompt from explicit inputs and a task matrix.
PromptInstance make_prompt(const Matrix& xs, const Vector& xq, const Matrix& task_matrix, std::size_t task = 0);

/// Draws N context inputs and one query from N(0, Sigma_x) for task `task`
/// (zero-based).
PromptInstance sample_prompt(const SpectralTaskDistribution& dist, std::size_t task, RngStream& rng);

enum class CovarianceMode { full, exclude_query };

std::string to_string(CovarianceMode mode);
CovarianceMode covariance_mode_from_string(const std::string& name);

struct EmpiricalCovariances {
    Matrix sigma_x;  // (1/N) sum x_i x_i^T
    Matrix gamma;    // 2d x 2d
};

/// full: gamma = Z Z^T / N, whose top-left block also carries x_q x_q^T / N.
/// exclude_query: the top-left block is replaced by sigma_x.
EmpiricalCovariances empirical_covariances(const PromptInstance& prompt, CovarianceMode mode);

/// What the predictor needs from one prompt: gamma, x_q and y_q.
struct PromptSummary {
    Matrix gamma;
    Vector xq;
    Vector yq;
};

/// Reusable buffers for `sample_summary`.
struct PromptWorkspace {
    Matrix z;
    Matrix x;
    Matrix sigma_x;
};

/// Same draw as sample_prompt followed by empirical_covariances (identical RNG
/// consumption), without materialising the embedding.
void sample_summary(const SpectralTaskDistribution& dist, std::size_t task, RngStream& rng, CovarianceMode mode,
                    PromptWorkspace& work, PromptSummary& out);

struct MomentEstimate {
    Matrix mean;
    Matrix standard_error;
    Matrix expected;
};

struct WishartReport {
    std::size_t samples = 0;
    std::size_t context_length = 0;
    MomentEstimate first;   // E[S_hat] vs S
    MomentEstimate second;  // E[S_hat^2] vs (N+1)/N S^2 + Tr(S) S / N
    bool precision_ok = false;  // samples >= 1000
};

/// Monte-Carlo estimate of the first two moments of S_hat = U^T Sigma_hat_x U
/// for N Gaussian inputs with covariance diag(S).
WishartReport validate_wishart_moments(const Vector& spectrum, std::size_t context_length, std::size_t samples,
                                       std::uint64_t seed);

}  // namespace icl
