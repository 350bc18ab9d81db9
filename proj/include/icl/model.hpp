#pragma once

// Single-layer, single-head linear-attention transformer:
//
//     f(Z) = Z + W_P (Z Z^T / N) W_Q Z
//
// Only two d x d blocks of each weight matrix reach the prediction for the
// query column: the bottom row-block of W_P, p^T = [p1 p2], and the left
// column-block of W_Q, q = [q1; q2]. The other blocks stay at zero.

#include <string>

#include "icl/numerics.hpp"
#include "icl/taskgen.hpp"

namespace icl {

enum class TrainMode { restricted, full };

std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& name);

class ModelParams {
public:
    ModelParams() = default;
    explicit ModelParams(std::size_t d);
    ModelParams(Matrix wp, Matrix wq);

    std::size_t dim() const noexcept { return d_; }
    const Matrix& wp() const noexcept { return wp_; }
    const Matrix& wq() const noexcept { return wq_; }

    // Block views alias the parent matrices.
    auto p1() { return wp_.block(dn(), 0, dn(), dn()); }
    auto p2() { return wp_.block(dn(), dn(), dn(), dn()); }
    auto q1() { return wq_.block(0, 0, dn(), dn()); }
    auto q2() { return wq_.block(dn(), 0, dn(), dn()); }
    auto p1() const { return wp_.block(dn(), 0, dn(), dn()); }
    auto p2() const { return wp_.block(dn(), dn(), dn(), dn()); }
    auto q1() const { return wq_.block(0, 0, dn(), dn()); }
    auto q2() const { return wq_.block(dn(), 0, dn(), dn()); }

    /// p^T = [p1 p2], d x 2d.
    auto p_t() const { return wp_.bottomRows(dn()); }
    /// q = [q1; q2], 2d x d.
    auto q() const { return wq_.leftCols(dn()); }

    double max_abs() const;
    bool finite() const { return wp_.allFinite() && wq_.allFinite(); }

private:
    Eigen::Index dn() const noexcept { return static_cast<Eigen::Index>(d_); }

    std::size_t d_ = 0;
    Matrix wp_;
    Matrix wq_;
};

/// Full layer output; shape of Z preserved.
Matrix forward(const Matrix& embedding, const ModelParams& params);

/// y_hat = (p^T Gamma q) x_q.
Vector predict(const ModelParams& params, const Matrix& gamma, const Vector& xq);

/// 0.5 * ||y_hat - y_q||^2.
double loss(const Vector& prediction, const Vector& target);

struct Gradients {
    Matrix p1, p2, q1, q2;

    static Gradients zeros(std::size_t d);
    Gradients& operator+=(const Gradients& o);
    Gradients& operator*=(double c);
};

struct LossAndGradients {
    double loss = 0.0;
    Gradients grads;
};

/// Exact gradients of the per-prompt loss. In restricted mode the p1 and q2
/// gradients are reported as zero since those blocks are held at zero.
LossAndGradients loss_and_grads(const ModelParams& params, const Matrix& gamma, const Vector& xq, const Vector& yq,
                                TrainMode mode);

Gradients grads(const ModelParams& params, const PromptInstance& prompt, CovarianceMode cov_mode, TrainMode mode);

struct BlockMoments {
    Matrix mean;
    Matrix standard_error;
    /// max_ij |mean_ij| / se_ij
    double max_abs_z = 0.0;
};

struct NullGradientReport {
    std::size_t samples = 0;
    BlockMoments p1, q2;  // expected to vanish
    BlockMoments p2, q1;  // active blocks, generically non-zero
    bool precision_ok = false;  // samples >= 1000
};

/// Monte-Carlo mean of the block gradients over fresh tasks (new Lambda drawn
/// in the distribution's eigenbasis) and fresh prompts. Requires p1 = q2 = 0.
NullGradientReport null_gradient_check(const SpectralTaskDistribution& dist, const ModelParams& params,
                                       std::size_t samples, std::uint64_t seed,
                                       CovarianceMode cov_mode = CovarianceMode::exclude_query);

struct DiagonalizedParams {
    Vector p2;  // diag(U^T p2 U)
    Vector q1;  // diag(U^T q1 U)
    double offdiag_norm = 0.0;  // Frobenius norm of what the diagonals drop, both blocks
};

DiagonalizedParams diagonalize(const ModelParams& params, const Matrix& eigenbasis);

}  // namespace icl
