#pragma once

// Dense linear-algebra kernel shared by every other module.
//
// Matrices are Eigen dense doubles. Everything random goes through RngStream,
// a counter-based generator addressed by (seed, epoch, task, sample, role), so a
// draw depends only on its address and never on how many draws preceded it
// elsewhere in the program.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace icl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Builds a rows x cols matrix from row-major data. Throws InvalidInput on a
/// size mismatch, zero dimension, or any non-finite entry.
Matrix make_matrix(std::size_t rows, std::size_t cols, std::span<const double> row_major);

/// Row-major copy of m's entries.
std::vector<double> to_row_major(const Matrix& m);

bool all_finite(const Matrix& m);
void require_finite(const Matrix& m, const char* what);

struct SvdResult {
    Matrix left;      // orthonormal columns
    Vector singular;  // non-increasing, non-negative
    Matrix right;     // orthonormal columns
};

/// Thin SVD; left * diag(singular) * right^T reconstructs the input.
SvdResult svd(const Matrix& m);

/// Moore-Penrose inverse; singular values below rel_tol * max are dropped.
Matrix pseudo_inverse(const Matrix& m, double rel_tol = 1e-12);

/// Eigenvalues ascending with orthonormal eigenvectors as columns.
struct SymmetricEigen {
    Vector values;
    Matrix vectors;
};
SymmetricEigen symmetric_eigen(const Matrix& m);

/// What a stream is used for. Distinct roles never share draws.
enum class Role : std::uint32_t {
    eigenbasis = 1,
    task_spectrum = 2,
    context = 3,
    query = 4,
    init = 5,
    validation = 6,
    noise = 7,
    test = 99,
};

struct StreamCounters {
    std::uint32_t epoch = 0;
    std::uint32_t task = 0;
    std::uint32_t sample = 0;
    Role role = Role::test;
};

/// One Philox4x32-10 block (10 rounds, Random123 constants).
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter, std::array<std::uint32_t, 2> key);

/// Philox4x32-10 keyed by (seed, role) with counter (block, sample, task, epoch).
/// Two streams with the same seed and counters produce identical sequences.
class RngStream {
public:
    RngStream(std::uint64_t seed, StreamCounters counters);

    /// Uniform on (0, 1), 53 bits.
    double uniform();
    /// Standard normal via Box-Muller.
    double normal();
    void fill_normal(std::span<double> out);

    std::uint64_t seed() const noexcept { return seed_; }
    const StreamCounters& counters() const noexcept { return counters_; }

private:
    std::array<std::uint32_t, 4> next_block();
    std::uint64_t next_u64();

    std::uint64_t seed_;
    StreamCounters counters_;
    std::array<std::uint32_t, 2> key_{};
    std::uint32_t block_ = 0;
    std::array<std::uint32_t, 4> buffer_{};
    int buffered_words_ = 0;
    double spare_normal_ = 0.0;
    bool has_spare_ = false;
};

/// Independent zero-mean components with the given variances.
Vector gaussian_vector(std::span<const double> variances, RngStream& rng);

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the signs of
/// R's diagonal folded into Q.
Matrix random_orthogonal(std::size_t d, RngStream& rng);

}  // namespace icl
