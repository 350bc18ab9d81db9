#include "icl/numerics.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "icl/errors.hpp"

namespace icl {

Matrix make_matrix(std::size_t rows, std::size_t cols, std::span<const double> row_major) {
    if (rows == 0 || cols == 0) throw InvalidInput("make_matrix: zero dimension");
    if (row_major.size() != rows * cols)
        throw InvalidInput("make_matrix: expected " + std::to_string(rows * cols) + " entries, got " +
                           std::to_string(row_major.size()));
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) m(r, c) = row_major[r * cols + c];
    require_finite(m, "make_matrix");
    return m;
}

std::vector<double> to_row_major(const Matrix& m) {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
    return out;
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

void require_finite(const Matrix& m, const char* what) {
    if (!m.allFinite()) throw InvalidInput(std::string(what) + ": matrix has non-finite entries");
}

SvdResult svd(const Matrix& m) {
    require_finite(m, "svd");
    if (m.size() == 0) throw InvalidInput("svd: empty matrix");
    Eigen::BDCSVD<Matrix> solver(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    return {solver.matrixU(), solver.singularValues(), solver.matrixV()};
}

Matrix pseudo_inverse(const Matrix& m, double rel_tol) {
    if (!(rel_tol > 0.0 && rel_tol < 1.0)) throw InvalidInput("pseudo_inverse: rel_tol must lie in (0, 1)");
    const SvdResult f = svd(m);
    const double cutoff = f.singular.size() > 0 ? rel_tol * f.singular(0) : 0.0;
    Vector inv = Vector::Zero(f.singular.size());
    for (Eigen::Index i = 0; i < f.singular.size(); ++i)
        if (f.singular(i) > cutoff) inv(i) = 1.0 / f.singular(i);
    return f.right * inv.asDiagonal() * f.left.transpose();
}

SymmetricEigen symmetric_eigen(const Matrix& m) {
    require_finite(m, "symmetric_eigen");
    if (m.rows() != m.cols()) throw InvalidInput("symmetric_eigen: matrix not square");
    Eigen::SelfAdjointEigenSolver<Matrix> solver(m);
    return {solver.eigenvalues(), solver.eigenvectors()};
}

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) {
    for (int round = 0; round < 10; ++round) {
        const std::uint64_t p0 = std::uint64_t{kPhiloxM0} * ctr[0];
        const std::uint64_t p1 = std::uint64_t{kPhiloxM1} * ctr[2];
        const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
        const auto lo0 = static_cast<std::uint32_t>(p0);
        const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
        const auto lo1 = static_cast<std::uint32_t>(p1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += kPhiloxW0;
        key[1] += kPhiloxW1;
    }
    return ctr;
}

RngStream::RngStream(std::uint64_t seed, StreamCounters counters) : seed_(seed), counters_(counters) {
    const std::uint64_t k = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(counters.role)));
    key_ = {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
}

std::array<std::uint32_t, 4> RngStream::next_block() {
    return philox4x32_10({block_++, counters_.sample, counters_.task, counters_.epoch}, key_);
}

std::uint64_t RngStream::next_u64() {
    if (buffered_words_ < 2) {
        buffer_ = next_block();
        buffered_words_ = 4;
    }
    const std::size_t i = 4 - static_cast<std::size_t>(buffered_words_);
    buffered_words_ -= 2;
    return (std::uint64_t{buffer_[i]} << 32) | buffer_[i + 1];
}

double RngStream::uniform() {
    // (k + 0.5) / 2^53 never hits 0 or 1.
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_normal_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_normal_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
}

void RngStream::fill_normal(std::span<double> out) {
    for (double& v : out) v = normal();
}

Vector gaussian_vector(std::span<const double> variances, RngStream& rng) {
    Vector v(static_cast<Eigen::Index>(variances.size()));
    for (std::size_t i = 0; i < variances.size(); ++i) {
        const double var = variances[i];
        if (!(var >= 0.0) || !std::isfinite(var)) throw InvalidInput("gaussian_vector: variance must be finite and >= 0");
        const double z = rng.normal();
        v(static_cast<Eigen::Index>(i)) = var == 0.0 ? 0.0 : std::sqrt(var) * z;
    }
    return v;
}

Matrix random_orthogonal(std::size_t d, RngStream& rng) {
    if (d == 0) throw InvalidInput("random_orthogonal: d must be >= 1");
    const auto n = static_cast<Eigen::Index>(d);
    Matrix g(n, n);
    for (Eigen::Index r = 0; r < n; ++r)
        for (Eigen::Index c = 0; c < n; ++c) g(r, c) = rng.normal();
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ() * Matrix::Identity(n, n);
    const Matrix& r = qr.matrixQR();
    for (Eigen::Index c = 0; c < n; ++c)
        if (r(c, c) < 0.0) q.col(c) = -q.col(c);
    return q;
}

}  // namespace icl
