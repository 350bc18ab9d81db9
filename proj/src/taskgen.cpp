#include "icl/taskgen.hpp"

#include <cmath>

#include "icl/errors.hpp"

namespace icl {

SpectrumSpec SpectrumSpec::explicit_list(std::vector<double> v) {
    SpectrumSpec s;
    s.kind = Kind::explicit_values;
    s.values = std::move(v);
    return s;
}

SpectrumSpec SpectrumSpec::uniform_value(double value) {
    SpectrumSpec s;
    s.kind = Kind::uniform;
    s.s_max = value;
    return s;
}

SpectrumSpec SpectrumSpec::geometric_decay(double s_max, double ratio) {
    SpectrumSpec s;
    s.kind = Kind::geometric;
    s.s_max = s_max;
    s.ratio = ratio;
    return s;
}

std::vector<double> SpectrumSpec::resolve(std::size_t d) const {
    std::vector<double> out;
    switch (kind) {
        case Kind::explicit_values:
            if (values.size() != d)
                throw InvalidInput("spectrum: expected " + std::to_string(d) + " values, got " +
                                   std::to_string(values.size()));
            out = values;
            break;
        case Kind::uniform:
            out.assign(d, s_max);
            break;
        case Kind::geometric:
            if (!(ratio > 0.0) || !std::isfinite(ratio)) throw InvalidInput("spectrum: geometric ratio must be > 0");
            for (std::size_t a = 0; a < d; ++a) out.push_back(s_max / std::pow(ratio, static_cast<double>(a)));
            break;
    }
    for (double s : out)
        if (!(s > 0.0) || !std::isfinite(s)) throw InvalidInput("spectrum: eigenvalues must be finite and > 0");
    return out;
}

std::string to_string(SpectrumSpec::Kind kind) {
    switch (kind) {
        case SpectrumSpec::Kind::explicit_values: return "explicit";
        case SpectrumSpec::Kind::uniform: return "uniform";
        case SpectrumSpec::Kind::geometric: return "geometric";
    }
    return "explicit";
}

SpectrumSpec::Kind spectrum_kind_from_string(const std::string& name) {
    if (name == "explicit") return SpectrumSpec::Kind::explicit_values;
    if (name == "uniform") return SpectrumSpec::Kind::uniform;
    if (name == "geometric") return SpectrumSpec::Kind::geometric;
    throw InvalidInput("unknown spectrum kind '" + name + "'");
}

Matrix SpectralTaskDistribution::input_covariance() const {
    return eigenbasis * spectrum.asDiagonal() * eigenbasis.transpose();
}

namespace {

void build_tasks(SpectralTaskDistribution& dist) {
    dist.tasks.clear();
    dist.tasks.reserve(dist.task_spectra.size());
    for (const Vector& lambda : dist.task_spectra)
        dist.tasks.push_back(dist.eigenbasis * lambda.asDiagonal() * dist.eigenbasis.transpose());
}

}  // namespace

SpectralTaskDistribution make_distribution(std::size_t d, std::size_t context_length, std::size_t task_count,
                                           const SpectrumSpec& spectrum, std::uint64_t seed) {
    if (d == 0 || context_length == 0 || task_count == 0)
        throw InvalidInput("make_distribution: d, N and P must all be >= 1");
    const std::vector<double> s = spectrum.resolve(d);

    SpectralTaskDistribution dist;
    dist.d = d;
    dist.context_length = context_length;
    dist.task_count = task_count;
    dist.seed = seed;
    RngStream basis_rng(seed, {.role = Role::eigenbasis});
    dist.eigenbasis = random_orthogonal(d, basis_rng);
    dist.spectrum = Eigen::Map<const Vector>(s.data(), static_cast<Eigen::Index>(d));

    dist.task_spectra.reserve(task_count);
    for (std::size_t mu = 0; mu < task_count; ++mu) {
        RngStream rng(seed, {.task = static_cast<std::uint32_t>(mu), .role = Role::task_spectrum});
        Vector lambda(static_cast<Eigen::Index>(d));
        for (Eigen::Index a = 0; a < lambda.size(); ++a) lambda(a) = rng.normal();
        dist.task_spectra.push_back(std::move(lambda));
    }
    build_tasks(dist);
    return dist;
}

SpectralTaskDistribution distribution_from_parts(std::size_t context_length, Matrix eigenbasis, Vector spectrum,
                                                 std::vector<Vector> task_spectra, std::uint64_t seed) {
    const auto d = static_cast<std::size_t>(spectrum.size());
    if (d == 0 || context_length == 0 || task_spectra.empty())
        throw InvalidInput("distribution_from_parts: empty distribution");
    if (static_cast<std::size_t>(eigenbasis.rows()) != d || static_cast<std::size_t>(eigenbasis.cols()) != d)
        throw InvalidInput("distribution_from_parts: eigenbasis shape does not match spectrum");
    require_finite(eigenbasis, "distribution_from_parts");
    const Matrix gram = eigenbasis.transpose() * eigenbasis - Matrix::Identity(eigenbasis.rows(), eigenbasis.cols());
    if (gram.cwiseAbs().maxCoeff() > 1e-10) throw InvalidInput("distribution_from_parts: eigenbasis is not orthogonal");
    for (Eigen::Index a = 0; a < spectrum.size(); ++a)
        if (!(spectrum(a) > 0.0)) throw InvalidInput("distribution_from_parts: eigenvalues must be > 0");
    for (const Vector& l : task_spectra)
        if (static_cast<std::size_t>(l.size()) != d) throw InvalidInput("distribution_from_parts: task spectrum length");

    SpectralTaskDistribution dist;
    dist.d = d;
    dist.context_length = context_length;
    dist.task_count = task_spectra.size();
    dist.eigenbasis = std::move(eigenbasis);
    dist.spectrum = std::move(spectrum);
    dist.task_spectra = std::move(task_spectra);
    dist.seed = seed;
    build_tasks(dist);
    return dist;
}

PromptInstance make_prompt(const Matrix& xs, const Vector& xq, const Matrix& task_matrix, std::size_t task) {
    const Eigen::Index d = xs.rows();
    const Eigen::Index n = xs.cols();
    if (d == 0 || n == 0) throw InvalidInput("make_prompt: empty context");
    if (xq.size() != d || task_matrix.rows() != d || task_matrix.cols() != d)
        throw InvalidInput("make_prompt: dimension mismatch");

    PromptInstance p;
    p.xs = xs;
    p.ys = task_matrix * xs;
    p.xq = xq;
    p.yq = task_matrix * xq;
    p.task = task;
    p.embedding = Matrix::Zero(2 * d, n + 1);
    p.embedding.topLeftCorner(d, n) = p.xs;
    p.embedding.bottomLeftCorner(d, n) = p.ys;
    p.embedding.topRightCorner(d, 1) = p.xq;
    return p;
}

PromptInstance sample_prompt(const SpectralTaskDistribution& dist, std::size_t task, RngStream& rng) {
    if (task >= dist.task_count) throw InvalidInput("sample_prompt: task index out of range");
    const auto d = static_cast<Eigen::Index>(dist.d);
    const auto n = static_cast<Eigen::Index>(dist.context_length);
    const Vector scale = dist.spectrum.cwiseSqrt();

    // Columns 0..N-1 are context inputs, column N the query.
    Matrix z(d, n + 1);
    for (Eigen::Index c = 0; c <= n; ++c)
        for (Eigen::Index r = 0; r < d; ++r) z(r, c) = scale(r) * rng.normal();
    const Matrix x = dist.eigenbasis * z;
    return make_prompt(x.leftCols(n), x.col(n), dist.tasks[task], task);
}

std::string to_string(CovarianceMode mode) {
    return mode == CovarianceMode::full ? "full" : "exclude_query";
}

CovarianceMode covariance_mode_from_string(const std::string& name) {
    if (name == "full") return CovarianceMode::full;
    if (name == "exclude_query") return CovarianceMode::exclude_query;
    throw InvalidInput("unknown covariance mode '" + name + "'");
}

EmpiricalCovariances empirical_covariances(const PromptInstance& prompt, CovarianceMode mode) {
    const Eigen::Index d = prompt.xs.rows();
    const auto n = static_cast<double>(prompt.xs.cols());
    EmpiricalCovariances out;
    out.sigma_x = prompt.xs * prompt.xs.transpose() / n;
    out.gamma = prompt.embedding * prompt.embedding.transpose() / n;
    if (mode == CovarianceMode::exclude_query) out.gamma.topLeftCorner(d, d) = out.sigma_x;
    return out;
}

void sample_summary(const SpectralTaskDistribution& dist, std::size_t task, RngStream& rng, CovarianceMode mode,
                    PromptWorkspace& work, PromptSummary& out) {
    if (task >= dist.task_count) throw InvalidInput("sample_summary: task index out of range");
    const auto d = static_cast<Eigen::Index>(dist.d);
    const auto n = static_cast<Eigen::Index>(dist.context_length);
    const double inv_n = 1.0 / static_cast<double>(n);
    work.z.resize(d, n + 1);
    for (Eigen::Index c = 0; c <= n; ++c)
        for (Eigen::Index r = 0; r < d; ++r) work.z(r, c) = std::sqrt(dist.spectrum(r)) * rng.normal();
    // Tiny operands: coefficient-wise products beat the blocked GEMM path.
    work.x.noalias() = dist.eigenbasis.lazyProduct(work.z);
    work.sigma_x.noalias() = work.x.leftCols(n).lazyProduct(work.x.leftCols(n).transpose());
    work.sigma_x *= inv_n;

    const Matrix& w = dist.tasks[task];
    out.xq = work.x.col(n);
    out.yq.noalias() = w * out.xq;
    out.gamma.resize(2 * d, 2 * d);
    out.gamma.topLeftCorner(d, d) = work.sigma_x;
    if (mode == CovarianceMode::full) out.gamma.topLeftCorner(d, d).noalias() += inv_n * out.xq * out.xq.transpose();
    out.gamma.bottomLeftCorner(d, d).noalias() = w.lazyProduct(work.sigma_x);
    out.gamma.topRightCorner(d, d) = out.gamma.bottomLeftCorner(d, d).transpose();
    out.gamma.bottomRightCorner(d, d).noalias() = out.gamma.bottomLeftCorner(d, d).lazyProduct(w.transpose());
}

namespace {

struct RunningMoments {
    Matrix sum;
    Matrix sum_sq;

    explicit RunningMoments(Eigen::Index d) : sum(Matrix::Zero(d, d)), sum_sq(Matrix::Zero(d, d)) {}
    void add(const Matrix& m) {
        sum += m;
        sum_sq += m.cwiseProduct(m);
    }
    MomentEstimate finish(std::size_t count, Matrix expected) const {
        const auto k = static_cast<double>(count);
        MomentEstimate e;
        e.mean = sum / k;
        const Matrix var = (sum_sq / k - e.mean.cwiseProduct(e.mean)).cwiseMax(0.0) * (k / std::max(k - 1.0, 1.0));
        e.standard_error = (var / k).cwiseSqrt();
        e.expected = std::move(expected);
        return e;
    }
};

}  // namespace

WishartReport validate_wishart_moments(const Vector& spectrum, std::size_t context_length, std::size_t samples,
                                       std::uint64_t seed) {
    const Eigen::Index d = spectrum.size();
    if (d == 0 || context_length == 0) throw InvalidInput("validate_wishart_moments: empty spectrum or N = 0");
    if (samples < 2) throw InvalidInput("validate_wishart_moments: need at least 2 samples");
    for (Eigen::Index a = 0; a < d; ++a)
        if (!(spectrum(a) > 0.0)) throw InvalidInput("validate_wishart_moments: eigenvalues must be > 0");

    const auto n = static_cast<Eigen::Index>(context_length);
    const Vector scale = spectrum.cwiseSqrt();
    RunningMoments first(d), second(d);
    Matrix x(d, n);
    for (std::size_t i = 0; i < samples; ++i) {
        RngStream rng(seed, {.sample = static_cast<std::uint32_t>(i), .role = Role::validation});
        for (Eigen::Index c = 0; c < n; ++c)
            for (Eigen::Index r = 0; r < d; ++r) x(r, c) = scale(r) * rng.normal();
        const Matrix s_hat = x * x.transpose() / static_cast<double>(n);
        first.add(s_hat);
        second.add(s_hat * s_hat);
    }

    const double nn = static_cast<double>(context_length);
    const Matrix s = spectrum.asDiagonal();
    WishartReport report;
    report.samples = samples;
    report.context_length = context_length;
    report.first = first.finish(samples, s);
    report.second = second.finish(samples, (nn + 1.0) / nn * s * s + spectrum.sum() / nn * s);
    report.precision_ok = samples >= 1000;
    return report;
}

}  // namespace icl
