#include "icl/model.hpp"

#include <algorithm>
#include <cmath>

#include "icl/errors.hpp"

namespace icl {

std::string to_string(TrainMode mode) { return mode == TrainMode::full ? "full" : "restricted"; }

TrainMode train_mode_from_string(const std::string& name) {
    if (name == "full") return TrainMode::full;
    if (name == "restricted") return TrainMode::restricted;
    throw InvalidInput("unknown train mode '" + name + "'");
}

ModelParams::ModelParams(std::size_t d) : d_(d) {
    if (d == 0) throw InvalidInput("ModelParams: d must be >= 1");
    const auto n = static_cast<Eigen::Index>(2 * d);
    wp_ = Matrix::Zero(n, n);
    wq_ = Matrix::Zero(n, n);
}

ModelParams::ModelParams(Matrix wp, Matrix wq) : d_(static_cast<std::size_t>(wp.rows() / 2)), wp_(std::move(wp)), wq_(std::move(wq)) {
    if (wp_.rows() == 0 || wp_.rows() % 2 != 0 || wp_.rows() != wp_.cols() || wq_.rows() != wp_.rows() ||
        wq_.cols() != wp_.cols())
        throw InvalidInput("ModelParams: W_P and W_Q must both be 2d x 2d");
    require_finite(wp_, "ModelParams W_P");
    require_finite(wq_, "ModelParams W_Q");
}

double ModelParams::max_abs() const { return std::max(wp_.cwiseAbs().maxCoeff(), wq_.cwiseAbs().maxCoeff()); }

Matrix forward(const Matrix& embedding, const ModelParams& params) {
    const auto dd = static_cast<Eigen::Index>(2 * params.dim());
    if (embedding.rows() != dd || embedding.cols() < 2)
        throw InvalidInput("forward: embedding must be 2d x (N+1) with N >= 1");
    const auto n = static_cast<double>(embedding.cols() - 1);
    const Matrix gamma = embedding * embedding.transpose() / n;
    return embedding + params.wp() * gamma * params.wq() * embedding;
}

Vector predict(const ModelParams& params, const Matrix& gamma, const Vector& xq) {
    const auto dd = static_cast<Eigen::Index>(2 * params.dim());
    if (gamma.rows() != dd || gamma.cols() != dd || xq.size() != dd / 2)
        throw InvalidInput("predict: dimension mismatch");
    return params.p_t() * (gamma * (params.q() * xq));
}

double loss(const Vector& prediction, const Vector& target) {
    if (prediction.size() != target.size()) throw InvalidInput("loss: dimension mismatch");
    return 0.5 * (prediction - target).squaredNorm();
}

Gradients Gradients::zeros(std::size_t d) {
    const auto n = static_cast<Eigen::Index>(d);
    return {Matrix::Zero(n, n), Matrix::Zero(n, n), Matrix::Zero(n, n), Matrix::Zero(n, n)};
}

Gradients& Gradients::operator+=(const Gradients& o) {
    p1 += o.p1;
    p2 += o.p2;
    q1 += o.q1;
    q2 += o.q2;
    return *this;
}

Gradients& Gradients::operator*=(double c) {
    p1 *= c;
    p2 *= c;
    q1 *= c;
    q2 *= c;
    return *this;
}

LossAndGradients loss_and_grads(const ModelParams& params, const Matrix& gamma, const Vector& xq, const Vector& yq,
                                TrainMode mode) {
    const auto d = static_cast<Eigen::Index>(params.dim());
    // y_hat = p^T v with v = Gamma q x_q, so dL/dp^T = r v^T and dL/dq = (Gamma p r) x_q^T.
    const Vector v = gamma * (params.q() * xq);
    const Vector residual = params.p_t() * v - yq;
    const Vector w = gamma.transpose() * (params.p_t().transpose() * residual);

    LossAndGradients out;
    out.loss = 0.5 * residual.squaredNorm();
    out.grads.p2 = residual * v.tail(d).transpose();
    out.grads.q1 = w.head(d) * xq.transpose();
    if (mode == TrainMode::full) {
        out.grads.p1 = residual * v.head(d).transpose();
        out.grads.q2 = w.tail(d) * xq.transpose();
    } else {
        out.grads.p1 = Matrix::Zero(d, d);
        out.grads.q2 = Matrix::Zero(d, d);
    }
    return out;
}

Gradients grads(const ModelParams& params, const PromptInstance& prompt, CovarianceMode cov_mode, TrainMode mode) {
    const EmpiricalCovariances cov = empirical_covariances(prompt, cov_mode);
    return loss_and_grads(params, cov.gamma, prompt.xq, prompt.yq, mode).grads;
}

namespace {

struct BlockAccumulator {
    Matrix sum;
    Matrix sum_sq;

    explicit BlockAccumulator(Eigen::Index d) : sum(Matrix::Zero(d, d)), sum_sq(Matrix::Zero(d, d)) {}
    void add(const Matrix& g) {
        sum += g;
        sum_sq += g.cwiseProduct(g);
    }
    BlockMoments finish(std::size_t count) const {
        const auto k = static_cast<double>(count);
        BlockMoments m;
        m.mean = sum / k;
        const Matrix var = (sum_sq / k - m.mean.cwiseProduct(m.mean)).cwiseMax(0.0) * (k / std::max(k - 1.0, 1.0));
        m.standard_error = (var / k).cwiseSqrt();
        for (Eigen::Index i = 0; i < m.mean.size(); ++i) {
            const double se = m.standard_error(i);
            const double z = se > 0.0 ? std::abs(m.mean(i)) / se : (m.mean(i) == 0.0 ? 0.0 : INFINITY);
            m.max_abs_z = std::max(m.max_abs_z, z);
        }
        return m;
    }
};

}  // namespace

NullGradientReport null_gradient_check(const SpectralTaskDistribution& dist, const ModelParams& params,
                                       std::size_t samples, std::uint64_t seed, CovarianceMode cov_mode) {
    if (params.dim() != dist.d) throw InvalidInput("null_gradient_check: parameter dimension does not match distribution");
    if (params.p1().cwiseAbs().maxCoeff() != 0.0 || params.q2().cwiseAbs().maxCoeff() != 0.0)
        throw InvalidInput("null_gradient_check: p1 and q2 must be zero");
    if (samples < 2) throw InvalidInput("null_gradient_check: need at least 2 samples");

    const auto d = static_cast<Eigen::Index>(dist.d);
    const auto n = static_cast<Eigen::Index>(dist.context_length);
    const Vector scale = dist.spectrum.cwiseSqrt();
    BlockAccumulator p1(d), p2(d), q1(d), q2(d);
    Matrix z(d, n + 1);
    Vector lambda(d);
    for (std::size_t i = 0; i < samples; ++i) {
        RngStream rng(seed, {.task = 1, .sample = static_cast<std::uint32_t>(i), .role = Role::validation});
        for (Eigen::Index a = 0; a < d; ++a) lambda(a) = rng.normal();
        for (Eigen::Index c = 0; c <= n; ++c)
            for (Eigen::Index r = 0; r < d; ++r) z(r, c) = scale(r) * rng.normal();
        const Matrix task = dist.eigenbasis * lambda.asDiagonal() * dist.eigenbasis.transpose();
        const Matrix x = dist.eigenbasis * z;
        const PromptInstance prompt = make_prompt(x.leftCols(n), x.col(n), task);
        const Gradients g = grads(params, prompt, cov_mode, TrainMode::full);
        p1.add(g.p1);
        p2.add(g.p2);
        q1.add(g.q1);
        q2.add(g.q2);
    }
    NullGradientReport report;
    report.samples = samples;
    report.p1 = p1.finish(samples);
    report.q2 = q2.finish(samples);
    report.p2 = p2.finish(samples);
    report.q1 = q1.finish(samples);
    report.precision_ok = samples >= 1000;
    return report;
}

DiagonalizedParams diagonalize(const ModelParams& params, const Matrix& eigenbasis) {
    const auto d = static_cast<Eigen::Index>(params.dim());
    if (eigenbasis.rows() != d || eigenbasis.cols() != d) throw InvalidInput("diagonalize: eigenbasis shape");
    const Matrix p = eigenbasis.transpose() * params.p2() * eigenbasis;
    const Matrix q = eigenbasis.transpose() * params.q1() * eigenbasis;
    DiagonalizedParams out;
    out.p2 = p.diagonal();
    out.q1 = q.diagonal();
    double off = 0.0;
    for (Eigen::Index r = 0; r < d; ++r)
        for (Eigen::Index c = 0; c < d; ++c)
            if (r != c) off += p(r, c) * p(r, c) + q(r, c) * q(r, c);
    out.offdiag_norm = std::sqrt(off);
    return out;
}

}  // namespace icl
