#include "icl/trainer.hpp"

#include <cmath>

#include "icl/errors.hpp"

namespace icl {

void TrainConfig::validate() const {
    if (!(eta >= 0.0) || !std::isfinite(eta)) throw InvalidInput("train: eta must be finite and >= 0");
    if (batch < 1) throw InvalidInput("train: batch must be >= 1");
    if (record_every < 1) throw InvalidInput("train: record_every must be >= 1");
    if (!(init.scale >= 0.0) || !std::isfinite(init.scale)) throw InvalidInput("train: init scale must be >= 0");
    if (!std::isfinite(init.null_scale)) throw InvalidInput("train: init null_scale must be finite");
}

EffectiveProduct effective_product(const ModelParams& params, const Matrix& eigenbasis) {
    const auto d = static_cast<Eigen::Index>(params.dim());
    if (eigenbasis.rows() != d || eigenbasis.cols() != d) throw InvalidInput("effective_product: eigenbasis shape");
    const Matrix m = eigenbasis.transpose() * (params.p2() * params.q1()) * eigenbasis;
    EffectiveProduct out;
    out.diagonal = m.diagonal();
    double off = 0.0;
    for (Eigen::Index r = 0; r < d; ++r)
        for (Eigen::Index c = 0; c < d; ++c)
            if (r != c) off += m(r, c) * m(r, c);
    out.offdiag_norm = std::sqrt(off);
    return out;
}

double conserved_quantity(const ModelParams& params) {
    return params.p2().squaredNorm() - params.q1().squaredNorm();
}

ModelParams initial_params(const SpectralTaskDistribution& dist, const TrainConfig& config) {
    config.validate();
    const auto d = static_cast<Eigen::Index>(dist.d);
    const Matrix& u = dist.eigenbasis;
    ModelParams params(dist.d);
    const double eps = config.init.scale;
    RngStream rng(config.seed, {.role = Role::init});
    if (config.init.symmetric) {
        params.p2() = eps * Matrix::Identity(d, d);
        params.q1() = eps * Matrix::Identity(d, d);
    } else {
        Vector p(d), q(d);
        for (Eigen::Index a = 0; a < d; ++a) p(a) = eps * rng.normal();
        for (Eigen::Index a = 0; a < d; ++a) q(a) = eps * rng.normal();
        params.p2() = u * p.asDiagonal() * u.transpose();
        params.q1() = u * q.asDiagonal() * u.transpose();
    }
    if (config.train_mode == TrainMode::full) {
        const double null_eps = config.init.null_scale < 0.0 ? eps : config.init.null_scale;
        for (Eigen::Index r = 0; r < d; ++r)
            for (Eigen::Index c = 0; c < d; ++c) params.p1()(r, c) = null_eps * rng.normal();
        for (Eigen::Index r = 0; r < d; ++r)
            for (Eigen::Index c = 0; c < d; ++c) params.q2()(r, c) = null_eps * rng.normal();
    }
    return params;
}

namespace {

Snapshot make_snapshot(std::int64_t step, double loss, const ModelParams& params, const Matrix& u) {
    const EffectiveProduct ep = effective_product(params, u);
    Snapshot s;
    s.step = step;
    s.loss = loss;
    s.params = params;
    s.a = ep.diagonal;
    s.conserved = conserved_quantity(params);
    s.offdiag_norm = ep.offdiag_norm;
    return s;
}

struct BatchResult {
    double loss = 0.0;
    Gradients grads;
};

BatchResult batch_gradient(const SpectralTaskDistribution& dist, const ModelParams& params, const TrainConfig& config,
                           std::uint32_t epoch, std::uint32_t task) {
    const auto d = static_cast<Eigen::Index>(dist.d);
    const bool full = config.train_mode == TrainMode::full;
    BatchResult out;
    out.grads = Gradients::zeros(dist.d);
    PromptWorkspace work;
    PromptSummary ps;
    Vector qx(2 * d), v(2 * d), residual(d), w(2 * d);
    const auto p_t = params.p_t();
    const auto q = params.q();
    for (std::size_t b = 0; b < config.batch; ++b) {
        RngStream rng(config.seed, {.epoch = epoch, .task = task, .sample = static_cast<std::uint32_t>(b),
                                    .role = Role::context});
        sample_summary(dist, task, rng, config.covariance_mode, work, ps);
        qx.noalias() = q * ps.xq;
        v.noalias() = ps.gamma * qx;
        residual.noalias() = p_t * v;
        residual -= ps.yq;
        w.noalias() = ps.gamma.transpose() * (p_t.transpose() * residual);
        out.loss += 0.5 * residual.squaredNorm();
        out.grads.p2.noalias() += residual * v.tail(d).transpose();
        out.grads.q1.noalias() += w.head(d) * ps.xq.transpose();
        if (full) {
            out.grads.p1.noalias() += residual * v.head(d).transpose();
            out.grads.q2.noalias() += w.tail(d) * ps.xq.transpose();
        }
    }
    const double inv = 1.0 / static_cast<double>(config.batch);
    out.loss *= inv;
    out.grads *= inv;
    return out;
}

}  // namespace

TrainingTrace train(const SpectralTaskDistribution& dist, const TrainConfig& config) {
    return train_from(dist, config, initial_params(dist, config));
}

TrainingTrace train_from(const SpectralTaskDistribution& dist, const TrainConfig& config, ModelParams params) {
    config.validate();
    if (params.dim() != dist.d) throw InvalidInput("train: parameter dimension does not match distribution");
    if (config.train_mode == TrainMode::restricted &&
        (params.p1().cwiseAbs().maxCoeff() != 0.0 || params.q2().cwiseAbs().maxCoeff() != 0.0))
        throw InvalidInput("train: restricted mode requires p1 = q2 = 0");

    const Matrix& u = dist.eigenbasis;
    TrainingTrace trace;
    trace.config = config;
    trace.eigenbasis = u;
    trace.steps_per_epoch = dist.task_count;
    trace.step_losses.reserve(config.epochs * dist.task_count);

    std::int64_t step = 0;
    double epoch_loss = 0.0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        epoch_loss = 0.0;
        for (std::size_t task = 0; task < dist.task_count; ++task) {
            const BatchResult br = batch_gradient(dist, params, config, static_cast<std::uint32_t>(epoch),
                                                  static_cast<std::uint32_t>(task));
            if (step == 0) {
                trace.initial = make_snapshot(0, br.loss, params, u);
                trace.snapshots.push_back(trace.initial);
            }
            ++step;
            trace.step_losses.push_back(br.loss);
            epoch_loss += br.loss;

            params.p2() -= config.eta * br.grads.p2;
            params.q1() -= config.eta * br.grads.q1;
            if (config.train_mode == TrainMode::full) {
                params.p1() -= config.eta * br.grads.p1;
                params.q2() -= config.eta * br.grads.q2;
            }
            if (!params.finite() || params.max_abs() > kDivergenceThreshold) throw DivergenceError(step);

            const bool last = epoch + 1 == config.epochs && task + 1 == dist.task_count;
            if (static_cast<std::size_t>(step) % config.record_every == 0 || last)
                trace.snapshots.push_back(make_snapshot(step, br.loss, params, u));
        }
        const EffectiveProduct ep = effective_product(params, u);
        trace.epochs.push_back({epoch + 1, epoch_loss / static_cast<double>(dist.task_count), ep.diagonal,
                                conserved_quantity(params), ep.offdiag_norm});
    }
    if (step == 0) {
        trace.initial = make_snapshot(0, 0.0, params, u);
        trace.snapshots.push_back(trace.initial);
    }
    return trace;
}

double evaluate_loss(const SpectralTaskDistribution& dist, const ModelParams& params, CovarianceMode mode,
                     std::size_t prompts_per_task, std::uint64_t seed) {
    if (prompts_per_task == 0) throw InvalidInput("evaluate_loss: prompts_per_task must be >= 1");
    double total = 0.0;
    for (std::size_t task = 0; task < dist.task_count; ++task) {
        for (std::size_t b = 0; b < prompts_per_task; ++b) {
            RngStream rng(seed, {.task = static_cast<std::uint32_t>(task), .sample = static_cast<std::uint32_t>(b),
                                 .role = Role::validation});
            const PromptInstance prompt = sample_prompt(dist, task, rng);
            const EmpiricalCovariances cov = empirical_covariances(prompt, mode);
            total += loss(predict(params, cov.gamma, prompt.xq), prompt.yq);
        }
    }
    return total / static_cast<double>(dist.task_count * prompts_per_task);
}

}  // namespace icl
