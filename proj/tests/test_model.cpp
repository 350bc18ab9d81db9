#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "icl/errors.hpp"
#include "icl/model.hpp"

using namespace icl;

namespace {

PromptInstance scalar_prompt() {
    Matrix xs(1, 2);
    xs << 1, 2;
    Vector xq(1);
    xq << 3;
    return make_prompt(xs, xq, Matrix::Constant(1, 1, 2.0));
}

ModelParams unit_scalar_params() {
    ModelParams params(1);
    params.p2()(0, 0) = 1.0;
    params.q1()(0, 0) = 1.0;
    return params;
}

ModelParams random_params(std::size_t d, RngStream& rng, bool null_blocks) {
    ModelParams params(d);
    for (Eigen::Index i = 0; i < params.p2().rows(); ++i)
        for (Eigen::Index j = 0; j < params.p2().cols(); ++j) {
            params.p2()(i, j) = rng.normal();
            params.q1()(i, j) = rng.normal();
            if (null_blocks) {
                params.p1()(i, j) = rng.normal();
                params.q2()(i, j) = rng.normal();
            }
        }
    return params;
}

double prompt_loss(const ModelParams& params, const Matrix& gamma, const Vector& xq, const Vector& yq) {
    return loss(predict(params, gamma, xq), yq);
}

}  // namespace

TEST(Forward, ZeroWeightsIsIdentity) {
    const PromptInstance p = scalar_prompt();
    EXPECT_EQ(forward(p.embedding, ModelParams(1)), p.embedding);
}

TEST(Forward, HandExample) {
    const PromptInstance p = scalar_prompt();
    const Matrix out = forward(p.embedding, unit_scalar_params());
    EXPECT_DOUBLE_EQ(out(1, 2), 15.0);
    EXPECT_THROW(forward(Matrix::Zero(3, 3), unit_scalar_params()), InvalidInput);
}

TEST(Predict, HandExamples) {
    const Matrix gamma = (Matrix(2, 2) << 7, 5, 5, 10).finished();
    const Vector xq = Vector::Constant(1, 3.0);
    EXPECT_DOUBLE_EQ(predict(unit_scalar_params(), gamma, xq)(0), 15.0);
    EXPECT_DOUBLE_EQ(predict(ModelParams(1), gamma, xq)(0), 0.0);
}

TEST(Loss, HandExamples) {
    EXPECT_DOUBLE_EQ(loss(Vector::Constant(1, 15.0), Vector::Constant(1, 6.0)), 40.5);
    const Vector v = (Vector(3) << 1, -2, 3).finished();
    EXPECT_EQ(loss(v, v), 0.0);
}

TEST(Gradients, HandExample) {
    const PromptInstance p = scalar_prompt();
    const Gradients g = grads(unit_scalar_params(), p, CovarianceMode::exclude_query, TrainMode::restricted);
    EXPECT_DOUBLE_EQ(g.p2(0, 0), 135.0);
    // q1 gradient: r * (Sigma W^T p2)  * xq = 9 * 5 * 3.
    EXPECT_DOUBLE_EQ(g.q1(0, 0), 135.0);
    EXPECT_EQ(g.p1(0, 0), 0.0);
    EXPECT_EQ(g.q2(0, 0), 0.0);
}

TEST(Gradients, VanishAtPerPromptStationaryPoint) {
    // Sigma_hat = 2.5, W = 2: p2 W Sigma q1 = W requires p2 q1 = 1 / 2.5.
    ModelParams params(1);
    params.p2()(0, 0) = 0.5;
    params.q1()(0, 0) = 0.8;
    const Gradients g = grads(params, scalar_prompt(), CovarianceMode::exclude_query, TrainMode::full);
    EXPECT_NEAR(g.p2(0, 0), 0.0, 1e-13);
    EXPECT_NEAR(g.q1(0, 0), 0.0, 1e-13);
    EXPECT_NEAR(g.p1(0, 0), 0.0, 1e-13);
    EXPECT_NEAR(g.q2(0, 0), 0.0, 1e-13);
}

TEST(Predict, MatchesForwardLastColumn) {
    RngStream rng(1, {.role = Role::test});
    for (std::size_t d : {1u, 2u, 4u}) {
        const SpectralTaskDistribution dist = make_distribution(d, 6, 3, SpectrumSpec::geometric_decay(2, 1.5), d);
        const ModelParams params(Matrix::Random(2 * d, 2 * d), Matrix::Random(2 * d, 2 * d));
        const PromptInstance p = sample_prompt(dist, 1, rng);
        const EmpiricalCovariances c = empirical_covariances(p, CovarianceMode::full);
        const Matrix out = forward(p.embedding, params);
        const Vector yhat = predict(params, c.gamma, p.xq);
        EXPECT_LT((out.col(6).tail(d) - yhat).cwiseAbs().maxCoeff(), 1e-12 * (1.0 + yhat.norm())) << d;
    }
}

TEST(Predict, RestrictedIdentity) {
    RngStream rng(2, {.role = Role::test});
    const SpectralTaskDistribution dist = make_distribution(3, 8, 2, SpectrumSpec::explicit_list({2, 1, .5}), 2);
    const ModelParams params = random_params(3, rng, false);
    const PromptInstance p = sample_prompt(dist, 0, rng);
    const EmpiricalCovariances c = empirical_covariances(p, CovarianceMode::exclude_query);
    const Vector direct = params.p2() * dist.tasks[0] * c.sigma_x * params.q1() * p.xq;
    EXPECT_LT((predict(params, c.gamma, p.xq) - direct).cwiseAbs().maxCoeff(), 1e-12 * (1.0 + direct.norm()));
}

// Central differences on every parameter entry.
TEST(Gradients, MatchFiniteDifferences) {
    RngStream rng(3, {.role = Role::test});
    for (std::size_t d : {1u, 2u, 3u, 4u})
        for (CovarianceMode cov : {CovarianceMode::full, CovarianceMode::exclude_query}) {
            const SpectralTaskDistribution dist =
                make_distribution(d, 5, 2, SpectrumSpec::geometric_decay(1.5, 1.3), 10 + d);
            ModelParams params = random_params(d, rng, true);
            const PromptInstance p = sample_prompt(dist, 1, rng);
            const EmpiricalCovariances c = empirical_covariances(p, cov);
            const Gradients g = loss_and_grads(params, c.gamma, p.xq, p.yq, TrainMode::full).grads;
            const double h = 1e-6;

            auto check = [&](auto block, const Matrix& analytic, const char* name) {
                for (Eigen::Index i = 0; i < analytic.rows(); ++i)
                    for (Eigen::Index j = 0; j < analytic.cols(); ++j) {
                        const double orig = block(params)(i, j);
                        block(params)(i, j) = orig + h;
                        const double up = prompt_loss(params, c.gamma, p.xq, p.yq);
                        block(params)(i, j) = orig - h;
                        const double down = prompt_loss(params, c.gamma, p.xq, p.yq);
                        block(params)(i, j) = orig;
                        const double fd = (up - down) / (2 * h);
                        EXPECT_LE(std::abs(fd - analytic(i, j)), 1e-5 * std::max(1.0, std::abs(analytic(i, j))))
                            << name << " d=" << d << " (" << i << "," << j << ")";
                    }
            };
            check([](ModelParams& m) { return m.p1(); }, g.p1, "p1");
            check([](ModelParams& m) { return m.p2(); }, g.p2, "p2");
            check([](ModelParams& m) { return m.q1(); }, g.q1, "q1");
            check([](ModelParams& m) { return m.q2(); }, g.q2, "q2");
        }
}

TEST(Gradients, LossMatchesPredictor) {
    RngStream rng(4, {.role = Role::test});
    const SpectralTaskDistribution dist = make_distribution(2, 5, 2, SpectrumSpec::uniform_value(1), 4);
    const ModelParams params = random_params(2, rng, true);
    const PromptInstance p = sample_prompt(dist, 0, rng);
    const EmpiricalCovariances c = empirical_covariances(p, CovarianceMode::full);
    const LossAndGradients lg = loss_and_grads(params, c.gamma, p.xq, p.yq, TrainMode::restricted);
    EXPECT_DOUBLE_EQ(lg.loss, prompt_loss(params, c.gamma, p.xq, p.yq));
    EXPECT_TRUE(lg.grads.p1.isZero(0.0));
    EXPECT_TRUE(lg.grads.q2.isZero(0.0));
}

TEST(NullGradients, MeansVanishWithinStandardErrors) {
    const SpectralTaskDistribution dist = make_distribution(3, 20, 1, SpectrumSpec::explicit_list({3, 2, 1}), 6);
    RngStream rng(6, {.role = Role::test});
    const ModelParams params = random_params(3, rng, false);
    const NullGradientReport r = null_gradient_check(dist, params, 10000, 6, CovarianceMode::exclude_query);
    EXPECT_TRUE(r.precision_ok);
    // With 18 entries tested at once, allow the per-entry 3 SE bound plus a
    // little for the multiple comparisons.
    EXPECT_LT(r.p1.max_abs_z, 3.5);
    EXPECT_LT(r.q2.max_abs_z, 3.5);
    // The active blocks carry signal.
    EXPECT_GT(r.p2.max_abs_z, 10.0);
    EXPECT_GT(r.q1.max_abs_z, 10.0);
}

TEST(NullGradients, RequiresZeroNullBlocks) {
    const SpectralTaskDistribution dist = make_distribution(2, 5, 1, SpectrumSpec::uniform_value(1), 0);
    ModelParams params(2);
    params.p1()(0, 1) = 0.1;
    EXPECT_THROW(null_gradient_check(dist, params, 100, 0, CovarianceMode::exclude_query), InvalidInput);
}

TEST(Diagonalize, Examples) {
    ModelParams params(2);
    params.p2() = Eigen::Vector2d(1.0, 2.0).asDiagonal();
    DiagonalizedParams dp = diagonalize(params, Matrix::Identity(2, 2));
    EXPECT_EQ(dp.p2, (Vector(2) << 1, 2).finished());
    EXPECT_EQ(dp.offdiag_norm, 0.0);

    RngStream rng(7, {.role = Role::test});
    const Matrix u = random_orthogonal(2, rng);
    params.p2() = u * Eigen::Vector2d(1.0, 2.0).asDiagonal() * u.transpose();
    dp = diagonalize(params, u);
    EXPECT_NEAR(dp.p2(0), 1.0, 1e-12);
    EXPECT_NEAR(dp.p2(1), 2.0, 1e-12);
    EXPECT_LT(dp.offdiag_norm, 1e-12);

    params.p2() << 1, 0.5, 0, 2;
    EXPECT_GT(diagonalize(params, Matrix::Identity(2, 2)).offdiag_norm, 0.1);
}

TEST(Params, ShapeValidation) {
    EXPECT_THROW(ModelParams(0), InvalidInput);
    EXPECT_THROW(ModelParams(Matrix::Zero(3, 3), Matrix::Zero(3, 3)), InvalidInput);
    EXPECT_THROW(ModelParams(Matrix::Zero(2, 2), Matrix::Zero(4, 4)), InvalidInput);
    EXPECT_EQ(train_mode_from_string(to_string(TrainMode::full)), TrainMode::full);
}
