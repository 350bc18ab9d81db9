#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "icl/errors.hpp"
#include "icl/numerics.hpp"
#include "icl/theory.hpp"

using namespace icl;

namespace {

Mode make_mode(double tau, double s_inf, double a0) {
    Mode m;
    m.s = 1.0;
    m.tau = tau;
    m.s_inf = s_inf;
    m.a_inf = 1.0 / s_inf;
    m.a0 = a0;
    return m;
}

std::vector<double> linspace(double lo, double hi, std::size_t n) {
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    return out;
}

}  // namespace

TEST(ModeConstants, Examples) {
    const std::vector<double> s{2, 1};
    const ModeTheory th = mode_constants(s, 10, 0.01, 100);
    EXPECT_DOUBLE_EQ(th.modes[0].s_inf, 2.5);
    EXPECT_DOUBLE_EQ(th.modes[1].s_inf, 1.4);
    EXPECT_DOUBLE_EQ(th.modes[0].a_inf, 0.4);
    EXPECT_NEAR(th.modes[1].a_inf, 0.7142857142857143, 1e-15);
    EXPECT_DOUBLE_EQ(th.modes[0].tau, 0.25);
    EXPECT_DOUBLE_EQ(th.trace, 3.0);

    const ModeTheory big = mode_constants(s, 100000000, 0.01, 100);
    EXPECT_NEAR(big.modes[0].s_inf, 2.0, 1e-7);
    EXPECT_NEAR(big.modes[1].a_inf, 1.0, 1e-7);

    EXPECT_THROW(mode_constants(s, 10, 0.0, 100), InvalidInput);
    EXPECT_THROW(mode_constants(std::vector<double>{1, -1}, 10, 0.1, 1), InvalidInput);
}

TEST(Trajectory, Examples) {
    // a0 = 0.1, a_inf = 0.5, exp(-2t/tau) = 0.25 at t = tau ln 2.
    const Mode m = make_mode(1.0, 2.0, 0.1);
    EXPECT_NEAR(a_trajectory(m, std::log(2.0)), 0.25, 1e-15);
    EXPECT_DOUBLE_EQ(a_trajectory(m, 0.0), 0.1);
    EXPECT_NEAR(a_trajectory(m, 100.0), 0.5, 1e-15);
    const Mode saddle = make_mode(1.0, 2.0, 0.0);
    EXPECT_TRUE(saddle.saddle());
    EXPECT_EQ(a_trajectory(saddle, 5.0), 0.0);
}

TEST(Trajectory, LogisticResidual) {
    for (double a0 : {1e-4, 0.05, 0.9}) {
        const Mode m = make_mode(0.7, 1.6, a0);
        const double h = 1e-5;
        for (double t : linspace(0.01, 5.0, 500)) {
            const double da = (a_trajectory(m, t + h) - a_trajectory(m, t - h)) / (2 * h);
            const double a = a_trajectory(m, t);
            EXPECT_NEAR(m.tau * da - 2 * a * (1 - a * m.s_inf), 0.0, 1e-7) << a0 << " " << t;
            EXPECT_NEAR(a_rate(m, t), da, 1e-7);
        }
    }
}

TEST(FixedPointTime, Examples) {
    const Mode m = make_mode(0.25, 2.0, 0.01);
    EXPECT_NEAR(time_to_fixed_point(m, 0.01), 0.125 * std::log(50.0), 1e-15);
    EXPECT_NEAR(time_to_fixed_point(m, 0.5), 0.0, 1e-15);
    EXPECT_NEAR(time_to_fixed_point(m, 0.01), 0.4890, 1e-4);
    EXPECT_THROW(time_to_fixed_point(m, 0.6), InvalidInput);
    EXPECT_THROW(time_to_fixed_point(m, 0.0), InvalidInput);

    // s ratio 2: tau ratio 4, up to the log factor.
    const std::vector<double> s{2, 1};
    const ModeTheory th = mode_constants(s, 1000000, 0.01, 10);
    const double r = time_to_fixed_point(th.modes[1], 1e-3) / time_to_fixed_point(th.modes[0], 1e-3);
    const double log_factor = std::log(1.0 / (1e-3 * th.modes[1].s_inf)) / std::log(1.0 / (1e-3 * th.modes[0].s_inf));
    EXPECT_NEAR(r, 4.0 * log_factor, 1e-9);
}

TEST(HalfTime, MatchesTrajectoryAndOrders) {
    const std::vector<double> s{3, 2, 1.2, 0.5};
    const ModeTheory th = with_initial(mode_constants(s, 20, 0.01, 50), std::vector<double>(4, 1e-3));
    double prev = 0.0;
    for (const Mode& m : th.modes) {
        const double t = half_time(m);
        EXPECT_NEAR(a_trajectory(m, t), 0.5 * m.a_inf, 1e-12);
        EXPECT_GT(t, prev);
        prev = t;
    }
    EXPECT_THROW(half_time(make_mode(1, 2, 0.3)), InvalidInput);
}

TEST(Loss, Substitutions) {
    const std::vector<double> s{2, 1, 0.5};
    const ModeTheory th = mode_constants(s, 12, 0.01, 10);
    EXPECT_DOUBLE_EQ(expected_loss(th, std::vector<double>(3, 0.0)), 1.75);
    std::vector<double> a_inf;
    for (const Mode& m : th.modes) a_inf.push_back(m.a_inf);
    EXPECT_NEAR(expected_loss(th, a_inf), loss_infinity(s, 12), 1e-15);
    EXPECT_THROW(expected_loss(th, std::vector<double>(2, 0.0)), InvalidInput);
}

TEST(Loss, ScalarInfinity) {
    const std::vector<double> one{1.0};
    EXPECT_NEAR(loss_infinity(one, 1), 1.0 / 3.0, 1e-15);
    const ModeTheory th = mode_constants(one, 1, 0.1, 1);
    EXPECT_DOUBLE_EQ(th.modes[0].s_inf, 3.0);
    EXPECT_NEAR(expected_loss(th, std::vector<double>{1.0 / 3.0}), 1.0 / 3.0, 1e-15);
}

TEST(Loss, InfinityLimitsAndHomogeneity) {
    const std::vector<double> s{2, 1.3, 0.8};
    EXPECT_LT(loss_infinity(s, 100000000), 1e-7);
    std::vector<double> scaled(s);
    for (double& v : scaled) v *= 3.7;
    EXPECT_NEAR(loss_infinity(scaled, 15), 3.7 * loss_infinity(s, 15), 1e-13);
    // Decreasing in N.
    EXPECT_GT(loss_infinity(s, 5), loss_infinity(s, 50));
}

TEST(Loss, CurveMonotoneAndConverges) {
    const std::vector<double> s{2, 1.3, 0.8, 0.5};
    const double a0 = 2.5e-3;
    const ModeTheory th = with_initial(mode_constants(s, 40, 5e-3, 64), std::vector<double>(4, a0));
    double tmax = 0.0;
    for (const Mode& m : th.modes) tmax = std::max(tmax, 20.0 * m.tau * std::log(1.0 / (m.s_inf * a0)));
    const std::vector<double> grid = linspace(0.0, tmax, 4001);
    const TheoryCurve c = loss_curve(th, grid);
    for (std::size_t i = 1; i < c.loss.size(); ++i) EXPECT_LE(c.loss[i], c.loss[i - 1] + 1e-15) << i;
    EXPECT_NEAR(c.loss.back(), c.loss_inf, 1e-10);
    EXPECT_NEAR(c.loss_inf, loss_infinity(s, 40), 1e-14);
    EXPECT_EQ(c.a.size(), grid.size());
}

TEST(Slope, Examples) {
    // P = 1, eta = 0.1, s = 1, a0 = 0.01, a_inf >> a0.
    const std::vector<double> one{1.0};
    const ModeTheory th = with_initial(mode_constants(one, 100000000, 0.1, 1), std::vector<double>{0.01});
    const InitialSlope sl = initial_loss_slope(th);
    EXPECT_NEAR(sl.small_init, -0.002, 1e-15);
    // The exact form keeps the (1 - a0 / a_inf)^2 = 0.9801 factor.
    EXPECT_NEAR(sl.exact, -0.002 * 0.99 * 0.99, 1e-9);

    ModeTheory at_fixed = th;
    at_fixed.modes[0].a0 = at_fixed.modes[0].a_inf;
    EXPECT_EQ(initial_loss_slope(at_fixed).exact, 0.0);
}

TEST(Slope, MatchesCurveDerivative) {
    const std::vector<double> s{2, 0.7};
    const ModeTheory th = with_initial(mode_constants(s, 8, 0.02, 10), std::vector<double>{0.05, 0.2});
    const double h = 1e-6;
    const TheoryCurve c = loss_curve(th, std::vector<double>{0.0, h});
    const double fd = (c.loss[1] - c.loss[0]) / h;
    EXPECT_NEAR(initial_loss_slope(th).exact / fd, 1.0, 1e-4);
}

TEST(Integrator, SymmetricMatchesClosedForm) {
    const std::vector<double> s{2.0, 0.6};
    const ModeTheory th = mode_constants(s, 10, 0.01, 40);
    const std::vector<double> p0{0.05, 0.05};
    const ModeTheory thi = with_initial(th, std::vector<double>{0.0025, 0.0025});
    double tmax = 20.0 * std::max(th.modes[0].tau, th.modes[1].tau);
    const std::vector<double> grid = linspace(0.0, tmax, 400);
    const ModeTrajectories tr = integrate_modes(th, p0, p0, grid);
    for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t i = 0; i < grid.size(); ++i) {
            EXPECT_NEAR(tr.p[a][i], tr.q[a][i], 1e-9);
            EXPECT_NEAR(tr.p[a][i] * tr.q[a][i], a_trajectory(thi.modes[a], grid[i]), 1e-8);
        }
}

TEST(Integrator, ConservesPerModeDifference) {
    const std::vector<double> s{1.5, 0.9, 0.4};
    const ModeTheory th = mode_constants(s, 6, 0.02, 20);
    const std::vector<double> p0{0.3, -0.1, 0.02}, q0{0.05, 0.2, 0.01};
    const std::vector<double> grid = linspace(0.0, 30.0, 300);
    const ModeTrajectories tr = integrate_modes(th, p0, q0, grid);
    for (std::size_t a = 0; a < 3; ++a) {
        const double c0 = p0[a] * p0[a] - q0[a] * q0[a];
        for (std::size_t i = 0; i < grid.size(); ++i)
            EXPECT_NEAR(tr.p[a][i] * tr.p[a][i] - tr.q[a][i] * tr.q[a][i], c0, 1e-9);
    }
}

TEST(Integrator, SaddleStaysAtZeroAndErrors) {
    const std::vector<double> s{1.0};
    const ModeTheory th = mode_constants(s, 5, 0.1, 5);
    const std::vector<double> zero{0.0};
    const ModeTrajectories tr = integrate_modes(th, zero, zero, linspace(0, 10, 11));
    for (double v : tr.p[0]) EXPECT_EQ(v, 0.0);
    EXPECT_THROW(integrate_modes(th, zero, zero, std::vector<double>{2.0, 1.0}), InvalidInput);
    EXPECT_THROW(integrate_modes(th, std::vector<double>{0, 0}, zero, linspace(0, 1, 3)), InvalidInput);
    EXPECT_THROW(integrate_modes(th, zero, zero, std::vector<double>{}), InvalidInput);
}

// Property: closed form vs integrator across random spectra.
TEST(Integrator, RandomSpectraAgreeWithClosedForm) {
    RngStream rng(42, {.role = Role::test});
    for (int trial = 0; trial < 6; ++trial) {
        const std::size_t d = 1 + static_cast<std::size_t>(rng.uniform() * 8);
        std::vector<double> s(d);
        for (double& v : s) v = 0.1 + 3.9 * rng.uniform();
        const std::size_t n = trial % 2 ? 5 : 50;
        const ModeTheory th = mode_constants(s, n, 0.01, 32);
        const double eps = 0.05;
        const std::vector<double> p0(d, eps);
        const ModeTheory thi = with_initial(th, std::vector<double>(d, eps * eps));
        double tau_max = 0.0;
        for (const Mode& m : th.modes) tau_max = std::max(tau_max, m.tau);
        const std::vector<double> grid = linspace(0.0, 20.0 * tau_max, 300);
        const ModeTrajectories tr = integrate_modes(th, p0, p0, grid);
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t i = 0; i < grid.size(); ++i)
                ASSERT_NEAR(tr.p[a][i] * tr.q[a][i], a_trajectory(thi.modes[a], grid[i]), 1e-8);
    }
}

TEST(Conserved, Examples) {
    EXPECT_EQ(conserved_quantity(std::vector<double>{0.3, 0.4}, std::vector<double>{0.3, 0.4}), 0.0);
    EXPECT_NEAR(conserved_quantity(std::vector<double>{0.3, 0.4}, std::vector<double>{0.5, 0.0}), 0.0, 1e-15);
    EXPECT_EQ(conserved_quantity(std::vector<double>{1, 0}, std::vector<double>{0, 0}), 1.0);
}

TEST(LearnedOperator, Examples) {
    const std::vector<double> s{2, 1};
    const Vector op = learned_operator(s, 10);
    EXPECT_NEAR(op(0), 0.8, 1e-15);
    EXPECT_NEAR(op(1), 1.0 / 1.4, 1e-15);
    const Vector lim = learned_operator(s, 100000000);
    EXPECT_LT((lim.array() - 1.0).abs().maxCoeff(), 1e-6);
}
