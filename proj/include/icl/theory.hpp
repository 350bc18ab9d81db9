#pragma once

// Closed-form learning dynamics of the restricted model (p1 = q2 = 0) under
// gradient flow, one continuous time unit per epoch of P task updates.
//
// In the eigenbasis of Sigma_x each mode alpha evolves independently:
//
//     tau_a dp/dt = q (1 - p q s_inf_a),   tau_a dq/dt = p (1 - p q s_inf_a)
//
// with tau_a = 1 / (eta P s_a^2) and s_inf_a = ((N+1) s_a + Tr S) / N. For
// p(0) = q(0) the product a = p q follows a logistic curve toward
// a_inf = 1 / s_inf.

#include <cstddef>
#include <span>
#include <vector>

#include "icl/numerics.hpp"

namespace icl {

struct Mode {
    double s = 0.0;      // input eigenvalue
    double tau = 0.0;    // 1 / (eta P s^2)
    double s_inf = 0.0;  // ((N+1) s + Tr S) / N
    double a_inf = 0.0;  // 1 / s_inf
    double a0 = 0.0;     // initial product p q

    bool saddle() const { return a0 == 0.0; }
};

struct ModeTheory {
    std::vector<Mode> modes;
    std::size_t context_length = 0;
    double eta = 0.0;
    std::size_t task_count = 0;
    double trace = 0.0;  // Tr S
};

/// Per-mode constants. a0 defaults to zero for every mode; use with_initial()
/// to set it.
ModeTheory mode_constants(std::span<const double> spectrum, std::size_t context_length, double eta,
                          std::size_t task_count);

/// Copy of `theory` with every mode's a0 replaced.
ModeTheory with_initial(ModeTheory theory, std::span<const double> a0);

/// Logistic solution a(t). Returns 0 for all t when a0 = 0 (saddle).
double a_trajectory(const Mode& mode, double t);

/// Derivative of a_trajectory with respect to t.
double a_rate(const Mode& mode, double t);

/// Approximate time to get from a small initial product epsilon to the fixed
/// point, (tau / 2) log(1 / (s_inf epsilon)). Requires 0 < epsilon s_inf <= 1.
double time_to_fixed_point(const Mode& mode, double epsilon);

/// Time at which a(t) = a_inf / 2 (requires 0 < a0 < a_inf / 2).
double half_time(const Mode& mode);

/// Expected loss for products a_alpha:
/// 0.5 sum s (s / a_inf a^2 - 2 s a + 1).
double expected_loss(const ModeTheory& theory, std::span<const double> a);

struct TheoryCurve {
    std::vector<double> t;
    std::vector<std::vector<double>> a;  // a[i][alpha] at t[i]
    std::vector<double> loss;
    double loss_inf = 0.0;
    std::vector<double> a_inf;
    std::vector<bool> saddle;
};

TheoryCurve loss_curve(const ModeTheory& theory, std::span<const double> t_grid);

/// 0.5 sum s (s + Tr S) / ((N+1) s + Tr S).
double loss_infinity(std::span<const double> spectrum, std::size_t context_length);

struct InitialSlope {
    double exact = 0.0;        // -2 sum s^2 / tau a0 (a0 / a_inf - 1)^2
    double small_init = 0.0;   // -2 sum P eta s^4 a0
};

InitialSlope initial_loss_slope(const ModeTheory& theory);

struct ModeTrajectories {
    std::vector<double> t;
    std::vector<std::vector<double>> p;  // p[alpha][i]
    std::vector<std::vector<double>> q;
};

/// Integrates the decoupled (p, q) system per mode with an adaptive
/// Dormand-Prince 5(4) stepper. Throws IntegrationError when the step
/// controller cannot meet the tolerance.
ModeTrajectories integrate_modes(const ModeTheory& theory, std::span<const double> p0, std::span<const double> q0,
                                 std::span<const double> t_grid, double tolerance = 1e-10);

/// ||p||^2 - ||q||^2.
double conserved_quantity(std::span<const double> p, std::span<const double> q);

/// Diagonal of S (((N+1)/N) S + Tr(S)/N I)^{-1} in the eigenbasis.
Vector learned_operator(std::span<const double> spectrum, std::size_t context_length);

}  // namespace icl
