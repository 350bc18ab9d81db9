#include "icl/theory.hpp"

#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <boost/numeric/odeint.hpp>

#include "icl/errors.hpp"

namespace icl {

namespace {

void require_positive(double v, const char* what) {
    if (!(v > 0.0) || !std::isfinite(v)) throw InvalidInput(std::string(what) + " must be finite and > 0");
}

}  // namespace

ModeTheory mode_constants(std::span<const double> spectrum, std::size_t context_length, double eta,
                          std::size_t task_count) {
    if (spectrum.empty()) throw InvalidInput("mode_constants: empty spectrum");
    if (context_length == 0 || task_count == 0) throw InvalidInput("mode_constants: N and P must be >= 1");
    require_positive(eta, "mode_constants: eta");
    for (double s : spectrum) require_positive(s, "mode_constants: eigenvalue");

    ModeTheory theory;
    theory.context_length = context_length;
    theory.eta = eta;
    theory.task_count = task_count;
    theory.trace = std::accumulate(spectrum.begin(), spectrum.end(), 0.0);
    const double n = static_cast<double>(context_length);
    const double ep = eta * static_cast<double>(task_count);
    for (double s : spectrum) {
        Mode m;
        m.s = s;
        m.tau = 1.0 / (ep * s * s);
        m.s_inf = ((n + 1.0) * s + theory.trace) / n;
        m.a_inf = 1.0 / m.s_inf;
        theory.modes.push_back(m);
    }
    return theory;
}

ModeTheory with_initial(ModeTheory theory, std::span<const double> a0) {
    if (a0.size() != theory.modes.size()) throw InvalidInput("with_initial: a0 length does not match mode count");
    for (std::size_t i = 0; i < a0.size(); ++i) {
        if (!std::isfinite(a0[i])) throw InvalidInput("with_initial: a0 must be finite");
        theory.modes[i].a0 = a0[i];
    }
    return theory;
}

double a_trajectory(const Mode& mode, double t) {
    if (mode.saddle()) return 0.0;
    const double decay = std::exp(-2.0 * t / mode.tau);
    return mode.a_inf * mode.a0 / (mode.a0 + (mode.a_inf - mode.a0) * decay);
}

double a_rate(const Mode& mode, double t) {
    const double a = a_trajectory(mode, t);
    return 2.0 / mode.tau * a * (1.0 - a * mode.s_inf);
}

double time_to_fixed_point(const Mode& mode, double epsilon) {
    const double x = epsilon * mode.s_inf;
    if (!(x > 0.0 && x <= 1.0))
        throw InvalidInput("time_to_fixed_point: need 0 < epsilon * s_inf <= 1 (already past the fixed point)");
    return 0.5 * mode.tau * std::log(1.0 / x);
}

double half_time(const Mode& mode) {
    if (!(mode.a0 > 0.0 && mode.a0 < 0.5 * mode.a_inf))
        throw InvalidInput("half_time: need 0 < a0 < a_inf / 2");
    return 0.5 * mode.tau * std::log((mode.a_inf - mode.a0) / mode.a0);
}

double expected_loss(const ModeTheory& theory, std::span<const double> a) {
    if (a.size() != theory.modes.size()) throw InvalidInput("expected_loss: length mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const Mode& m = theory.modes[i];
        total += m.s * (m.s / m.a_inf * a[i] * a[i] - 2.0 * m.s * a[i] + 1.0);
    }
    return 0.5 * total;
}

TheoryCurve loss_curve(const ModeTheory& theory, std::span<const double> t_grid) {
    TheoryCurve curve;
    curve.t.assign(t_grid.begin(), t_grid.end());
    for (const Mode& m : theory.modes) {
        curve.a_inf.push_back(m.a_inf);
        curve.saddle.push_back(m.saddle());
    }
    std::vector<double> a(theory.modes.size());
    for (double t : t_grid) {
        for (std::size_t i = 0; i < a.size(); ++i) a[i] = a_trajectory(theory.modes[i], t);
        curve.loss.push_back(expected_loss(theory, a));
        curve.a.push_back(a);
    }
    curve.loss_inf = expected_loss(theory, curve.a_inf);
    return curve;
}

double loss_infinity(std::span<const double> spectrum, std::size_t context_length) {
    if (spectrum.empty() || context_length == 0) throw InvalidInput("loss_infinity: empty spectrum or N = 0");
    const double tr = std::accumulate(spectrum.begin(), spectrum.end(), 0.0);
    const double n = static_cast<double>(context_length);
    double total = 0.0;
    for (double s : spectrum) total += s * (s + tr) / ((n + 1.0) * s + tr);
    return 0.5 * total;
}

InitialSlope initial_loss_slope(const ModeTheory& theory) {
    InitialSlope out;
    const double ep = theory.eta * static_cast<double>(theory.task_count);
    for (const Mode& m : theory.modes) {
        const double gap = m.a0 / m.a_inf - 1.0;
        out.exact -= 2.0 * m.s * m.s / m.tau * m.a0 * gap * gap;
        out.small_init -= 2.0 * ep * std::pow(m.s, 4) * m.a0;
    }
    return out;
}

ModeTrajectories integrate_modes(const ModeTheory& theory, std::span<const double> p0, std::span<const double> q0,
                                 std::span<const double> t_grid, double tolerance) {
    namespace odeint = boost::numeric::odeint;
    using State = std::array<double, 2>;

    const std::size_t d = theory.modes.size();
    if (p0.size() != d || q0.size() != d) throw InvalidInput("integrate_modes: initial values length mismatch");
    if (t_grid.empty()) throw InvalidInput("integrate_modes: empty time grid");
    for (std::size_t i = 0; i < t_grid.size(); ++i) {
        if (!(t_grid[i] >= 0.0) || !std::isfinite(t_grid[i])) throw InvalidInput("integrate_modes: times must be >= 0");
        if (i > 0 && t_grid[i] < t_grid[i - 1]) throw InvalidInput("integrate_modes: time grid must be sorted");
    }
    for (std::size_t a = 0; a < d; ++a)
        if (!std::isfinite(p0[a]) || !std::isfinite(q0[a])) throw InvalidInput("integrate_modes: non-finite initial value");

    // The stepper always starts from t = 0, where the initial values live.
    std::vector<double> times;
    const bool prepend_zero = t_grid.front() > 0.0;
    if (prepend_zero) times.push_back(0.0);
    times.insert(times.end(), t_grid.begin(), t_grid.end());

    ModeTrajectories out;
    out.t.assign(t_grid.begin(), t_grid.end());
    out.p.resize(d);
    out.q.resize(d);
    for (std::size_t a = 0; a < d; ++a) {
        const Mode m = theory.modes[a];
        auto rhs = [m](const State& x, State& dxdt, double) {
            const double drive = 1.0 - x[0] * x[1] * m.s_inf;
            dxdt[0] = x[1] * drive / m.tau;
            dxdt[1] = x[0] * drive / m.tau;
        };
        std::vector<double>& ps = out.p[a];
        std::vector<double>& qs = out.q[a];
        bool skip_first = prepend_zero;
        auto observer = [&](const State& x, double) {
            if (skip_first) {
                skip_first = false;
                return;
            }
            ps.push_back(x[0]);
            qs.push_back(x[1]);
        };
        State x{p0[a], q0[a]};
        try {
            auto stepper = odeint::make_dense_output(tolerance, tolerance, odeint::runge_kutta_dopri5<State>());
            odeint::integrate_times(stepper, rhs, x, times.begin(), times.end(), 1e-3 * m.tau, observer,
                                    odeint::max_step_checker(100000));
        } catch (const odeint::odeint_error& e) {
            throw IntegrationError(std::string("integrate_modes: ") + e.what());
        } catch (const std::overflow_error& e) {
            throw IntegrationError(std::string("integrate_modes: ") + e.what());
        }
        for (std::size_t i = 0; i < ps.size(); ++i)
            if (!std::isfinite(ps[i]) || !std::isfinite(qs[i]))
                throw IntegrationError("integrate_modes: solution left the finite range");
    }
    return out;
}

double conserved_quantity(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw InvalidInput("conserved_quantity: length mismatch");
    double c = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) c += p[i] * p[i] - q[i] * q[i];
    return c;
}

Vector learned_operator(std::span<const double> spectrum, std::size_t context_length) {
    if (spectrum.empty() || context_length == 0) throw InvalidInput("learned_operator: empty spectrum or N = 0");
    const double tr = std::accumulate(spectrum.begin(), spectrum.end(), 0.0);
    const double n = static_cast<double>(context_length);
    Vector out(static_cast<Eigen::Index>(spectrum.size()));
    for (std::size_t i = 0; i < spectrum.size(); ++i) {
        const double s = spectrum[i];
        require_positive(s, "learned_operator: eigenvalue");
        out(static_cast<Eigen::Index>(i)) = s / ((n + 1.0) / n * s + tr / n);
    }
    return out;
}

}  // namespace icl
