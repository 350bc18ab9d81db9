// Acceptance gate: one PASS/FAIL line per criterion. Exits 0 after reporting
// unless --strict is given, in which case any FAIL gives exit status 1.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "icl/commands.hpp"
#include "icl/config.hpp"
#include "icl/probes.hpp"
#include "icl/theory.hpp"
#include "icl/trainer.hpp"

using namespace icl;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::vector<double> linspace(double a, double b, std::size_t n) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
    return v;
}

std::vector<double> spectrum_of(const SpectralTaskDistribution& d) {
    return {d.spectrum.data(), d.spectrum.data() + d.spectrum.size()};
}

std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", x);
    return buf;
}

ExperimentConfig reference_config() {
    ExperimentConfig c;  // defaults: d=4, S=(2,1.3,0.8,0.5), N=40, P=64
    c.train.eta = 5e-3;
    c.train.batch = 256;
    c.train.epochs = 100;
    c.train.init = {0.05, true, -1.0};
    c.train.covariance_mode = CovarianceMode::exclude_query;
    c.train.record_every = 16;
    c.seed = 0;  // the config default; not tuned
    return c;
}

// Same inputs and eigenbasis, freshly drawn task spectra: losses evaluated on
// it estimate the expectation over the task distribution rather than over
// the finite training set.
SpectralTaskDistribution fresh_tasks(const SpectralTaskDistribution& d, std::size_t count, std::uint64_t seed) {
    RngStream rng(seed, {.role = Role::test});
    std::vector<Vector> lambdas(count, Vector(d.d));
    for (Vector& l : lambdas)
        for (Eigen::Index i = 0; i < l.size(); ++i) l(i) = rng.normal();
    return distribution_from_parts(d.context_length, d.eigenbasis, d.spectrum, std::move(lambdas), seed);
}

// Per-mode mean of lambda^2 over the training tasks.
Vector task_moments(const SpectralTaskDistribution& d) {
    Vector m = Vector::Zero(static_cast<Eigen::Index>(d.d));
    for (const Vector& l : d.task_spectra) m += l.cwiseProduct(l);
    return m / static_cast<double>(d.task_spectra.size());
}

// The reference run is shared by criteria 2 to 5.
const SimulationResult& reference_run() {
    static const SimulationResult r = run_simulation(reference_config());
    return r;
}

// Step index (in epochs) at which the series first reaches `level`, linearly
// interpolated; NaN if never reached.
double crossing_epoch(const std::vector<double>& epochs, const std::vector<double>& a, double level) {
    for (std::size_t i = 1; i < a.size(); ++i)
        if (a[i - 1] < level && a[i] >= level)
            return epochs[i - 1] + (level - a[i - 1]) / (a[i] - a[i - 1]) * (epochs[i] - epochs[i - 1]);
    return std::nan("");
}

Outcome criterion1() {
    RngStream rng(101, {.role = Role::test});
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> s(8);
        for (double& v : s) v = 0.1 + 3.9 * rng.uniform();
        const std::size_t n = trial % 2 == 0 ? 5 : 50;
        ModeTheory th = mode_constants(s, n, 0.01, 16);
        std::vector<double> p0(8), a0(8);
        for (std::size_t a = 0; a < 8; ++a) {
            a0[a] = 1e-3 + 0.05 * rng.uniform() * th.modes[a].a_inf;
            p0[a] = std::sqrt(a0[a]);
        }
        th = with_initial(th, a0);
        double tau_max = 0.0;
        for (const Mode& m : th.modes) tau_max = std::max(tau_max, m.tau);
        const std::vector<double> grid = linspace(0.0, 20.0 * tau_max, 2001);
        const ModeTrajectories ode = integrate_modes(th, p0, p0, grid, 1e-12);
        for (std::size_t a = 0; a < 8; ++a)
            for (std::size_t i = 0; i < grid.size(); ++i)
                worst = std::max(worst, std::abs(a_trajectory(th.modes[a], grid[i]) - ode.p[a][i] * ode.q[a][i]));
    }
    return {worst < 1e-8, "max |closed form - p q| = " + fmt(worst)};
}

Outcome criterion2() {
    const SimulationResult& r = reference_run();
    const ModeTheory th = mode_constants(spectrum_of(r.distribution), r.distribution.context_length,
                                         r.trace.config.eta, r.distribution.task_count);
    const std::size_t tail = std::max<std::size_t>(1, r.trace.epochs.size() / 5);
    std::ostringstream os;
    bool ok = true;
    for (std::size_t a = 0; a < th.modes.size(); ++a) {
        double mean = 0.0;
        for (std::size_t e = r.trace.epochs.size() - tail; e < r.trace.epochs.size(); ++e) mean += r.trace.epochs[e].a(a);
        mean /= static_cast<double>(tail);
        const double rel = std::abs(mean / th.modes[a].a_inf - 1.0);
        ok = ok && rel < 0.05;
        os << (a ? ", " : "") << "mode " << a + 1 << " rel err " << fmt(rel);
    }
    return {ok, os.str()};
}

Outcome criterion3() {
    const SimulationResult& sym = reference_run();
    ExperimentConfig c = reference_config();
    c.train.init.symmetric = false;
    c.train.init.scale = 0.3;
    const SimulationResult asym = run_simulation(c);
    const double c0 = asym.trace.initial.conserved;
    const double rel = sym.conserved_drift;
    const double asym_rel = asym.conserved_drift / std::abs(c0);
    return {rel < 1e-3 && asym_rel < 0.01, "symmetric max |C - C0| = " + fmt(rel) + "; asymmetric C0 = " + fmt(c0) +
                                               ", drift / |C0| = " + fmt(asym_rel)};
}

Outcome criterion4() {
    const ExperimentConfig c = reference_config();
    const SimulationResult& r = reference_run();
    const TheoryEvaluator theory{run_theory(c)};
    // Epoch e's batch-mean loss is the average of L over [e - 1, e].
    double sq = 0.0;
    for (const EpochSummary& e : r.trace.epochs) {
        double avg = 0.0;
        const int k = 16;
        for (int j = 0; j < k; ++j)
            avg += theory.loss_at(static_cast<double>(e.epoch) - 1.0 + (j + 0.5) / k) / k;
        sq += (e.mean_loss - avg) * (e.mean_loss - avg);
    }
    const double rmse = std::sqrt(sq / static_cast<double>(r.trace.epochs.size()));
    const double span = theory.loss_at(0.0) - theory.result.loss_inf;
    const double frac = rmse / span;

    // Plateaus and cliffs: spectrum with s ratios >= 2.
    ExperimentConfig g = c;
    g.d = 3;
    g.spectrum = SpectrumSpec::explicit_list({3.0, 1.5, 0.75});
    g.train.eta = 2e-3;
    g.train.epochs = 160;
    g.train.init.scale = 0.01;
    const SimulationResult stair = run_simulation(g);
    std::vector<double> x, l;
    for (const EpochSummary& e : stair.trace.epochs) {
        x.push_back(static_cast<double>(e.epoch));
        l.push_back(e.mean_loss);
    }
    // A strict prominence keeps epoch-to-epoch noise out; more peaks than
    // modes would mean noise got through.
    const CurvatureSeries cs = curvature_series(x, l, {.window = 32, .prominence_factor = 10.0});
    const std::size_t peaks = cs.peaks.size();
    std::ostringstream os;
    os << "loss RMSE / (L0 - Linf) = " << fmt(frac) << "; (3, 1.5, 0.75) run curvature peaks at epochs";
    for (double p : cs.peak_positions()) os << ' ' << fmt(p);
    return {frac < 0.05 && peaks >= 2 && peaks <= g.d, os.str()};
}

Outcome criterion5() {
    const SimulationResult& r = reference_run();
    const std::vector<double> s = spectrum_of(r.distribution);
    const std::size_t n = r.distribution.context_length;
    const double linf = loss_infinity(s, n);
    const ModelParams& last = r.trace.snapshots.back().params;
    const double population =
        evaluate_loss(fresh_tasks(r.distribution, 16384, 55), last, r.trace.config.covariance_mode, 4, 5);
    const double rel = std::abs(population / linf - 1.0);
    // The training-set value scales each mode by its mean lambda^2.
    const Vector m = task_moments(r.distribution);
    double weighted = 0.0;
    for (std::size_t a = 0; a < s.size(); ++a) {
        const double tr = r.distribution.trace();
        weighted += 0.5 * m(static_cast<Eigen::Index>(a)) * s[a] * (s[a] + tr) / ((n + 1) * s[a] + tr);
    }
    return {rel < 0.10, "terminal loss on fresh tasks " + fmt(population) + " vs L_inf " + fmt(linf) + ", rel err " +
                            fmt(rel) + "; training-task loss " + fmt(r.final_loss) + " vs task-weighted L_inf " +
                            fmt(weighted)};
}

Outcome criterion6() {
    ExperimentConfig c;
    c.d = 3;
    c.context_length = 20;
    c.spectrum = SpectrumSpec::explicit_list({3.0, 2.0, 1.0});
    c.validate.wishart_samples = 100000;
    c.validate.gradient_samples = 10000;
    c.seed = 6;
    const ValidationResult v = run_validation(c);
    double diag_rel = 0.0;
    for (Eigen::Index i = 0; i < 3; ++i)
        diag_rel = std::max(diag_rel, std::abs(v.wishart.second.mean(i, i) / v.wishart.second.expected(i, i) - 1.0));
    const double z = std::max(v.gradients.p1.max_abs_z, v.gradients.q2.max_abs_z);
    const bool ok = v.wishart_rel_error < 0.01 && diag_rel < 0.01 && z < 3.0;
    return {ok, "E[S^2] rel err (Frobenius) " + fmt(v.wishart_rel_error) + ", worst diagonal " + fmt(diag_rel) +
                    "; null-gradient max |z| " + fmt(z)};
}

Outcome criterion7() {
    Matrix d2 = Matrix::Zero(2, 2);
    d2(0, 0) = 2.0;
    d2(1, 1) = 1.0;
    RngStream rng(7, {.role = Role::test});
    Matrix m(5, 5);
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.normal();
    Matrix e1 = Matrix::Zero(3, 3), e2 = Matrix::Zero(3, 3);
    e1(0, 0) = 1.0;
    e2(1, 1) = 1.0;
    const double r4 = effective_rank(Matrix::Identity(4, 4));
    const double r2 = effective_rank(d2);
    const double self = subspace_distance(m, m, 5);
    const double orth = subspace_distance(e1, e2, 1, true);
    const bool ok = std::abs(r4 - 4.0) < 1e-12 && std::abs(r2 - 1.88988) < 1e-4 && std::abs(self) < 1e-12 &&
                    std::abs(orth - 1.0) < 1e-10;
    return {ok, "erank(I4) " + fmt(r4) + ", erank(diag(2,1)) " + fmt(r2) + ", self distance " + fmt(self) +
                    ", orthogonal distance " + fmt(orth)};
}

struct SynthRun {
    ProbeReport report;
    ModeTheory theory;
};

SynthRun synth_probe(const std::vector<double>& s, std::size_t points, std::uint64_t seed) {
    SynthRun out;
    out.theory = with_initial(mode_constants(s, 1000, 0.01, 10), std::vector<double>(s.size(), 1e-4));
    double tau_max = 0.0;
    for (const Mode& m : out.theory.modes) tau_max = std::max(tau_max, m.tau);
    RngStream rng(seed, {.role = Role::test});
    const Matrix u = random_orthogonal(s.size(), rng);
    out.report = probe_report(synth_trace(out.theory, u, linspace(0.0, 9.0 * tau_max, points)));
    return out;
}

Outcome criterion8() {
    const SynthRun geo = synth_probe({4.0, 2.0, 1.0, 0.5}, 512, 81);
    const bool dips = geo.report.staggered_dips &&
                      std::is_sorted(geo.report.dip_steps.begin(), geo.report.dip_steps.end());
    std::ostringstream os;
    os << "dip steps";
    for (auto s : geo.report.dip_steps) os << ' ' << s;
    bool counts = true;
    // Well-separated spectra: consecutive tau ratios of exactly 8 and 9.
    const double r8 = std::sqrt(8.0);
    const std::vector<std::vector<double>> spectra{{2.0}, {2.0, 2.0 / r8}, {3.0, 1.0}, {3.0, 3.0 / r8, 3.0 / 8.0}};
    for (std::size_t i = 0; i < spectra.size(); ++i) {
        const SynthRun r = synth_probe(spectra[i], 1500, 82 + i);
        const std::size_t found = r.report.transition_steps.size();
        counts = counts && found == spectra[i].size();
        os << "; " << spectra[i].size() << " modes -> " << found << " peaks";
    }
    return {dips && counts, os.str()};
}

Outcome criterion9() {
    ExperimentConfig c = reference_config();
    c.task_count = 1024;
    c.train.batch = 16;
    c.train.eta = 0.32 / 1024.0;
    c.train.epochs = 60;
    c.train.record_every = 32;
    c.seed = 9;
    const SimulationResult r = run_simulation(c);
    const ModeTheory base = mode_constants(spectrum_of(r.distribution), r.distribution.context_length, c.train.eta,
                                           r.distribution.task_count);
    std::vector<double> epochs;
    std::vector<std::vector<double>> a(base.modes.size());
    for (const Snapshot& s : r.trace.snapshots) {
        epochs.push_back(static_cast<double>(s.step) / static_cast<double>(r.trace.steps_per_epoch));
        for (std::size_t m = 0; m < a.size(); ++m) a[m].push_back(s.a(static_cast<Eigen::Index>(m)));
    }
    std::vector<double> a0(a.size());
    for (std::size_t m = 0; m < a.size(); ++m) a0[m] = a[m].front();
    const ModeTheory th = with_initial(base, a0);
    std::ostringstream os;
    bool ok = true;
    std::vector<double> measured;
    for (std::size_t m = 0; m < a.size(); ++m) {
        const double t = crossing_epoch(epochs, a[m], th.modes[m].a_inf / 2.0);
        const double want = half_time(th.modes[m]);
        const double rel = std::abs(t / want - 1.0);
        ok = ok && std::isfinite(t) && rel < 0.20;
        measured.push_back(t);
        os << (m ? ", " : "") << "mode " << m + 1 << " t_half " << fmt(t) << " vs " << fmt(want);
    }
    // Spectrum is sorted descending, so half-times must ascend.
    ok = ok && std::is_sorted(measured.begin(), measured.end());
    return {ok, os.str()};
}

Outcome criterion10() {
    // Many tasks keep the training-set lambda^2 moments close to one.
    ExperimentConfig c = reference_config();
    c.task_count = 4096;
    c.train.eta = 0.0128 / 4096.0;
    c.train.batch = 1024;
    c.train.epochs = 1;
    c.train.record_every = 4096;
    c.train.init.scale = std::sqrt(1e-3);
    c.seed = 10;
    const SpectralTaskDistribution dist = c.distribution();
    const TrainingTrace trace = train(dist, c.train_config());
    const SpectralTaskDistribution eval = fresh_tasks(dist, 16384, 77);
    const double l0 = evaluate_loss(eval, trace.snapshots.front().params, c.train.covariance_mode, 4, 99);
    const double l1 = evaluate_loss(eval, trace.snapshots.back().params, c.train.covariance_mode, 4, 99);
    const double slope = run_theory(c).slope.exact;
    const double rel = std::abs((l1 - l0) / slope - 1.0);
    return {rel < 0.15, "delta L over epoch 1 = " + fmt(l1 - l0) + " vs exact slope " + fmt(slope) + ", rel err " +
                            fmt(rel)};
}

}  // namespace

int main(int argc, char** argv) {
    const bool strict = argc > 1 && std::strcmp(argv[1], "--strict") == 0;
    const std::vector<std::function<Outcome()>> criteria{criterion1, criterion2, criterion3, criterion4, criterion5,
                                                         criterion6, criterion7, criterion8, criterion9, criterion10};
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i]();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        failures += o.pass ? 0 : 1;
        std::printf("criterion %zu: %s (%s) [%.1f s]\n", i + 1, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria pass\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return strict && failures > 0 ? 1 : 0;
}
