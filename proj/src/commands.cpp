#include "icl/commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "icl/errors.hpp"
#include "icl/model.hpp"
#include "icl/trace_io.hpp"

namespace icl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::ofstream open_text(const fs::path& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os.precision(17);
    return os;
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError(path.string(), "cannot open");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw FormatError(path.string(), e.what());
    }
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

std::string join(const std::vector<double>& v, int precision = 6) {
    std::ostringstream os;
    os << std::setprecision(precision);
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? " " : "") << v[i];
    return os.str();
}

json nullable(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

SimulationResult run_simulation(const ExperimentConfig& config) {
    config.check();
    SimulationResult r;
    r.distribution = config.distribution();
    const TrainConfig tc = config.train_config();
    r.trace = train(r.distribution, tc);

    const std::size_t per_task = std::max<std::size_t>(1, kEvalPrompts / config.task_count);
    for (const Snapshot& s : r.trace.snapshots)
        r.snapshot_loss.push_back(evaluate_loss(r.distribution, s.params, tc.covariance_mode, per_task, config.seed));

    const double c0 = r.trace.initial.conserved;
    for (const Snapshot& s : r.trace.snapshots) r.conserved_drift = std::max(r.conserved_drift, std::abs(s.conserved - c0));
    for (const EpochSummary& e : r.trace.epochs)
        r.conserved_drift = std::max(r.conserved_drift, std::abs(e.conserved - c0));
    if (!r.trace.epochs.empty()) {
        r.final_loss = r.trace.epochs.back().mean_loss;
        r.final_a = r.trace.epochs.back().a;
    } else {
        r.final_loss = r.snapshot_loss.back();
        r.final_a = r.trace.initial.a;
    }
    return r;
}

TheoryResult run_theory(const ExperimentConfig& config) {
    config.check();
    const SpectralTaskDistribution dist = config.distribution();
    const TrainConfig tc = config.train_config();
    const std::vector<double> s = to_std(dist.spectrum);

    TheoryResult r;
    const DiagonalizedParams init = diagonalize(initial_params(dist, tc), dist.eigenbasis);
    r.p0 = to_std(init.p2);
    r.q0 = to_std(init.q1);
    std::vector<double> a0(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        a0[i] = r.p0[i] * r.q0[i];
        // The closed form describes balanced modes (p = q) with a >= 0.
        if (std::abs(r.p0[i] - r.q0[i]) > 1e-12 * std::max(1.0, std::abs(r.p0[i])) || a0[i] < 0.0)
            r.closed_form = false;
    }
    if (!(tc.eta > 0.0)) throw ConfigError("theory: train.eta must be > 0");
    r.theory = with_initial(mode_constants(s, config.context_length, tc.eta, config.task_count), a0);
    r.t = config.theory_grid();
    r.loss_inf = loss_infinity(s, config.context_length);
    r.slope = initial_loss_slope(r.theory);

    if (r.closed_form) {
        const TheoryCurve curve = loss_curve(r.theory, r.t);
        r.a = curve.a;
        r.loss = curve.loss;
    } else {
        const ModeTrajectories traj = integrate_modes(r.theory, r.p0, r.q0, r.t);
        for (std::size_t i = 0; i < r.t.size(); ++i) {
            std::vector<double> a(s.size());
            for (std::size_t m = 0; m < s.size(); ++m) a[m] = traj.p[m][i] * traj.q[m][i];
            r.loss.push_back(expected_loss(r.theory, a));
            r.a.push_back(std::move(a));
        }
    }
    return r;
}

std::vector<double> TheoryEvaluator::a_at(double t) const {
    const ModeTheory& th = result.theory;
    if (result.closed_form) {
        std::vector<double> a;
        for (const Mode& m : th.modes) a.push_back(a_trajectory(m, t));
        return a;
    }
    const std::vector<double>& ts = result.t;
    if (ts.empty()) throw InvalidInput("theory: empty curve");
    if (t <= ts.front()) return result.a.front();
    if (t >= ts.back()) return result.a.back();
    const auto hi = static_cast<std::size_t>(std::upper_bound(ts.begin(), ts.end(), t) - ts.begin());
    const std::size_t lo = hi - 1;
    const double w = (t - ts[lo]) / (ts[hi] - ts[lo]);
    std::vector<double> a(result.a[lo].size());
    for (std::size_t m = 0; m < a.size(); ++m) a[m] = (1.0 - w) * result.a[lo][m] + w * result.a[hi][m];
    return a;
}

double TheoryEvaluator::loss_at(double t) const { return expected_loss(result.theory, a_at(t)); }

namespace {

void write_theory(const ExperimentConfig& config, const TheoryResult& r, const fs::path& dir) {
    fs::create_directories(dir);
    const std::size_t d = r.theory.modes.size();
    {
        std::ofstream os = open_text(dir / "theory_curves.csv");
        os << "t,loss";
        for (std::size_t m = 1; m <= d; ++m) os << ",a_" << m;
        os << '\n';
        for (std::size_t i = 0; i < r.t.size(); ++i) {
            os << r.t[i] << ',' << r.loss[i];
            for (double a : r.a[i]) os << ',' << a;
            os << '\n';
        }
    }
    json modes = json::array();
    for (std::size_t m = 0; m < d; ++m) {
        const Mode& mode = r.theory.modes[m];
        json jm{{"s", mode.s},         {"tau", mode.tau}, {"s_inf", mode.s_inf}, {"a_inf", mode.a_inf},
                {"a0", mode.a0},       {"p0", r.p0[m]},   {"q0", r.q0[m]},       {"t_star", nullptr},
                {"t_half", nullptr}};
        if (mode.a0 > 0.0 && mode.a0 * mode.s_inf <= 1.0) jm["t_star"] = time_to_fixed_point(mode, mode.a0);
        if (mode.a0 > 0.0 && mode.a0 < 0.5 * mode.a_inf) jm["t_half"] = half_time(mode);
        modes.push_back(jm);
    }
    std::vector<double> a0;
    for (const Mode& m : r.theory.modes) a0.push_back(m.a0);
    json constants{{"format_version", 1},
                   {"d", d},
                   {"N", r.theory.context_length},
                   {"P", r.theory.task_count},
                   {"eta", config.train.eta},
                   {"trace_S", r.theory.trace},
                   {"closed_form", r.closed_form},
                   {"L_inf", r.loss_inf},
                   {"L_0", expected_loss(r.theory, a0)},
                   {"C_0", conserved_quantity(r.p0, r.q0)},
                   {"initial_slope", {{"exact", r.slope.exact}, {"small_init", r.slope.small_init}}},
                   {"modes", modes}};
    std::ofstream os = open_text(dir / "constants.json");
    os << constants.dump(2) << '\n';
    save_config(config, (dir / "config.json").string());
}

// One side of a comparison: per-epoch a, epoch-mean loss and C, from either a
// simulate directory or a theory directory.
struct RunSeries {
    ExperimentConfig config;
    bool is_theory = false;
    std::vector<std::vector<double>> a;  // a[e][mode], e = 0..E
    std::vector<double> loss;            // loss[e], e = 1..E (index 0 unused)
    std::vector<double> conserved;       // every recorded C
    double c0 = 0.0;
};

TheoryEvaluator load_theory(const fs::path& dir) {
    const json c = read_json(dir / "constants.json");
    const std::string origin = (dir / "constants.json").string();
    TheoryEvaluator ev;
    try {
        TheoryResult& r = ev.result;
        r.theory.context_length = c.at("N").get<std::size_t>();
        r.theory.task_count = c.at("P").get<std::size_t>();
        r.theory.eta = c.at("eta").get<double>();
        r.theory.trace = c.at("trace_S").get<double>();
        r.closed_form = c.at("closed_form").get<bool>();
        r.loss_inf = c.at("L_inf").get<double>();
        for (const json& jm : c.at("modes")) {
            Mode m;
            m.s = jm.at("s").get<double>();
            m.tau = jm.at("tau").get<double>();
            m.s_inf = jm.at("s_inf").get<double>();
            m.a_inf = jm.at("a_inf").get<double>();
            m.a0 = jm.at("a0").get<double>();
            r.theory.modes.push_back(m);
            r.p0.push_back(jm.at("p0").get<double>());
            r.q0.push_back(jm.at("q0").get<double>());
        }
    } catch (const json::exception& e) {
        throw FormatError(origin, e.what());
    }
    if (!ev.result.closed_form) {
        const CsvTable t = read_csv((dir / "theory_curves.csv").string());
        ev.result.t = t.column("t");
        ev.result.loss = t.column("loss");
        const std::size_t d = ev.result.theory.modes.size();
        std::vector<std::vector<double>> cols;
        for (std::size_t m = 1; m <= d; ++m) cols.push_back(t.column("a_" + std::to_string(m)));
        for (std::size_t i = 0; i < ev.result.t.size(); ++i) {
            std::vector<double> a;
            for (std::size_t m = 0; m < d; ++m) a.push_back(cols[m][i]);
            ev.result.a.push_back(std::move(a));
        }
    }
    return ev;
}

bool is_theory_dir(const fs::path& dir) { return fs::exists(dir / "constants.json"); }

ExperimentConfig config_of(const fs::path& dir) {
    if (is_theory_dir(dir)) return load_config((dir / "config.json").string());
    const fs::path manifest = dir / "manifest.json";
    if (!fs::exists(manifest)) throw FormatError(dir.string(), "neither a simulate nor a theory output directory");
    const json m = read_json(manifest);
    if (!m.contains("config") || m["config"].is_null()) throw FormatError(manifest.string(), "no config recorded");
    return config_from_json(m["config"]);
}

RunSeries load_series(const fs::path& dir) {
    RunSeries s;
    s.config = config_of(dir);
    const std::size_t d = s.config.d;
    if (is_theory_dir(dir)) {
        s.is_theory = true;
        const TheoryEvaluator ev = load_theory(dir);
        const double t_end = ev.result.closed_form ? s.config.theory_grid().back() : ev.result.t.back();
        const auto e_max = static_cast<std::size_t>(std::floor(t_end));
        s.loss.assign(e_max + 1, 0.0);
        for (std::size_t e = 0; e <= e_max; ++e) {
            s.a.push_back(ev.a_at(static_cast<double>(e)));
            if (e > 0) s.loss[e] = ev.loss_at(static_cast<double>(e) - 0.5);
        }
        s.c0 = conserved_quantity(ev.result.p0, ev.result.q0);
        s.conserved.assign(1, s.c0);
        return s;
    }
    const CsvTable epochs = read_csv((dir / "epochs.csv").string());
    const std::vector<double> e_col = epochs.column("epoch");
    const std::vector<double> l_col = epochs.column("mean_loss");
    const std::vector<double> c_col = epochs.column("C");
    std::vector<std::vector<double>> a_cols;
    for (std::size_t m = 1; m <= d; ++m) a_cols.push_back(epochs.column("a_" + std::to_string(m)));
    for (std::size_t i = 0; i < e_col.size(); ++i) {
        if (e_col[i] != static_cast<double>(i)) throw FormatError(epochs.origin, "epochs must run 0, 1, 2, ...");
        std::vector<double> a;
        for (std::size_t m = 0; m < d; ++m) a.push_back(a_cols[m][i]);
        s.a.push_back(std::move(a));
        s.loss.push_back(l_col[i]);
        s.conserved.push_back(c_col[i]);
    }
    s.c0 = c_col.front();
    if (fs::exists(dir / "curves.csv")) {
        const std::vector<double> c = read_csv((dir / "curves.csv").string()).column("C");
        s.conserved.insert(s.conserved.end(), c.begin(), c.end());
    }
    return s;
}

std::vector<std::string> config_mismatches(const ExperimentConfig& a, const ExperimentConfig& b) {
    std::vector<std::string> out;
    auto num = [&](const char* name, double x, double y) {
        if (x != y) {
            std::ostringstream os;
            os << std::setprecision(17) << name << " (" << x << " vs " << y << ")";
            out.push_back(os.str());
        }
    };
    num("d", static_cast<double>(a.d), static_cast<double>(b.d));
    num("N", static_cast<double>(a.context_length), static_cast<double>(b.context_length));
    num("P", static_cast<double>(a.task_count), static_cast<double>(b.task_count));
    num("eta", a.train.eta, b.train.eta);
    if (a.d == b.d && a.spectrum.resolve(a.d) != b.spectrum.resolve(b.d))
        out.push_back("spectrum (" + join(a.spectrum.resolve(a.d)) + " vs " + join(b.spectrum.resolve(b.d)) + ")");
    return out;
}

}  // namespace

ComparisonReport compare_runs(const std::string& sim_dir, const std::string& theory_dir) {
    if (!is_theory_dir(theory_dir))
        throw InvalidInput("compare: '" + theory_dir + "' is not a theory output directory");
    const RunSeries sim = load_series(sim_dir);
    const ExperimentConfig theory_config = load_config((fs::path(theory_dir) / "config.json").string());
    const std::vector<std::string> diff = config_mismatches(sim.config, theory_config);
    if (!diff.empty()) {
        std::string msg = "compare: configs differ in";
        for (std::size_t i = 0; i < diff.size(); ++i) msg += (i ? ", " : " ") + diff[i];
        throw InvalidInput(msg);
    }
    const TheoryEvaluator ev = load_theory(theory_dir);
    const std::size_t d = ev.result.theory.modes.size();
    const double t_end = ev.result.closed_form ? theory_config.theory_grid().back() : ev.result.t.back();
    const std::size_t epochs = std::min(sim.a.size() - 1, static_cast<std::size_t>(std::floor(t_end)));

    ComparisonReport r;
    r.epochs = epochs;
    r.mode_rmse.assign(d, 0.0);
    for (std::size_t e = 0; e <= epochs; ++e) {
        const std::vector<double> a = ev.a_at(static_cast<double>(e));
        for (std::size_t m = 0; m < d; ++m) r.mode_rmse[m] += std::pow(sim.a[e][m] - a[m], 2);
    }
    for (std::size_t m = 0; m < d; ++m) {
        r.mode_rmse[m] = std::sqrt(r.mode_rmse[m] / static_cast<double>(epochs + 1));
        r.mode_rmse_relative.push_back(r.mode_rmse[m] / ev.result.theory.modes[m].a_inf);
    }
    const double l0 = ev.loss_at(0.0);
    const double span = l0 - ev.result.loss_inf;
    if (epochs > 0) {
        for (std::size_t e = 1; e <= epochs; ++e)
            r.loss_rmse += std::pow(sim.loss[e] - ev.loss_at(static_cast<double>(e) - 0.5), 2);
        r.loss_rmse = std::sqrt(r.loss_rmse / static_cast<double>(epochs));
    }
    r.loss_rmse_fraction = span > 0.0 ? r.loss_rmse / span : std::nan("");

    for (double c : sim.conserved) r.conserved_drift = std::max(r.conserved_drift, std::abs(c - sim.c0));

    const ExperimentConfig& cfg = sim.config;
    const std::size_t tail = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(cfg.compare.tail_fraction * static_cast<double>(epochs))));
    const std::size_t first = epochs + 1 - std::min(tail, epochs + 1);
    for (std::size_t m = 0; m < d; ++m) {
        double mean = 0.0;
        for (std::size_t e = first; e <= epochs; ++e) mean += sim.a[e][m];
        mean /= static_cast<double>(epochs + 1 - first);
        const double a_inf = ev.result.theory.modes[m].a_inf;
        r.fixed_point_relative.push_back((mean - a_inf) / a_inf);
    }
    if (epochs > 0) {
        const std::size_t lfirst = std::max<std::size_t>(first, 1);
        for (std::size_t e = lfirst; e <= epochs; ++e) r.terminal_loss += sim.loss[e];
        r.terminal_loss /= static_cast<double>(epochs + 1 - lfirst);
        r.terminal_loss_relative = (r.terminal_loss - ev.result.loss_inf) / ev.result.loss_inf;
    }

    const CompareTolerances& tol = cfg.compare;
    r.loss_ok = !(r.loss_rmse_fraction >= tol.loss_rmse_fraction);  // NaN (no span) passes
    r.fixed_point_ok = std::all_of(r.fixed_point_relative.begin(), r.fixed_point_relative.end(),
                                   [&](double x) { return std::abs(x) < tol.fixed_point_relative; });
    r.conserved_ok = r.conserved_drift < tol.conserved_drift;
    r.pass = r.loss_ok && r.fixed_point_ok && r.conserved_ok;
    return r;
}

json to_json(const ComparisonReport& r) {
    json fp = json::array();
    for (double x : r.fixed_point_relative) fp.push_back(nullable(x));
    return {{"epochs", r.epochs},
            {"mode_rmse", r.mode_rmse},
            {"mode_rmse_relative", r.mode_rmse_relative},
            {"loss_rmse", r.loss_rmse},
            {"loss_rmse_fraction", nullable(r.loss_rmse_fraction)},
            {"conserved_drift", r.conserved_drift},
            {"fixed_point_relative", fp},
            {"terminal_loss", r.terminal_loss},
            {"terminal_loss_relative", nullable(r.terminal_loss_relative)},
            {"loss_ok", r.loss_ok},
            {"fixed_point_ok", r.fixed_point_ok},
            {"conserved_ok", r.conserved_ok},
            {"pass", r.pass}};
}

ValidationResult run_validation(const ExperimentConfig& config) {
    config.check();
    const SpectralTaskDistribution dist = config.distribution();
    ValidationResult r;
    r.wishart = validate_wishart_moments(dist.spectrum, config.context_length, config.validate.wishart_samples,
                                         config.seed);
    r.wishart_rel_error = (r.wishart.second.mean - r.wishart.second.expected).norm() / r.wishart.second.expected.norm();
    TrainConfig tc = config.train_config();
    tc.train_mode = TrainMode::restricted;
    r.gradients = null_gradient_check(dist, initial_params(dist, tc), config.validate.gradient_samples, config.seed,
                                      tc.covariance_mode);
    const MomentEstimate& m2 = r.wishart.second;
    for (Eigen::Index i = 0; i < m2.mean.size(); ++i) {
        const double diff = std::abs(m2.mean(i) - m2.expected(i));
        const double se = m2.standard_error(i);
        r.wishart_max_z = std::max(r.wishart_max_z, se > 0.0 ? diff / se : (diff == 0.0 ? 0.0 : INFINITY));
    }
    // Judged like the gradients, at `sigma` standard errors; the relative
    // error is reported alongside.
    r.wishart_ok = r.wishart_max_z < config.validate.sigma;
    r.gradients_ok = r.gradients.p1.max_abs_z < config.validate.sigma && r.gradients.q2.max_abs_z < config.validate.sigma;
    r.precision_ok = r.wishart.precision_ok && r.gradients.precision_ok;
    r.pass = !r.precision_ok || (r.wishart_ok && r.gradients_ok);
    return r;
}

namespace {

json matrix_rows(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(row);
    }
    return rows;
}

json moments_json(const MomentEstimate& e) {
    return {{"mean", matrix_rows(e.mean)}, {"standard_error", matrix_rows(e.standard_error)},
            {"expected", matrix_rows(e.expected)}};
}

json block_json(const BlockMoments& b) {
    return {{"mean", matrix_rows(b.mean)}, {"standard_error", matrix_rows(b.standard_error)},
            {"max_abs_z", nullable(b.max_abs_z)}};
}

}  // namespace

json to_json(const ValidationResult& r) {
    return {{"wishart",
             {{"samples", r.wishart.samples},
              {"N", r.wishart.context_length},
              {"first", moments_json(r.wishart.first)},
              {"second", moments_json(r.wishart.second)},
              {"second_relative_error", r.wishart_rel_error},
              {"second_max_abs_z", nullable(r.wishart_max_z)},
              {"pass", r.wishart_ok}}},
            {"null_gradients",
             {{"samples", r.gradients.samples},
              {"p1", block_json(r.gradients.p1)},
              {"q2", block_json(r.gradients.q2)},
              {"p2", block_json(r.gradients.p2)},
              {"q1", block_json(r.gradients.q1)},
              {"pass", r.gradients_ok}}},
            {"precision_ok", r.precision_ok},
            {"pass", r.pass}};
}

ProbeConfig probe_config(const ProbeSettings& s) {
    ProbeConfig p;
    p.matrices = s.matrices;
    p.rank = s.rank;
    p.max_lag = s.max_lag;
    p.window = s.window;
    p.prominence_factor = s.prominence_factor;
    p.centered = s.centered;
    return p;
}

int cmd_simulate(const ExperimentConfig& config, const std::string& out_dir, std::ostream& log) {
    SimulationResult r;
    try {
        r = run_simulation(config);
    } catch (const DivergenceError& e) {
        log << "error: " << e.what() << '\n';
        return exit_divergence;
    }
    fs::create_directories(out_dir);
    write_training_trace(out_dir, config, r.distribution, r.trace, r.snapshot_loss);
    save_config(config, (fs::path(out_dir) / "config.json").string());
    log << std::setprecision(8);
    log << "final loss: " << r.final_loss << '\n';
    log << "final diag(p2 q1): " << join(to_std(r.final_a), 8) << '\n';
    log << "conserved drift: " << r.conserved_drift << '\n';
    log << "wrote " << out_dir << '\n';
    return exit_ok;
}

int cmd_theory(const ExperimentConfig& config, const std::string& out_dir, std::ostream& log) {
    const TheoryResult r = run_theory(config);
    write_theory(config, r, out_dir);
    log << std::setprecision(8);
    log << "L_inf: " << r.loss_inf << '\n';
    std::vector<double> a_inf, tau;
    for (const Mode& m : r.theory.modes) {
        a_inf.push_back(m.a_inf);
        tau.push_back(m.tau);
    }
    log << "a_inf: " << join(a_inf, 8) << '\n';
    log << "tau: " << join(tau, 8) << '\n';
    log << "wrote " << out_dir << '\n';
    return exit_ok;
}

int cmd_compare(const std::string& sim_dir, const std::string& theory_dir, const std::string& out_path,
                std::ostream& log) {
    const ComparisonReport r = compare_runs(sim_dir, theory_dir);
    const json j = to_json(r);
    if (!out_path.empty()) {
        const fs::path p(out_path);
        if (p.has_parent_path()) fs::create_directories(p.parent_path());
        std::ofstream os = open_text(p);
        os << j.dump(2) << '\n';
    }
    log << std::setprecision(6);
    log << "mode RMSE (relative to a_inf): " << join(r.mode_rmse_relative) << '\n';
    log << "loss RMSE / (L0 - Linf): " << r.loss_rmse_fraction << (r.loss_ok ? "  ok" : "  FAIL") << '\n';
    log << "fixed point relative error: " << join(r.fixed_point_relative) << (r.fixed_point_ok ? "  ok" : "  FAIL")
        << '\n';
    log << "conserved drift: " << r.conserved_drift << (r.conserved_ok ? "  ok" : "  FAIL") << '\n';
    log << "terminal loss relative to L_inf: " << r.terminal_loss_relative << '\n';
    log << (r.pass ? "PASS" : "FAIL") << '\n';
    return r.pass ? exit_ok : exit_tolerance;
}

int cmd_probe(const std::string& trace_dir, const ProbeConfig& probe, const std::string& out_dir, std::ostream& log) {
    const LoadedTrace loaded = read_trace_directory(trace_dir);
    const ProbeReport report = probe_report(loaded.trace, probe);
    write_probe_report(report, out_dir);
    log << "checkpoints: " << report.steps.size() << '\n';
    log << "transition steps:";
    for (std::int64_t s : report.transition_steps) log << ' ' << s;
    log << '\n';
    log << "effective-rank dip steps:";
    for (std::int64_t s : report.dip_steps) log << ' ' << s;
    log << '\n';
    log << "staggered dips: " << (report.staggered_dips ? "true" : "false") << '\n';
    log << "wrote " << out_dir << '\n';
    return exit_ok;
}

int cmd_validate(const ExperimentConfig& config, const std::string& out_dir, std::ostream& log) {
    const ValidationResult r = run_validation(config);
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream os = open_text(fs::path(out_dir) / "validate.json");
        os << to_json(r).dump(2) << '\n';
    }
    log << std::setprecision(6);
    log << "Wishart second moment (" << r.wishart.samples << " samples, N = " << r.wishart.context_length
        << "): relative error " << r.wishart_rel_error << ", max |z| " << r.wishart_max_z << " (threshold "
        << config.validate.sigma << ")" << (r.wishart_ok ? "  ok" : "  FAIL") << '\n';
    log << "  diag mean:     " << join(to_std(r.wishart.second.mean.diagonal())) << '\n';
    log << "  diag expected: " << join(to_std(r.wishart.second.expected.diagonal())) << '\n';
    log << "  diag std err:  " << join(to_std(r.wishart.second.standard_error.diagonal())) << '\n';
    log << "null gradients (" << r.gradients.samples << " samples): max |z| p1 " << r.gradients.p1.max_abs_z << ", q2 "
        << r.gradients.q2.max_abs_z << " (threshold " << config.validate.sigma << ")"
        << (r.gradients_ok ? "  ok" : "  FAIL") << '\n';
    log << "  active blocks for reference: max |z| p2 " << r.gradients.p2.max_abs_z << ", q1 "
        << r.gradients.q1.max_abs_z << '\n';
    if (!r.precision_ok) log << "insufficient precision: too few samples to judge (need >= 1000)\n";
    log << (r.pass ? "PASS" : "FAIL") << '\n';
    return r.pass ? exit_ok : exit_tolerance;
}

}  // namespace icl
