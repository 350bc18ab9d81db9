#include "icl/probes.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "icl/errors.hpp"
#include "json.hpp"

namespace icl {

void CheckpointTrace::append(Checkpoint c) {
    if (!checkpoints_.empty()) {
        const Checkpoint& last = checkpoints_.back();
        if (c.step <= last.step)
            throw InvalidInput("checkpoint trace: steps must be strictly increasing (" + std::to_string(c.step) +
                               " after " + std::to_string(last.step) + ")");
        for (const auto& [name, m] : c.matrices) {
            const auto it = last.matrices.find(name);
            if (it != last.matrices.end() && (it->second.rows() != m.rows() || it->second.cols() != m.cols()))
                throw InvalidInput("checkpoint trace: matrix '" + name + "' changes shape at step " +
                                   std::to_string(c.step));
        }
    }
    checkpoints_.push_back(std::move(c));
}

std::vector<std::int64_t> CheckpointTrace::steps() const {
    std::vector<std::int64_t> out;
    for (const Checkpoint& c : checkpoints_) out.push_back(c.step);
    return out;
}

std::vector<std::string> CheckpointTrace::matrix_names() const {
    std::vector<std::string> out;
    if (checkpoints_.empty()) return out;
    for (const auto& entry : checkpoints_.front().matrices) out.push_back(entry.first);
    return out;
}

bool CheckpointTrace::has_metric(const std::string& name) const {
    if (checkpoints_.empty()) return false;
    return std::all_of(checkpoints_.begin(), checkpoints_.end(),
                       [&](const Checkpoint& c) { return c.metrics.count(name) > 0; });
}

std::vector<double> CheckpointTrace::metric_series(const std::string& name) const {
    std::vector<double> out;
    for (const Checkpoint& c : checkpoints_) {
        const auto it = c.metrics.find(name);
        if (it == c.metrics.end())
            throw InvalidInput("checkpoint trace: metric '" + name + "' missing at step " + std::to_string(c.step));
        out.push_back(it->second);
    }
    return out;
}

std::vector<double> CurvatureSeries::peak_positions() const {
    std::vector<double> out;
    for (std::size_t i : peaks) out.push_back(x[i + 1]);
    return out;
}

std::size_t smoothing_width(std::size_t window) {
    std::size_t w = std::max<std::size_t>(3, window / 8);
    if (w % 2 == 0) ++w;
    return w;
}

namespace {

double median_abs(std::vector<double> v) {
    if (v.empty()) return 0.0;
    for (double& x : v) x = std::abs(x);
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    double m = *mid;
    if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), mid));
    return m;
}

// Height above the higher of the two bases reached before meeting a taller
// point on either side.
double prominence(const std::vector<double>& c, std::size_t i) {
    double left_min = c[i];
    for (std::size_t j = i; j-- > 0;) {
        if (c[j] > c[i]) break;
        left_min = std::min(left_min, c[j]);
    }
    double right_min = c[i];
    for (std::size_t j = i + 1; j < c.size(); ++j) {
        if (c[j] > c[i]) break;
        right_min = std::min(right_min, c[j]);
    }
    return c[i] - std::max(left_min, right_min);
}

std::vector<std::size_t> find_peaks(const std::vector<double>& c, double factor) {
    std::vector<std::size_t> out;
    if (c.size() < 3) return out;
    const double threshold = factor * median_abs(c);
    for (std::size_t i = 1; i + 1 < c.size(); ++i) {
        if (!(c[i] > c[i - 1])) continue;
        // A flat top counts once, at its first sample.
        std::size_t j = i;
        while (j + 1 < c.size() && c[j + 1] == c[i]) ++j;
        if (j + 1 >= c.size() || !(c[j + 1] < c[i])) continue;
        if (prominence(c, i) > threshold) out.push_back(i);
        i = j;
    }
    return out;
}

}  // namespace

CurvatureSeries curvature_series(std::span<const double> x, std::span<const double> raw,
                                 const CurvatureOptions& options) {
    if (x.size() != raw.size()) throw InvalidInput("curvature: x and values differ in length");
    if (!(options.prominence_factor >= 0.0)) throw InvalidInput("curvature: prominence factor must be >= 0");
    const std::size_t w = smoothing_width(options.window);
    if (raw.size() < w + 2)
        throw InvalidInput("curvature: need at least " + std::to_string(w + 2) + " points, got " +
                           std::to_string(raw.size()));
    for (double v : raw)
        if (!std::isfinite(v)) throw InvalidInput("curvature: non-finite value");

    CurvatureSeries out;
    const std::size_t m = raw.size() - w + 1;
    const std::size_t half = (w - 1) / 2;
    for (std::size_t i = 0; i < m; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < w; ++j) sum += raw[i + j];
        out.values.push_back(sum / static_cast<double>(w));
        out.x.push_back(x[i + half]);
    }
    for (std::size_t i = 1; i + 1 < m; ++i)
        out.curvature.push_back(out.values[i + 1] - 2.0 * out.values[i] + out.values[i - 1]);
    out.peaks = find_peaks(out.curvature, options.prominence_factor);
    return out;
}

double effective_rank_of_spectrum(std::span<const double> singular, std::size_t k) {
    if (k >= singular.size()) throw InvalidInput("effective rank: k removes the whole spectrum");
    double total = 0.0;
    for (std::size_t i = k; i < singular.size(); ++i) {
        if (!(singular[i] >= 0.0)) throw InvalidInput("effective rank: singular values must be >= 0");
        total += singular[i];
    }
    if (!(total > 0.0)) throw InvalidInput("effective rank: remaining spectrum is all zero");
    double entropy = 0.0;
    for (std::size_t i = k; i < singular.size(); ++i) {
        const double p = singular[i] / total;
        if (p > 0.0) entropy -= p * std::log(p);
    }
    return std::exp(entropy);
}

namespace {

std::vector<double> singular_values(const Matrix& m) {
    const SvdResult s = svd(m);
    return {s.singular.data(), s.singular.data() + s.singular.size()};
}

std::size_t numerical_rank(const std::vector<double>& sv, Eigen::Index rows, Eigen::Index cols) {
    if (sv.empty() || sv.front() == 0.0) return 0;
    const double tol = static_cast<double>(std::max(rows, cols)) * std::numeric_limits<double>::epsilon() * sv.front();
    return static_cast<std::size_t>(std::count_if(sv.begin(), sv.end(), [tol](double s) { return s > tol; }));
}

}  // namespace

double effective_rank(const Matrix& m) {
    if (m.size() == 0) throw InvalidInput("effective_rank: empty matrix");
    require_finite(m, "effective_rank");
    if (m.cwiseAbs().maxCoeff() == 0.0) throw InvalidInput("effective_rank: all-zero matrix");
    return effective_rank_of_spectrum(singular_values(m), 0);
}

double marginalized_effective_rank(const Matrix& m, std::size_t k) {
    if (m.size() == 0) throw InvalidInput("marginalized_effective_rank: empty matrix");
    require_finite(m, "marginalized_effective_rank");
    const std::vector<double> sv = singular_values(m);
    if (k >= numerical_rank(sv, m.rows(), m.cols()))
        throw InvalidInput("marginalized_effective_rank: k = " + std::to_string(k) +
                           " leaves no non-zero singular values");
    return effective_rank_of_spectrum(sv, k);
}

double subspace_distance(const Matrix& m_t, const Matrix& m_final, std::optional<std::size_t> rank, bool normalize) {
    if (m_t.cols() != m_final.cols()) throw InvalidInput("subspace_distance: column counts differ");
    if (m_t.size() == 0) throw InvalidInput("subspace_distance: empty matrix");
    require_finite(m_t, "subspace_distance");
    require_finite(m_final, "subspace_distance");
    const auto full = static_cast<std::size_t>(std::min(m_t.rows(), m_t.cols()));
    if (rank && (*rank == 0 || *rank > full))
        throw InvalidInput("subspace_distance: rank must be in [1, " + std::to_string(full) + "]");
    const double final_norm = m_final.norm();
    if (normalize && final_norm == 0.0) throw InvalidInput("subspace_distance: final matrix is zero");

    double residual = final_norm;
    if (m_t.cwiseAbs().maxCoeff() > 0.0) {
        const SvdResult s = svd(m_t);
        std::vector<double> sv(s.singular.data(), s.singular.data() + s.singular.size());
        std::size_t k = rank ? *rank
                             : static_cast<std::size_t>(std::max(1.0, std::round(effective_rank_of_spectrum(sv, 0))));
        // A truncation beyond the numerical rank adds no rows to the span.
        k = std::min(k, numerical_rank(sv, m_t.rows(), m_t.cols()));
        const auto kk = static_cast<Eigen::Index>(k);
        const Matrix v = s.right.leftCols(kk);
        residual = (m_final - (m_final * v) * v.transpose()).norm();
    }
    return normalize ? residual / final_norm : residual;
}

CurvatureSeries loss_autocorrelation(std::span<const double> series, std::size_t max_lag, std::size_t window,
                                     const AutocorrelationOptions& options) {
    if (window == 0) throw InvalidInput("loss_autocorrelation: window must be >= 1");
    if (series.size() <= max_lag + window)
        throw InvalidInput("loss_autocorrelation: series of length " + std::to_string(series.size()) +
                           " is too short for max_lag + window = " + std::to_string(max_lag + window));
    std::vector<double> l(series.begin(), series.end());
    for (double v : l)
        if (!std::isfinite(v)) throw InvalidInput("loss_autocorrelation: non-finite value");
    if (options.centered) {
        double mean = 0.0;
        for (double v : l) mean += v;
        mean /= static_cast<double>(l.size());
        for (double& v : l) v -= mean;
    }
    std::vector<double> lags, a;
    for (std::size_t tau = 0; tau <= max_lag; ++tau) {
        double sum = 0.0;
        for (std::size_t t = 0; t < window; ++t) sum += l[t] * l[t + tau];
        lags.push_back(static_cast<double>(tau));
        a.push_back(sum / static_cast<double>(window));
    }
    return curvature_series(lags, a, {.window = window, .prominence_factor = options.prominence_factor});
}

CurvatureSeries norm_curvature(const CheckpointTrace& trace, const std::string& name, const CurvatureOptions& options) {
    std::vector<double> x, norms;
    for (const Checkpoint& c : trace.checkpoints()) {
        const auto it = c.matrices.find(name);
        if (it == c.matrices.end())
            throw InvalidInput("norm_curvature: matrix '" + name + "' missing at step " + std::to_string(c.step));
        x.push_back(static_cast<double>(c.step));
        norms.push_back(it->second.norm());
    }
    return curvature_series(x, norms, options);
}

namespace {

template <class T>
std::int64_t argmin_step(const std::vector<double>& curve, const std::vector<T>& steps) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < curve.size(); ++i)
        if (curve[i] < curve[best] || std::isnan(curve[best])) best = i;
    return static_cast<std::int64_t>(steps[best]);
}

}  // namespace

ProbeReport probe_report(const CheckpointTrace& trace, const ProbeConfig& config) {
    if (trace.empty()) throw InvalidInput("probe_report: empty trace");
    ProbeReport report;
    report.source = trace.source;
    report.steps = trace.steps();
    const std::size_t n = trace.size();

    std::vector<std::string> names = config.matrices.empty() ? trace.matrix_names() : config.matrices;
    for (const std::string& name : names)
        for (const Checkpoint& c : trace.checkpoints())
            if (c.matrices.count(name) == 0)
                throw InvalidInput("probe_report: matrix '" + name + "' missing at step " + std::to_string(c.step));

    const std::size_t window = config.window > 0 ? config.window : std::max<std::size_t>(4, n / 64);
    report.window = window;
    const CurvatureOptions curv{.window = window, .prominence_factor = config.prominence_factor};
    const std::size_t min_points = smoothing_width(window) + 2;

    std::size_t kmax = std::numeric_limits<std::size_t>::max();
    for (const std::string& name : names) {
        const Checkpoint& last = trace.checkpoints().back();
        const Matrix& m_final = last.matrices.at(name);
        MatrixProbes mp;
        mp.name = name;
        const auto dim = static_cast<std::size_t>(std::min(m_final.rows(), m_final.cols()));
        kmax = std::min(kmax, dim);
        mp.effrank.assign(dim, std::vector<double>(n, std::numeric_limits<double>::quiet_NaN()));
        const bool final_zero = m_final.cwiseAbs().maxCoeff() == 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const Matrix& m = trace.checkpoints()[i].matrices.at(name);
            require_finite(m, "probe_report");
            const std::vector<double> sv = singular_values(m);
            const std::size_t r = numerical_rank(sv, m.rows(), m.cols());
            for (std::size_t k = 0; k < std::min(dim, r); ++k) mp.effrank[k][i] = effective_rank_of_spectrum(sv, k);
            mp.subspace_distance.push_back(final_zero ? std::numeric_limits<double>::quiet_NaN()
                                                      : subspace_distance(m, m_final, config.rank, true));
        }
        if (n >= min_points) mp.norm_curvature = norm_curvature(trace, name, curv);
        report.per_matrix.push_back(std::move(mp));
    }

    if (!report.per_matrix.empty()) {
        const double count = static_cast<double>(report.per_matrix.size());
        report.mean_effrank.assign(kmax, std::vector<double>(n, 0.0));
        report.mean_subspace_distance.assign(n, 0.0);
        for (const MatrixProbes& mp : report.per_matrix) {
            for (std::size_t k = 0; k < kmax; ++k)
                for (std::size_t i = 0; i < n; ++i) report.mean_effrank[k][i] += mp.effrank[k][i] / count;
            for (std::size_t i = 0; i < n; ++i) report.mean_subspace_distance[i] += mp.subspace_distance[i] / count;
        }
        // The last curve (one singular value left) is identically 1.
        for (std::size_t k = 0; k + 1 < kmax; ++k)
            report.dip_steps.push_back(argmin_step(report.mean_effrank[k], report.steps));
        report.staggered_dips = std::is_sorted(report.dip_steps.begin(), report.dip_steps.end());
    }

    if (trace.has_metric(config.loss_metric)) {
        const std::vector<double> loss = trace.metric_series(config.loss_metric);
        if (n > window + min_points) {
            const std::size_t max_lag = config.max_lag > 0 ? config.max_lag : n - window - 1;
            report.max_lag = max_lag;
            report.loss_curvature = loss_autocorrelation(
                loss, max_lag, window, {.prominence_factor = config.prominence_factor, .centered = config.centered});
            for (double lag : report.loss_curvature->peak_positions()) {
                const auto offset = static_cast<std::size_t>(lag);
                report.transition_steps.push_back(report.steps[offset]);
            }
        }
    }
    return report;
}

namespace {

nlohmann::json nan_as_null(const std::vector<double>& v) {
    nlohmann::json out = nlohmann::json::array();
    for (double x : v) out.push_back(std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr));
    return out;
}

nlohmann::json curvature_json(const CurvatureSeries& c) {
    return {{"x", c.x}, {"values", c.values}, {"curvature", c.curvature}, {"peaks", c.peak_positions()}};
}

void write_curvature_rows(std::ostream& os, const std::string& series, const CurvatureSeries& c) {
    std::vector<bool> is_peak(c.curvature.size(), false);
    for (std::size_t i : c.peaks) is_peak[i] = true;
    for (std::size_t i = 0; i < c.values.size(); ++i) {
        os << series << ',' << c.x[i] << ',' << c.values[i] << ',';
        if (i > 0 && i + 1 < c.values.size()) os << c.curvature[i - 1] << ',' << (is_peak[i - 1] ? 1 : 0);
        else os << ',';
        os << '\n';
    }
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os.precision(17);
    return os;
}

}  // namespace

void write_probe_report(const ProbeReport& report, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    {
        std::ofstream os = open_out(fs::path(dir) / "probes.csv");
        os << "step";
        for (std::size_t k = 0; k < report.mean_effrank.size(); ++k) os << ",effrank_k" << k;
        os << ",subdist\n";
        for (std::size_t i = 0; i < report.steps.size(); ++i) {
            os << report.steps[i];
            for (const auto& curve : report.mean_effrank) {
                os << ',';
                if (std::isfinite(curve[i])) os << curve[i];
            }
            os << ',';
            if (i < report.mean_subspace_distance.size() && std::isfinite(report.mean_subspace_distance[i]))
                os << report.mean_subspace_distance[i];
            os << '\n';
        }
    }
    {
        std::ofstream os = open_out(fs::path(dir) / "curvature.csv");
        os << "series,x,value,curvature,is_peak\n";
        if (report.loss_curvature) write_curvature_rows(os, "loss_autocorrelation", *report.loss_curvature);
        for (const MatrixProbes& mp : report.per_matrix)
            if (mp.norm_curvature) write_curvature_rows(os, "norm:" + mp.name, *mp.norm_curvature);
    }

    nlohmann::json j;
    j["source"] = report.source;
    j["steps"] = report.steps;
    j["window"] = report.window;
    j["max_lag"] = report.max_lag;
    j["transition_steps"] = report.transition_steps;
    j["dip_steps"] = report.dip_steps;
    j["staggered_dips"] = report.staggered_dips;
    j["mean_subspace_distance"] = nan_as_null(report.mean_subspace_distance);
    nlohmann::json mean_er = nlohmann::json::array();
    for (const auto& curve : report.mean_effrank) mean_er.push_back(nan_as_null(curve));
    j["mean_effrank"] = mean_er;
    j["loss_curvature"] = report.loss_curvature ? curvature_json(*report.loss_curvature) : nlohmann::json(nullptr);
    nlohmann::json mats = nlohmann::json::array();
    for (const MatrixProbes& mp : report.per_matrix) {
        nlohmann::json m;
        m["name"] = mp.name;
        nlohmann::json er = nlohmann::json::array();
        for (const auto& curve : mp.effrank) er.push_back(nan_as_null(curve));
        m["effrank"] = er;
        m["subspace_distance"] = nan_as_null(mp.subspace_distance);
        m["norm_curvature"] = mp.norm_curvature ? curvature_json(*mp.norm_curvature) : nlohmann::json(nullptr);
        mats.push_back(m);
    }
    j["matrices"] = mats;
    std::ofstream os = open_out(fs::path(dir) / "report.json");
    os << j.dump(2) << '\n';
}

CheckpointTrace synth_trace(const ModeTheory& theory, const Matrix& eigenbasis, std::span<const double> t_grid,
                            const SynthOptions& options) {
    const auto d = static_cast<Eigen::Index>(theory.modes.size());
    if (eigenbasis.rows() != d || eigenbasis.cols() != d) throw InvalidInput("synth_trace: eigenbasis shape");
    if (!(options.a0 > 0.0)) throw InvalidInput("synth_trace: a0 must be > 0");
    if (!(options.noise >= 0.0)) throw InvalidInput("synth_trace: noise must be >= 0");
    const std::vector<double> a0(theory.modes.size(), options.a0);
    const ModeTheory th = with_initial(theory, a0);

    CheckpointTrace trace;
    trace.source = "synthetic";
    std::vector<double> a(theory.modes.size());
    Vector root(d);
    for (std::size_t i = 0; i < t_grid.size(); ++i) {
        for (Eigen::Index m = 0; m < d; ++m) {
            a[static_cast<std::size_t>(m)] = a_trajectory(th.modes[static_cast<std::size_t>(m)], t_grid[i]);
            root(m) = std::sqrt(a[static_cast<std::size_t>(m)]);
        }
        const Matrix clean = eigenbasis * root.asDiagonal() * eigenbasis.transpose();
        Checkpoint c;
        c.step = static_cast<std::int64_t>(i);
        c.metrics["t"] = t_grid[i];
        c.metrics["loss"] = expected_loss(th, a);
        for (const char* name : {"p2", "q1"}) {
            Matrix m = clean;
            if (options.noise > 0.0) {
                RngStream rng(options.seed, {.task = name[0] == 'p' ? 0u : 1u,
                                             .sample = static_cast<std::uint32_t>(i), .role = Role::noise});
                for (Eigen::Index r = 0; r < d; ++r)
                    for (Eigen::Index col = 0; col < d; ++col) m(r, col) += options.noise * rng.normal();
            }
            c.matrices[name] = std::move(m);
        }
        trace.append(std::move(c));
    }
    return trace;
}

}  // namespace icl
