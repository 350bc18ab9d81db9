#include "icl/config.hpp"

#include <cmath>
#include <concepts>
#include <fstream>
#include <set>
#include <sstream>

#include "icl/errors.hpp"

namespace icl {

using nlohmann::json;

namespace {

// Reads one JSON object, remembering which keys were consumed so leftovers
// can be reported as unknown.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
    }

    const json* find(const std::string& key) {
        seen_.insert(key);
        const auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    template <std::unsigned_integral T>
    void read(const std::string& key, T& out) {
        if (const json* v = find(key)) {
            if (!v->is_number_integer() || (!v->is_number_unsigned() && v->get<std::int64_t>() < 0))
                throw ConfigError(path(key) + ": expected a non-negative integer");
            out = v->get<T>();
        }
    }
    void read(const std::string& key, double& out) {
        if (const json* v = find(key)) {
            if (!v->is_number()) throw ConfigError(path(key) + ": expected a number");
            out = v->get<double>();
        }
    }
    void read(const std::string& key, bool& out) {
        if (const json* v = find(key)) {
            if (!v->is_boolean()) throw ConfigError(path(key) + ": expected true or false");
            out = v->get<bool>();
        }
    }
    void read(const std::string& key, std::string& out) {
        if (const json* v = find(key)) {
            if (!v->is_string()) throw ConfigError(path(key) + ": expected a string");
            out = v->get<std::string>();
        }
    }
    void read(const std::string& key, std::vector<double>& out) {
        if (const json* v = find(key)) {
            if (!v->is_array()) throw ConfigError(path(key) + ": expected an array of numbers");
            out.clear();
            for (const json& e : *v) {
                if (!e.is_number()) throw ConfigError(path(key) + ": expected an array of numbers");
                out.push_back(e.get<double>());
            }
        }
    }
    void read(const std::string& key, std::vector<std::string>& out) {
        if (const json* v = find(key)) {
            if (!v->is_array()) throw ConfigError(path(key) + ": expected an array of strings");
            out.clear();
            for (const json& e : *v) {
                if (!e.is_string()) throw ConfigError(path(key) + ": expected an array of strings");
                out.push_back(e.get<std::string>());
            }
        }
    }

    std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

    /// Throws on any key that was never asked for.
    void finish() const {
        for (const auto& [key, value] : j_.items())
            if (seen_.count(key) == 0) throw ConfigError("unknown config key '" + path(key) + "'");
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

template <class Fn>
void with_object(ObjectReader& parent, const std::string& key, Fn&& fn) {
    if (const json* v = parent.find(key)) {
        ObjectReader r(*v, parent.path(key));
        fn(r);
        r.finish();
    }
}

json spectrum_json(const SpectrumSpec& s) {
    json j{{"kind", to_string(s.kind)}};
    switch (s.kind) {
        case SpectrumSpec::Kind::explicit_values: j["values"] = s.values; break;
        case SpectrumSpec::Kind::uniform: j["s_max"] = s.s_max; break;
        case SpectrumSpec::Kind::geometric:
            j["s_max"] = s.s_max;
            j["ratio"] = s.ratio;
            break;
    }
    return j;
}

template <class Fn>
auto translate(const std::string& where, Fn&& fn) {
    try {
        return fn();
    } catch (const InvalidInput& e) {
        throw ConfigError(where + ": " + e.what());
    }
}

}  // namespace

void ExperimentConfig::check() const {
    if (d == 0) throw ConfigError("d must be >= 1");
    if (context_length == 0) throw ConfigError("N must be >= 1");
    if (task_count == 0) throw ConfigError("P must be >= 1");
    translate("spectrum", [&] { return spectrum.resolve(d); });
    translate("train", [&] {
        train.validate();
        return 0;
    });
    if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
    if (probes.rank && *probes.rank == 0) throw ConfigError("probes.rank must be >= 1 or null");
    if (!(probes.prominence_factor >= 0.0)) throw ConfigError("probes.prominence_factor must be >= 0");
    if (validate.wishart_samples < 2 || validate.gradient_samples < 2)
        throw ConfigError("validate sample counts must be >= 2");
    if (!(validate.sigma > 0.0)) throw ConfigError("validate.sigma must be > 0");
    if (!(compare.loss_rmse_fraction > 0.0) || !(compare.fixed_point_relative > 0.0) ||
        !(compare.conserved_drift > 0.0))
        throw ConfigError("compare tolerances must be > 0");
    if (!(compare.tail_fraction > 0.0 && compare.tail_fraction <= 1.0))
        throw ConfigError("compare.tail_fraction must be in (0, 1]");
    if (!(theory.t_max >= 0.0) || !std::isfinite(theory.t_max)) throw ConfigError("theory.t_max must be >= 0");
    if (theory.points == 1) throw ConfigError("theory.points must be 0 (auto) or >= 2");
}

TrainConfig ExperimentConfig::train_config() const {
    TrainConfig t = train;
    t.seed = seed;
    return t;
}

SpectralTaskDistribution ExperimentConfig::distribution() const {
    return translate("distribution", [&] { return make_distribution(d, context_length, task_count, spectrum, seed); });
}

std::vector<double> ExperimentConfig::theory_grid() const {
    const double t_max = theory.t_max > 0.0 ? theory.t_max : static_cast<double>(std::max<std::size_t>(train.epochs, 1));
    const std::size_t points =
        theory.points > 0 ? theory.points : 4 * static_cast<std::size_t>(std::ceil(t_max)) + 1;
    std::vector<double> grid(points);
    for (std::size_t i = 0; i < points; ++i)
        grid[i] = t_max * static_cast<double>(i) / static_cast<double>(points - 1);
    return grid;
}

json to_json(const ExperimentConfig& c) {
    json j;
    j["d"] = c.d;
    j["N"] = c.context_length;
    j["P"] = c.task_count;
    j["spectrum"] = spectrum_json(c.spectrum);
    j["seed"] = c.seed;
    j["train"] = {
        {"eta", c.train.eta},
        {"epochs", c.train.epochs},
        {"batch", c.train.batch},
        {"covariance_mode", to_string(c.train.covariance_mode)},
        {"train_mode", to_string(c.train.train_mode)},
        {"init", {{"scale", c.train.init.scale}, {"symmetric", c.train.init.symmetric},
                  {"null_scale", c.train.init.null_scale}}},
        {"record_every", c.train.record_every},
    };
    j["output_dir"] = c.output_dir;
    j["probes"] = {
        {"matrices", c.probes.matrices},
        {"rank", c.probes.rank ? json(*c.probes.rank) : json(nullptr)},
        {"max_lag", c.probes.max_lag},
        {"window", c.probes.window},
        {"prominence_factor", c.probes.prominence_factor},
        {"centered", c.probes.centered},
    };
    j["validate"] = {
        {"wishart_samples", c.validate.wishart_samples},
        {"gradient_samples", c.validate.gradient_samples},
        {"sigma", c.validate.sigma},
    };
    j["compare"] = {
        {"loss_rmse_fraction", c.compare.loss_rmse_fraction},
        {"fixed_point_relative", c.compare.fixed_point_relative},
        {"conserved_drift", c.compare.conserved_drift},
        {"tail_fraction", c.compare.tail_fraction},
    };
    j["theory"] = {{"t_max", c.theory.t_max}, {"points", c.theory.points}};
    return j;
}

ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    ObjectReader r(j, "");
    r.read("d", c.d);
    r.read("N", c.context_length);
    r.read("P", c.task_count);
    r.read("seed", c.seed);
    r.read("output_dir", c.output_dir);
    with_object(r, "spectrum", [&](ObjectReader& s) {
        std::string kind = to_string(c.spectrum.kind);
        s.read("kind", kind);
        c.spectrum.kind = translate("spectrum.kind", [&] { return spectrum_kind_from_string(kind); });
        if (c.spectrum.kind != SpectrumSpec::Kind::explicit_values) c.spectrum.values.clear();
        s.read("values", c.spectrum.values);
        s.read("s_max", c.spectrum.s_max);
        s.read("ratio", c.spectrum.ratio);
    });
    with_object(r, "train", [&](ObjectReader& t) {
        t.read("eta", c.train.eta);
        t.read("epochs", c.train.epochs);
        t.read("batch", c.train.batch);
        t.read("record_every", c.train.record_every);
        std::string cov = to_string(c.train.covariance_mode);
        t.read("covariance_mode", cov);
        c.train.covariance_mode = translate("train.covariance_mode", [&] { return covariance_mode_from_string(cov); });
        std::string mode = to_string(c.train.train_mode);
        t.read("train_mode", mode);
        c.train.train_mode = translate("train.train_mode", [&] { return train_mode_from_string(mode); });
        with_object(t, "init", [&](ObjectReader& i) {
            i.read("scale", c.train.init.scale);
            i.read("symmetric", c.train.init.symmetric);
            i.read("null_scale", c.train.init.null_scale);
        });
    });
    with_object(r, "probes", [&](ObjectReader& p) {
        p.read("matrices", c.probes.matrices);
        if (const json* v = p.find("rank")) {
            if (v->is_null()) {
                c.probes.rank.reset();
            } else {
                std::size_t rank = 0;
                p.read("rank", rank);
                c.probes.rank = rank;
            }
        }
        p.read("max_lag", c.probes.max_lag);
        p.read("window", c.probes.window);
        p.read("prominence_factor", c.probes.prominence_factor);
        p.read("centered", c.probes.centered);
    });
    with_object(r, "validate", [&](ObjectReader& v) {
        v.read("wishart_samples", c.validate.wishart_samples);
        v.read("gradient_samples", c.validate.gradient_samples);
        v.read("sigma", c.validate.sigma);
    });
    with_object(r, "compare", [&](ObjectReader& v) {
        v.read("loss_rmse_fraction", c.compare.loss_rmse_fraction);
        v.read("fixed_point_relative", c.compare.fixed_point_relative);
        v.read("conserved_drift", c.compare.conserved_drift);
        v.read("tail_fraction", c.compare.tail_fraction);
    });
    with_object(r, "theory", [&](ObjectReader& v) {
        v.read("t_max", c.theory.t_max);
        v.read("points", c.theory.points);
    });
    r.finish();
    c.check();
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return config_from_json(j);
}

void save_config(const ExperimentConfig& config, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << to_json(config).dump(2) << '\n';
}

}  // namespace icl
