// icl-lab: simulate, theory, compare, probe, validate.
//
// Exit status: 0 ok, 2 usage or configuration error (including malformed
// input files), 3 training divergence, 4 a tolerance check failed.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "icl/commands.hpp"
#include "icl/config.hpp"
#include "icl/errors.hpp"

namespace {

icl::ExperimentConfig load(const std::string& path, const std::optional<std::uint64_t>& seed_override) {
    icl::ExperimentConfig config = path.empty() ? icl::ExperimentConfig{} : icl::load_config(path);
    if (seed_override) config.seed = *seed_override;
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Linear-attention in-context learning lab: SGD simulation, closed-form theory, and checkpoint probes"};
    app.require_subcommand(1);

    std::string config_path, out, trace_dir, theory_dir, metrics;
    std::optional<std::uint64_t> seed_override;
    std::optional<std::size_t> rank, max_lag, window;

    auto add_config = [&](CLI::App* sub, bool required) {
        auto* opt = sub->add_option("--config", config_path, "experiment config (JSON)")->check(CLI::ExistingFile);
        if (required) opt->required();
        sub->add_option("--seed-override", seed_override, "replace the config's seed");
    };

    CLI::App* simulate = app.add_subcommand("simulate", "train by online SGD and write a trace directory");
    add_config(simulate, true);
    simulate->add_option("--out", out, "output directory (default: the config's output_dir)");

    CLI::App* theory = app.add_subcommand("theory", "write closed-form curves and per-mode constants");
    add_config(theory, true);
    theory->add_option("--out", out, "output directory (default: <output_dir>/theory)");

    CLI::App* compare = app.add_subcommand("compare", "compare a simulate (or theory) run against a theory run");
    compare->add_option("--trace", trace_dir, "simulate or theory output directory")->required();
    compare->add_option("theory_dir", theory_dir, "theory output directory")->required();
    compare->add_option("--out", out, "report path (JSON)");

    CLI::App* probe = app.add_subcommand("probe", "effective ranks, subspace distances and curvature of a trace");
    probe->add_option("--trace", trace_dir, "trace directory")->required();
    probe->add_option("--config", config_path, "config supplying probe settings")->check(CLI::ExistingFile);
    probe->add_option("--metrics", metrics, "comma-separated matrix names (default: all)");
    probe->add_option("--rank", rank, "subspace truncation rank (default: rounded effective rank)");
    probe->add_option("--max-lag", max_lag, "largest autocorrelation lag");
    probe->add_option("--window", window, "autocorrelation window");
    probe->add_option("--out", out, "output directory (default: <trace>/probes)");

    CLI::App* validate = app.add_subcommand("validate", "Monte-Carlo checks of Wishart moments and null gradients");
    add_config(validate, false);
    validate->add_option("--out", out, "directory for validate.json (default: print only)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : icl::exit_usage;
    }

    try {
        if (simulate->parsed()) {
            const icl::ExperimentConfig config = load(config_path, seed_override);
            return icl::cmd_simulate(config, out.empty() ? config.output_dir : out, std::cout);
        }
        if (theory->parsed()) {
            const icl::ExperimentConfig config = load(config_path, seed_override);
            const std::string dir = out.empty() ? (std::filesystem::path(config.output_dir) / "theory").string() : out;
            return icl::cmd_theory(config, dir, std::cout);
        }
        if (compare->parsed()) return icl::cmd_compare(trace_dir, theory_dir, out, std::cout);
        if (probe->parsed()) {
            icl::ProbeConfig pc;
            if (!config_path.empty()) pc = icl::probe_config(icl::load_config(config_path).probes);
            if (!metrics.empty()) pc.matrices = CLI::detail::split(metrics, ',');
            if (rank) pc.rank = *rank;
            if (max_lag) pc.max_lag = *max_lag;
            if (window) pc.window = *window;
            const std::string dir = out.empty() ? (std::filesystem::path(trace_dir) / "probes").string() : out;
            return icl::cmd_probe(trace_dir, pc, dir, std::cout);
        }
        if (validate->parsed()) {
            const icl::ExperimentConfig config = load(config_path, seed_override);
            return icl::cmd_validate(config, out, std::cout);
        }
    } catch (const icl::DivergenceError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return icl::exit_divergence;
    } catch (const icl::FormatError& e) {
        std::cerr << "format error: " << e.what() << '\n';
        return icl::exit_usage;
    } catch (const icl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return icl::exit_usage;
    } catch (const icl::InvalidInput& e) {
        std::cerr << "invalid input: " << e.what() << '\n';
        return icl::exit_usage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return icl::exit_usage;
}
