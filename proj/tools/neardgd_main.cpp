#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "neardgd/harness.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfigError = 1;
constexpr int kExitAllDiverged = 2;
constexpr int kExitIoError = 3;

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw neardgd::IoError("cannot open config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
    std::vector<std::uint64_t> seeds;
    std::istringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        try {
            seeds.push_back(std::stoull(tok));
        } catch (const std::exception&) {
            throw neardgd::ConfigError("bad seed \"" + tok + "\" in --seeds");
        }
    }
    if (seeds.empty()) throw neardgd::ConfigError("--seeds lists no seeds");
    return seeds;
}

neardgd::ExperimentConfig load_config(const std::string& path) {
    return neardgd::parse_config(slurp(path));
}

int cmd_validate(const std::string& path) {
    load_config(path);
    std::cout << "ok\n";
    return kExitOk;
}

int cmd_constants(const std::string& path) {
    const auto cfg = load_config(path);
    std::optional<neardgd::Dataset> dataset;
    if (cfg.dataset.type != neardgd::DatasetConfig::Type::quadratic)
        dataset.emplace(neardgd::detail::load_dataset(cfg));
    nlohmann::json out = nlohmann::json::array();
    for (int n : cfg.graph.n_values) {
        const auto topo =
            neardgd::generate_graph(cfg.graph.kind, n, cfg.graph.seed, cfg.graph.p_edge);
        const auto cm = neardgd::metropolis_weights(topo);
        const auto suite = neardgd::detail::build_suite(cfg, dataset ? &*dataset : nullptr, n);
        const double sigma_sq = neardgd::certify_sigma_sq(cfg.oracle, suite);
        const auto y0 = neardgd::detail::initial_state(cfg, suite);
        const auto tc =
            neardgd::compute_constants(suite, cm, sigma_sq, cfg.alpha, cfg.psi, y0);
        auto j = neardgd::constants_to_json(tc);
        j["sgd_neighborhood"] = neardgd::sgd_neighborhood(tc, cfg.alpha, sigma_sq);
        j["limit_neighborhood"] = neardgd::limit_neighborhood(tc);
        out.push_back(j);
    }
    std::cout << (out.size() == 1 ? out.front().dump(2) : out.dump(2)) << "\n";
    return kExitOk;
}

int cmd_run(const std::string& path, const std::string& out_dir, const std::string& seed_csv,
            long long iterations) {
    auto cfg = load_config(path);
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    if (!seed_csv.empty()) cfg.seeds = parse_seed_list(seed_csv);
    if (iterations > 0) cfg.iterations = iterations;
    const auto result = neardgd::run_experiment(cfg);
    std::cout << "wrote " << cfg.output_dir << "/summary.json (" << result.total_runs << " runs";
    if (result.diverged_runs > 0) std::cout << ", " << result.diverged_runs << " diverged";
    std::cout << ")\n";
    if (result.total_runs > 0 && result.diverged_runs == result.total_runs)
        return kExitAllDiverged;
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"stochastic NEAR-DGD experiment harness"};
    app.require_subcommand(1);

    std::string config_path, out_dir, seed_csv;
    long long iterations = 0;

    auto* run_cmd = app.add_subcommand("run", "run an experiment and write CSV/JSON outputs");
    run_cmd->add_option("config", config_path, "experiment config (JSON)")->required();
    run_cmd->add_option("--out", out_dir, "output directory (overrides config)");
    run_cmd->add_option("--seeds", seed_csv, "comma-separated seed list (overrides config)");
    run_cmd->add_option("--iterations", iterations, "iteration count (overrides config)");

    auto* constants_cmd =
        app.add_subcommand("constants", "print the theoretical constants for a config");
    constants_cmd->add_option("config", config_path, "experiment config (JSON)")->required();

    auto* validate_cmd = app.add_subcommand("validate", "parse and validate a config");
    validate_cmd->add_option("config", config_path, "experiment config (JSON)")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand(run_cmd)) return cmd_run(config_path, out_dir, seed_csv, iterations);
        if (app.got_subcommand(constants_cmd)) return cmd_constants(config_path);
        return cmd_validate(config_path);
    } catch (const neardgd::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfigError;
    } catch (const neardgd::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIoError;
    } catch (const neardgd::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfigError;
    }
}
