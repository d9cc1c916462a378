#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "neardgd/analysis.hpp"
#include "neardgd/error.hpp"
#include "neardgd/methods.hpp"
#include "neardgd/objectives.hpp"
#include "neardgd/oracle.hpp"
#include "neardgd/topology.hpp"

namespace neardgd {

// --- configuration ------------------------------------------------------------

struct GraphConfig {
    GraphKind kind = GraphKind::erdos_renyi;
    std::vector<int> n_values;  // usually one entry; several run a size sweep
    double p_edge = 0.5;        // erdos_renyi only
    std::uint64_t seed = 0;
};

struct DatasetConfig {
    enum class Type { synthetic, libsvm, quadratic } type = Type::synthetic;
    int M = 0;
    int p = 0;
    std::uint64_t seed = 0;
    std::string path;          // libsvm
    double lambda_min = 1.0;   // quadratic eigenvalue range
    double lambda_max = 1.0;
    bool replicate = false;    // quadratic: all agents share one function
};

struct ExperimentConfig {
    GraphConfig graph;
    DatasetConfig dataset;
    OracleConfig oracle;
    std::vector<MethodSpec> methods;
    double alpha = 0.0;
    long long iterations = 0;
    std::vector<std::uint64_t> seeds;
    std::optional<double> psi;
    std::optional<std::vector<double>> y0;  // size 1: scalar broadcast; size p: vector
    int plateau_window = 2000;
    std::string output_dir = "out";
};

namespace cfgdetail {

using nlohmann::json;

inline void reject_unknown_keys(const json& obj, const std::string& path,
                                std::initializer_list<const char*> allowed) {
    for (const auto& [key, _] : obj.items()) {
        bool ok = false;
        for (const char* a : allowed)
            if (key == a) ok = true;
        if (!ok) throw ConfigError("unknown key \"" + path + key + "\"");
    }
}

inline const json& require(const json& obj, const std::string& path, const char* key) {
    if (!obj.contains(key)) throw ConfigError("missing key \"" + path + key + "\"");
    return obj.at(key);
}

template <class T>
T as(const json& v, const std::string& where) {
    try {
        return v.get<T>();
    } catch (const json::exception&) {
        throw ConfigError("bad value type at \"" + where + "\"");
    }
}

inline double as_positive(const json& v, const std::string& where) {
    const double d = as<double>(v, where);
    if (!(d > 0.0)) throw ConfigError("\"" + where + "\" must be positive");
    return d;
}

inline GraphKind parse_graph_kind(const std::string& s, const std::string& where) {
    if (s == "erdos_renyi") return GraphKind::erdos_renyi;
    if (s == "path") return GraphKind::path;
    if (s == "ring") return GraphKind::ring;
    if (s == "complete") return GraphKind::complete;
    if (s == "star") return GraphKind::star;
    throw ConfigError("unknown graph kind \"" + s + "\" at \"" + where + "\"");
}

inline GraphConfig parse_graph(const json& j) {
    if (!j.is_object()) throw ConfigError("\"graph\" must be an object");
    reject_unknown_keys(j, "graph.", {"kind", "n", "p_edge", "seed"});
    GraphConfig g;
    g.kind = parse_graph_kind(as<std::string>(require(j, "graph.", "kind"), "graph.kind"),
                              "graph.kind");
    const json& n = require(j, "graph.", "n");
    if (n.is_array()) {
        for (const auto& v : n) g.n_values.push_back(as<int>(v, "graph.n"));
    } else {
        g.n_values.push_back(as<int>(n, "graph.n"));
    }
    if (g.n_values.empty()) throw ConfigError("\"graph.n\" must not be empty");
    for (int v : g.n_values)
        if (v < 1) throw ConfigError("\"graph.n\" entries must be >= 1");
    if (g.kind == GraphKind::erdos_renyi) {
        g.p_edge = as_positive(require(j, "graph.", "p_edge"), "graph.p_edge");
        if (g.p_edge > 1.0) throw ConfigError("\"graph.p_edge\" must be <= 1");
    } else if (j.contains("p_edge")) {
        throw ConfigError("\"graph.p_edge\" only applies to erdos_renyi");
    }
    if (j.contains("seed")) g.seed = as<std::uint64_t>(j.at("seed"), "graph.seed");
    return g;
}

inline DatasetConfig parse_dataset(const json& j) {
    if (!j.is_object()) throw ConfigError("\"dataset\" must be an object");
    DatasetConfig d;
    const std::string type = as<std::string>(require(j, "dataset.", "type"), "dataset.type");
    if (type == "synthetic") {
        d.type = DatasetConfig::Type::synthetic;
        reject_unknown_keys(j, "dataset.", {"type", "M", "p", "seed"});
        d.M = as<int>(require(j, "dataset.", "M"), "dataset.M");
        d.p = as<int>(require(j, "dataset.", "p"), "dataset.p");
        if (j.contains("seed")) d.seed = as<std::uint64_t>(j.at("seed"), "dataset.seed");
        if (d.M < 2 || d.p < 1) throw ConfigError("\"dataset\" needs M >= 2 and p >= 1");
    } else if (type == "libsvm") {
        d.type = DatasetConfig::Type::libsvm;
        reject_unknown_keys(j, "dataset.", {"type", "path", "seed"});
        d.path = as<std::string>(require(j, "dataset.", "path"), "dataset.path");
        if (j.contains("seed")) d.seed = as<std::uint64_t>(j.at("seed"), "dataset.seed");
    } else if (type == "quadratic") {
        d.type = DatasetConfig::Type::quadratic;
        reject_unknown_keys(j, "dataset.",
                            {"type", "p", "lambda_min", "lambda_max", "seed", "replicate"});
        d.p = as<int>(require(j, "dataset.", "p"), "dataset.p");
        d.lambda_min = as_positive(require(j, "dataset.", "lambda_min"), "dataset.lambda_min");
        d.lambda_max = as_positive(require(j, "dataset.", "lambda_max"), "dataset.lambda_max");
        if (d.lambda_max < d.lambda_min)
            throw ConfigError("\"dataset.lambda_max\" must be >= lambda_min");
        if (j.contains("seed")) d.seed = as<std::uint64_t>(j.at("seed"), "dataset.seed");
        if (j.contains("replicate")) d.replicate = as<bool>(j.at("replicate"), "dataset.replicate");
        if (d.p < 1) throw ConfigError("\"dataset.p\" must be >= 1");
    } else {
        throw ConfigError("unknown dataset type \"" + type + "\"");
    }
    return d;
}

inline OracleConfig parse_oracle(const json& j) {
    if (!j.is_object()) throw ConfigError("\"oracle\" must be an object");
    OracleConfig o;
    const std::string mode = as<std::string>(require(j, "oracle.", "mode"), "oracle.mode");
    if (mode == "exact") {
        o.mode = OracleMode::exact;
        reject_unknown_keys(j, "oracle.", {"mode"});
    } else if (mode == "additive_gaussian") {
        o.mode = OracleMode::additive_gaussian;
        reject_unknown_keys(j, "oracle.", {"mode", "sigma"});
        o.sigma = as<double>(require(j, "oracle.", "sigma"), "oracle.sigma");
        if (o.sigma < 0.0) throw ConfigError("\"oracle.sigma\" must be nonnegative");
    } else if (mode == "minibatch") {
        o.mode = OracleMode::minibatch;
        reject_unknown_keys(j, "oracle.", {"mode", "B", "with_replacement"});
        o.batch = as<int>(require(j, "oracle.", "B"), "oracle.B");
        if (o.batch < 1) throw ConfigError("\"oracle.B\" must be >= 1");
        if (j.contains("with_replacement"))
            o.with_replacement = as<bool>(j.at("with_replacement"), "oracle.with_replacement");
    } else {
        throw ConfigError("unknown oracle mode \"" + mode + "\"");
    }
    return o;
}

inline ConsensusSchedule parse_schedule(const json& j, const std::string& path) {
    if (!j.is_object()) throw ConfigError("\"" + path + "\" must be an object");
    const std::string kind = as<std::string>(require(j, path + ".", "kind"), path + ".kind");
    try {
        if (kind == "constant") {
            reject_unknown_keys(j, path + ".", {"kind", "t"});
            return ConsensusSchedule::constant(
                as<long long>(require(j, path + ".", "t"), path + ".t"));
        }
        if (kind == "increasing") {
            reject_unknown_keys(j, path + ".", {"kind"});
            return ConsensusSchedule::increasing();
        }
        if (kind == "doubling") {
            reject_unknown_keys(j, path + ".", {"kind", "a", "b"});
            return ConsensusSchedule::doubling(
                as<long long>(require(j, path + ".", "a"), path + ".a"),
                as<long long>(require(j, path + ".", "b"), path + ".b"));
        }
    } catch (const Error& e) {
        throw ConfigError(std::string(e.what()) + " at \"" + path + "\"");
    }
    throw ConfigError("unknown schedule kind \"" + kind + "\" at \"" + path + "\"");
}

inline MethodSpec parse_method(const json& j, const std::string& path) {
    if (!j.is_object()) throw ConfigError("\"" + path + "\" must be an object");
    reject_unknown_keys(j, path + ".", {"method", "schedule", "label"});
    MethodSpec m;
    const std::string name = as<std::string>(require(j, path + ".", "method"), path + ".method");
    if (name == "near_dgd") m.kind = MethodKind::near_dgd;
    else if (name == "dgd") m.kind = MethodKind::dgd;
    else if (name == "extra") m.kind = MethodKind::extra;
    else if (name == "dsgt") m.kind = MethodKind::dsgt;
    else if (name == "centralized_sgd") m.kind = MethodKind::centralized_sgd;
    else if (name == "centralized_minibatch") m.kind = MethodKind::centralized_minibatch;
    else throw ConfigError("unknown method \"" + name + "\" at \"" + path + ".method\"");
    if (m.kind == MethodKind::near_dgd) {
        m.schedule = parse_schedule(require(j, path + ".", "schedule"), path + ".schedule");
    } else if (j.contains("schedule")) {
        throw ConfigError("\"" + path + ".schedule\" only applies to near_dgd");
    }
    if (j.contains("label")) m.label = as<std::string>(j.at("label"), path + ".label");
    return m;
}

}  // namespace cfgdetail

inline ExperimentConfig parse_config(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    cfgdetail::reject_unknown_keys(j, "",
                                   {"graph", "dataset", "oracle", "methods", "alpha", "iterations",
                                    "seeds", "psi", "y0", "plateau_window", "output_dir"});
    ExperimentConfig cfg;
    cfg.graph = cfgdetail::parse_graph(cfgdetail::require(j, "", "graph"));
    cfg.dataset = cfgdetail::parse_dataset(cfgdetail::require(j, "", "dataset"));
    cfg.oracle = cfgdetail::parse_oracle(cfgdetail::require(j, "", "oracle"));

    const auto& methods = cfgdetail::require(j, "", "methods");
    if (!methods.is_array() || methods.empty())
        throw ConfigError("\"methods\" must be a nonempty array");
    for (std::size_t i = 0; i < methods.size(); ++i)
        cfg.methods.push_back(
            cfgdetail::parse_method(methods.at(i), "methods[" + std::to_string(i) + "]"));
    std::set<std::string> labels;
    for (const auto& m : cfg.methods)
        if (!labels.insert(m.effective_label()).second)
            throw ConfigError("duplicate method label \"" + m.effective_label() + "\"");

    cfg.alpha = cfgdetail::as<double>(cfgdetail::require(j, "", "alpha"), "alpha");
    if (!(cfg.alpha > 0.0)) throw ConfigError("\"alpha\" must be positive");
    cfg.iterations = cfgdetail::as<long long>(cfgdetail::require(j, "", "iterations"), "iterations");
    if (cfg.iterations < 1) throw ConfigError("\"iterations\" must be >= 1");
    const auto& seeds = cfgdetail::require(j, "", "seeds");
    if (!seeds.is_array() || seeds.empty())
        throw ConfigError("\"seeds\" must be a nonempty array");
    for (const auto& s : seeds)
        cfg.seeds.push_back(cfgdetail::as<std::uint64_t>(s, "seeds"));
    if (j.contains("psi")) {
        cfg.psi = cfgdetail::as<double>(j.at("psi"), "psi");
        if (!(*cfg.psi > 0.0)) throw ConfigError("\"psi\" must be positive");
    }
    if (j.contains("y0")) {
        if (j.at("y0").is_array())
            cfg.y0 = cfgdetail::as<std::vector<double>>(j.at("y0"), "y0");
        else
            cfg.y0 = std::vector<double>{cfgdetail::as<double>(j.at("y0"), "y0")};
        if (cfg.y0->empty()) throw ConfigError("\"y0\" must not be empty");
    }
    if (j.contains("plateau_window")) {
        cfg.plateau_window = cfgdetail::as<int>(j.at("plateau_window"), "plateau_window");
        if (cfg.plateau_window < 1) throw ConfigError("\"plateau_window\" must be >= 1");
    }
    if (j.contains("output_dir"))
        cfg.output_dir = cfgdetail::as<std::string>(j.at("output_dir"), "output_dir");

    if (cfg.oracle.mode == OracleMode::minibatch &&
        cfg.dataset.type == DatasetConfig::Type::quadratic)
        throw ConfigError("\"oracle.mode\" minibatch requires a sample-based dataset");
    return cfg;
}

inline std::string serialize_config(const ExperimentConfig& cfg) {
    nlohmann::json j;
    nlohmann::json g;
    g["kind"] = to_string(cfg.graph.kind);
    if (cfg.graph.n_values.size() == 1) g["n"] = cfg.graph.n_values.front();
    else g["n"] = cfg.graph.n_values;
    if (cfg.graph.kind == GraphKind::erdos_renyi) g["p_edge"] = cfg.graph.p_edge;
    g["seed"] = cfg.graph.seed;
    j["graph"] = g;

    nlohmann::json d;
    switch (cfg.dataset.type) {
        case DatasetConfig::Type::synthetic:
            d["type"] = "synthetic";
            d["M"] = cfg.dataset.M;
            d["p"] = cfg.dataset.p;
            d["seed"] = cfg.dataset.seed;
            break;
        case DatasetConfig::Type::libsvm:
            d["type"] = "libsvm";
            d["path"] = cfg.dataset.path;
            d["seed"] = cfg.dataset.seed;
            break;
        case DatasetConfig::Type::quadratic:
            d["type"] = "quadratic";
            d["p"] = cfg.dataset.p;
            d["lambda_min"] = cfg.dataset.lambda_min;
            d["lambda_max"] = cfg.dataset.lambda_max;
            d["seed"] = cfg.dataset.seed;
            d["replicate"] = cfg.dataset.replicate;
            break;
    }
    j["dataset"] = d;

    nlohmann::json o;
    o["mode"] = to_string(cfg.oracle.mode);
    if (cfg.oracle.mode == OracleMode::additive_gaussian) o["sigma"] = cfg.oracle.sigma;
    if (cfg.oracle.mode == OracleMode::minibatch) {
        o["B"] = cfg.oracle.batch;
        o["with_replacement"] = cfg.oracle.with_replacement;
    }
    j["oracle"] = o;

    nlohmann::json ms = nlohmann::json::array();
    for (const auto& m : cfg.methods) {
        nlohmann::json e;
        e["method"] = to_string(m.kind);
        if (m.kind == MethodKind::near_dgd) {
            nlohmann::json s;
            switch (m.schedule.kind) {
                case ConsensusSchedule::Kind::constant:
                    s["kind"] = "constant";
                    s["t"] = m.schedule.t;
                    break;
                case ConsensusSchedule::Kind::increasing:
                    s["kind"] = "increasing";
                    break;
                case ConsensusSchedule::Kind::doubling:
                    s["kind"] = "doubling";
                    s["a"] = m.schedule.a;
                    s["b"] = m.schedule.b;
                    break;
            }
            e["schedule"] = s;
        }
        if (!m.label.empty()) e["label"] = m.label;
        ms.push_back(e);
    }
    j["methods"] = ms;

    j["alpha"] = cfg.alpha;
    j["iterations"] = cfg.iterations;
    j["seeds"] = cfg.seeds;
    if (cfg.psi) j["psi"] = *cfg.psi;
    if (cfg.y0) {
        if (cfg.y0->size() == 1) j["y0"] = cfg.y0->front();
        else j["y0"] = *cfg.y0;
    }
    j["plateau_window"] = cfg.plateau_window;
    j["output_dir"] = cfg.output_dir;
    return j.dump(2) + "\n";
}

// --- execution ------------------------------------------------------------------

struct SeedStats {
    std::uint64_t seed = 0;
    bool diverged = false;
    long long diverged_at = -1;
    double plateau = 0.0;
    double final_normalized_deviation = 0.0;
    long long comm_rounds_total = 0;
    long long grad_evals_total = 0;
    long long samples_total = 0;
};

struct MethodSummary {
    std::string label;
    std::vector<SeedStats> per_seed;
    double plateau_mean = 0.0;             // over non-diverged seeds
    double final_deviation_mean = 0.0;
    int diverged_runs = 0;
};

struct SuiteResult {
    int n = 0;
    double beta = 0.0;
    double sigma_sq_bound = 0.0;
    double alpha_max = 0.0;
    bool alpha_admissible = true;
    std::optional<TheoreticalConstants> constants;
    std::string constants_error;
    std::vector<MethodSummary> methods;
};

struct ExperimentResult {
    std::vector<SuiteResult> suites;
    int total_runs = 0;
    int diverged_runs = 0;
};

// Cross-seed aggregation for one method. Records must agree in length.
inline MethodSummary summarize(const std::string& label,
                               const std::vector<SeedStats>& stats,
                               const std::vector<const RunRecord*>& records,
                               int plateau_window) {
    if (stats.empty()) throw Error("summarize: no records");
    MethodSummary sum;
    sum.label = label;
    sum.per_seed = stats;
    std::size_t len = 0;
    for (const auto* rec : records) {
        if (!rec) continue;
        if (len == 0) len = rec->rows.size();
        else if (rec->rows.size() != len)
            throw Error("summarize: mismatched record lengths across seeds");
    }
    (void)plateau_window;
    int live = 0;
    for (const auto& s : stats) {
        if (s.diverged) {
            ++sum.diverged_runs;
            continue;
        }
        sum.plateau_mean += s.plateau;
        sum.final_deviation_mean += s.final_normalized_deviation;
        ++live;
    }
    if (live > 0) {
        sum.plateau_mean /= live;
        sum.final_deviation_mean /= live;
    }
    return sum;
}

namespace detail {

inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    namespace fs = std::filesystem;
    std::error_code ec;
    if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out << content;
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("rename failed for " + path.string() + ": " + ec.message());
}

inline StackedState initial_state(const ExperimentConfig& cfg, const ObjectiveSuite& suite) {
    StackedState y0(suite.n, suite.p);
    if (!cfg.y0) return y0;
    Eigen::VectorXd v(suite.p);
    if (cfg.y0->size() == 1) {
        v.setConstant((*cfg.y0)[0]);
    } else {
        if (static_cast<int>(cfg.y0->size()) != suite.p)
            throw ConfigError("\"y0\" length does not match the problem dimension");
        for (int d = 0; d < suite.p; ++d) v(d) = (*cfg.y0)[static_cast<std::size_t>(d)];
    }
    for (int i = 0; i < suite.n; ++i) y0.cols.col(i) = v;
    return y0;
}

inline ObjectiveSuite build_suite(const ExperimentConfig& cfg, const Dataset* ds, int n) {
    switch (cfg.dataset.type) {
        case DatasetConfig::Type::quadratic:
            return make_quadratic_suite(n, cfg.dataset.p, cfg.dataset.lambda_min,
                                        cfg.dataset.lambda_max, cfg.dataset.seed,
                                        cfg.dataset.replicate);
        case DatasetConfig::Type::synthetic:
        case DatasetConfig::Type::libsvm:
            return make_logistic_suite(*ds, n, cfg.dataset.seed);
    }
    throw Error("build_suite: unknown dataset type");
}

inline Dataset load_dataset(const ExperimentConfig& cfg) {
    if (cfg.dataset.type == DatasetConfig::Type::synthetic)
        return make_synthetic_classification(cfg.dataset.M, cfg.dataset.p, cfg.dataset.seed);
    std::ifstream in(cfg.dataset.path);
    if (!in) throw IoError("cannot open dataset file " + cfg.dataset.path);
    return read_libsvm(in);
}

inline int effective_plateau_window(int configured, std::size_t rows) {
    const auto fifth = static_cast<int>(rows / 5);
    const int window = std::min(configured, std::max(1, fifth));
    return std::min<int>(window, static_cast<int>(rows));
}

}  // namespace detail

// Runs every (method, seed) pair, writing one RunRecord CSV each, one
// constants JSON per suite and a summary JSON. Outputs are byte-identical
// across reruns of the same config. Divergent runs are recorded in the
// summary without aborting their siblings.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    ExperimentResult result;
    const bool sweep = cfg.graph.n_values.size() > 1;

    std::optional<Dataset> dataset;
    if (cfg.dataset.type != DatasetConfig::Type::quadratic) dataset.emplace(detail::load_dataset(cfg));

    nlohmann::json summary;
    summary["suites"] = nlohmann::json::array();

    for (int n : cfg.graph.n_values) {
        const std::string suffix = sweep ? "_n" + std::to_string(n) : "";
        const Topology topo = generate_graph(cfg.graph.kind, n, cfg.graph.seed, cfg.graph.p_edge);
        const ConsensusMatrix cm = metropolis_weights(topo);
        const ObjectiveSuite suite =
            detail::build_suite(cfg, dataset ? &*dataset : nullptr, n);
        const double sigma_sq = certify_sigma_sq(cfg.oracle, suite);
        const StackedState y0 = detail::initial_state(cfg, suite);

        SuiteResult sres;
        sres.n = n;
        sres.beta = cm.beta;
        sres.sigma_sq_bound = sigma_sq;
        sres.alpha_max = std::numeric_limits<double>::infinity();
        for (int i = 0; i < suite.n; ++i)
            sres.alpha_max = std::min(
                sres.alpha_max, 2.0 / (suite.mu_list[static_cast<std::size_t>(i)] +
                                       suite.lip_list[static_cast<std::size_t>(i)]));
        sres.alpha_admissible = cfg.alpha <= sres.alpha_max;

        nlohmann::json constants_json;
        try {
            sres.constants = compute_constants(suite, cm, sigma_sq, cfg.alpha, cfg.psi, y0);
            constants_json = constants_to_json(*sres.constants);
            constants_json["sgd_neighborhood"] =
                sgd_neighborhood(*sres.constants, cfg.alpha, sigma_sq);
            constants_json["limit_neighborhood"] = limit_neighborhood(*sres.constants);
        } catch (const Error& e) {
            sres.constants_error = e.what();
            constants_json["error"] = sres.constants_error;
            constants_json["alpha_max"] = sres.alpha_max;
            constants_json["alpha_admissible"] = sres.alpha_admissible;
            constants_json["beta"] = cm.beta;
            constants_json["sigma_sq"] = sigma_sq;
        }
        detail::write_file_atomic(fs::path(cfg.output_dir) / ("constants" + suffix + ".json"),
                                  constants_json.dump(2) + "\n");

        nlohmann::json suite_json;
        suite_json["n"] = n;
        suite_json["beta"] = cm.beta;
        suite_json["sigma_sq_bound"] = sigma_sq;
        suite_json["alpha_max"] = sres.alpha_max;
        suite_json["alpha_admissible"] = sres.alpha_admissible;
        suite_json["constants"] = constants_json;
        suite_json["methods"] = nlohmann::json::array();

        for (const auto& method : cfg.methods) {
            const std::string label = method.effective_label();
            std::vector<SeedStats> stats;
            std::vector<RunRecord> records;
            for (std::uint64_t seed : cfg.seeds) {
                ++result.total_runs;
                SeedStats st;
                st.seed = seed;
                StochasticOracle oracle(cfg.oracle, seed, suite.n, sigma_sq);
                RunOptions opts;
                opts.y0 = y0;
                try {
                    RunOutcome out =
                        run(method, cfg.alpha, cm, oracle, suite, cfg.iterations, opts);
                    st.plateau = plateau_estimate_rows(
                        out.record,
                        static_cast<std::size_t>(detail::effective_plateau_window(
                            cfg.plateau_window, out.record.rows.size())));
                    st.final_normalized_deviation = out.final_normalized_deviation;
                    st.comm_rounds_total = out.comm_rounds_total;
                    st.grad_evals_total = out.grad_evals_total;
                    st.samples_total = out.samples_total;
                    std::ostringstream csv;
                    write_csv(csv, out.record);
                    detail::write_file_atomic(
                        fs::path(cfg.output_dir) /
                            (label + suffix + "_seed" + std::to_string(seed) + ".csv"),
                        csv.str());
                    records.push_back(std::move(out.record));
                } catch (const DivergenceError& e) {
                    st.diverged = true;
                    st.diverged_at = e.iteration;
                    ++result.diverged_runs;
                    records.emplace_back();  // placeholder keeps seed alignment
                }
                stats.push_back(st);
            }
            std::vector<const RunRecord*> record_ptrs;
            for (std::size_t i = 0; i < records.size(); ++i)
                record_ptrs.push_back(stats[i].diverged ? nullptr : &records[i]);
            MethodSummary msum = summarize(label, stats, record_ptrs, cfg.plateau_window);
            sres.methods.push_back(msum);

            nlohmann::json mj;
            mj["label"] = label;
            mj["per_seed"] = nlohmann::json::array();
            for (const auto& st : msum.per_seed) {
                nlohmann::json sj;
                sj["seed"] = st.seed;
                sj["diverged"] = st.diverged;
                if (st.diverged) {
                    sj["diverged_at"] = st.diverged_at;
                } else {
                    sj["plateau"] = st.plateau;
                    sj["final_normalized_deviation"] = st.final_normalized_deviation;
                    sj["comm_rounds_total"] = st.comm_rounds_total;
                    sj["grad_evals_total"] = st.grad_evals_total;
                    sj["samples_total"] = st.samples_total;
                }
                mj["per_seed"].push_back(sj);
            }
            mj["plateau_mean"] = msum.plateau_mean;
            mj["final_normalized_deviation_mean"] = msum.final_deviation_mean;
            mj["diverged_runs"] = msum.diverged_runs;
            suite_json["methods"].push_back(mj);
        }
        summary["suites"].push_back(suite_json);
        result.suites.push_back(std::move(sres));
    }

    // size sweeps additionally report plateau ratios between successive n
    if (sweep) {
        summary["plateau_ratios"] = nlohmann::json::array();
        for (std::size_t s = 1; s < result.suites.size(); ++s) {
            const auto& lo = result.suites[s - 1];
            const auto& hi = result.suites[s];
            for (std::size_t m = 0; m < lo.methods.size(); ++m) {
                if (lo.methods[m].plateau_mean <= 0.0) continue;
                nlohmann::json rj;
                rj["method"] = lo.methods[m].label;
                rj["n_from"] = lo.n;
                rj["n_to"] = hi.n;
                rj["ratio"] = hi.methods[m].plateau_mean / lo.methods[m].plateau_mean;
                summary["plateau_ratios"].push_back(rj);
            }
        }
    }
    detail::write_file_atomic(std::filesystem::path(cfg.output_dir) / "summary.json",
                              summary.dump(2) + "\n");
    return result;
}

}  // namespace neardgd
