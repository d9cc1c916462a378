#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <numeric>
#include <vector>

#include "neardgd/error.hpp"
#include "neardgd/objectives.hpp"
#include "neardgd/rng.hpp"

namespace neardgd {

enum class OracleMode { exact, additive_gaussian, minibatch };

inline const char* to_string(OracleMode m) {
    switch (m) {
        case OracleMode::exact: return "exact";
        case OracleMode::additive_gaussian: return "additive_gaussian";
        case OracleMode::minibatch: return "minibatch";
    }
    return "?";
}

struct OracleConfig {
    OracleMode mode = OracleMode::exact;
    int batch = 1;                 // minibatch size B
    bool with_replacement = true;  // minibatch sampling scheme
    double sigma = 0.0;            // additive noise scale, total E||eta||^2 = sigma^2
};

inline void validate_oracle_config(const OracleConfig& cfg, const ObjectiveSuite& suite) {
    if (cfg.mode == OracleMode::minibatch) {
        if (!suite.logistic) throw Error("oracle: minibatch mode requires a logistic suite");
        if (cfg.batch < 1) throw Error("oracle: batch must be >= 1");
        if (!cfg.with_replacement) {
            for (const auto& l : suite.locals) {
                const auto& lo = std::get<LogisticObjective>(l);
                if (cfg.batch > static_cast<int>(lo.rows.rows()))
                    throw Error("oracle: batch exceeds a local sample set (without replacement)");
            }
        }
    }
    if (cfg.mode == OracleMode::additive_gaussian && cfg.sigma < 0.0)
        throw Error("oracle: sigma must be nonnegative");
}

namespace detail {

inline constexpr std::uint64_t kOracleTag = rng::fnv1a("oracle.draw");

// Exact E||g_i - grad f_i||^2 of the minibatch estimator at x for agent i:
// the population variance of per-sample loss gradients scaled by the batch
// size, with the finite-population correction when drawing without
// replacement. The regularizer is deterministic and cancels.
inline double minibatch_variance_at(const OracleConfig& cfg, const LogisticObjective& l,
                                    const Eigen::VectorXd& x) {
    const int m = static_cast<int>(l.rows.rows());
    if (m == 1) return 0.0;
    Eigen::MatrixXd grads(m, static_cast<int>(l.rows.cols()));
    for (int s = 0; s < m; ++s) grads.row(s) = sample_loss_gradient(l, s, x).transpose();
    const Eigen::RowVectorXd mean = grads.colwise().mean();
    double pop_var = 0.0;
    for (int s = 0; s < m; ++s) pop_var += (grads.row(s) - mean).squaredNorm();
    pop_var /= static_cast<double>(m);
    double var = pop_var / static_cast<double>(cfg.batch);
    if (!cfg.with_replacement)
        var *= static_cast<double>(m - cfg.batch) / static_cast<double>(m - 1);
    return var;
}

}  // namespace detail

// Certified per-agent variance bound sigma^2. Additive noise has it exactly;
// minibatch takes the exact per-point variance at x = 0 and x = x* over all
// agents, doubled for headroom at other iterates.
inline double certify_sigma_sq(const OracleConfig& cfg, const ObjectiveSuite& suite) {
    validate_oracle_config(cfg, suite);
    switch (cfg.mode) {
        case OracleMode::exact: return 0.0;
        case OracleMode::additive_gaussian: return cfg.sigma * cfg.sigma;
        case OracleMode::minibatch: {
            double worst = 0.0;
            const Eigen::VectorXd zero = Eigen::VectorXd::Zero(suite.p);
            for (const auto& local : suite.locals) {
                const auto& l = std::get<LogisticObjective>(local);
                worst = std::max(worst, detail::minibatch_variance_at(cfg, l, zero));
                worst = std::max(worst, detail::minibatch_variance_at(cfg, l, suite.x_star));
            }
            return 2.0 * worst;
        }
    }
    return 0.0;
}

// Stochastic gradient source g_i(x, xi). Each agent draws from its own
// substream keyed on (run seed, agent, call index), so the samples at
// iteration k are the same for every method sharing the seed, regardless
// of call order between agents or methods.
class StochasticOracle {
public:
    StochasticOracle(OracleConfig cfg, std::uint64_t run_seed, int n_agents,
                     double sigma_sq_bound)
        : cfg_(cfg),
          seed_(run_seed),
          sigma_sq_bound_(sigma_sq_bound),
          calls_(static_cast<std::size_t>(n_agents), 0) {}

    StochasticOracle(const OracleConfig& cfg, std::uint64_t run_seed,
                     const ObjectiveSuite& suite)
        : StochasticOracle(cfg, run_seed, suite.n, certify_sigma_sq(cfg, suite)) {}

    const OracleConfig& config() const { return cfg_; }
    double sigma_sq_bound() const { return sigma_sq_bound_; }
    int agents() const { return static_cast<int>(calls_.size()); }

    // Stochastic evaluations consumed so far (one per draw, batch counted as 1).
    std::uint64_t evals(int agent) const { return calls_[static_cast<std::size_t>(agent)]; }
    std::uint64_t total_evals() const {
        return std::accumulate(calls_.begin(), calls_.end(), std::uint64_t{0});
    }

    void enable_draw_log() {
        log_enabled_ = true;
        draw_log_.assign(calls_.size(), {});
    }
    // Local sample indices drawn per call, per agent (minibatch mode only).
    const std::vector<std::vector<std::vector<int>>>& draw_log() const { return draw_log_; }

    // One stochastic estimate of grad f_bar(x) from agent 0's substream, for
    // centralized single-draw references. Minibatch sampling has no global
    // pool, so that mode is restricted to single-agent suites (where this
    // coincides bit for bit with draw(suite, 0, x)).
    Eigen::VectorXd draw_average(const ObjectiveSuite& suite, const Eigen::VectorXd& x) {
        if (suite.n == 1) return draw(suite, 0, x);
        if (cfg_.mode == OracleMode::minibatch)
            throw Error("oracle: centralized single-draw minibatch requires a single-agent suite");
        const std::uint64_t k = calls_[0]++;
        Eigen::VectorXd out = average_gradient(suite, x);
        if (cfg_.mode == OracleMode::additive_gaussian) {
            auto g = stream(0, k);
            const double per_coord = cfg_.sigma / std::sqrt(static_cast<double>(suite.p));
            for (int d = 0; d < suite.p; ++d) out(d) += per_coord * rng::normal(g);
        }
        return out;
    }

    Eigen::VectorXd draw(const ObjectiveSuite& suite, int agent, const Eigen::VectorXd& x) {
        if (agent < 0 || agent >= agents()) throw Error("oracle: agent index out of range");
        const std::uint64_t k = calls_[static_cast<std::size_t>(agent)]++;
        switch (cfg_.mode) {
            case OracleMode::exact:
                return gradient(suite, agent, x);
            case OracleMode::additive_gaussian: {
                auto g = stream(agent, k);
                Eigen::VectorXd out = gradient(suite, agent, x);
                const double per_coord = cfg_.sigma / std::sqrt(static_cast<double>(suite.p));
                for (int d = 0; d < suite.p; ++d) out(d) += per_coord * rng::normal(g);
                return out;
            }
            case OracleMode::minibatch: {
                if (!suite.logistic)
                    throw Error("oracle: minibatch mode requires a logistic suite");
                const auto& l =
                    std::get<LogisticObjective>(suite.locals[static_cast<std::size_t>(agent)]);
                auto g = stream(agent, k);
                const std::vector<int> picks = sample_indices(g, static_cast<int>(l.rows.rows()));
                if (log_enabled_) draw_log_[static_cast<std::size_t>(agent)].push_back(picks);
                Eigen::VectorXd acc = Eigen::VectorXd::Zero(suite.p);
                for (int s : picks) acc += detail::sample_loss_gradient(l, s, x);
                return acc / static_cast<double>(cfg_.batch) + 2.0 * l.reg * x;
            }
        }
        throw Error("oracle: unknown mode");
    }

private:
    std::mt19937_64 stream(int agent, std::uint64_t call) const {
        return rng::engine(rng::derive(seed_, detail::kOracleTag,
                                       static_cast<std::uint64_t>(agent), call));
    }

    std::vector<int> sample_indices(std::mt19937_64& g, int m) const {
        std::vector<int> picks;
        picks.reserve(static_cast<std::size_t>(cfg_.batch));
        if (cfg_.with_replacement) {
            for (int b = 0; b < cfg_.batch; ++b)
                picks.push_back(static_cast<int>(rng::uniform_index(g, static_cast<std::size_t>(m))));
        } else {
            if (cfg_.batch > m) throw Error("oracle: batch exceeds local samples");
            std::vector<int> pool(static_cast<std::size_t>(m));
            std::iota(pool.begin(), pool.end(), 0);
            for (int b = 0; b < cfg_.batch; ++b) {
                const auto j = b + static_cast<int>(rng::uniform_index(
                                       g, static_cast<std::size_t>(m - b)));
                std::swap(pool[static_cast<std::size_t>(b)], pool[static_cast<std::size_t>(j)]);
                picks.push_back(pool[static_cast<std::size_t>(b)]);
            }
        }
        return picks;
    }

    OracleConfig cfg_;
    std::uint64_t seed_;
    double sigma_sq_bound_;
    std::vector<std::uint64_t> calls_;
    bool log_enabled_ = false;
    std::vector<std::vector<std::vector<int>>> draw_log_;
};

}  // namespace neardgd
