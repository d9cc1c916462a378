#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <string>
#include <utility>

#include "neardgd/analysis.hpp"
#include "neardgd/error.hpp"
#include "neardgd/objectives.hpp"
#include "neardgd/oracle.hpp"
#include "neardgd/stacked_state.hpp"
#include "neardgd/topology.hpp"

namespace neardgd {

enum class MethodKind { near_dgd, dgd, extra, dsgt, centralized_sgd, centralized_minibatch };

inline const char* to_string(MethodKind k) {
    switch (k) {
        case MethodKind::near_dgd: return "near_dgd";
        case MethodKind::dgd: return "dgd";
        case MethodKind::extra: return "extra";
        case MethodKind::dsgt: return "dsgt";
        case MethodKind::centralized_sgd: return "centralized_sgd";
        case MethodKind::centralized_minibatch: return "centralized_minibatch";
    }
    return "?";
}

// Consensus rounds per iteration t(k). The increasing schedule uses
// t(k) = k + 1 so that every iteration mixes at least once.
struct ConsensusSchedule {
    enum class Kind { constant, increasing, doubling };
    Kind kind = Kind::constant;
    long long t = 1;         // constant rounds
    long long a = 1;         // doubling: initial rounds
    long long b = 1;         // doubling: period

    static ConsensusSchedule constant(long long rounds) {
        ConsensusSchedule s;
        s.kind = Kind::constant;
        s.t = rounds;
        s.validate();
        return s;
    }
    static ConsensusSchedule increasing() {
        ConsensusSchedule s;
        s.kind = Kind::increasing;
        return s;
    }
    static ConsensusSchedule doubling(long long initial, long long period) {
        ConsensusSchedule s;
        s.kind = Kind::doubling;
        s.a = initial;
        s.b = period;
        s.validate();
        return s;
    }

    void validate() const {
        if (kind == Kind::constant && t < 1)
            throw Error("schedule: constant rounds must be >= 1");
        if (kind == Kind::doubling && (a < 1 || b < 1))
            throw Error("schedule: doubling needs a >= 1 and b >= 1");
    }

    long long rounds_at(long long k) const {
        switch (kind) {
            case Kind::constant: return t;
            case Kind::increasing: return k + 1;
            case Kind::doubling: {
                const long long exponent = k / b;
                if (exponent >= 62 || a > (1ll << 62) >> exponent)
                    throw Error("schedule: doubling round count overflows at iteration " +
                                std::to_string(k));
                return a << exponent;
            }
        }
        return 1;
    }

    std::string describe() const {
        switch (kind) {
            case Kind::constant: return "t" + std::to_string(t);
            case Kind::increasing: return "plus";
            case Kind::doubling:
                return "doubling_" + std::to_string(a) + "x" + std::to_string(b);
        }
        return "?";
    }
};

struct MethodSpec {
    MethodKind kind = MethodKind::near_dgd;
    ConsensusSchedule schedule{};  // near_dgd only
    std::string label;             // output name; defaulted when empty

    std::string effective_label() const {
        if (!label.empty()) return label;
        if (kind == MethodKind::near_dgd)
            return std::string("near_dgd_") + schedule.describe();
        return to_string(kind);
    }
};

// One-step state machine over the stacked iterates. x holds the current
// iterate stack; near_dgd additionally keeps the post-gradient stack y.
struct MethodState {
    MethodSpec spec;
    double alpha = 0.0;
    StackedState y;
    StackedState x;
    StackedState extra_prev_x;
    StackedState extra_prev_wx;
    StackedState dsgt_tracker;
    Eigen::MatrixXd prev_grad;  // p x n, extra and dsgt
    long long k = 0;
    long long comm_rounds_total = 0;
    long long grad_evals_total = 0;
    long long samples_total = 0;
    bool aux_ready = false;

    bool centralized() const {
        return spec.kind == MethodKind::centralized_sgd ||
               spec.kind == MethodKind::centralized_minibatch;
    }
};

// Per-iteration byproducts used for metric rows and invariant checks.
// For near_dgd the y_* fields describe y_k before the gradient substep.
struct StepResult {
    long long t_k = 0;
    long long comm_at_snapshot = 0;   // rounds spent to produce the snapshot iterate
    long long evals_at_snapshot = 0;  // oracle calls consumed before this iteration's draws
    double y_norm_sq = 0.0;           // ||y_k||^2 stacked
    double y_cons_dev = 0.0;
    Eigen::VectorXd y_mean;           // ybar_k
    Eigen::VectorXd g_mean;           // mean of this iteration's stochastic draws
};

inline MethodState init_method(const MethodSpec& spec, double alpha, const StackedState& y0,
                               const ObjectiveSuite& suite) {
    if (!(alpha >= 0.0) || !std::isfinite(alpha))
        throw Error("init_method: alpha must be finite and nonnegative");
    if (y0.agents() != suite.n || y0.dim() != suite.p)
        throw Error("init_method: initial state does not match the suite");
    if (!y0.all_finite()) throw Error("init_method: nonfinite initial state");
    spec.schedule.validate();
    MethodState ms;
    ms.spec = spec;
    ms.alpha = alpha;
    if (ms.centralized()) {
        ms.x = StackedState(1, suite.p);
        ms.x.cols.col(0) = average_blocks(y0);
        ms.y = ms.x;
    } else {
        ms.y = y0;
        ms.x = y0;
    }
    return ms;
}

namespace detail {

inline constexpr double kDivergenceCap = 1e12;

inline void check_finite(const MethodState& ms) {
    const bool ok = ms.x.all_finite() && ms.y.all_finite() &&
                    ms.x.cols.cwiseAbs().maxCoeff() <= kDivergenceCap &&
                    ms.y.cols.cwiseAbs().maxCoeff() <= kDivergenceCap;
    if (!ok) throw DivergenceError(ms.spec.effective_label(), ms.k);
}

inline long long samples_per_eval(const StochasticOracle& oracle) {
    return oracle.config().mode == OracleMode::minibatch ? oracle.config().batch : 1;
}

// Mean of per-agent draws g_i(x_i), writing x_i - alpha g_i into out.
inline Eigen::VectorXd gradient_substep(MethodState& ms, StochasticOracle& oracle,
                                        const ObjectiveSuite& suite, const StackedState& at,
                                        Eigen::MatrixXd* draws = nullptr) {
    Eigen::VectorXd g_mean = Eigen::VectorXd::Zero(suite.p);
    for (int i = 0; i < suite.n; ++i) {
        const Eigen::VectorXd g = oracle.draw(suite, i, at.block(i));
        if (draws) draws->col(i) = g;
        g_mean += g;
    }
    ms.grad_evals_total += suite.n;
    ms.samples_total += suite.n * samples_per_eval(oracle);
    return g_mean / static_cast<double>(suite.n);
}

}  // namespace detail

// x_k = Z^{t(k)} y_k, then y_{k+1} = x_k - alpha g(x_k, xi_k); consensus
// strictly precedes the gradient step.
inline void near_dgd_step(MethodState& ms, const ConsensusMatrix& cm, StochasticOracle& oracle,
                          const ObjectiveSuite& suite, StepResult* out = nullptr) {
    if (ms.spec.kind != MethodKind::near_dgd) throw Error("near_dgd_step: wrong method kind");
    const long long t = ms.spec.schedule.rounds_at(ms.k);
    StepResult sr;
    sr.t_k = t;
    sr.evals_at_snapshot = ms.grad_evals_total;
    sr.y_norm_sq = ms.y.squared_norm();
    sr.y_cons_dev = consensus_deviation(ms.y);
    sr.y_mean = average_blocks(ms.y);

    ms.x = apply_consensus(cm, ms.y, t);
    ms.comm_rounds_total += t;
    sr.comm_at_snapshot = ms.comm_rounds_total;

    Eigen::MatrixXd draws(suite.p, suite.n);
    sr.g_mean = detail::gradient_substep(ms, oracle, suite, ms.x, &draws);
    for (int i = 0; i < suite.n; ++i)
        ms.y.cols.col(i) = ms.x.cols.col(i) - ms.alpha * draws.col(i);

    ++ms.k;
    detail::check_finite(ms);
    if (out) *out = std::move(sr);
}

// Classical single-matrix form: x_{k+1,i} = sum_j w_ij x_{k,j} - alpha g_i(x_{k,i}),
// with the gradient evaluated at the pre-mixing iterate.
inline void dgd_step(MethodState& ms, const ConsensusMatrix& cm, StochasticOracle& oracle,
                     const ObjectiveSuite& suite, StepResult* out = nullptr) {
    if (ms.spec.kind != MethodKind::dgd) throw Error("dgd_step: wrong method kind");
    StepResult sr;
    sr.t_k = 1;
    sr.comm_at_snapshot = ms.comm_rounds_total;
    sr.evals_at_snapshot = ms.grad_evals_total;
    sr.y_norm_sq = ms.x.squared_norm();
    sr.y_cons_dev = consensus_deviation(ms.x);
    sr.y_mean = average_blocks(ms.x);

    Eigen::MatrixXd draws(suite.p, suite.n);
    sr.g_mean = detail::gradient_substep(ms, oracle, suite, ms.x, &draws);
    const StackedState mixed = apply_consensus(cm, ms.x, 1);
    ms.comm_rounds_total += 1;
    for (int i = 0; i < suite.n; ++i)
        ms.x.cols.col(i) = mixed.cols.col(i) - ms.alpha * draws.col(i);
    ms.y = ms.x;

    ++ms.k;
    detail::check_finite(ms);
    if (out) *out = std::move(sr);
}

// EXTRA with mixing matrix W and Wbar = (I + W)/2:
//   x_1     = W x_0 - alpha g_0,
//   x_{k+1} = x_k + W x_k - (x_{k-1} + W x_{k-1})/2 - alpha (g_k - g_{k-1}).
// The previous round's exchanged W x_{k-1} is reused, so each iteration costs
// a single communication round.
inline void extra_step(MethodState& ms, const ConsensusMatrix& cm, StochasticOracle& oracle,
                       const ObjectiveSuite& suite, StepResult* out = nullptr) {
    if (ms.spec.kind != MethodKind::extra) throw Error("extra_step: wrong method kind");
    StepResult sr;
    sr.t_k = 1;
    sr.comm_at_snapshot = ms.comm_rounds_total;
    sr.evals_at_snapshot = ms.grad_evals_total;
    sr.y_norm_sq = ms.x.squared_norm();
    sr.y_cons_dev = consensus_deviation(ms.x);
    sr.y_mean = average_blocks(ms.x);

    Eigen::MatrixXd draws(suite.p, suite.n);
    sr.g_mean = detail::gradient_substep(ms, oracle, suite, ms.x, &draws);
    const StackedState wx = apply_consensus(cm, ms.x, 1);
    ms.comm_rounds_total += 1;
    if (!ms.aux_ready) {
        ms.extra_prev_x = ms.x;
        ms.extra_prev_wx = wx;
        ms.prev_grad = draws;
        for (int i = 0; i < suite.n; ++i)
            ms.x.cols.col(i) = wx.cols.col(i) - ms.alpha * draws.col(i);
        ms.aux_ready = true;
    } else {
        StackedState next(suite.n, suite.p);
        for (int i = 0; i < suite.n; ++i)
            next.cols.col(i) = ms.x.cols.col(i) + wx.cols.col(i) -
                               0.5 * (ms.extra_prev_x.cols.col(i) + ms.extra_prev_wx.cols.col(i)) -
                               ms.alpha * (draws.col(i) - ms.prev_grad.col(i));
        ms.extra_prev_x = ms.x;
        ms.extra_prev_wx = wx;
        ms.prev_grad = draws;
        ms.x = std::move(next);
    }
    ms.y = ms.x;

    ++ms.k;
    detail::check_finite(ms);
    if (out) *out = std::move(sr);
}

// Gradient tracking:
//   x_{k+1} = W (x_k - alpha s_k),  s_{k+1} = W s_k + g_{k+1} - g_k,  s_0 = g_0.
// Two mixing applications per iteration.
inline void dsgt_step(MethodState& ms, const ConsensusMatrix& cm, StochasticOracle& oracle,
                      const ObjectiveSuite& suite, StepResult* out = nullptr) {
    if (ms.spec.kind != MethodKind::dsgt) throw Error("dsgt_step: wrong method kind");
    StepResult sr;
    sr.t_k = 2;
    sr.comm_at_snapshot = ms.comm_rounds_total;
    sr.evals_at_snapshot = ms.grad_evals_total;
    sr.y_norm_sq = ms.x.squared_norm();
    sr.y_cons_dev = consensus_deviation(ms.x);
    sr.y_mean = average_blocks(ms.x);

    if (!ms.aux_ready) {
        Eigen::MatrixXd g0(suite.p, suite.n);
        detail::gradient_substep(ms, oracle, suite, ms.x, &g0);
        ms.dsgt_tracker = StackedState(g0);
        ms.prev_grad = std::move(g0);
        ms.aux_ready = true;
    }
    StackedState descend(suite.n, suite.p);
    for (int i = 0; i < suite.n; ++i)
        descend.cols.col(i) = ms.x.cols.col(i) - ms.alpha * ms.dsgt_tracker.cols.col(i);
    ms.x = apply_consensus(cm, descend, 1);
    ms.comm_rounds_total += 1;

    Eigen::MatrixXd draws(suite.p, suite.n);
    sr.g_mean = detail::gradient_substep(ms, oracle, suite, ms.x, &draws);
    const StackedState mixed_tracker = apply_consensus(cm, ms.dsgt_tracker, 1);
    ms.comm_rounds_total += 1;
    for (int i = 0; i < suite.n; ++i)
        ms.dsgt_tracker.cols.col(i) =
            mixed_tracker.cols.col(i) + draws.col(i) - ms.prev_grad.col(i);
    ms.prev_grad = draws;
    ms.y = ms.x;

    ++ms.k;
    detail::check_finite(ms);
    if (out) *out = std::move(sr);
}

// Single-block reference methods over the aggregate objective: one averaged
// draw per agent-equivalent (centralized_minibatch, the batch-n analogue) or
// a single stochastic draw of grad f_bar (centralized_sgd).
inline void centralized_step(MethodState& ms, StochasticOracle& oracle,
                             const ObjectiveSuite& suite, StepResult* out = nullptr) {
    if (!ms.centralized()) throw Error("centralized_step: wrong method kind");
    StepResult sr;
    sr.t_k = 0;
    sr.comm_at_snapshot = ms.comm_rounds_total;
    sr.evals_at_snapshot = ms.grad_evals_total;
    sr.y_norm_sq = ms.x.squared_norm();
    sr.y_cons_dev = 0.0;
    sr.y_mean = ms.x.cols.col(0);

    Eigen::VectorXd direction;
    if (ms.spec.kind == MethodKind::centralized_minibatch) {
        direction = Eigen::VectorXd::Zero(suite.p);
        for (int i = 0; i < suite.n; ++i)
            direction += oracle.draw(suite, i, ms.x.cols.col(0));
        direction /= static_cast<double>(suite.n);
        ms.grad_evals_total += suite.n;
        ms.samples_total += suite.n * detail::samples_per_eval(oracle);
    } else {
        direction = oracle.draw_average(suite, ms.x.cols.col(0));
        ms.grad_evals_total += 1;
        ms.samples_total += detail::samples_per_eval(oracle);
    }
    sr.g_mean = direction;
    ms.x.cols.col(0) -= ms.alpha * direction;
    ms.y = ms.x;

    ++ms.k;
    detail::check_finite(ms);
    if (out) *out = std::move(sr);
}

inline void method_step(MethodState& ms, const ConsensusMatrix& cm, StochasticOracle& oracle,
                        const ObjectiveSuite& suite, StepResult* out = nullptr) {
    switch (ms.spec.kind) {
        case MethodKind::near_dgd: near_dgd_step(ms, cm, oracle, suite, out); return;
        case MethodKind::dgd: dgd_step(ms, cm, oracle, suite, out); return;
        case MethodKind::extra: extra_step(ms, cm, oracle, suite, out); return;
        case MethodKind::dsgt: dsgt_step(ms, cm, oracle, suite, out); return;
        case MethodKind::centralized_sgd:
        case MethodKind::centralized_minibatch: centralized_step(ms, oracle, suite, out); return;
    }
    throw Error("method_step: unknown method kind");
}

// Invoked after every step; ms.x holds the iteration-k iterate x_k and ms.y
// the post-gradient stack, sr the within-iteration byproducts.
using StepObserver = std::function<void(const MethodState& ms, const StepResult& sr)>;

struct RunOptions {
    std::optional<StackedState> y0;  // defaults to zeros
    StepObserver observer;
    bool grad_diagnostics = false;
};

struct RunOutcome {
    RunRecord record;
    Eigen::VectorXd final_x_mean;
    double final_normalized_deviation = 0.0;  // sqrt((1/n) sum ||x_i - xbar||^2) / ||xbar||
    long long comm_rounds_total = 0;
    long long grad_evals_total = 0;
    long long samples_total = 0;
};

// Executes `iterations` steps, emitting one metric row per iteration. Row k
// reports the iteration-k iterate: for near_dgd the post-consensus stack x_k
// paired with y_k's deviation, for the other methods the iterate entering
// step k. Counter columns give the cost expended to produce that iterate.
// A zero-iteration run emits the single initial-state row.
inline RunOutcome run(const MethodSpec& spec, double alpha, const ConsensusMatrix& cm,
                      StochasticOracle& oracle, const ObjectiveSuite& suite, long long iterations,
                      const RunOptions& opts = {}) {
    if (iterations < 0) throw Error("run: negative iteration count");
    const StackedState y0 = opts.y0.value_or(StackedState(suite.n, suite.p));
    MethodState ms = init_method(spec, alpha, y0, suite);
    if (!ms.centralized() && cm.n != suite.n)
        throw Error("run: consensus matrix does not match the suite");

    RunOutcome outcome;
    if (iterations == 0) {
        outcome.record.rows.push_back(compute_metrics_row(ms.x, ms.y, suite, 0, 0, 0, 0,
                                                          opts.grad_diagnostics));
    }
    const bool near = spec.kind == MethodKind::near_dgd;
    for (long long k = 0; k < iterations; ++k) {
        StepResult sr;
        if (near) {
            near_dgd_step(ms, cm, oracle, suite, &sr);
            auto row = compute_metrics_row(ms.x, ms.x, suite, k, sr.t_k, sr.comm_at_snapshot,
                                           sr.evals_at_snapshot, opts.grad_diagnostics);
            row.y_cons_dev = sr.y_cons_dev;
            outcome.record.rows.push_back(row);
        } else {
            // snapshot of the entering iterate, then advance
            const StackedState before = ms.x;
            method_step(ms, cm, oracle, suite, &sr);
            auto row = compute_metrics_row(before, before, suite, k, sr.t_k, sr.comm_at_snapshot,
                                           sr.evals_at_snapshot, opts.grad_diagnostics);
            outcome.record.rows.push_back(row);
        }
        if (opts.observer) opts.observer(ms, sr);
    }
    outcome.final_x_mean = average_blocks(ms.x);
    const double xbar_norm = outcome.final_x_mean.norm();
    outcome.final_normalized_deviation =
        xbar_norm > 0.0 ? std::sqrt(consensus_deviation(ms.x)) / xbar_norm
                        : std::sqrt(consensus_deviation(ms.x));
    outcome.comm_rounds_total = ms.comm_rounds_total;
    outcome.grad_evals_total = ms.grad_evals_total;
    outcome.samples_total = ms.samples_total;
    return outcome;
}

}  // namespace neardgd
