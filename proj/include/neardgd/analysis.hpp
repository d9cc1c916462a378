#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "neardgd/error.hpp"
#include "neardgd/objectives.hpp"
#include "neardgd/oracle.hpp"
#include "neardgd/stacked_state.hpp"
#include "neardgd/topology.hpp"

namespace neardgd {

// Constants of the convergence bounds, computed from problem data:
//   gamma_i = mu_i L_i / (mu_i + L_i),  gamma = min_i gamma_i,
//   gamma_bar from the averaged constants, nu = 2 alpha gamma,
//   Delta = n alpha^2 sigma^2,
//   D^2 = 2||y0 - u*||^2 + (8 + 2 nu^3)/nu^3 ||u*||^2 + 2/nu^2 Delta,
//   c1 = (1 + psi)(1 - 2 alpha gamma_bar),
//   c2^2 = alpha^2 (1 + 1/psi) L^2 D^2,
//   theta = max{beta^2, (c1 + 1)/2},
//   C = max{||xbar_0 - x*||^2, 2 c2^2 / (1 - c1)}.
struct TheoreticalConstants {
    int n = 0;
    double alpha = 0.0;
    double sigma_sq = 0.0;
    double beta = 0.0;
    std::vector<double> gamma_i_list;
    double gamma = 0.0;
    double gamma_bar = 0.0;
    double nu = 0.0;
    double delta = 0.0;
    double d_sq = 0.0;
    double psi = 0.0;
    double c1 = 0.0;
    double c2_sq = 0.0;
    double theta = 0.0;
    double cap_c = 0.0;
    double alpha_max = 0.0;
    bool alpha_admissible = true;
    double x0_err_sq = 0.0;  // ||xbar_0 - x*||^2
};

// psi must lie in (0, 2 alpha gamma_bar / (1 - 2 alpha gamma_bar)); the upper
// limit is unbounded once 2 alpha gamma_bar >= 1 (c1 < 1 for any psi then).
inline double psi_upper_limit(double alpha, double gamma_bar) {
    const double two_ag = 2.0 * alpha * gamma_bar;
    if (two_ag >= 1.0) return std::numeric_limits<double>::infinity();
    return two_ag / (1.0 - two_ag);
}

inline TheoreticalConstants compute_constants(const ObjectiveSuite& suite,
                                              const ConsensusMatrix& cm, double sigma_sq,
                                              double alpha, std::optional<double> psi,
                                              const StackedState& y0) {
    if (!(alpha > 0.0)) throw Error("compute_constants: alpha must be positive");
    if (y0.agents() != suite.n || y0.dim() != suite.p)
        throw Error("compute_constants: y0 dimension mismatch");
    TheoreticalConstants tc;
    tc.n = suite.n;
    tc.alpha = alpha;
    tc.sigma_sq = sigma_sq;
    tc.beta = cm.beta;

    tc.alpha_max = std::numeric_limits<double>::infinity();
    for (int i = 0; i < suite.n; ++i) {
        const double mu = suite.mu_list[static_cast<std::size_t>(i)];
        const double lip = suite.lip_list[static_cast<std::size_t>(i)];
        tc.gamma_i_list.push_back(mu * lip / (mu + lip));
        tc.alpha_max = std::min(tc.alpha_max, 2.0 / (mu + lip));
    }
    tc.gamma = *std::min_element(tc.gamma_i_list.begin(), tc.gamma_i_list.end());
    tc.gamma_bar = suite.mu_bar * suite.lip_bar / (suite.mu_bar + suite.lip_bar);
    if (!(tc.gamma > 0.0) || !(tc.gamma_bar > 0.0))
        throw Error("compute_constants: nonpositive contraction constant");
    tc.alpha_admissible = alpha <= tc.alpha_max;

    tc.nu = 2.0 * alpha * tc.gamma;
    if (tc.nu >= 1.0)
        throw Error("compute_constants: nu = 2*alpha*gamma >= 1, alpha too large for the "
                    "bound machinery");
    tc.delta = suite.n * alpha * alpha * sigma_sq;

    double y0_to_ustar = 0.0, ustar_sq = 0.0;
    for (int i = 0; i < suite.n; ++i) {
        const auto& u = suite.u_star_list[static_cast<std::size_t>(i)];
        y0_to_ustar += (y0.block(i) - u).squaredNorm();
        ustar_sq += u.squaredNorm();
    }
    const double nu3 = tc.nu * tc.nu * tc.nu;
    tc.d_sq = 2.0 * y0_to_ustar + (8.0 + 2.0 * nu3) / nu3 * ustar_sq +
              2.0 / (tc.nu * tc.nu) * tc.delta;

    const double psi_ub = psi_upper_limit(alpha, tc.gamma_bar);
    if (psi) {
        if (!(*psi > 0.0) || !(*psi < psi_ub))
            throw Error("compute_constants: psi outside (0, 2*alpha*gamma_bar/(1-2*alpha*"
                        "gamma_bar))");
        tc.psi = *psi;
    } else {
        tc.psi = std::isinf(psi_ub) ? 0.1 : std::min(0.5 * psi_ub, 0.1);
    }

    const double two_ag = 2.0 * alpha * tc.gamma_bar;
    tc.c1 = (1.0 + tc.psi) * (1.0 - two_ag);
    tc.c2_sq = alpha * alpha * (1.0 + 1.0 / tc.psi) * suite.lip_max * suite.lip_max * tc.d_sq;
    if (!(tc.c1 < 1.0)) throw Error("compute_constants: c1 >= 1 with a valid psi");
    tc.theta = std::max(tc.beta * tc.beta, (tc.c1 + 1.0) / 2.0);

    tc.x0_err_sq = (average_blocks(y0) - suite.x_star).squaredNorm();
    tc.cap_c = std::max(tc.x0_err_sq, 2.0 * tc.c2_sq / (1.0 - tc.c1));
    return tc;
}

inline TheoreticalConstants compute_constants(const ObjectiveSuite& suite,
                                              const ConsensusMatrix& cm,
                                              const StochasticOracle& oracle, double alpha,
                                              std::optional<double> psi,
                                              const StackedState& y0) {
    return compute_constants(suite, cm, oracle.sigma_sq_bound(), alpha, psi, y0);
}

// limsup E||x_k - x*||^2 = alpha sigma^2 / (2 gamma) for centralized SGD.
inline double sgd_neighborhood(const TheoreticalConstants& tc, double alpha, double sigma_sq) {
    return alpha * sigma_sq / (2.0 * tc.gamma);
}

struct MeanErrorBound {
    double transient = 0.0;  // c1^k ||xbar_0 - x*||^2
    double network = 0.0;    // c2^2 beta^{2t} / (1 - c1)
    double noise = 0.0;      // alpha^2 sigma^2 / (n (1 - c1))
    double total() const { return transient + network + noise; }
};

inline MeanErrorBound mean_error_bound(const TheoreticalConstants& tc, long long k, long long t,
                                    std::optional<double> x0_err_sq = std::nullopt) {
    if (!(tc.c1 < 1.0)) throw Error("mean_error_bound: requires c1 < 1");
    MeanErrorBound b;
    b.transient = std::pow(tc.c1, static_cast<double>(k)) * x0_err_sq.value_or(tc.x0_err_sq);
    b.network = tc.c2_sq * std::pow(tc.beta, 2.0 * static_cast<double>(t)) / (1.0 - tc.c1);
    b.noise = tc.alpha * tc.alpha * tc.sigma_sq / (static_cast<double>(tc.n) * (1.0 - tc.c1));
    return b;
}

// Size of the limiting neighborhood of the increasing-schedule variant:
// alpha^2 sigma^2 / (n (1 - c1)). Halves when n doubles at fixed c1.
inline double limit_neighborhood(const TheoreticalConstants& tc) {
    if (!(tc.c1 < 1.0)) throw Error("limit_neighborhood: requires c1 < 1");
    return tc.alpha * tc.alpha * tc.sigma_sq / (static_cast<double>(tc.n) * (1.0 - tc.c1));
}

// --- per-iteration metrics -----------------------------------------------------

struct RunRecord {
    struct Row {
        long long k = 0;
        long long t_k = 0;
        long long comm_total = 0;
        long long evals_total = 0;
        double mean_err = 0.0;    // ||xbar_k - x*||^2
        double cons_dev = 0.0;    // (1/n) sum_i ||x_{i,k} - xbar_k||^2
        double y_cons_dev = 0.0;  // same for the y stack
        double fgap = 0.0;        // f(xbar_k) - f*
        std::optional<double> grad_avg_dev;  // ||h_k - hbar_k||^2, not serialized
    };
    std::vector<Row> rows;
};

inline RunRecord::Row compute_metrics_row(const StackedState& x, const StackedState& y,
                                          const ObjectiveSuite& suite, long long k, long long t_k,
                                          long long comm_total, long long evals_total,
                                          bool with_grad_diag = false) {
    RunRecord::Row row;
    row.k = k;
    row.t_k = t_k;
    row.comm_total = comm_total;
    row.evals_total = evals_total;
    const Eigen::VectorXd xbar = average_blocks(x);
    row.mean_err = (xbar - suite.x_star).squaredNorm();
    row.cons_dev = consensus_deviation(x);
    row.y_cons_dev = consensus_deviation(y);
    row.fgap = total_value(suite, xbar) - suite.f_star;
    if (with_grad_diag) {
        Eigen::VectorXd h = Eigen::VectorXd::Zero(suite.p);
        for (int i = 0; i < suite.n; ++i) h += gradient(suite, i, x.block(i));
        h /= static_cast<double>(suite.n);
        row.grad_avg_dev = (h - average_gradient(suite, xbar)).squaredNorm();
    }
    return row;
}

inline constexpr const char* kRunRecordCsvHeader =
    "k,t_k,comm_total,evals_total,mean_err,cons_dev,y_cons_dev,fgap";

inline void write_csv(std::ostream& out, const RunRecord& rec) {
    out << kRunRecordCsvHeader << "\n";
    char buf[340];
    for (const auto& r : rec.rows) {
        std::snprintf(buf, sizeof buf, "%lld,%lld,%lld,%lld,%.17g,%.17g,%.17g,%.17g", r.k, r.t_k,
                      r.comm_total, r.evals_total, r.mean_err, r.cons_dev, r.y_cons_dev, r.fgap);
        out << buf << "\n";
    }
}

// Mean of mean_err over the trailing `window` rows.
inline double plateau_estimate_rows(const RunRecord& rec, std::size_t window) {
    if (rec.rows.empty()) throw Error("plateau_estimate: empty record");
    if (window < 1 || window > rec.rows.size())
        throw Error("plateau_estimate: window must be in [1, record length]");
    double acc = 0.0;
    for (std::size_t i = rec.rows.size() - window; i < rec.rows.size(); ++i)
        acc += rec.rows[i].mean_err;
    return acc / static_cast<double>(window);
}

// Default window: last 2000 rows or the last `window_fraction` of the record,
// whichever is smaller.
inline double plateau_estimate(const RunRecord& rec, double window_fraction = 0.2) {
    if (rec.rows.empty()) throw Error("plateau_estimate: empty record");
    if (!(window_fraction > 0.0) || window_fraction > 1.0)
        throw Error("plateau_estimate: window fraction must be in (0, 1]");
    auto window = static_cast<std::size_t>(
        std::floor(window_fraction * static_cast<double>(rec.rows.size())));
    window = std::clamp<std::size_t>(std::min<std::size_t>(window, 2000), 1, rec.rows.size());
    return plateau_estimate_rows(rec, window);
}

inline nlohmann::json constants_to_json(const TheoreticalConstants& tc) {
    nlohmann::json j;
    j["n"] = tc.n;
    j["alpha"] = tc.alpha;
    j["sigma_sq"] = tc.sigma_sq;
    j["beta"] = tc.beta;
    j["gamma_i_list"] = tc.gamma_i_list;
    j["gamma"] = tc.gamma;
    j["gamma_bar"] = tc.gamma_bar;
    j["nu"] = tc.nu;
    j["delta"] = tc.delta;
    j["d_sq"] = tc.d_sq;
    j["psi"] = tc.psi;
    j["c1"] = tc.c1;
    j["c2_sq"] = tc.c2_sq;
    j["theta"] = tc.theta;
    j["cap_c"] = tc.cap_c;
    j["alpha_max"] = tc.alpha_max;
    j["alpha_admissible"] = tc.alpha_admissible;
    j["x0_err_sq"] = tc.x0_err_sq;
    return j;
}

}  // namespace neardgd
