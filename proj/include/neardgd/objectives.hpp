#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <memory>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "neardgd/error.hpp"
#include "neardgd/rng.hpp"

namespace neardgd {

// --- datasets ---------------------------------------------------------------

struct Dataset {
    Eigen::MatrixXd features;  // M x p
    Eigen::VectorXd labels;    // entries in {-1, +1}
    int samples() const { return static_cast<int>(features.rows()); }
    int dim() const { return static_cast<int>(features.cols()); }
};

namespace detail {
inline constexpr std::uint64_t kDataTag = rng::fnv1a("dataset.synthetic");
inline constexpr std::uint64_t kPartitionTag = rng::fnv1a("dataset.partition");

inline double map_libsvm_label(double raw) {
    // {1,2}-labeled sources map 1 -> +1, 2 -> -1; {-1,+1} passes through.
    if (raw == 1.0) return 1.0;
    if (raw == 2.0) return -1.0;
    if (raw == -1.0) return -1.0;
    return 0.0;  // caller rejects
}
}  // namespace detail

// LIBSVM text reader: lines "label idx:val idx:val ..." with 1-based feature
// indices. Blank lines are ignored; anything malformed is a hard error with
// its line number. min_dim lets callers force a wider feature space than the
// file mentions.
inline Dataset read_libsvm(std::istream& in, int min_dim = 0) {
    struct RawRow {
        double label;
        std::vector<std::pair<int, double>> entries;
    };
    std::vector<RawRow> rows;
    int max_index = 0;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ls(line);
        RawRow row;
        double raw_label;
        if (!(ls >> raw_label))
            throw Error("libsvm: line " + std::to_string(lineno) + ": missing label");
        row.label = detail::map_libsvm_label(raw_label);
        if (row.label == 0.0)
            throw Error("libsvm: line " + std::to_string(lineno) +
                        ": unsupported label (expected -1, +1, 1 or 2)");
        std::string tok;
        while (ls >> tok) {
            const auto colon = tok.find(':');
            if (colon == std::string::npos)
                throw Error("libsvm: line " + std::to_string(lineno) +
                            ": expected idx:val, got \"" + tok + "\"");
            int idx = 0;
            double val = 0.0;
            try {
                std::size_t pos = 0;
                idx = std::stoi(tok.substr(0, colon), &pos);
                if (pos != colon) throw std::invalid_argument("trailing");
                val = std::stod(tok.substr(colon + 1), &pos);
                if (pos != tok.size() - colon - 1) throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                throw Error("libsvm: line " + std::to_string(lineno) +
                            ": malformed feature \"" + tok + "\"");
            }
            if (idx < 1)
                throw Error("libsvm: line " + std::to_string(lineno) +
                            ": feature index must be >= 1");
            max_index = std::max(max_index, idx);
            row.entries.emplace_back(idx, val);
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw Error("libsvm: no samples in input");
    const int p = std::max(max_index, min_dim);
    Dataset ds;
    ds.features = Eigen::MatrixXd::Zero(static_cast<int>(rows.size()), p);
    ds.labels.resize(static_cast<int>(rows.size()));
    for (int s = 0; s < static_cast<int>(rows.size()); ++s) {
        ds.labels(s) = rows[static_cast<std::size_t>(s)].label;
        for (auto [idx, val] : rows[static_cast<std::size_t>(s)].entries)
            ds.features(s, idx - 1) = val;
    }
    return ds;
}

inline void write_libsvm(std::ostream& out, const Dataset& ds) {
    char buf[64];
    for (int s = 0; s < ds.samples(); ++s) {
        out << (ds.labels(s) > 0 ? "+1" : "-1");
        for (int d = 0; d < ds.dim(); ++d) {
            if (ds.features(s, d) == 0.0) continue;
            std::snprintf(buf, sizeof buf, "%.17g", ds.features(s, d));
            out << " " << (d + 1) << ":" << buf;
        }
        out << "\n";
    }
}

// Gaussian features with labels from a planted linear separator, flipped at
// rate 0.05. Fully determined by (M, p, seed).
inline Dataset make_synthetic_classification(int M, int p, std::uint64_t seed) {
    if (M < 2) throw Error("make_synthetic_classification: need M >= 2");
    if (p < 1) throw Error("make_synthetic_classification: need p >= 1");
    auto g = rng::engine(rng::derive(seed, detail::kDataTag));
    Dataset ds;
    ds.features.resize(M, p);
    ds.labels.resize(M);
    for (int s = 0; s < M; ++s)
        for (int d = 0; d < p; ++d) ds.features(s, d) = rng::normal(g);
    Eigen::VectorXd separator(p);
    for (int d = 0; d < p; ++d) separator(d) = rng::normal(g);
    for (int s = 0; s < M; ++s) {
        double y = ds.features.row(s).dot(separator) >= 0.0 ? 1.0 : -1.0;
        if (rng::uniform01(g) < 0.05) y = -y;
        ds.labels(s) = y;
    }
    return ds;
}

// Even split into n index sets: contiguous blocks of a seeded shuffle, the
// first M mod n agents taking one extra sample. Sets are sorted ascending.
inline std::vector<std::vector<int>> partition_dataset(const Dataset& ds, int n,
                                                       std::uint64_t seed) {
    const int M = ds.samples();
    if (n < 1) throw Error("partition_dataset: need n >= 1");
    if (n > M) throw Error("partition_dataset: more agents than samples");
    std::vector<int> perm(static_cast<std::size_t>(M));
    std::iota(perm.begin(), perm.end(), 0);
    auto g = rng::engine(rng::derive(seed, detail::kPartitionTag));
    for (int i = M - 1; i > 0; --i) {
        const auto j = rng::uniform_index(g, static_cast<std::size_t>(i) + 1);
        std::swap(perm[static_cast<std::size_t>(i)], perm[j]);
    }
    std::vector<std::vector<int>> sets(static_cast<std::size_t>(n));
    const int base = M / n, extra = M % n;
    int pos = 0;
    for (int i = 0; i < n; ++i) {
        const int size = base + (i < extra ? 1 : 0);
        sets[static_cast<std::size_t>(i)].assign(perm.begin() + pos, perm.begin() + pos + size);
        std::sort(sets[static_cast<std::size_t>(i)].begin(), sets[static_cast<std::size_t>(i)].end());
        pos += size;
    }
    return sets;
}

// --- local objectives --------------------------------------------------------

// f_i(x) = 1/2 x'Ax - b'x with A symmetric positive definite.
struct QuadraticObjective {
    Eigen::MatrixXd A;
    Eigen::VectorXd b;
};

// f_i(x) = (1/m) sum_{s in S_i} log(1 + exp(-b_s <A_s, x>)) + reg * ||x||^2.
// Local rows are materialized for locality; global_index keeps the map back
// into the source dataset.
struct LogisticObjective {
    Eigen::MatrixXd rows;     // m x p
    Eigen::VectorXd targets;  // m, entries +-1
    std::vector<int> global_index;
    double reg = 0.0;
};

using LocalObjective = std::variant<QuadraticObjective, LogisticObjective>;

namespace detail {

inline double log1p_exp(double t) {
    // log(1 + e^t) without overflow.
    return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

inline double sigmoid(double t) {
    // 1 / (1 + e^-t)
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

inline double local_value(const QuadraticObjective& q, const Eigen::VectorXd& x) {
    return 0.5 * x.dot(q.A * x) - q.b.dot(x);
}

inline Eigen::VectorXd local_gradient(const QuadraticObjective& q, const Eigen::VectorXd& x) {
    return q.A * x - q.b;
}

inline double local_value(const LogisticObjective& l, const Eigen::VectorXd& x) {
    const Eigen::VectorXd margins = l.targets.cwiseProduct(l.rows * x);
    double loss = 0.0;
    for (int s = 0; s < margins.size(); ++s) loss += log1p_exp(-margins(s));
    return loss / static_cast<double>(margins.size()) + l.reg * x.squaredNorm();
}

inline Eigen::VectorXd local_gradient(const LogisticObjective& l, const Eigen::VectorXd& x) {
    const int m = static_cast<int>(l.rows.rows());
    const Eigen::VectorXd margins = l.targets.cwiseProduct(l.rows * x);
    Eigen::VectorXd coeff(m);
    for (int s = 0; s < m; ++s)
        coeff(s) = -l.targets(s) * sigmoid(-margins(s)) / static_cast<double>(m);
    return l.rows.transpose() * coeff + 2.0 * l.reg * x;
}

// Gradient of the per-sample regularized loss at local row s; the minibatch
// estimator averages these.
inline Eigen::VectorXd sample_loss_gradient(const LogisticObjective& l, int s,
                                            const Eigen::VectorXd& x) {
    const double margin = l.targets(s) * l.rows.row(s).dot(x);
    return (-l.targets(s) * sigmoid(-margin)) * l.rows.row(s).transpose();
}

}  // namespace detail

// --- suite -------------------------------------------------------------------

// The n local functions plus everything the analysis needs about them:
// per-agent curvature constants, their averages, the global minimizer x*
// of f = sum_i f_i, and the per-agent minimizers u_i*.
struct ObjectiveSuite {
    int n = 0;
    int p = 0;
    std::vector<LocalObjective> locals;
    std::vector<double> mu_list;   // strong convexity per agent
    std::vector<double> lip_list;  // gradient Lipschitz constant per agent
    double mu_bar = 0.0;           // (1/n) sum mu_i
    double lip_bar = 0.0;          // (1/n) sum L_i
    double lip_max = 0.0;          // max_i L_i
    Eigen::VectorXd x_star;
    double f_star = 0.0;
    std::vector<Eigen::VectorXd> u_star_list;
    bool logistic = false;

    double solver_tolerance() const {
        return logistic ? 1e-8 : 1e-10 * std::max(1.0, x_star.norm());
    }
};

inline double value(const ObjectiveSuite& suite, int agent, const Eigen::VectorXd& x) {
    return std::visit([&](const auto& l) { return detail::local_value(l, x); },
                      suite.locals[static_cast<std::size_t>(agent)]);
}

inline Eigen::VectorXd gradient(const ObjectiveSuite& suite, int agent, const Eigen::VectorXd& x) {
    return std::visit([&](const auto& l) { return detail::local_gradient(l, x); },
                      suite.locals[static_cast<std::size_t>(agent)]);
}

// f(x) = sum_i f_i(x)
inline double total_value(const ObjectiveSuite& suite, const Eigen::VectorXd& x) {
    double acc = 0.0;
    for (int i = 0; i < suite.n; ++i) acc += value(suite, i, x);
    return acc;
}

inline Eigen::VectorXd total_gradient(const ObjectiveSuite& suite, const Eigen::VectorXd& x) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(suite.p);
    for (int i = 0; i < suite.n; ++i) acc += gradient(suite, i, x);
    return acc;
}

// grad of f_bar = (1/n) sum_i f_i
inline Eigen::VectorXd average_gradient(const ObjectiveSuite& suite, const Eigen::VectorXd& x) {
    return total_gradient(suite, x) / static_cast<double>(suite.n);
}

namespace detail {

// Nesterov's accelerated gradient for mu-strongly convex L-smooth functions,
// run until ||grad|| <= tol at the returned point.
template <class Grad>
Eigen::VectorXd accelerated_minimize(const Grad& grad_fn, int p, double mu, double lip,
                                     double tol, long long max_iters, const char* what) {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd y = x;
    const double step = 1.0 / lip;
    const double kappa = lip / mu;
    const double momentum = (std::sqrt(kappa) - 1.0) / (std::sqrt(kappa) + 1.0);
    for (long long it = 0; it < max_iters; ++it) {
        const Eigen::VectorXd g = grad_fn(y);
        if (g.norm() <= tol) return y;
        const Eigen::VectorXd x_next = y - step * g;
        y = x_next + momentum * (x_next - x);
        x = x_next;
    }
    throw Error(std::string("solve_reference: no convergence for ") + what + " within " +
                std::to_string(max_iters) + " iterations (bad conditioning?)");
}

inline void solve_reference(ObjectiveSuite& suite) {
    constexpr long long kMaxIters = 1'000'000;
    suite.u_star_list.resize(static_cast<std::size_t>(suite.n));
    if (!suite.logistic) {
        Eigen::MatrixXd a_sum = Eigen::MatrixXd::Zero(suite.p, suite.p);
        Eigen::VectorXd b_sum = Eigen::VectorXd::Zero(suite.p);
        for (int i = 0; i < suite.n; ++i) {
            const auto& q = std::get<QuadraticObjective>(suite.locals[static_cast<std::size_t>(i)]);
            a_sum += q.A;
            b_sum += q.b;
            suite.u_star_list[static_cast<std::size_t>(i)] = q.A.ldlt().solve(q.b);
        }
        suite.x_star = a_sum.ldlt().solve(b_sum);
    } else {
        double mu_sum = 0.0, lip_sum = 0.0;
        for (int i = 0; i < suite.n; ++i) {
            mu_sum += suite.mu_list[static_cast<std::size_t>(i)];
            lip_sum += suite.lip_list[static_cast<std::size_t>(i)];
        }
        suite.x_star = accelerated_minimize(
            [&](const Eigen::VectorXd& v) { return total_gradient(suite, v); }, suite.p, mu_sum,
            lip_sum, 1e-8, kMaxIters, "f");
        for (int i = 0; i < suite.n; ++i) {
            suite.u_star_list[static_cast<std::size_t>(i)] = accelerated_minimize(
                [&](const Eigen::VectorXd& v) { return gradient(suite, i, v); }, suite.p,
                suite.mu_list[static_cast<std::size_t>(i)],
                suite.lip_list[static_cast<std::size_t>(i)], 1e-8, kMaxIters, "f_i");
        }
    }
    suite.f_star = total_value(suite, suite.x_star);

    const double tol = suite.solver_tolerance();
    if (total_gradient(suite, suite.x_star).norm() > tol)
        throw Error("solve_reference: gradient at x* exceeds tolerance");
    for (int i = 0; i < suite.n; ++i) {
        const auto& u = suite.u_star_list[static_cast<std::size_t>(i)];
        const double local_tol =
            suite.logistic ? 1e-8 : 1e-10 * std::max(1.0, u.norm());
        if (gradient(suite, i, u).norm() > local_tol)
            throw Error("solve_reference: gradient at u_i* exceeds tolerance (agent " +
                        std::to_string(i) + ")");
    }
}

}  // namespace detail

// Computes per-agent constants, aggregates and reference solutions for a set
// of local objectives, validating the curvature requirements along the way.
inline ObjectiveSuite make_suite(std::vector<LocalObjective> locals) {
    if (locals.empty()) throw Error("make_suite: no local objectives");
    ObjectiveSuite suite;
    suite.n = static_cast<int>(locals.size());
    suite.locals = std::move(locals);
    suite.logistic = std::holds_alternative<LogisticObjective>(suite.locals.front());
    for (const auto& l : suite.locals)
        if (std::holds_alternative<LogisticObjective>(l) != suite.logistic)
            throw Error("make_suite: mixed objective kinds are not supported");

    suite.p = std::visit(
        [](const auto& l) {
            if constexpr (std::is_same_v<std::decay_t<decltype(l)>, QuadraticObjective>)
                return static_cast<int>(l.A.rows());
            else
                return static_cast<int>(l.rows.cols());
        },
        suite.locals.front());

    for (const auto& local : suite.locals) {
        double mu = 0.0, lip = 0.0;
        if (const auto* q = std::get_if<QuadraticObjective>(&local)) {
            if (q->A.rows() != suite.p || q->A.cols() != suite.p || q->b.size() != suite.p)
                throw Error("make_suite: quadratic dimension mismatch");
            if (!q->A.isApprox(q->A.transpose(), 1e-12))
                throw Error("make_suite: quadratic A is not symmetric");
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(q->A, Eigen::EigenvaluesOnly);
            mu = es.eigenvalues().minCoeff();
            lip = es.eigenvalues().maxCoeff();
        } else {
            const auto& l = std::get<LogisticObjective>(local);
            if (l.rows.cols() != suite.p) throw Error("make_suite: logistic dimension mismatch");
            if (l.rows.rows() < 1) throw Error("make_suite: logistic agent has no samples");
            const int m = static_cast<int>(l.rows.rows());
            mu = 2.0 * l.reg;
            // 1/4 bound on the sigmoid second derivative
            lip = 2.0 * l.reg + l.rows.squaredNorm() / (4.0 * static_cast<double>(m));
        }
        if (!(mu > 0.0)) throw Error("make_suite: local objective is not strongly convex");
        if (!(lip >= mu)) throw Error("make_suite: L_i < mu_i");
        suite.mu_list.push_back(mu);
        suite.lip_list.push_back(lip);
    }
    double mu_acc = 0.0, lip_acc = 0.0;
    for (int i = 0; i < suite.n; ++i) {
        mu_acc += suite.mu_list[static_cast<std::size_t>(i)];
        lip_acc += suite.lip_list[static_cast<std::size_t>(i)];
    }
    suite.mu_bar = mu_acc / suite.n;
    suite.lip_bar = lip_acc / suite.n;
    suite.lip_max = *std::max_element(suite.lip_list.begin(), suite.lip_list.end());
    detail::solve_reference(suite);
    return suite;
}

namespace detail {
inline constexpr std::uint64_t kQuadTag = rng::fnv1a("suite.quadratic");
}

// Heterogeneous quadratics: each agent gets A_i = Q diag(lambda) Q' with
// eigenvalues uniform in [lambda_min, lambda_max] and a Gaussian b_i.
// replicate makes every agent share agent 0's function.
inline ObjectiveSuite make_quadratic_suite(int n, int p, double lambda_min, double lambda_max,
                                           std::uint64_t seed, bool replicate = false) {
    if (n < 1 || p < 1) throw Error("make_quadratic_suite: need n >= 1 and p >= 1");
    if (!(lambda_min > 0.0) || lambda_max < lambda_min)
        throw Error("make_quadratic_suite: need 0 < lambda_min <= lambda_max");
    std::vector<LocalObjective> locals;
    for (int i = 0; i < n; ++i) {
        if (replicate && i > 0) {
            locals.push_back(locals.front());
            continue;
        }
        auto g = rng::engine(rng::derive(seed, detail::kQuadTag, i));
        Eigen::MatrixXd gauss(p, p);
        for (int r = 0; r < p; ++r)
            for (int c = 0; c < p; ++c) gauss(r, c) = rng::normal(g);
        const Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
        Eigen::MatrixXd q = qr.householderQ();
        Eigen::VectorXd lambda(p);
        for (int d = 0; d < p; ++d)
            lambda(d) = lambda_min + (lambda_max - lambda_min) * rng::uniform01(g);
        QuadraticObjective quad;
        quad.A = q * lambda.asDiagonal() * q.transpose();
        quad.A = 0.5 * (quad.A + quad.A.transpose());  // exact symmetry
        quad.b.resize(p);
        for (int d = 0; d < p; ++d) quad.b(d) = rng::normal(g);
        locals.emplace_back(std::move(quad));
    }
    return make_suite(std::move(locals));
}

// Distributes dataset samples evenly over n agents with regularizer 1/M.
inline ObjectiveSuite make_logistic_suite(const Dataset& ds, int n, std::uint64_t partition_seed) {
    const auto sets = partition_dataset(ds, n, partition_seed);
    const double reg = 1.0 / static_cast<double>(ds.samples());
    std::vector<LocalObjective> locals;
    for (const auto& set : sets) {
        LogisticObjective l;
        l.reg = reg;
        l.global_index = set;
        l.rows.resize(static_cast<int>(set.size()), ds.dim());
        l.targets.resize(static_cast<int>(set.size()));
        for (int s = 0; s < static_cast<int>(set.size()); ++s) {
            l.rows.row(s) = ds.features.row(set[static_cast<std::size_t>(s)]);
            l.targets(s) = ds.labels(set[static_cast<std::size_t>(s)]);
        }
        locals.emplace_back(std::move(l));
    }
    return make_suite(std::move(locals));
}

}  // namespace neardgd
