#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "neardgd/error.hpp"
#include "neardgd/rng.hpp"
#include "neardgd/stacked_state.hpp"

namespace neardgd {

// Undirected connected graph over n agents. Edges are stored as (i, j)
// pairs with i < j, sorted lexicographically.
struct Topology {
    int n = 0;
    std::vector<std::pair<int, int>> edges;
    int er_resamples = 0;  // Erdos-Renyi attempts discarded before a connected sample

    std::vector<std::vector<int>> adjacency() const {
        std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
        for (auto [i, j] : edges) {
            adj[static_cast<std::size_t>(i)].push_back(j);
            adj[static_cast<std::size_t>(j)].push_back(i);
        }
        for (auto& nbrs : adj) std::sort(nbrs.begin(), nbrs.end());
        return adj;
    }

    std::vector<int> degrees() const {
        std::vector<int> deg(static_cast<std::size_t>(n), 0);
        for (auto [i, j] : edges) {
            ++deg[static_cast<std::size_t>(i)];
            ++deg[static_cast<std::size_t>(j)];
        }
        return deg;
    }
};

inline bool is_connected(const Topology& topo) {
    if (topo.n < 1) return false;
    const auto adj = topo.adjacency();
    std::vector<char> seen(static_cast<std::size_t>(topo.n), 0);
    std::vector<int> stack{0};
    seen[0] = 1;
    int visited = 1;
    while (!stack.empty()) {
        const int u = stack.back();
        stack.pop_back();
        for (int v : adj[static_cast<std::size_t>(u)]) {
            if (!seen[static_cast<std::size_t>(v)]) {
                seen[static_cast<std::size_t>(v)] = 1;
                ++visited;
                stack.push_back(v);
            }
        }
    }
    return visited == topo.n;
}

inline void validate_topology(const Topology& topo) {
    if (topo.n < 1) throw Error("topology: agent count must be positive");
    for (auto [i, j] : topo.edges) {
        if (i == j) throw Error("topology: self-loop at agent " + std::to_string(i));
        if (i < 0 || j < 0 || i >= topo.n || j >= topo.n)
            throw Error("topology: edge endpoint out of range");
    }
    if (!is_connected(topo)) throw Error("topology: graph is not connected");
}

enum class GraphKind { erdos_renyi, path, ring, complete, star };

inline const char* to_string(GraphKind k) {
    switch (k) {
        case GraphKind::erdos_renyi: return "erdos_renyi";
        case GraphKind::path: return "path";
        case GraphKind::ring: return "ring";
        case GraphKind::complete: return "complete";
        case GraphKind::star: return "star";
    }
    return "?";
}

namespace detail {
inline constexpr std::uint64_t kErTag = rng::fnv1a("topology.erdos_renyi");
inline constexpr int kErMaxAttempts = 64;
}  // namespace detail

// Deterministic graph construction. Erdos-Renyi samples each pair with
// probability p_edge and resamples from a fresh substream until connected,
// up to a capped attempt budget.
inline Topology generate_graph(GraphKind kind, int n, std::uint64_t seed, double p_edge = 0.0) {
    if (n < 1) throw Error("generate_graph: agent count must be positive");
    Topology topo;
    topo.n = n;
    switch (kind) {
        case GraphKind::path:
            for (int i = 0; i + 1 < n; ++i) topo.edges.emplace_back(i, i + 1);
            break;
        case GraphKind::ring:
            for (int i = 0; i + 1 < n; ++i) topo.edges.emplace_back(i, i + 1);
            if (n >= 3) topo.edges.emplace_back(0, n - 1);
            break;
        case GraphKind::complete:
            for (int i = 0; i < n; ++i)
                for (int j = i + 1; j < n; ++j) topo.edges.emplace_back(i, j);
            break;
        case GraphKind::star:
            for (int i = 1; i < n; ++i) topo.edges.emplace_back(0, i);
            break;
        case GraphKind::erdos_renyi: {
            if (!(p_edge > 0.0 && p_edge <= 1.0))
                throw Error("generate_graph: erdos_renyi requires 0 < p <= 1");
            for (int attempt = 0; attempt < detail::kErMaxAttempts; ++attempt) {
                auto g = rng::engine(rng::derive(seed, detail::kErTag, attempt));
                topo.edges.clear();
                for (int i = 0; i < n; ++i)
                    for (int j = i + 1; j < n; ++j)
                        if (rng::uniform01(g) < p_edge) topo.edges.emplace_back(i, j);
                if (is_connected(topo)) {
                    topo.er_resamples = attempt;
                    std::sort(topo.edges.begin(), topo.edges.end());
                    return topo;
                }
            }
            throw Error("generate_graph: no connected erdos_renyi sample in " +
                        std::to_string(detail::kErMaxAttempts) +
                        " attempts (likely disconnected regime, p too small)");
        }
    }
    std::sort(topo.edges.begin(), topo.edges.end());
    validate_topology(topo);
    return topo;
}

// Mixing matrix W: symmetric, doubly stochastic, positive diagonal, with
// off-diagonal support equal to the edge set. beta is its second largest
// singular value; distance to consensus contracts by beta per round.
struct ConsensusMatrix {
    Eigen::MatrixXd w;
    double beta = 0.0;
    int n = 0;
};

inline double second_largest_singular_value(const Eigen::MatrixXd& m) {
    if (m.rows() < 2) return 0.0;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    return svd.singularValues()(1);
}

// Metropolis-Hastings weights: w_ij = 1 / (1 + max(deg_i, deg_j)) on edges,
// diagonal filled so each row sums to one. Satisfies the consensus-matrix
// requirements on any connected graph without global degree knowledge.
inline ConsensusMatrix metropolis_weights(const Topology& topo) {
    validate_topology(topo);
    const int n = topo.n;
    const auto deg = topo.degrees();
    ConsensusMatrix cm;
    cm.n = n;
    cm.w = Eigen::MatrixXd::Zero(n, n);
    for (auto [i, j] : topo.edges) {
        const double wij = 1.0 / (1.0 + std::max(deg[static_cast<std::size_t>(i)],
                                                 deg[static_cast<std::size_t>(j)]));
        cm.w(i, j) = wij;
        cm.w(j, i) = wij;
    }
    for (int i = 0; i < n; ++i) {
        double off = 0.0;
        for (int j = 0; j < n; ++j)
            if (j != i) off += cm.w(i, j);
        cm.w(i, i) = 1.0 - off;
        if (!(cm.w(i, i) > 0.0)) throw Error("metropolis_weights: nonpositive diagonal");
    }
    cm.beta = second_largest_singular_value(cm.w);
    if (!(cm.beta < 1.0))
        throw Error("metropolis_weights: beta >= 1 (graph not connected?)");
    return cm;
}

// Z^rounds applied blockwise: agent i's new block is sum_j w_ij * block_j.
// The neighbor sum runs in ascending agent order so results are bitwise
// reproducible; the np x np operator is never materialized.
inline StackedState apply_consensus(const ConsensusMatrix& cm, const StackedState& state,
                                    long long rounds) {
    if (state.agents() != cm.n)
        throw Error("apply_consensus: state has " + std::to_string(state.agents()) +
                    " blocks, matrix expects " + std::to_string(cm.n));
    if (rounds < 0) throw Error("apply_consensus: negative round count");
    StackedState cur = state;
    StackedState next(cm.n, state.dim());
    for (long long r = 0; r < rounds; ++r) {
        for (int i = 0; i < cm.n; ++i) {
            next.cols.col(i).setZero();
            for (int j = 0; j < cm.n; ++j) {
                const double wij = cm.w(i, j);
                if (wij != 0.0) next.cols.col(i) += wij * cur.cols.col(j);
            }
        }
        std::swap(cur.cols, next.cols);
    }
    return cur;
}

struct SpectralReport {
    double beta = 0.0;
    Eigen::VectorXd eigenvalues;  // sorted descending
};

inline SpectralReport spectral_report(const ConsensusMatrix& cm) {
    SpectralReport rep;
    rep.beta = cm.beta;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cm.w, Eigen::EigenvaluesOnly);
    rep.eigenvalues = es.eigenvalues().reverse();
    return rep;
}

// --- text formats ---------------------------------------------------------

// Edge list: first line "n <count>", then one "i j" pair per line, 0-indexed.
inline void write_topology(std::ostream& out, const Topology& topo) {
    out << "n " << topo.n << "\n";
    for (auto [i, j] : topo.edges) out << i << " " << j << "\n";
}

inline Topology read_topology(std::istream& in) {
    Topology topo;
    std::string header, line;
    if (!std::getline(in, header)) throw Error("topology: empty input");
    std::istringstream hs(header);
    std::string tag;
    if (!(hs >> tag >> topo.n) || tag != "n")
        throw Error("topology: first line must be \"n <count>\"");
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        int i = -1, j = -1;
        std::string rest;
        if (!(ls >> i >> j) || (ls >> rest))
            throw Error("topology: malformed edge at line " + std::to_string(lineno));
        if (i > j) std::swap(i, j);
        topo.edges.emplace_back(i, j);
    }
    std::sort(topo.edges.begin(), topo.edges.end());
    if (std::adjacent_find(topo.edges.begin(), topo.edges.end()) != topo.edges.end())
        throw Error("topology: duplicate edge in input");
    validate_topology(topo);
    return topo;
}

// n rows of n comma-separated decimals, 17 significant digits.
inline void write_consensus_csv(std::ostream& out, const ConsensusMatrix& cm) {
    char buf[64];
    for (int i = 0; i < cm.n; ++i) {
        for (int j = 0; j < cm.n; ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", cm.w(i, j));
            out << (j ? "," : "") << buf;
        }
        out << "\n";
    }
}

}  // namespace neardgd
