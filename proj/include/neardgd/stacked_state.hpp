#pragma once

#include <Eigen/Dense>

#include "neardgd/error.hpp"

namespace neardgd {

// Concatenation of all agents' local copies of the decision variable,
// stored as one p-dimensional column per agent.
struct StackedState {
    Eigen::MatrixXd cols;  // p x n

    StackedState() = default;
    StackedState(int n_agents, int dim) : cols(Eigen::MatrixXd::Zero(dim, n_agents)) {}
    explicit StackedState(Eigen::MatrixXd m) : cols(std::move(m)) {}

    int agents() const { return static_cast<int>(cols.cols()); }
    int dim() const { return static_cast<int>(cols.rows()); }

    Eigen::MatrixXd::ColXpr block(int i) { return cols.col(i); }
    Eigen::MatrixXd::ConstColXpr block(int i) const { return cols.col(i); }

    // Stacked squared norm sum_i ||v_i||^2.
    double squared_norm() const { return cols.squaredNorm(); }

    bool all_finite() const { return cols.allFinite(); }
};

// Mean block across agents, accumulated in ascending agent order.
inline Eigen::VectorXd average_blocks(const StackedState& s) {
    if (s.agents() < 1) throw Error("average_blocks: state has no agent blocks");
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(s.dim());
    for (int i = 0; i < s.agents(); ++i) acc += s.cols.col(i);
    return acc / static_cast<double>(s.agents());
}

// (1/n) sum_i ||v_i - mean||^2, the per-agent average distance to consensus.
inline double consensus_deviation(const StackedState& s) {
    const Eigen::VectorXd mean = average_blocks(s);
    double acc = 0.0;
    for (int i = 0; i < s.agents(); ++i) acc += (s.cols.col(i) - mean).squaredNorm();
    return acc / static_cast<double>(s.agents());
}

}  // namespace neardgd
