#pragma once

// Brute-force ground truth on small instances: full DAG enumeration, exact
// trajectory counts, exact terminal distributions of a model, and an exact
// flow assignment that zeroes the balance losses.

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "rbs/env.hpp"
#include "rbs/model.hpp"
#include "rbs/objectives.hpp"

namespace rbs {

struct DagEdge {
  int action = 0;
  int child = 0;
};

struct EnumeratedDAG {
  std::vector<EnvState> states;  // states[0] is s0
  std::vector<std::vector<DagEdge>> children;
  std::vector<std::vector<int>> parents;
  std::vector<int> topological;  // parents before children
  std::vector<int> terminals;
  std::unordered_map<EnvState, int, EnvStateHash> index;

  int index_of(const EnvState& s) const;  // -1 if absent
};

// BFS from s0 through the forward masks. Throws EnumerationCapError when more
// than spec().enumeration_cap states are found.
EnumeratedDAG enumerate_dag(const Environment& env);

// Number of complete trajectories s0 -> x. Throws NonTerminalError if x is
// not a terminal of the DAG, EnumerationCapError on 64-bit overflow.
std::uint64_t count_trajectories(const EnumeratedDAG& dag, const Environment& env, const EnvState& x);

// P_F^T(x | goal) for every entry of dag.terminals, by pushing probability
// mass forward in log space.
std::vector<double> exact_terminal_distribution(const FlowModel& model, const Environment& env,
                                                const EnumeratedDAG& dag, const Goal& goal);

// Independent count by explicit depth-first search from s0 (no DAG
// structure, no memoization). Throws EnumerationCapError past `cap` paths.
std::uint64_t count_trajectories_dfs(const Environment& env, const EnvState& x,
                                     std::uint64_t cap = 100000000);

// Every forward edge must be undone by exactly one valid backward action and
// every valid backward action must land on a DAG parent whose forward edge
// leads back. Returns one message per violation (empty when consistent).
std::vector<std::string> check_parent_child_duality(const Environment& env, const EnumeratedDAG& dag,
                                                    std::size_t max_messages = 20);

// Largest relative error between the analytic batch gradient and central
// differences over `probes` randomly chosen parameters.
struct GradientCheck {
  double max_relative_error = 0.0;
  int probes = 0;
};
GradientCheck check_batch_gradient(const GCModel& model, const Environment& env,
                                   std::span<const TrajectoryRecord* const> records,
                                   const ObjectiveConfig& config, long step, int probes, Rng& rng,
                                   double h = 1e-5);

double total_variation(std::span<const double> p, std::span<const double> q);

// Heads read from a per-state table for one fixed goal.
class TabularFlowModel final : public FlowModel {
 public:
  TabularFlowModel(HeadLayout layout, Goal goal) : layout_(layout), goal_(std::move(goal)) {}

  HeadLayout layout() const override { return layout_; }
  Eigen::MatrixXd heads(const Environment& env, std::span<const EnvState> states,
                        std::span<const Goal> goals) const override;

  void set(const EnvState& s, Eigen::VectorXd head);
  const Goal& goal() const { return goal_; }

 private:
  HeadLayout layout_;
  Goal goal_;
  std::unordered_map<EnvState, Eigen::VectorXd, EnvStateHash> table_;
};

// Exact flows for `goal` with uniform P_B: log F at terminals equals the
// terminal target, F(s) = sum_c F(c) P_B(s|c) elsewhere, and
// P_F(c|s) = F(c) P_B(s|c) / F(s).
TabularFlowModel solve_exact_flows(const Environment& env, const EnumeratedDAG& dag,
                                   const Goal& goal, const ObjectiveConfig& config);

}  // namespace rbs
