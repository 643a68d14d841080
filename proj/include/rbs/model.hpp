#pragma once

// Goal-conditioned flow models and the trajectory samplers built on them.
//
// A model maps (state, goal) to a head vector laid out as
//   [ log F(s|y) | forward logits (num_forward_actions) | backward logits ].

#include <Eigen/Dense>

#include <span>
#include <vector>

#include "rbs/env.hpp"
#include "rbs/nn.hpp"
#include "rbs/rng.hpp"
#include "rbs/trajectory.hpp"

namespace rbs {

struct HeadLayout {
  int num_forward = 0;
  int num_backward = 0;

  static HeadLayout of(const Environment& env) {
    return {env.num_forward_actions(), env.num_backward_actions()};
  }
  int rows() const { return 1 + num_forward + num_backward; }
  int log_flow_row() const { return 0; }
  int forward_row() const { return 1; }
  int backward_row() const { return 1 + num_forward; }
};

class FlowModel {
 public:
  virtual ~FlowModel() = default;
  virtual HeadLayout layout() const = 0;
  // One column per state. `goals` has either one entry (broadcast) or one
  // entry per state.
  virtual Eigen::MatrixXd heads(const Environment& env, std::span<const EnvState> states,
                                std::span<const Goal> goals) const = 0;
};

// Concatenated encodings, one column per (state, goal) pair.
Eigen::MatrixXd encode_batch(const Environment& env, std::span<const EnvState> states,
                             std::span<const Goal> goals);

// Shared dense trunk whose output layer carries the three heads.
class GCModel final : public FlowModel {
 public:
  GCModel() = default;
  GCModel(const Environment& env, std::span<const int> hidden, Rng& rng);
  GCModel(HeadLayout layout, DenseNet net);
  static GCModel zeros(const Environment& env, std::span<const int> hidden);

  HeadLayout layout() const override { return layout_; }
  Eigen::MatrixXd heads(const Environment& env, std::span<const EnvState> states,
                        std::span<const Goal> goals) const override;
  Eigen::MatrixXd heads_with_cache(const Environment& env, std::span<const EnvState> states,
                                   std::span<const Goal> goals, ForwardCache& cache) const;

  const DenseNet& net() const { return net_; }
  DenseNet& net() { return net_; }

 private:
  HeadLayout layout_;
  DenseNet net_;
};

struct Prediction {
  double log_flow = 0.0;
  std::vector<double> forward_log_probs;   // all kNegInf at terminal states
  std::vector<double> backward_log_probs;  // all kNegInf at the initial state
};

Prediction predict(const FlowModel& model, const Environment& env, const EnvState& state,
                   const Goal& goal);

// Optional per-rollout diagnostics gathered while sampling forward.
struct RolloutStats {
  double entropy_sum = 0.0;  // sum over visited non-terminal states of H(P_F)
  int entropy_count = 0;
};

// Lockstep forward rollouts from s0, one generator per rollout, so results do
// not depend on how many rollouts share a batch.
std::vector<TrajectoryRecord> sample_forward_trajectories(const FlowModel& model,
                                                          const Environment& env,
                                                          std::span<const Goal> goals,
                                                          std::span<Rng> rngs,
                                                          std::vector<RolloutStats>* stats = nullptr);
TrajectoryRecord sample_forward_trajectory(const FlowModel& model, const Environment& env,
                                           const Goal& goal, Rng& rng);

// Walks goal -> s0 with P_B and stores the reversed path with reward 1.
std::vector<TrajectoryRecord> synthesize_backward_trajectories(const FlowModel& model,
                                                               const Environment& env,
                                                               std::span<const Goal> goals,
                                                               std::span<Rng> rngs);
TrajectoryRecord synthesize_backward_trajectory(const FlowModel& model, const Environment& env,
                                                const Goal& goal, Rng& rng);

// Index drawn from exp(log_probs); entries at kNegInf are never chosen.
int sample_categorical(std::span<const double> log_probs, Rng& rng);

}  // namespace rbs
