#pragma once

// Goal-conditioned deep Q-learning with hindsight relabeling, the RL
// comparison point. Shares the environment, replay buffer and relabeling with
// the flow-network trainer.

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rbs/env.hpp"
#include "rbs/nn.hpp"
#include "rbs/replay.hpp"
#include "rbs/trainer.hpp"

namespace rbs {

struct QModel {
  DenseNet online;
  DenseNet target;
  long sync_period = 500;
  long updates = 0;  // dqn_update calls so far

  QModel() = default;
  QModel(const Environment& env, std::span<const int> hidden, Rng& rng, long sync_period = 500);
  int num_actions() const { return online.output_dim(); }
  void sync() { target = online; }
};

// Q-values of (state, goal) under `net`, one per forward action.
std::vector<double> q_values(const DenseNet& net, const Environment& env, const EnvState& state,
                             const Goal& goal);

// With probability epsilon a uniform valid action, otherwise the valid argmax
// (lowest index on ties).
int epsilon_greedy(const QModel& q, const Environment& env, const EnvState& state,
                   const Goal& goal, double epsilon, Rng& rng);
int greedy_action(std::span<const double> q, const Mask& mask);

struct Transition {
  EnvState state;
  int action = 0;
  double reward = 0.0;
  EnvState next_state;
  bool terminal = false;
  Goal goal;
};

// Transition t of a record; reward is the record's reward on the last step
// and 0 before it.
Transition transition_at(const Environment& env, const TrajectoryRecord& record, std::size_t t);

struct DqnLoss {
  double loss = 0.0;  // mean squared TD error
  GradientTape tape;
};

// Loss and gradient w.r.t. the online net; targets use the target net.
DqnLoss dqn_loss(const QModel& q, const Environment& env, std::span<const Transition> batch,
                 double discount);

// One Adam step on the TD loss, then a target sync every sync_period
// updates. Throws NonFiniteError on a non-finite loss.
double dqn_update(QModel& q, const Environment& env, std::span<const Transition> batch,
                  double discount, AdamState& adam);

struct DqnConfig {
  double discount = 0.98;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  double anneal_fraction = 0.1;  // of the step budget
  long target_sync = 500;
  bool relabel = true;  // HER on

  void validate() const;
};

double epsilon_at(long step, long total_steps, const DqnConfig& config);

// Success rate of epsilon-greedy rollouts in `env`; goals unreachable there
// are flagged and excluded like in evaluate_unseen.
EvalReport evaluate_q(const QModel& q, const Environment& env, std::span<const Goal> goals,
                      int trials, double epsilon, Rng& rng);

struct DqnStepMetrics {
  long step = 0;
  double loss = 0.0;
  double epsilon = 0.0;
  int forward_successes = 0;
};

// Online network container: magic "RBSQNET1" | u64 env shape hash | i64 step |
// network. Loading checks the shape hash and the action count.
void save_q_checkpoint(const std::string& path, const QModel& q, const EnvSpec& spec, long step);
QModel load_q_checkpoint_for(const std::string& path, const EnvSpec& spec);

class DqnTrainer {
 public:
  DqnTrainer(TrainConfig train, DqnConfig dqn);

  DqnStepMetrics train_step();
  void run(const std::function<void(const EvalReport&)>& on_eval = {});
  // Greedy evaluation on the fixed evaluation goals.
  EvalReport evaluate_now();

  const Environment& env() const { return *env_; }
  const QModel& q() const { return q_; }
  QModel& q() { return q_; }
  const PrioritizedBuffer& buffer() const { return buffer_; }
  long step() const { return step_; }
  const std::vector<Goal>& eval_goals() const { return eval_goals_; }
  void set_eval_goals(std::vector<Goal> goals) { eval_goals_ = std::move(goals); }

 private:
  TrainConfig train_;
  DqnConfig dqn_;
  std::shared_ptr<const Environment> env_;
  QModel q_;
  AdamState adam_;
  PrioritizedBuffer buffer_;
  Rng goal_rng_;
  Rng buffer_rng_;
  long step_ = 0;
  long evals_done_ = 0;
  double loss_sum_ = 0.0;
  long loss_count_ = 0;
  std::vector<Goal> eval_goals_;
};

}  // namespace rbs
