#pragma once

// The retrospective backward synthesis training loop and its evaluation
// protocols.

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rbs/env.hpp"
#include "rbs/model.hpp"
#include "rbs/nn.hpp"
#include "rbs/objectives.hpp"
#include "rbs/replay.hpp"
#include "rbs/trajectory.hpp"

namespace rbs {

// How each forward rollout is complemented before insertion:
//   rbs   a backward-synthesized trajectory to the same goal (reward 1)
//   her   the rollout relabeled with its achieved goal
//   plain nothing
enum class DataMode { Rbs, Her, Plain };

std::string to_string(DataMode mode);
DataMode data_mode_from_string(const std::string& name);

struct TrainConfig {
  EnvSpec env;
  ObjectiveConfig objective;
  long steps = 1000;
  int rollouts = 16;
  int batch_size = 128;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  DataMode mode = DataMode::Rbs;
  std::uint64_t seed = 0;
  std::vector<int> hidden = {256, 256};
  std::size_t buffer_capacity = 1000000;
  double p_max = 1.0;
  long eval_every = 0;  // 0 selects steps / 100
  int eval_goals = 64;
  int eval_trials = 10;

  long eval_cadence() const;
  void validate() const;
};

struct EvalReport {
  long step = 0;
  double success_rate = 0.0;           // mean over reachable goals
  std::vector<double> per_goal;        // one rate per goal
  std::vector<bool> unreachable;       // goals excluded from the mean
  double entropy = 0.0;                // mean H(P_F) over visited states
  double gamma = 0.0;
  double loss = 0.0;                   // mean training loss since the last report
  std::size_t buffer_size = 0;
};

// Stochastic P_F rollouts: `trials` per goal, success iff reward(s_n, y) = 1.
EvalReport evaluate_success_rate(const FlowModel& model, const Environment& env,
                                 std::span<const Goal> goals, int trials, Rng& rng,
                                 std::vector<TrajectoryRecord>* rollouts = nullptr);

// Same protocol, but rollouts follow `test_env` masks (e.g. extra obstacles)
// with the trained model's logits re-masked. Goals unreachable in the test
// map get rate 0, are flagged and are left out of the mean.
EvalReport evaluate_unseen(const FlowModel& model, const Environment& trained_env,
                           const Environment& test_env, std::span<const Goal> goals, int trials,
                           Rng& rng, std::vector<TrajectoryRecord>* rollouts = nullptr);

// Copy with goal := phi(s_n), reward := 1, provenance := her.
TrajectoryRecord her_relabel(const Environment& env, const TrajectoryRecord& record);

struct StepMetrics {
  long step = 0;  // index of the step just taken
  double loss = 0.0;
  double objective = 0.0;
  double kl = 0.0;
  double gamma = 0.0;
  std::size_t inserted = 0;
  std::size_t batch_size = 0;
  int forward_successes = 0;
};

using GoalSampler = std::function<Goal(Rng&)>;

class Trainer {
 public:
  // `goal_sampler` overrides env.sample_goal for training goals.
  explicit Trainer(TrainConfig config, GoalSampler goal_sampler = {});

  StepMetrics train_step();
  // Calls `on_eval` every eval_cadence() steps (and after the last step).
  void run(const std::function<void(const EvalReport&)>& on_eval = {});
  EvalReport evaluate_now();

  const TrainConfig& config() const { return config_; }
  const Environment& env() const { return *env_; }
  std::shared_ptr<const Environment> env_ptr() const { return env_; }
  const GCModel& model() const { return model_; }
  GCModel& model() { return model_; }
  const PrioritizedBuffer& buffer() const { return buffer_; }
  const AdamState& optimizer() const { return adam_; }
  long step() const { return step_; }
  const std::vector<Goal>& eval_goals() const { return eval_goals_; }
  void set_eval_goals(std::vector<Goal> goals) { eval_goals_ = std::move(goals); }

  // Path for the batch dump written before a non-finite loss aborts the run.
  void set_diagnostic_path(std::string path) { diagnostic_path_ = std::move(path); }

 private:
  TrainConfig config_;
  std::shared_ptr<const Environment> env_;
  GoalSampler goal_sampler_;
  GCModel model_;
  AdamState adam_;
  PrioritizedBuffer buffer_;
  Rng goal_rng_;
  Rng buffer_rng_;
  long step_ = 0;
  long evals_done_ = 0;
  double loss_sum_ = 0.0;
  long loss_count_ = 0;
  std::vector<Goal> eval_goals_;
  std::string diagnostic_path_;
};

// Distinct goals drawn uniformly without replacement (as many as exist when
// fewer than `count`); masked goals are excluded.
std::vector<Goal> draw_distinct_goals(const Environment& env, int count, Rng& rng);

// Checkpoint layout: magic "RBSCKPT1" | u64 env shape hash | i64 step |
// u32 forward heads | u32 backward heads | network (see write_net).
void save_checkpoint(const std::string& path, const GCModel& model, const EnvSpec& spec, long step);
struct Checkpoint {
  GCModel model;
  std::uint64_t shape_hash = 0;
  long step = 0;
};
Checkpoint load_checkpoint(const std::string& path);
// Throws IncompatibleCheckpointError when the env shape differs.
GCModel load_checkpoint_for(const std::string& path, const EnvSpec& spec);

}  // namespace rbs
