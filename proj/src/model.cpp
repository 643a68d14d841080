#include "rbs/model.hpp"

#include <algorithm>
#include <cmath>

#include "rbs/errors.hpp"

namespace rbs {
namespace {

const Goal& goal_for(std::span<const Goal> goals, std::size_t i) {
  return goals.size() == 1 ? goals[0] : goals[i];
}

void check_goals(std::size_t n_states, std::span<const Goal> goals) {
  if (goals.size() != 1 && goals.size() != n_states)
    throw ShapeError("goal list must be broadcast (1) or per state");
}

std::vector<double> head_slice(const Eigen::MatrixXd& heads, int col, int row, int count) {
  std::vector<double> v(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) v[i] = heads(row + i, col);
  return v;
}

}  // namespace

Eigen::MatrixXd encode_batch(const Environment& env, std::span<const EnvState> states,
                             std::span<const Goal> goals) {
  check_goals(states.size(), goals);
  const int dim = env.encoding_size();
  Eigen::MatrixXd x(dim, static_cast<Eigen::Index>(states.size()));
  for (std::size_t i = 0; i < states.size(); ++i)
    env.encode(states[i], goal_for(goals, i), std::span<double>(x.col(static_cast<Eigen::Index>(i)).data(), dim));
  return x;
}

GCModel::GCModel(const Environment& env, std::span<const int> hidden, Rng& rng)
    : layout_(HeadLayout::of(env)),
      net_(DenseNet::mlp(env.encoding_size(), hidden, layout_.rows(), rng)) {}

GCModel::GCModel(HeadLayout layout, DenseNet net) : layout_(layout), net_(std::move(net)) {
  if (net_.output_dim() != layout_.rows()) throw ShapeError("net output does not match head layout");
}

GCModel GCModel::zeros(const Environment& env, std::span<const int> hidden) {
  const HeadLayout layout = HeadLayout::of(env);
  return GCModel(layout, DenseNet::zeros(env.encoding_size(), hidden, layout.rows()));
}

Eigen::MatrixXd GCModel::heads(const Environment& env, std::span<const EnvState> states,
                               std::span<const Goal> goals) const {
  return forward_batch(net_, encode_batch(env, states, goals));
}

Eigen::MatrixXd GCModel::heads_with_cache(const Environment& env, std::span<const EnvState> states,
                                          std::span<const Goal> goals, ForwardCache& cache) const {
  return forward_batch(net_, encode_batch(env, states, goals), &cache);
}

Prediction predict(const FlowModel& model, const Environment& env, const EnvState& state,
                   const Goal& goal) {
  const HeadLayout lay = model.layout();
  if (lay.num_forward != env.num_forward_actions() || lay.num_backward != env.num_backward_actions())
    throw ShapeError("model heads do not match the environment");
  const Eigen::MatrixXd h = model.heads(env, std::span(&state, 1), std::span(&goal, 1));
  Prediction p;
  p.log_flow = h(lay.log_flow_row(), 0);
  const auto f = head_slice(h, 0, lay.forward_row(), lay.num_forward);
  const auto b = head_slice(h, 0, lay.backward_row(), lay.num_backward);
  p.forward_log_probs = env.is_terminal(state)
                            ? std::vector<double>(f.size(), kNegInf)
                            : masked_log_softmax(f, env.forward_mask(state));
  p.backward_log_probs = env.is_initial(state)
                             ? std::vector<double>(b.size(), kNegInf)
                             : masked_log_softmax(b, env.backward_mask(state));
  return p;
}

int sample_categorical(std::span<const double> log_probs, Rng& rng) {
  const double u = uniform01(rng);
  double cum = 0.0;
  int last_valid = -1;
  for (std::size_t i = 0; i < log_probs.size(); ++i) {
    if (log_probs[i] <= kNegInf) continue;
    last_valid = static_cast<int>(i);
    cum += std::exp(log_probs[i]);
    if (u < cum) return last_valid;
  }
  if (last_valid < 0) throw InvalidMaskError("no action with positive probability");
  return last_valid;
}

std::vector<TrajectoryRecord> sample_forward_trajectories(const FlowModel& model,
                                                          const Environment& env,
                                                          std::span<const Goal> goals,
                                                          std::span<Rng> rngs,
                                                          std::vector<RolloutStats>* stats) {
  if (goals.size() != rngs.size()) throw ShapeError("one generator per rollout required");
  const HeadLayout lay = model.layout();
  const std::size_t n = goals.size();
  std::vector<TrajectoryRecord> out(n);
  if (stats) stats->assign(n, RolloutStats{});
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < n; ++i) {
    out[i].goal = goals[i];
    out[i].states.push_back(env.initial_state());
    out[i].provenance = Provenance::Forward;
    active.push_back(i);
  }
  std::vector<EnvState> batch_states;
  std::vector<Goal> batch_goals;
  while (!active.empty()) {
    batch_states.clear();
    batch_goals.clear();
    for (auto i : active) {
      batch_states.push_back(out[i].states.back());
      batch_goals.push_back(goals[i]);
    }
    const Eigen::MatrixXd h = model.heads(env, batch_states, batch_goals);
    std::vector<std::size_t> still;
    for (std::size_t k = 0; k < active.size(); ++k) {
      const std::size_t i = active[k];
      const EnvState& s = out[i].states.back();
      const auto logits = head_slice(h, static_cast<int>(k), lay.forward_row(), lay.num_forward);
      const auto logp = masked_log_softmax(logits, env.forward_mask(s));
      if (stats) {
        double ent = 0.0;
        for (double lp : logp)
          if (lp > kNegInf) ent -= std::exp(lp) * lp;
        (*stats)[i].entropy_sum += ent;
        (*stats)[i].entropy_count += 1;
      }
      const int a = sample_categorical(logp, rngs[i]);
      out[i].actions.push_back(a);
      out[i].states.push_back(env.apply_forward(s, a));
      if (!env.is_terminal(out[i].states.back())) still.push_back(i);
    }
    active = std::move(still);
  }
  for (auto& r : out) {
    r.reward = env.reward(r.states.back(), r.goal);
    complete_backward_actions(env, r);
  }
  return out;
}

TrajectoryRecord sample_forward_trajectory(const FlowModel& model, const Environment& env,
                                           const Goal& goal, Rng& rng) {
  return std::move(sample_forward_trajectories(model, env, std::span(&goal, 1), std::span(&rng, 1))[0]);
}

std::vector<TrajectoryRecord> synthesize_backward_trajectories(const FlowModel& model,
                                                               const Environment& env,
                                                               std::span<const Goal> goals,
                                                               std::span<Rng> rngs) {
  if (goals.size() != rngs.size()) throw ShapeError("one generator per rollout required");
  const HeadLayout lay = model.layout();
  const std::size_t n = goals.size();
  // Reverse walks; paths[i] runs goal -> s0 and back_actions[i] the actions taken.
  std::vector<std::vector<EnvState>> paths(n);
  std::vector<std::vector<int>> back_actions(n);
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < n; ++i) {
    if (!env.goal_reachable(goals[i])) throw UnreachableGoalError("goal cannot be reached from s0");
    paths[i].push_back(env.goal_state(goals[i]));
    if (!env.is_initial(paths[i].back())) active.push_back(i);
  }
  std::vector<EnvState> batch_states;
  std::vector<Goal> batch_goals;
  while (!active.empty()) {
    batch_states.clear();
    batch_goals.clear();
    for (auto i : active) {
      batch_states.push_back(paths[i].back());
      batch_goals.push_back(goals[i]);
    }
    const Eigen::MatrixXd h = model.heads(env, batch_states, batch_goals);
    std::vector<std::size_t> still;
    for (std::size_t k = 0; k < active.size(); ++k) {
      const std::size_t i = active[k];
      const EnvState& s = paths[i].back();
      const Mask mask = env.backward_mask(s);
      if (std::none_of(mask.begin(), mask.end(), [](bool v) { return v; }))
        throw UnreachableGoalError("backward walk stuck at " + env.describe(s));
      const auto logits = head_slice(h, static_cast<int>(k), lay.backward_row(), lay.num_backward);
      const int b = sample_categorical(masked_log_softmax(logits, mask), rngs[i]);
      back_actions[i].push_back(b);
      paths[i].push_back(env.apply_backward(s, b));
      if (!env.is_initial(paths[i].back())) still.push_back(i);
    }
    active = std::move(still);
  }
  std::vector<TrajectoryRecord> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& r = out[i];
    r.goal = goals[i];
    r.reward = 1;
    r.provenance = Provenance::Rbs;
    r.states.assign(paths[i].rbegin(), paths[i].rend());
    r.backward_actions.assign(back_actions[i].rbegin(), back_actions[i].rend());
    r.actions.resize(r.backward_actions.size());
    for (std::size_t t = 0; t < r.actions.size(); ++t) {
      const auto a = env.forward_action_between(r.states[t], r.states[t + 1]);
      if (!a) throw InvalidTrajectoryError("synthesized edge has no forward action");
      r.actions[t] = *a;
    }
  }
  return out;
}

TrajectoryRecord synthesize_backward_trajectory(const FlowModel& model, const Environment& env,
                                                const Goal& goal, Rng& rng) {
  return std::move(synthesize_backward_trajectories(model, env, std::span(&goal, 1), std::span(&rng, 1))[0]);
}

}  // namespace rbs
