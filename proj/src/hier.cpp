#include "rbs/hier.hpp"

#include "rbs/errors.hpp"

namespace rbs {

EnvSpec HierSpec::sub_spec() const {
  EnvSpec s = EnvSpec::sequence(base.sequence_vocab(), sub_length());
  s.enumeration_cap = base.enumeration_cap;
  return s;
}

void HierSpec::validate() const {
  if (base.kind == EnvKind::Grid || base.kind == EnvKind::Set)
    throw InvalidSpecError("hierarchical decomposition needs a sequence environment");
  base.validate();
  if (k < 1) throw DivisibilityError("k must be >= 1");
  if (base_length() % k != 0)
    throw DivisibilityError("k = " + std::to_string(k) + " does not divide length " +
                            std::to_string(base_length()));
}

std::vector<Goal> decompose_goal(const Goal& goal, int k) {
  const int l = static_cast<int>(goal.data.size());
  if (k < 1 || l % k != 0)
    throw DivisibilityError("k = " + std::to_string(k) + " does not divide length " + std::to_string(l));
  const int w = l / k;
  std::vector<Goal> out(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i)
    out[static_cast<std::size_t>(i)].data.assign(goal.data.begin() + i * w, goal.data.begin() + (i + 1) * w);
  return out;
}

Goal compose(std::span<const Goal> parts, int sub_length) {
  Goal out;
  for (const auto& p : parts) {
    if (static_cast<int>(p.data.size()) != sub_length)
      throw CompositionError("sub-sequence of length " + std::to_string(p.data.size()) +
                             ", expected " + std::to_string(sub_length));
    out.data.insert(out.data.end(), p.data.begin(), p.data.end());
  }
  return out;
}

HierModels hier_train(const HierSpec& spec, const TrainConfig& train,
                      const std::function<void(int, const EvalReport&)>& on_eval) {
  spec.validate();
  HierModels out;
  out.spec = spec;
  const auto base_env = make_environment(spec.base);
  const EnvSpec sub = spec.sub_spec();
  for (int i = 0; i < spec.k; ++i) {
    TrainConfig c = train;
    c.env = sub;
    c.steps = std::max<long>(1, train.steps / spec.k);
    c.eval_every = train.eval_every;
    c.seed = derive_seed(train.seed, "hier", static_cast<std::uint64_t>(i));
    const int k = spec.k;
    GoalSampler sampler = [base_env, i, k](Rng& rng) {
      return decompose_goal(base_env->sample_goal(rng), k)[static_cast<std::size_t>(i)];
    };
    Trainer t(c, sampler);
    t.run([&](const EvalReport& r) {
      if (on_eval) on_eval(i, r);
    });
    out.slots.push_back(t.model());
  }
  return out;
}

HierRollout hier_rollout(const HierModels& models, const Goal& goal, Rng& rng) {
  const auto sub_env = make_environment(models.spec.sub_spec());
  const auto parts = decompose_goal(goal, models.spec.k);
  if (models.slots.size() != parts.size()) throw ShapeError("one model per slot required");
  HierRollout out;
  out.success = true;
  std::vector<Goal> made;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const TrajectoryRecord r = sample_forward_trajectory(models.slots[i], *sub_env, parts[i], rng);
    made.push_back(sub_env->phi(r.states.back()));
    out.slot_success.push_back(r.reward == 1);
    out.success = out.success && r.reward == 1;
  }
  out.composed = compose(made, models.spec.sub_length());
  return out;
}

double evaluate_hier(const HierModels& models, std::span<const Goal> goals, int trials, Rng& rng) {
  if (goals.empty() || trials < 1) throw InvalidEvalError("need goals and trials >= 1");
  const auto sub_env = make_environment(models.spec.sub_spec());
  const std::size_t k = models.slots.size();
  const std::uint64_t base = rng();
  long ok = 0;
  // Batch each slot over all (goal, trial) pairs.
  std::vector<std::vector<int>> slot_ok(k);
  for (std::size_t i = 0; i < k; ++i) {
    std::vector<Goal> gs;
    std::vector<Rng> rngs;
    for (std::size_t g = 0; g < goals.size(); ++g) {
      const Goal part = decompose_goal(goals[g], models.spec.k)[i];
      for (int t = 0; t < trials; ++t) {
        gs.push_back(part);
        rngs.push_back(make_rng(base, "hier-eval", g * k + i, static_cast<std::uint64_t>(t)));
      }
    }
    for (const auto& r : sample_forward_trajectories(models.slots[i], *sub_env, gs, rngs))
      slot_ok[i].push_back(r.reward);
  }
  const std::size_t total = goals.size() * static_cast<std::size_t>(trials);
  for (std::size_t j = 0; j < total; ++j) {
    bool all = true;
    for (std::size_t i = 0; i < k; ++i) all = all && slot_ok[i][j] == 1;
    ok += all;
  }
  return static_cast<double>(ok) / static_cast<double>(total);
}

}  // namespace rbs
