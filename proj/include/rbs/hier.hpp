#pragma once

// Hierarchical goal decomposition for long sequences: a length-l goal is cut
// into k contiguous slices, one independently trained model per slice, and
// the sampled sub-sequences are concatenated.

#include <functional>
#include <span>
#include <vector>

#include "rbs/env.hpp"
#include "rbs/model.hpp"
#include "rbs/trainer.hpp"

namespace rbs {

struct HierSpec {
  EnvSpec base;  // a sequence-valued kind (bits, tfbind, amp, sequence)
  int k = 1;

  int base_length() const { return base.sequence_length(); }
  int sub_length() const { return base_length() / k; }
  // Plain sequence spec of length l/k over the base vocabulary.
  EnvSpec sub_spec() const;
  // Throws DivisibilityError / InvalidSpecError.
  void validate() const;
};

std::vector<Goal> decompose_goal(const Goal& goal, int k);
// Throws CompositionError unless every part has `sub_length` symbols.
Goal compose(std::span<const Goal> parts, int sub_length);

struct HierModels {
  HierSpec spec;
  std::vector<GCModel> slots;
};

// Each slot is a full trainer run on the sub-spec with steps / k steps (so the
// total budget equals `train.steps`) and goals drawn as slice i of uniformly
// sampled base goals. `on_eval` receives (slot, report).
HierModels hier_train(const HierSpec& spec, const TrainConfig& train,
                      const std::function<void(int, const EvalReport&)>& on_eval = {});

struct HierRollout {
  Goal composed;
  bool success = false;
  std::vector<bool> slot_success;
};

HierRollout hier_rollout(const HierModels& models, const Goal& goal, Rng& rng);

// Mean composed success over `trials` rollouts per goal.
double evaluate_hier(const HierModels& models, std::span<const Goal> goals, int trials, Rng& rng);

}  // namespace rbs
