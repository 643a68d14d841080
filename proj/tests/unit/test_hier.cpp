#include <doctest.h>

#include <cmath>

#include "rbs/env_kinds.hpp"
#include "rbs/errors.hpp"
#include "rbs/hier.hpp"

using namespace rbs;

namespace {

Goal seq_goal(std::initializer_list<int> v) {
  Goal g;
  for (int x : v) g.data.push_back(static_cast<std::int16_t>(x));
  return g;
}

}  // namespace

TEST_SUITE("hier") {

TEST_CASE("decompose") {
  const Goal g = seq_goal({0, 1, 2, 3, 3, 2, 1, 0});
  const auto halves = decompose_goal(g, 2);
  REQUIRE(halves.size() == 2);
  CHECK(halves[0] == seq_goal({0, 1, 2, 3}));
  CHECK(halves[1] == seq_goal({3, 2, 1, 0}));
  CHECK(decompose_goal(g, 1) == std::vector<Goal>{g});
  const auto singles = decompose_goal(g, 8);
  CHECK(singles.size() == 8);
  CHECK(singles[5] == seq_goal({2}));
  CHECK_THROWS_AS(decompose_goal(g, 3), DivisibilityError);
}

TEST_CASE("compose") {
  const std::vector<Goal> parts = {seq_goal({1, 2}), seq_goal({3, 4})};
  CHECK(compose(parts, 2) == seq_goal({1, 2, 3, 4}));
  const std::vector<Goal> ragged = {seq_goal({1, 2}), seq_goal({3})};
  CHECK_THROWS_AS(compose(ragged, 2), CompositionError);
}

TEST_CASE("round trip on random AMP goals") {
  SequenceEnv amp(EnvSpec::amp());
  Rng rng = make_rng(1, "hier-rt");
  for (int i = 0; i < 1000; ++i) {
    const Goal g = amp.sample_goal(rng);
    CHECK(compose(decompose_goal(g, 5), 10) == g);
  }
}

TEST_CASE("exact match is conjunctive over slots") {
  SequenceEnv full(EnvSpec::sequence(4, 6));
  const Goal y = seq_goal({0, 1, 2, 3, 0, 1});
  auto parts = decompose_goal(y, 3);
  CHECK(full.reward(full.goal_state(compose(parts, 2)), y) == 1);
  parts[1] = seq_goal({2, 2});
  CHECK(full.reward(full.goal_state(compose(parts, 2)), y) == 0);
}

TEST_CASE("spec checks") {
  HierSpec h{EnvSpec::sequence(8, 20), 4};
  CHECK_NOTHROW(h.validate());
  CHECK(h.sub_length() == 5);
  CHECK(h.sub_spec().sequence_length() == 5);
  CHECK(h.sub_spec().sequence_vocab() == 8);
  HierSpec bad{EnvSpec::sequence(8, 20), 3};
  CHECK_THROWS_AS(bad.validate(), DivisibilityError);
  HierSpec grid{EnvSpec::grid(4), 2};
  CHECK_THROWS_AS(grid.validate(), InvalidSpecError);
  // AMP: 20^10 sub-task objects against 20^50
  HierSpec amp{EnvSpec::amp(), 5};
  const auto sub = make_environment(amp.sub_spec());
  CHECK(sub->terminal_count() == doctest::Approx(std::pow(20.0, 10)));
  CHECK(sub->max_depth() == 10);
  CHECK(make_environment(amp.base)->max_depth() == 50);
}

TEST_CASE("k = 1 is plain training") {
  TrainConfig c;
  c.env = EnvSpec::sequence(3, 3);
  c.steps = 20;
  c.objective.total_steps = 20;
  c.rollouts = 4;
  c.batch_size = 8;
  c.hidden = {16};
  c.eval_goals = 4;
  c.eval_trials = 2;
  c.seed = 9;
  const auto models = hier_train(HierSpec{c.env, 1}, c);
  TrainConfig flat = c;
  flat.seed = derive_seed(9, "hier", 0);
  Trainer t(flat);
  t.run();
  REQUIRE(models.slots.size() == 1);
  CHECK(models.slots[0].net() == t.model().net());
}

TEST_CASE("each slot decays the KL weight over its own budget") {
  TrainConfig c;
  c.env = EnvSpec::sequence(3, 4);
  c.steps = 40;
  c.objective.total_steps = 40;
  c.objective.gamma0 = 2.0;
  c.rollouts = 2;
  c.batch_size = 4;
  c.hidden = {8};
  c.eval_goals = 2;
  c.eval_trials = 1;
  std::vector<double> last(2, -1.0);
  hier_train(HierSpec{c.env, 2}, c, [&](int slot, const EvalReport& r) { last[slot] = r.gamma; });
  // 20 steps per slot: the last step taken is 19, so gamma = 2 * (1 - 19/20)
  for (double g : last) CHECK(g == doctest::Approx(0.1));
}

TEST_CASE("composed success is the product of slot successes") {
  HierModels m;
  m.spec = HierSpec{EnvSpec::sequence(2, 4), 2};
  const auto sub = make_environment(m.spec.sub_spec());
  for (int i = 0; i < 2; ++i) {
    Rng init = make_rng(10, "init", i);
    m.slots.emplace_back(*sub, std::vector<int>{8}, init);
  }
  const Goal y = seq_goal({0, 1, 1, 1});
  Rng rng = make_rng(11, "roll");
  const int n = 20000;
  int all = 0, s0 = 0, s1 = 0;
  for (int i = 0; i < n; ++i) {
    const auto r = hier_rollout(m, y, rng);
    CHECK(r.composed.data.size() == 4);
    CHECK(r.success == (r.slot_success[0] && r.slot_success[1]));
    all += r.success;
    s0 += r.slot_success[0];
    s1 += r.slot_success[1];
  }
  const double product = (s0 / double(n)) * (s1 / double(n));
  CHECK(std::abs(all / double(n) - product) < 0.01);
  Rng eval = make_rng(12, "eval");
  const std::vector<Goal> goals = {y};
  CHECK(std::abs(evaluate_hier(m, goals, n, eval) - product) < 0.015);
}

}
