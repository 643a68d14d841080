#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "helpers.hpp"
#include "rbs/env_kinds.hpp"
#include "rbs/errors.hpp"
#include "rbs/oracle.hpp"
#include "rbs/trainer.hpp"

using namespace rbs;

namespace {

TrainConfig small_grid(int side, DataMode mode, std::uint64_t seed) {
  TrainConfig c;
  c.env = EnvSpec::grid(side);
  c.mode = mode;
  c.seed = seed;
  c.steps = 50;
  c.objective.total_steps = c.steps;
  c.rollouts = 4;
  c.batch_size = 16;
  c.hidden = {16, 16};
  c.eval_goals = 4;
  c.eval_trials = 5;
  return c;
}

// Forward logits depend only on the action: bias vector on a zero net.
GCModel biased_model(const Environment& env, double right, double up, double stop) {
  auto m = GCModel::zeros(env, std::vector<int>{4});
  auto& out = m.net().layer(m.net().num_layers() - 1).bias;
  const int r = m.layout().forward_row();
  out(r + GridWorld::kRight) = right;
  out(r + GridWorld::kUp) = up;
  out(r + GridWorld::kStop) = stop;
  return m;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("step bookkeeping per mode") {
  for (auto mode : {DataMode::Rbs, DataMode::Her, DataMode::Plain}) {
    Trainer tr(small_grid(4, mode, 1));
    const auto m = tr.train_step();
    CHECK(tr.optimizer().t == 1);
    const std::size_t per = mode == DataMode::Plain ? 4 : 8;
    CHECK(tr.buffer().size() == per);
    CHECK(m.inserted == per);
    CHECK(tr.step() == 1);
  }
}

TEST_CASE("half the records are synthesized with reward 1") {
  Trainer tr(small_grid(5, DataMode::Rbs, 2));
  for (int i = 0; i < 5; ++i) tr.train_step();
  int rbs = 0, fwd = 0;
  for (SlotId s : tr.buffer().live_slots()) {
    const auto& r = tr.buffer().record(s);
    if (r.provenance == Provenance::Rbs) {
      ++rbs;
      CHECK(r.reward == 1);
      CHECK(tr.env().phi(r.states.back()) == r.goal);
    } else {
      ++fwd;
    }
    CHECK(is_valid_trajectory(tr.env(), r));
  }
  CHECK(rbs == fwd);
}

TEST_CASE("identical seeds give identical metric streams") {
  auto run = [](std::uint64_t seed) {
    Trainer tr(small_grid(4, DataMode::Rbs, seed));
    std::vector<double> out;
    tr.run([&](const EvalReport& r) {
      out.push_back(r.success_rate);
      out.push_back(r.loss);
      out.push_back(r.entropy);
    });
    return out;
  };
  const auto a = run(3), b = run(3), c = run(4);
  CHECK(a == b);
  CHECK(a != c);
}

TEST_CASE("her relabel") {
  GridWorld grid(EnvSpec::grid(8));
  TrajectoryRecord r;
  r.states.push_back(grid.initial_state());
  for (int a : {0, 0, 0, 0, 1, 1, 2}) {
    r.states.push_back(grid.apply_forward(r.states.back(), a));
    r.actions.push_back(a);
  }
  r.goal = GridWorld::cell_goal(7, 7);
  r.reward = 0;
  const auto h = her_relabel(grid, r);
  CHECK(h.goal == GridWorld::cell_goal(4, 2));
  CHECK(h.reward == 1);
  CHECK(h.provenance == Provenance::Her);
  CHECK(h.states == r.states);
  CHECK(is_valid_trajectory(grid, h));

  auto ok = r;
  ok.goal = GridWorld::cell_goal(4, 2);
  ok.reward = 1;
  const auto same = her_relabel(grid, ok);
  CHECK(same.goal == ok.goal);
  CHECK(same.actions == ok.actions);
  CHECK(same.provenance == Provenance::Her);

  auto cut = r;
  cut.states.pop_back();
  cut.actions.pop_back();
  CHECK_THROWS_AS(her_relabel(grid, cut), InvalidTrajectoryError);
}

TEST_CASE("success rate of a fixed policy") {
  GridWorld grid(EnvSpec::grid(4));
  // Always right until the wall, then up, stopping only at (3,3).
  const auto dag = enumerate_dag(grid);
  auto fixed = [&](const Goal& g) {
    TabularFlowModel policy(HeadLayout::of(grid), g);
    for (const auto& s : dag.states) {
      Eigen::VectorXd h = Eigen::VectorXd::Zero(HeadLayout::of(grid).rows());
      if (!s.done) {
        const auto m = grid.forward_mask(s);
        const int pick = m[GridWorld::kRight] ? GridWorld::kRight : m[GridWorld::kUp] ? GridWorld::kUp : GridWorld::kStop;
        for (int a = 0; a < 3; ++a) h(1 + a) = a == pick ? 0.0 : kNegInf;
      }
      policy.set(s, h);
    }
    return policy;
  };
  Rng rng = make_rng(1, "eval");
  const std::vector<Goal> hit = {GridWorld::cell_goal(3, 3)};
  const auto policy = fixed(hit[0]);
  CHECK(evaluate_success_rate(policy, grid, hit, 20, rng).success_rate == 1.0);
  const std::vector<Goal> miss = {GridWorld::cell_goal(0, 3)};
  CHECK(evaluate_success_rate(fixed(miss[0]), grid, miss, 20, rng).success_rate == 0.0);
  CHECK_THROWS_AS(evaluate_success_rate(policy, grid, std::span<const Goal>{}, 20, rng), InvalidEvalError);
  CHECK_THROWS_AS(evaluate_success_rate(policy, grid, hit, 0, rng), InvalidEvalError);
}

TEST_CASE("uniform policy reach rate matches enumeration on H=8") {
  GridWorld grid(EnvSpec::grid(8));
  const auto model = GCModel::zeros(grid, std::vector<int>{4});
  const auto dag = enumerate_dag(grid);
  const auto goals = grid.goal_universe();
  double exact_mean = 0;
  for (const auto& g : goals) {
    const auto dist = exact_terminal_distribution(model, grid, dag, g);
    for (std::size_t t = 0; t < dag.terminals.size(); ++t)
      if (grid.phi(dag.states[dag.terminals[t]]) == g) exact_mean += dist[t] / goals.size();
  }
  Rng rng = make_rng(2, "eval");
  const auto rep = evaluate_success_rate(model, grid, goals, 100, rng);
  CHECK(std::abs(rep.success_rate - exact_mean) < 0.02);
}

TEST_CASE("entropy is recomputable from the rollouts") {
  GridWorld grid(EnvSpec::grid(5));
  Rng init = make_rng(3, "init");
  const GCModel model(grid, std::vector<int>{16}, init);
  const std::vector<Goal> goals = {GridWorld::cell_goal(2, 3), GridWorld::cell_goal(4, 0)};
  Rng rng = make_rng(3, "eval");
  std::vector<TrajectoryRecord> rolls;
  const auto rep = evaluate_success_rate(model, grid, goals, 7, rng, &rolls);
  double sum = 0;
  long n = 0;
  for (const auto& r : rolls)
    for (std::size_t t = 0; t + 1 < r.states.size(); ++t) {
      const auto p = predict(model, grid, r.states[t], r.goal);
      for (double lp : p.forward_log_probs)
        if (lp > kNegInf) sum -= std::exp(lp) * lp;
      ++n;
    }
  CHECK(std::abs(rep.entropy - sum / n) < 1e-9);
}

TEST_CASE("unseen map evaluation") {
  GridWorld open(EnvSpec::grid(4));
  Rng init = make_rng(4, "init");
  const GCModel model(open, std::vector<int>{16}, init);
  const std::vector<Goal> goals = {GridWorld::cell_goal(3, 3), GridWorld::cell_goal(1, 2)};

  SUBCASE("no extra obstacles is the plain protocol") {
    Rng a = make_rng(5, "eval"), b = make_rng(5, "eval");
    const auto x = evaluate_success_rate(model, open, goals, 30, a);
    const auto y = evaluate_unseen(model, open, open, goals, 30, b);
    CHECK(x.per_goal == y.per_goal);
    CHECK(x.entropy == y.entropy);
  }
  SUBCASE("severed goal is flagged and excluded") {
    auto spec = EnvSpec::grid(4);
    spec.obstacles = {{2, 3}, {3, 2}};
    GridWorld walled(spec);
    Rng rng = make_rng(6, "eval");
    const auto rep = evaluate_unseen(model, open, walled, goals, 30, rng);
    CHECK(rep.unreachable == std::vector<bool>{true, false});
    CHECK(rep.per_goal[0] == 0.0);
    CHECK(rep.success_rate == rep.per_goal[1]);
  }
  SUBCASE("single corridor matches the absorbing walk") {
    auto spec = EnvSpec::grid(4);
    spec.obstacles = {{0, 1}, {2, 0}, {1, 2}, {3, 1}, {2, 3}};
    GridWorld corridor(spec);
    const auto walker = biased_model(open, 0.0, 0.0, -6.0);
    const Goal goal = GridWorld::cell_goal(3, 3);
    const auto dag = enumerate_dag(corridor);
    const auto dist = exact_terminal_distribution(walker, corridor, dag, goal);
    double exact = 0;
    for (std::size_t t = 0; t < dag.terminals.size(); ++t)
      if (corridor.phi(dag.states[dag.terminals[t]]) == goal) exact = dist[t];
    // six moves, each taken with probability 1 / (1 + e^-6)
    CHECK(exact == doctest::Approx(std::pow(1.0 / (1.0 + std::exp(-6.0)), 6)).epsilon(1e-12));
    Rng rng = make_rng(7, "eval");
    const std::vector<Goal> one = {goal};
    CHECK(std::abs(evaluate_unseen(walker, open, corridor, one, 200, rng).success_rate - exact) < 0.03);
  }
}

TEST_CASE("training does not lose ground on 3x3") {
  for (std::uint64_t seed : {1, 2, 3}) {
    auto cfg = small_grid(3, DataMode::Rbs, seed);
    cfg.steps = 500;
    cfg.objective.total_steps = 500;
    cfg.eval_goals = 9;
    cfg.eval_trials = 20;
    cfg.learning_rate = 1e-3;
    Trainer tr(cfg);
    const double before = tr.evaluate_now().success_rate;
    for (int i = 0; i < 500; ++i) tr.train_step();
    CHECK(tr.evaluate_now().success_rate >= before);
  }
}

TEST_CASE("non-finite loss aborts before the update") {
  Trainer tr(small_grid(4, DataMode::Rbs, 5));
  tr.train_step();
  const auto dump = test::scratch_dir("nonfinite") + "/batch.jsonl";
  tr.set_diagnostic_path(dump);
  tr.model().net().layer(0).bias(0) = std::nan("");
  const auto t_before = tr.optimizer().t;
  CHECK_THROWS_AS(tr.train_step(), NonFiniteError);
  CHECK(tr.optimizer().t == t_before);
  CHECK(std::filesystem::file_size(dump) > 0);
}

TEST_CASE("distinct evaluation goals") {
  auto spec = EnvSpec::grid(4);
  spec.masked_goals = {GridWorld::cell_goal(1, 1)};
  GridWorld grid(spec);
  Rng rng = make_rng(8, "g");
  const auto goals = draw_distinct_goals(grid, 100, rng);
  CHECK(goals.size() == 15);
  CHECK(std::set<Goal>(goals.begin(), goals.end()).size() == 15);
  SequenceEnv big(EnvSpec::sequence(8, 20));
  const auto many = draw_distinct_goals(big, 32, rng);
  CHECK(std::set<Goal>(many.begin(), many.end()).size() == 32);
}

TEST_CASE("checkpoints") {
  Trainer tr(small_grid(4, DataMode::Rbs, 6));
  tr.train_step();
  const auto dir = test::scratch_dir("ckpt");
  const auto path = dir + "/m.bin";
  save_checkpoint(path, tr.model(), tr.config().env, tr.step());
  const auto c = load_checkpoint(path);
  CHECK(c.step == 1);
  CHECK(c.model.net() == tr.model().net());
  CHECK(load_checkpoint_for(path, EnvSpec::grid(4)).net() == tr.model().net());
  CHECK_THROWS_AS(load_checkpoint_for(path, EnvSpec::grid(5)), IncompatibleCheckpointError);
  CHECK_THROWS_AS(load_checkpoint(dir + "/missing.bin"), FormatError);
}

TEST_CASE("config validation") {
  auto cfg = small_grid(4, DataMode::Rbs, 1);
  cfg.rollouts = 0;
  CHECK_THROWS_AS(Trainer{cfg}, InvalidSpecError);
  CHECK_THROWS_AS(data_mode_from_string("bogus"), InvalidSpecError);
  CHECK(data_mode_from_string("none") == DataMode::Plain);
}

}
