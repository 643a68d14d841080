#include <doctest.h>

#include <cmath>
#include <map>

#include "rbs/env_kinds.hpp"
#include "rbs/errors.hpp"
#include "rbs/oracle.hpp"

using namespace rbs;

namespace {

Mask mask_of(std::initializer_list<int> bits) {
  Mask m;
  for (int b : bits) m.push_back(b != 0);
  return m;
}

}  // namespace

TEST_SUITE("envs") {

TEST_CASE("initial states") {
  GridWorld grid(EnvSpec::grid(32));
  CHECK(grid.initial_state() == GridWorld::cell_state(0, 0));
  SetGeneration set(EnvSpec::set(30, 12));
  CHECK(set.potential(set.initial_state()) == 0);
  SequenceEnv bits(EnvSpec::bits(2, 8));
  CHECK(bits.initial_state().data.empty());
}

TEST_CASE("forward masks") {
  GridWorld grid(EnvSpec::grid(4));
  CHECK(grid.forward_mask(GridWorld::cell_state(3, 1)) == mask_of({0, 1, 1}));
  CHECK_THROWS_AS(grid.forward_mask(GridWorld::cell_state(3, 1, true)), TerminalStateError);

  SetGeneration set(EnvSpec::set(5, 3));
  CHECK_THROWS_AS(set.make_state(std::vector<int>{2, 2}), InvalidSpecError);
  const auto s27 = SetGeneration(EnvSpec::set(8, 3)).make_state(std::vector<int>{2, 7});
  CHECK(SetGeneration(EnvSpec::set(8, 3)).forward_mask(s27) == mask_of({1, 1, 0, 1, 1, 1, 1, 0}));
  const auto s24 = set.make_state(std::vector<int>{2, 4});
  CHECK(set.forward_mask(s24) == mask_of({1, 1, 0, 1, 0}));

  SequenceEnv bits(EnvSpec::bits(2, 6));
  const auto full = bits.make_state(std::vector<int>{0, 1, 2});
  CHECK(bits.is_terminal(full));
  CHECK_THROWS_AS(bits.forward_mask(full), TerminalStateError);
  // Every prepend and append is open on a non-constant partial sequence.
  const auto partial = bits.make_state(std::vector<int>{1, 3});
  const auto m = bits.forward_mask(partial);
  CHECK(std::count(m.begin(), m.end(), true) == 8);
}

TEST_CASE("apply forward") {
  GridWorld grid(EnvSpec::grid(4));
  CHECK(grid.apply_forward(GridWorld::cell_state(1, 1), GridWorld::kRight) == GridWorld::cell_state(2, 1));
  CHECK(grid.apply_forward(GridWorld::cell_state(1, 1), GridWorld::kStop) == GridWorld::cell_state(1, 1, true));
  CHECK_THROWS_AS(grid.apply_forward(GridWorld::cell_state(3, 0), GridWorld::kRight), InvalidActionError);

  SequenceEnv bits(EnvSpec::bits(2, 8));
  const auto w3 = bits.make_state(std::vector<int>{3});
  CHECK(bits.apply_forward(w3, bits.prepend(1)) == bits.make_state(std::vector<int>{1, 3}));
  CHECK(bits.apply_forward(w3, bits.append(1)) == bits.make_state(std::vector<int>{3, 1}));

  SetGeneration set(EnvSpec::set(5, 2));
  const auto next = set.apply_forward(set.make_state(std::vector<int>{1}), 4);
  CHECK(set.is_terminal(next));
  CHECK(next == set.make_state(std::vector<int>{4, 1}));
  CHECK_THROWS_AS(set.apply_forward(set.make_state(std::vector<int>{1}), 1), InvalidActionError);
}

TEST_CASE("backward masks and transitions") {
  GridWorld grid(EnvSpec::grid(4));
  CHECK(grid.backward_mask(GridWorld::cell_state(0, 3)) == mask_of({0, 1, 0}));
  CHECK(grid.backward_mask(GridWorld::cell_state(0, 3, true)) == mask_of({0, 0, 1}));
  CHECK_THROWS_AS(grid.backward_mask(grid.initial_state()), NoParentError);

  SequenceEnv seq(EnvSpec::sequence(4, 5));
  const auto s = seq.make_state(std::vector<int>{1, 2, 3});
  CHECK(seq.apply_backward(s, SequenceEnv::kRemoveFront) == seq.make_state(std::vector<int>{2, 3}));
  CHECK(seq.apply_backward(s, SequenceEnv::kRemoveBack) == seq.make_state(std::vector<int>{1, 2}));
  CHECK_THROWS_AS(seq.backward_mask(seq.initial_state()), NoParentError);

  SetGeneration set(EnvSpec::set(5, 3));
  CHECK_THROWS_AS(set.apply_backward(set.make_state(std::vector<int>{0, 3}), 1), InvalidActionError);
}

TEST_CASE("forward then backward round trip on 4x4 grid") {
  GridWorld grid(EnvSpec::grid(4));
  int checked = 0;
  for (int x = 0; x < 4; ++x)
    for (int y = 0; y < 4; ++y) {
      const auto s = GridWorld::cell_state(x, y);
      const auto m = grid.forward_mask(s);
      for (int a = 0; a < 3; ++a) {
        if (!m[a]) continue;
        const auto child = grid.apply_forward(s, a);
        const auto b = grid.backward_action_between(child, s);
        REQUIRE(b.has_value());
        CHECK(grid.apply_backward(child, *b) == s);
        ++checked;
      }
    }
  CHECK(checked == 16 + 2 * 12);
}

TEST_CASE("parent child duality is exhaustive on small instances") {
  for (const auto& spec : {EnvSpec::grid(4), EnvSpec::set(5, 3), EnvSpec::bits(2, 4), EnvSpec::sequence(3, 4)}) {
    const auto env = make_environment(spec);
    const auto dag = enumerate_dag(*env);
    CHECK(check_parent_child_duality(*env, dag).empty());
    // Parents reported by apply_backward are exactly the DAG parents.
    for (std::size_t i = 1; i < dag.states.size(); ++i) {
      const auto m = env->backward_mask(dag.states[i]);
      std::vector<int> via_backward;
      for (int b = 0; b < static_cast<int>(m.size()); ++b)
        if (m[b]) via_backward.push_back(dag.index_of(env->apply_backward(dag.states[i], b)));
      auto parents = dag.parents[i];
      std::sort(parents.begin(), parents.end());
      std::sort(via_backward.begin(), via_backward.end());
      CHECK(parents == via_backward);
    }
  }
}

TEST_CASE("obstacles prune parents and children") {
  auto spec = EnvSpec::grid(4);
  spec.obstacles = {{1, 0}, {0, 2}};
  GridWorld grid(spec);
  CHECK(grid.forward_mask(grid.initial_state()) == mask_of({0, 1, 1}));
  CHECK(grid.backward_mask(GridWorld::cell_state(1, 1)) == mask_of({1, 0, 0}));
  CHECK_FALSE(grid.is_valid_goal(GridWorld::cell_goal(1, 0)));
  const auto dag = enumerate_dag(grid);
  CHECK(check_parent_child_duality(grid, dag).empty());
}

TEST_CASE("potential rises by one per forward step") {
  for (const auto& spec : {EnvSpec::grid(3), EnvSpec::set(4, 2), EnvSpec::bits(2, 4)}) {
    const auto env = make_environment(spec);
    const auto dag = enumerate_dag(*env);
    for (std::size_t i = 0; i < dag.states.size(); ++i)
      for (const auto& e : dag.children[i])
        CHECK(env->potential(dag.states[e.child]) == env->potential(dag.states[i]) + 1);
  }
}

TEST_CASE("reward") {
  GridWorld grid(EnvSpec::grid(4));
  CHECK(grid.reward(GridWorld::cell_state(3, 3, true), GridWorld::cell_goal(3, 3)) == 1);
  CHECK(grid.reward(GridWorld::cell_state(3, 2, true), GridWorld::cell_goal(3, 3)) == 0);
  CHECK_THROWS_AS(grid.reward(GridWorld::cell_state(3, 3), GridWorld::cell_goal(3, 3)), NonTerminalError);
  SetGeneration set(EnvSpec::set(8, 3));
  const auto x = set.make_state(std::vector<int>{1, 5, 7});
  CHECK(set.reward(x, set.goal_from_values(std::vector<int>{5, 1, 7})) == 1);
  CHECK(set.reward(x, set.goal_from_values(std::vector<int>{5, 1, 6})) == 0);
}

TEST_CASE("encoding layout") {
  GridWorld grid(EnvSpec::grid(4));
  const auto e = grid.encode(GridWorld::cell_state(1, 0), GridWorld::cell_goal(3, 3));
  const std::vector<double> expect = {0, 1, 0, 0, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 1};
  CHECK(e == expect);
  CHECK(GridWorld(EnvSpec::grid(32)).encoding_size() == 128);

  SequenceEnv bits(EnvSpec::bits(2, 6));
  const auto goal = bits.goal_from_values(std::vector<int>{1, 2, 3});
  const auto enc = bits.encode(bits.initial_state(), goal);
  const int symbols = bits.length() * bits.vocab();
  for (int i = 0; i < symbols; ++i) CHECK(enc[i] == 0.0);
  double goal_mass = 0;
  for (int i = 0; i < bits.block_size(); ++i) goal_mass += enc[bits.block_size() + i];
  CHECK(goal_mass == 4.0);  // three symbols plus the length flag

  std::vector<double> wrong(3);
  CHECK_THROWS_AS(grid.encode(grid.initial_state(), GridWorld::cell_goal(0, 0), wrong), ShapeError);
}

TEST_CASE("goal sampling") {
  SUBCASE("grid universe size") {
    CHECK(GridWorld(EnvSpec::grid(32)).goal_universe().size() == 1024);
  }
  SUBCASE("set goal has |S| members") {
    SetGeneration set(EnvSpec::set(30, 12));
    Rng rng = make_rng(1, "goal");
    for (int i = 0; i < 50; ++i) {
      const auto g = set.sample_goal(rng);
      CHECK(set.goal_values(g).size() == 12);
      CHECK(set.is_valid_goal(g));
    }
  }
  SUBCASE("H=8 cells are uniform within 5 sigma") {
    GridWorld grid(EnvSpec::grid(8));
    Rng rng = make_rng(2, "goal");
    std::map<Goal, int> counts;
    const int n = 100000;
    for (int i = 0; i < n; ++i) ++counts[grid.sample_goal(rng)];
    CHECK(counts.size() == 64);
    const double p = 1.0 / 64, sigma = std::sqrt(n * p * (1 - p));
    for (const auto& [g, c] : counts) CHECK(std::abs(c - n * p) < 5 * sigma);
  }
  SUBCASE("masked goals are never drawn") {
    auto spec = EnvSpec::grid(3);
    spec.masked_goals = {GridWorld::cell_goal(1, 1), GridWorld::cell_goal(2, 2)};
    GridWorld grid(spec);
    Rng rng = make_rng(3, "goal");
    for (int i = 0; i < 2000; ++i) CHECK_FALSE(grid.is_masked(grid.sample_goal(rng)));
  }
  SUBCASE("same seed same goals") {
    SetGeneration set(EnvSpec::set(20, 10));
    Rng a = make_rng(4, "goal"), b = make_rng(4, "goal");
    for (int i = 0; i < 20; ++i) CHECK(set.sample_goal(a) == set.sample_goal(b));
  }
  SUBCASE("cap exceeded") {
    SequenceEnv amp(EnvSpec::amp());
    CHECK_THROWS_AS(amp.goal_universe(), EnumerationCapError);
    Rng rng = make_rng(5, "goal");
    CHECK(amp.is_valid_goal(amp.sample_goal(rng)));
  }
}

TEST_CASE("spec validation") {
  auto bad = EnvSpec::bits(3, 16);
  CHECK_THROWS_AS(bad.validate(), InvalidSpecError);
  auto obstacle_origin = EnvSpec::grid(4);
  obstacle_origin.obstacles = {{0, 0}};
  CHECK_THROWS_AS(GridWorld{obstacle_origin}, InvalidSpecError);
  CHECK_THROWS_AS(env_kind_from_string("maze"), InvalidSpecError);
  auto masked = EnvSpec::grid(4);
  masked.masked_goals = {GridWorld::cell_goal(1, 1)};
  CHECK(masked.shape_hash() == EnvSpec::grid(4).shape_hash());
  CHECK(EnvSpec::grid(5).shape_hash() != EnvSpec::grid(4).shape_hash());
}

TEST_CASE("grid maps") {
  const auto map = parse_grid_map("..#\n.#.\n..G\n");
  CHECK(map.side == 3);
  CHECK(map.obstacles.size() == 2);
  REQUIRE(map.goals.size() == 1);
  CHECK(map.goals[0] == Cell{2, 2});
  CHECK(parse_grid_map(format_grid_map(map)).obstacles == map.obstacles);
  CHECK_THROWS_AS(parse_grid_map("...\n..\n...\n"), FormatError);
  CHECK_THROWS_AS(parse_grid_map("..x\n...\n...\n"), FormatError);
}

}
