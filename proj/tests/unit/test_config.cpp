#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "rbs/config.hpp"
#include "rbs/errors.hpp"

using namespace rbs;

namespace {

const char* kBasic = R"(# smoke
[run]
name = basic
mode = her
seed = 17

[env]
kind = grid
side = 5
obstacles = 1,1; 2,3
masked_goals = 4,4

[objective]
kind = subtb
intensification = 1e7
gamma0 = 2.5

[train]
steps = 300
hidden = 32, 16
learning_rate = 0.0005

[eval]
goals = 7
trials = 3
)";

int error_line(const std::string& text) {
  try {
    parse_run_config(text);
  } catch (const ConfigError& e) {
    return e.line();
  }
  return -1;
}

}  // namespace

TEST_SUITE("config") {

TEST_CASE("parse fields") {
  const auto c = parse_run_config(kBasic);
  CHECK(c.name == "basic");
  CHECK(c.mode == RunMode::Her);
  CHECK(c.train.seed == 17);
  CHECK(c.train.env.kind == EnvKind::Grid);
  CHECK(c.train.env.side == 5);
  CHECK(c.train.env.obstacles == std::vector<Cell>{{1, 1}, {2, 3}});
  CHECK(c.masked_goals == std::vector<std::vector<int>>{{4, 4}});
  CHECK(c.train.objective.kind == ObjectiveKind::SubTB);
  CHECK(c.train.objective.intensification == 1e7);
  CHECK(c.train.objective.gamma0 == 2.5);
  CHECK(c.train.objective.total_steps == 300);
  CHECK(c.train.hidden == std::vector<int>{32, 16});
  CHECK(c.train.learning_rate == 0.0005);
  CHECK(c.train.eval_goals == 7);
}

TEST_CASE("intensification defaults by task scale") {
  CHECK(parse_run_config("[env]\nkind = grid\nside = 4\n").train.objective.intensification == 1.0);
  CHECK(parse_run_config("[env]\nkind = bits\nword_bits = 2\ntotal_bits = 8\n").train.objective.intensification == 1e7);
  CHECK(parse_run_config("[env]\nkind = bits\nword_bits = 3\ntotal_bits = 9\n").train.objective.intensification == 1e25);
  CHECK(parse_run_config("[env]\nkind = bits\nword_bits = 5\ntotal_bits = 10\n").train.objective.intensification == 1e40);
  CHECK(parse_run_config("[env]\nkind = bits\nword_bits = 2\ntotal_bits = 8\n[objective]\nintensification = 1\n")
            .train.objective.intensification == 1.0);
}

TEST_CASE("format then parse is the identity") {
  const auto c = parse_run_config(kBasic);
  const auto text = format_run_config(c);
  const auto back = parse_run_config(text);
  CHECK(format_run_config(back) == text);
  CHECK(back.train.learning_rate == c.train.learning_rate);
  CHECK(back.train.env.obstacles == c.train.env.obstacles);
}

TEST_CASE("errors carry the offending line") {
  CHECK(error_line("[run]\nname = a\n[bogus]\n") == 3);
  CHECK(error_line("[run]\n\nfrobnicate = 1\n") == 3);
  CHECK(error_line("[train]\nsteps = 10\nsteps = 20\n") == 3);
  CHECK(error_line("[train]\nsteps = ten\n") == 2);
  CHECK(error_line("name = x\n") == 1);
  CHECK(error_line("[run]\nmode = sideways\n") == 2);
  CHECK(error_line("[env]\nkind = grid\n[train\n") == 3);
  CHECK(error_line("[objective]\nintensification = 0.5\n") == 0);
}

TEST_CASE("resolution") {
  const auto dir = test::scratch_dir("config");
  {
    std::ofstream(dir + "/walls.txt") << "...\n.#.\n..#\n";
    std::ofstream(dir + "/test.txt") << "..#\n...\n...\n";
  }
  const std::string text =
      "[run]\nseed = 3\n[env]\nkind = grid\nside = 3\nmap = walls.txt\nmasked_random = 2\n"
      "[eval]\ntest_map = test.txt\n";
  const auto raw = parse_run_config(text, dir);
  const auto r = resolve_run_config(raw);
  CHECK(r.map_path.empty());
  CHECK(r.train.env.obstacles.size() == 2);
  CHECK(r.masked_random == 0);
  CHECK(r.masked_goals.size() == 2);
  CHECK(r.train.env.masked_goals.size() == 2);
  const auto again = resolve_run_config(raw);
  CHECK(again.masked_goals == r.masked_goals);
  // the snapshot resolves to itself
  const auto snap = resolve_run_config(parse_run_config(format_run_config(r), dir));
  CHECK(format_run_config(snap) == format_run_config(r));
  CHECK(test_env_spec(r).obstacles.size() == 3);

  const auto bad_mask = parse_run_config("[env]\nkind = grid\nside = 3\nobstacles = 1,1\nmasked_goals = 1,1\n");
  CHECK_THROWS_AS(resolve_run_config(bad_mask), Error);
}

TEST_CASE("shipped configs parse") {
  int n = 0;
  for (const auto& e : std::filesystem::directory_iterator(test::source_path("configs"))) {
    if (e.path().extension() != ".ini") continue;
    CAPTURE(e.path().string());
    CHECK_NOTHROW(resolve_run_config(load_run_config(e.path().string())));
    ++n;
  }
  CHECK(n > 0);
  CHECK_THROWS_AS(load_run_config("/nonexistent/x.ini"), ConfigError);
}

}
