#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "helpers.hpp"
#include "rbs/cli.hpp"
#include "rbs/trainer.hpp"

using namespace rbs;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int count_lines(const std::string& path) {
  std::ifstream in(path);
  int n = 0;
  for (std::string l; std::getline(in, l);) ++n;
  return n;
}

// Smoke config with a private output directory.
std::string write_config(const std::string& dir, const std::string& body) {
  const auto path = dir + "/run.ini";
  std::ofstream(path) << "[run]\nname = smoke\nout_dir = " << dir << "/out\n" << body;
  return path;
}

const char* kGrid3 =
    "seed = 1\n[env]\nkind = grid\nside = 3\n[train]\nsteps = 100\nrollouts = 8\nbatch_size = 32\n"
    "hidden = 32,32\n[eval]\ngoals = 9\ntrials = 10\n";

struct Ran {
  int code;
  std::string out, err;
};

template <typename F>
Ran capture(F&& f) {
  std::ostringstream out, err;
  const int code = f(out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("smoke run writes every artifact") {
  const auto dir = test::scratch_dir("cli-smoke");
  const auto cfg = write_config(dir, kGrid3);
  const auto r = capture([&](auto& o, auto& e) { return run_train(cfg, {}, o, e); });
  REQUIRE(r.code == 0);
  const auto run = dir + "/out/smoke";
  CHECK(count_lines(run + "/metrics.csv") == 1 + 100);
  CHECK(slurp(run + "/metrics.csv").rfind(metrics_csv_header() + "\n", 0) == 0);
  CHECK(fs::exists(run + "/checkpoint.bin"));
  CHECK(fs::exists(run + "/config.ini"));
  CHECK(count_lines(run + "/trajectories.jsonl") == 64);
  CHECK(load_checkpoint(run + "/checkpoint.bin").step == 100);
}

TEST_CASE("same seed gives byte identical metrics") {
  const auto dir = test::scratch_dir("cli-determinism");
  const auto cfg = write_config(dir, kGrid3);
  std::ostringstream o, e;
  REQUIRE(run_train(cfg, {}, o, e) == 0);
  const auto first = slurp(dir + "/out/smoke/metrics.csv");
  REQUIRE(run_train(cfg, {}, o, e) == 0);
  CHECK(slurp(dir + "/out/smoke/metrics.csv") == first);

  // the resolved snapshot reproduces the run
  const auto snap_dir = test::scratch_dir("cli-snapshot");
  fs::copy_file(dir + "/out/smoke/config.ini", snap_dir + "/config.ini");
  CliOverrides ov;
  ov.out_dir = snap_dir + "/out";
  REQUIRE(run_train(snap_dir + "/config.ini", ov, o, e) == 0);
  CHECK(slurp(snap_dir + "/out/smoke/metrics.csv") == first);

  CliOverrides other;
  other.seed = 2;
  other.out_dir = snap_dir + "/seed2";
  REQUIRE(run_train(cfg, other, o, e) == 0);
  CHECK(slurp(snap_dir + "/seed2/smoke/metrics.csv") != first);
}

TEST_CASE("periodic checkpoints") {
  const auto dir = test::scratch_dir("cli-periodic");
  const auto cfg = write_config(dir, std::string("checkpoint_every = 40\n") + kGrid3);
  std::ostringstream o, e;
  REQUIRE(run_train(cfg, {}, o, e) == 0);
  CHECK(fs::exists(dir + "/out/smoke/checkpoint_step40.bin"));
  CHECK(fs::exists(dir + "/out/smoke/checkpoint_step80.bin"));
}

TEST_CASE("mode matrix completes") {
  const auto dir = test::scratch_dir("cli-modes");
  const auto cfg = write_config(
      dir, "[env]\nkind = grid\nside = 3\n[train]\nsteps = 20\nrollouts = 4\nbatch_size = 16\nhidden = 16\n"
           "[eval]\ngoals = 4\ntrials = 2\n");
  const auto r = capture([&](auto& o, auto& e) { return run_ablate(cfg, "modes", {}, o, e); });
  REQUIRE(r.code == 0);
  const auto summary = dir + "/out/smoke-ablate-modes.csv";
  CHECK(count_lines(summary) == 7);
  for (const char* label : {"rbs-db", "rbs-subtb", "her-db", "her-subtb", "plain-db", "plain-subtb"})
    CHECK(count_lines(dir + "/out/smoke-" + std::string(label) + "/metrics.csv") == 1 + 20);
  const auto bad = capture([&](auto& o, auto& e) { return run_ablate(cfg, "colors", {}, o, e); });
  CHECK(bad.code == 2);
}

TEST_CASE("evaluation protocols") {
  const auto dir = test::scratch_dir("cli-eval");
  {
    std::ofstream(dir + "/wall.txt") << "..#\n.#.\n...\n";
  }
  const auto cfg = write_config(dir, kGrid3);
  std::ostringstream o, e;
  REQUIRE(run_train(cfg, {}, o, e) == 0);

  SUBCASE("training goals") {
    const auto r = capture([&](auto& out, auto& err) { return run_eval(cfg, {}, out, err); });
    REQUIRE(r.code == 0);
    const auto j = nlohmann::json::parse(r.out);
    CHECK(j["protocol"] == "training_goals");
    CHECK(j["success_rate"].get<double>() >= 0.0);
    CHECK(j["success_rate"].get<double>() <= 1.0);
    CHECK(j["goals"].size() == 9);
    CHECK(count_lines(dir + "/out/smoke/eval.csv") == 2);
  }
  SUBCASE("unseen map") {
    CliOverrides ov;
    ov.map = dir + "/wall.txt";
    const auto r = capture([&](auto& out, auto& err) { return run_eval(cfg, ov, out, err); });
    REQUIRE(r.code == 0);
    const auto j = nlohmann::json::parse(r.out);
    CHECK(j["protocol"] == "unseen_map");
    int flagged = 0;
    for (const auto& g : j["goals"]) flagged += g["unreachable"].get<bool>() ? 1 : 0;
    CHECK(flagged == 3);  // two obstacle cells plus (2,1), walled off below and left
  }
  SUBCASE("incompatible checkpoint") {
    const auto other = test::scratch_dir("cli-eval-other");
    const auto cfg4 = write_config(other, "[env]\nkind = grid\nside = 4\n");
    CliOverrides ov;
    ov.checkpoint = dir + "/out/smoke/checkpoint.bin";
    const auto r = capture([&](auto& out, auto& err) { return run_eval(cfg4, ov, out, err); });
    CHECK(r.code == 3);
  }
}

TEST_CASE("masked goal evaluation lists exactly the masked goals") {
  const auto dir = test::scratch_dir("cli-masked");
  const auto cfg = write_config(
      dir, "seed = 4\n[env]\nkind = grid\nside = 4\nmasked_goals = 1,2; 3,0\nmasked_random = 1\n"
           "[train]\nsteps = 10\nrollouts = 4\nbatch_size = 8\nhidden = 16\n[eval]\nmasked = true\ntrials = 3\n");
  std::ostringstream o, e;
  REQUIRE(run_train(cfg, {}, o, e) == 0);
  const auto r = capture([&](auto& out, auto& err) { return run_eval(cfg, {}, out, err); });
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["protocol"] == "masked_goals");
  REQUIRE(j["goals"].size() == 3);
  CHECK(j["goals"][0]["goal"] == std::vector<int>{1, 2});
  CHECK(j["goals"][1]["goal"] == std::vector<int>{3, 0});
}

TEST_CASE("verify") {
  const auto dir = test::scratch_dir("cli-verify");
  const auto cfg = write_config(dir, std::string(kGrid3));
  const auto r = capture([&](auto& o, auto& e) { return run_verify(cfg, {}, o, e); });
  CHECK(r.code == 0);
  CHECK(r.out.find("verify: all passed") != std::string::npos);
  CHECK(r.out.find("PASS duality") != std::string::npos);
  CHECK(r.out.find("PASS sampler-vs-dp") != std::string::npos);

  std::ostringstream o, e;
  REQUIRE(run_train(cfg, {}, o, e) == 0);
  CliOverrides ov;
  ov.checkpoint = dir + "/out/smoke/checkpoint.bin";
  const auto t = capture([&](auto& out, auto& err) { return run_verify(cfg, ov, out, err); });
  CHECK(t.out.find("goal-concentration") != std::string::npos);

  const auto big = write_config(test::scratch_dir("cli-verify-cap"),
                                "[env]\nkind = sequence\nvocab = 8\nlength = 20\nenumeration_cap = 1000\n");
  const auto s = capture([&](auto& out, auto& err) { return run_verify(big, {}, out, err); });
  CHECK(s.code == 0);
  CHECK(s.out.find("SKIP enumerate") != std::string::npos);
}

TEST_CASE("dqn and hier runs") {
  const auto dir = test::scratch_dir("cli-dqn");
  const auto cfg = write_config(
      dir, "mode = dqn_her\n[env]\nkind = grid\nside = 4\n[train]\nsteps = 30\nrollouts = 4\nbatch_size = 16\n"
           "hidden = 16\n[eval]\ngoals = 4\ntrials = 1\n");
  std::ostringstream o, e;
  REQUIRE(run_train(cfg, {}, o, e) == 0);
  CHECK(slurp(dir + "/out/smoke/metrics.csv").find(",dqn_her\n") != std::string::npos);
  CHECK(capture([&](auto& out, auto& err) { return run_eval(cfg, {}, out, err); }).code == 0);

  const auto hdir = test::scratch_dir("cli-hier");
  const auto hcfg = write_config(
      hdir, "[env]\nkind = sequence\nvocab = 3\nlength = 6\n[hier]\nk = 3\n[train]\nsteps = 30\nrollouts = 4\n"
            "batch_size = 8\nhidden = 16\n[eval]\ngoals = 4\ntrials = 2\n");
  REQUIRE(run_train(hcfg, {}, o, e) == 0);
  for (int i = 0; i < 3; ++i) {
    CHECK(count_lines(hdir + "/out/smoke/metrics_slot" + std::to_string(i) + ".csv") == 1 + 10);
    CHECK(fs::exists(hdir + "/out/smoke/checkpoint_slot" + std::to_string(i) + ".bin"));
  }
  CHECK(count_lines(hdir + "/out/smoke/eval.csv") == 2);
}

TEST_CASE("config errors exit with code 2") {
  const auto dir = test::scratch_dir("cli-bad");
  const auto cfg = write_config(dir, "[train]\nsteps = many\n");
  const auto r = capture([&](auto& o, auto& e) { return run_train(cfg, {}, o, e); });
  CHECK(r.code == 2);
  CHECK(r.err.find("line 5") != std::string::npos);
}

}
