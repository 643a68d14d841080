#pragma once

// Run configuration files.
//
//   # comment
//   [section]
//   key = value
//
// Sections: run, env, objective, train, eval, hier, dqn. Unknown sections or
// keys, duplicates and malformed values raise ConfigError carrying the line.
// Lists use ',' between numbers and ';' between items (e.g. obstacles =
// 1,2; 3,4).

#include <string>
#include <vector>

#include "rbs/dqn.hpp"
#include "rbs/env.hpp"
#include "rbs/trainer.hpp"

namespace rbs {

enum class RunMode { Rbs, Her, Plain, DqnHer };

std::string to_string(RunMode mode);
RunMode run_mode_from_string(const std::string& name);

struct RunConfig {
  std::string name = "run";
  std::string out_dir = "runs";
  RunMode mode = RunMode::Rbs;
  TrainConfig train;
  DqnConfig dqn;
  long checkpoint_every = 0;  // 0: final checkpoint only
  int dump_trajectories = 64;  // newest buffer records written at the end

  std::string map_path;                        // optional obstacle map
  std::vector<std::vector<int>> masked_goals;  // raw goal values
  int masked_random = 0;                       // extra goals masked at random

  std::string test_map_path;  // unseen-map evaluation
  bool eval_masked = false;   // evaluate on the masked goals
  int hier_k = 1;

  // Directory relative file names are resolved against.
  std::string base_dir;
};

RunConfig parse_run_config(const std::string& text, const std::string& base_dir = "");
RunConfig load_run_config(const std::string& path);
std::string format_run_config(const RunConfig& config);

// Loads the map file into the obstacle list, draws the random masked goals
// (stream "mask") and fills train.env.masked_goals, so that the result no
// longer depends on anything outside itself.
RunConfig resolve_run_config(const RunConfig& config);

// The environment used for unseen-map evaluation (training spec plus the
// test map's obstacles), or the training spec when none is configured.
EnvSpec test_env_spec(const RunConfig& resolved);

}  // namespace rbs
