#pragma once

// Run orchestration behind the rbsgfn subcommands.
//
// A training run writes into <out_dir>/<name>/:
//   config.ini          resolved snapshot; re-running it reproduces the run
//   metrics.csv         step,loss,success_rate,entropy,gamma,buffer_size,mode
//   checkpoint.bin      final model (checkpoint_step<N>.bin when periodic)
//   trajectories.jsonl  newest buffer records, one JSON object per line
// Hierarchical runs (hier.k > 1) write metrics_slot<i>.csv and
// checkpoint_slot<i>.bin per slot instead, plus eval.csv with the composed
// success rate.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "rbs/config.hpp"
#include "rbs/trainer.hpp"

namespace rbs {

struct CliOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::string> checkpoint;
  std::optional<std::string> map;  // test map for eval
};

RunConfig apply_overrides(RunConfig config, const CliOverrides& overrides);

std::string metrics_csv_header();
std::string metrics_csv_row(const EvalReport& report, const std::string& mode);

struct TrainOutcome {
  std::string run_dir;
  EvalReport final_report;
};

// Trains per the (unresolved) config; returns where artifacts went.
TrainOutcome train_run(const RunConfig& config, std::ostream& log);

// Returns process exit codes; errors are reported on `err`.
int run_train(const std::string& config_path, const CliOverrides& overrides, std::ostream& out,
              std::ostream& err);
int run_eval(const std::string& config_path, const CliOverrides& overrides, std::ostream& out,
             std::ostream& err);
int run_verify(const std::string& config_path, const CliOverrides& overrides, std::ostream& out,
               std::ostream& err);
// Matrices: modes ({rbs, her, plain} x {db, subtb}), intensification
// (C = 1 vs configured), kl (gamma0 = 0 vs configured), baselines
// (rbs, her, dqn_her).
int run_ablate(const std::string& config_path, const std::string& matrix,
               const CliOverrides& overrides, std::ostream& out, std::ostream& err);

std::vector<std::string> ablation_matrices();

}  // namespace rbs
