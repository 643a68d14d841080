#include "rbs/cli.hpp"

#include <cstdio>
#include <functional>
#include <unordered_map>
#include <filesystem>
#include <fstream>
#include <ostream>

#include <json.hpp>

#include "rbs/dqn.hpp"
#include "rbs/env_kinds.hpp"
#include "rbs/errors.hpp"
#include "rbs/hier.hpp"
#include "rbs/log.hpp"
#include "rbs/oracle.hpp"

namespace fs = std::filesystem;

namespace rbs {

RunConfig apply_overrides(RunConfig c, const CliOverrides& o) {
  if (o.seed) c.train.seed = *o.seed;
  if (o.out_dir) c.out_dir = *o.out_dir;
  if (o.map) c.test_map_path = fs::absolute(*o.map).string();
  return c;
}

namespace {

std::string num(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

std::string run_dir_of(const RunConfig& c) {
  return (fs::path(c.out_dir) / c.name).string();
}

class CsvFile {
 public:
  explicit CsvFile(const std::string& path, bool append = false) {
    const bool exists = append && fs::exists(path) && fs::file_size(path) > 0;
    out_.open(path, append ? std::ios::app : std::ios::trunc);
    if (!out_) throw FormatError("cannot write " + path);
    if (!exists) out_ << metrics_csv_header() << '\n';
  }
  void row(const EvalReport& r, const std::string& mode) {
    out_ << metrics_csv_row(r, mode) << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path);
  out << text;
}

void dump_buffer(const std::string& path, const PrioritizedBuffer& buffer, int count) {
  if (count <= 0) return;
  const auto slots = buffer.live_slots();
  std::vector<const TrajectoryRecord*> recs;
  const std::size_t start = slots.size() > static_cast<std::size_t>(count) ? slots.size() - count : 0;
  for (std::size_t i = start; i < slots.size(); ++i) recs.push_back(&buffer.record(slots[i]));
  std::ofstream out(path, std::ios::trunc);
  write_trajectory_dump(out, recs);
}

std::string slot_file(const std::string& dir, const std::string& stem, int slot, const std::string& ext) {
  return (fs::path(dir) / (stem + "_slot" + std::to_string(slot) + ext)).string();
}

TrainOutcome train_flow(const RunConfig& rc, const std::string& dir, std::ostream& log) {
  TrainConfig tc = rc.train;
  tc.mode = rc.mode == RunMode::Her ? DataMode::Her : rc.mode == RunMode::Plain ? DataMode::Plain : DataMode::Rbs;
  Trainer t(tc);
  t.set_diagnostic_path((fs::path(dir) / "nonfinite_batch.jsonl").string());
  CsvFile csv((fs::path(dir) / "metrics.csv").string());
  const long cadence = tc.eval_cadence();
  const std::string mode = to_string(rc.mode);
  TrainOutcome outcome;
  outcome.run_dir = dir;
  while (t.step() < tc.steps) {
    try {
      t.train_step();
    } catch (const Error&) {
      save_checkpoint((fs::path(dir) / "checkpoint_last_good.bin").string(), t.model(), tc.env, t.step());
      throw;
    }
    if (t.step() % cadence == 0 || t.step() == tc.steps) {
      outcome.final_report = t.evaluate_now();
      csv.row(outcome.final_report, mode);
      log << "step " << t.step() << " success " << outcome.final_report.success_rate << " loss "
          << outcome.final_report.loss << '\n';
    }
    if (rc.checkpoint_every > 0 && t.step() % rc.checkpoint_every == 0 && t.step() != tc.steps)
      save_checkpoint((fs::path(dir) / ("checkpoint_step" + std::to_string(t.step()) + ".bin")).string(),
                      t.model(), tc.env, t.step());
  }
  save_checkpoint((fs::path(dir) / "checkpoint.bin").string(), t.model(), tc.env, t.step());
  dump_buffer((fs::path(dir) / "trajectories.jsonl").string(), t.buffer(), rc.dump_trajectories);
  return outcome;
}

TrainOutcome train_dqn(const RunConfig& rc, const std::string& dir, std::ostream& log) {
  DqnTrainer t(rc.train, rc.dqn);
  CsvFile csv((fs::path(dir) / "metrics.csv").string());
  const long cadence = rc.train.eval_cadence();
  TrainOutcome outcome;
  outcome.run_dir = dir;
  while (t.step() < rc.train.steps) {
    try {
      t.train_step();
    } catch (const Error&) {
      save_q_checkpoint((fs::path(dir) / "checkpoint_last_good.bin").string(), t.q(), rc.train.env, t.step());
      throw;
    }
    if (t.step() % cadence == 0 || t.step() == rc.train.steps) {
      outcome.final_report = t.evaluate_now();
      csv.row(outcome.final_report, "dqn_her");
      log << "step " << t.step() << " success " << outcome.final_report.success_rate << '\n';
    }
    if (rc.checkpoint_every > 0 && t.step() % rc.checkpoint_every == 0 && t.step() != rc.train.steps)
      save_q_checkpoint((fs::path(dir) / ("checkpoint_step" + std::to_string(t.step()) + ".bin")).string(),
                        t.q(), rc.train.env, t.step());
  }
  save_q_checkpoint((fs::path(dir) / "checkpoint.bin").string(), t.q(), rc.train.env, t.step());
  dump_buffer((fs::path(dir) / "trajectories.jsonl").string(), t.buffer(), rc.dump_trajectories);
  return outcome;
}

std::vector<Goal> hier_eval_goals(const RunConfig& rc, const Environment& base_env) {
  Rng rng = make_rng(rc.train.seed, "eval-goals");
  return draw_distinct_goals(base_env, rc.train.eval_goals, rng);
}

TrainOutcome train_hier(const RunConfig& rc, const std::string& dir, std::ostream& log) {
  if (rc.mode == RunMode::DqnHer) throw InvalidSpecError("hierarchical runs use a flow-network mode");
  HierSpec hs{rc.train.env, rc.hier_k};
  hs.validate();
  TrainConfig tc = rc.train;
  tc.mode = rc.mode == RunMode::Her ? DataMode::Her : rc.mode == RunMode::Plain ? DataMode::Plain : DataMode::Rbs;
  std::vector<std::unique_ptr<CsvFile>> csvs;
  for (int i = 0; i < hs.k; ++i) csvs.push_back(std::make_unique<CsvFile>(slot_file(dir, "metrics", i, ".csv")));
  const std::string mode = "hier_" + to_string(rc.mode);
  HierModels models = hier_train(hs, tc, [&](int slot, const EvalReport& r) {
    csvs[static_cast<std::size_t>(slot)]->row(r, mode);
    log << "slot " << slot << " step " << r.step << " success " << r.success_rate << '\n';
  });
  for (int i = 0; i < hs.k; ++i)
    save_checkpoint(slot_file(dir, "checkpoint", i, ".bin"), models.slots[static_cast<std::size_t>(i)],
                    hs.sub_spec(), tc.steps / hs.k);
  const auto base_env = make_environment(rc.train.env);
  const auto goals = hier_eval_goals(rc, *base_env);
  Rng rng = make_rng(rc.train.seed, "hier-eval");
  TrainOutcome outcome;
  outcome.run_dir = dir;
  outcome.final_report.step = tc.steps;
  outcome.final_report.success_rate = evaluate_hier(models, goals, rc.train.eval_trials, rng);
  CsvFile csv((fs::path(dir) / "eval.csv").string());
  csv.row(outcome.final_report, mode);
  log << "composed success " << outcome.final_report.success_rate << '\n';
  return outcome;
}

// Goals for `run_eval`: the masked goals when asked, otherwise the fixed
// evaluation goals the trainer used. A test map with G cells overrides both.
std::vector<Goal> eval_goals_for(const RunConfig& rc, const Environment& env) {
  if (!rc.test_map_path.empty()) {
    const GridMap map = load_grid_map(rc.test_map_path);
    if (!map.goals.empty()) {
      std::vector<Goal> out;
      for (const auto& c : map.goals) out.push_back(GridWorld::cell_goal(c.x, c.y));
      return out;
    }
  }
  if (rc.eval_masked) {
    if (rc.train.env.masked_goals.empty()) throw InvalidEvalError("no masked goals configured");
    return rc.train.env.masked_goals;
  }
  Rng rng = make_rng(rc.train.seed, "eval-goals");
  return draw_distinct_goals(env, rc.train.eval_goals, rng);
}

nlohmann::json report_json(const EvalReport& r, const Environment& env, std::span<const Goal> goals) {
  nlohmann::json j;
  j["step"] = r.step;
  j["success_rate"] = r.success_rate;
  j["entropy"] = r.entropy;
  j["goals"] = nlohmann::json::array();
  for (std::size_t i = 0; i < goals.size(); ++i) {
    nlohmann::json g;
    g["goal"] = env.goal_values(goals[i]);
    g["rate"] = r.per_goal[i];
    g["unreachable"] = static_cast<bool>(r.unreachable[i]);
    j["goals"].push_back(std::move(g));
  }
  return j;
}

}  // namespace

std::string metrics_csv_header() { return "step,loss,success_rate,entropy,gamma,buffer_size,mode"; }

std::string metrics_csv_row(const EvalReport& r, const std::string& mode) {
  return std::to_string(r.step) + "," + num(r.loss) + "," + num(r.success_rate) + "," + num(r.entropy) + "," +
         num(r.gamma) + "," + std::to_string(r.buffer_size) + "," + mode;
}

TrainOutcome train_run(const RunConfig& config, std::ostream& log) {
  const RunConfig rc = resolve_run_config(config);
  const std::string dir = run_dir_of(rc);
  fs::create_directories(dir);
  write_text((fs::path(dir) / "config.ini").string(), format_run_config(rc));
  if (rc.hier_k > 1) return train_hier(rc, dir, log);
  if (rc.mode == RunMode::DqnHer) return train_dqn(rc, dir, log);
  return train_flow(rc, dir, log);
}

int run_train(const std::string& config_path, const CliOverrides& overrides, std::ostream& out,
              std::ostream& err) {
  try {
    const RunConfig rc = apply_overrides(load_run_config(config_path), overrides);
    const TrainOutcome o = train_run(rc, out);
    out << "run directory " << o.run_dir << '\n';
    return 0;
  } catch (const ConfigError& e) {
    err << config_path << ": " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "train failed: " << e.what() << '\n';
    return 1;
  }
}

int run_eval(const std::string& config_path, const CliOverrides& overrides, std::ostream& out,
             std::ostream& err) {
  try {
    const RunConfig rc = resolve_run_config(apply_overrides(load_run_config(config_path), overrides));
    const std::string dir = run_dir_of(rc);
    const std::string ckpt =
        overrides.checkpoint ? *overrides.checkpoint : (fs::path(dir) / "checkpoint.bin").string();
    const auto env = make_environment(rc.train.env);
    const EnvSpec test_spec = test_env_spec(rc);
    const auto test_env = make_environment(test_spec);
    const bool unseen = !rc.test_map_path.empty();
    const auto goals = eval_goals_for(rc, *env);
    Rng rng = make_rng(rc.train.seed, "eval-cli");
    EvalReport rep;
    if (rc.mode == RunMode::DqnHer) {
      const QModel q = load_q_checkpoint_for(ckpt, rc.train.env);
      rep = evaluate_q(q, *test_env, goals, rc.train.eval_trials, 0.0, rng);
    } else {
      const Checkpoint c = load_checkpoint(ckpt);
      if (c.shape_hash != rc.train.env.shape_hash())
        throw IncompatibleCheckpointError("checkpoint was trained on a different environment shape");
      const GCModel model = load_checkpoint_for(ckpt, rc.train.env);
      rep = unseen ? evaluate_unseen(model, *env, *test_env, goals, rc.train.eval_trials, rng)
                   : evaluate_success_rate(model, *env, goals, rc.train.eval_trials, rng);
      rep.step = c.step;
    }
    nlohmann::json j = report_json(rep, *env, goals);
    j["protocol"] = unseen ? "unseen_map" : rc.eval_masked ? "masked_goals" : "training_goals";
    j["mode"] = to_string(rc.mode);
    out << j.dump() << '\n';
    fs::create_directories(dir);
    CsvFile csv((fs::path(dir) / "eval.csv").string(), true);
    csv.row(rep, to_string(rc.mode));
    return 0;
  } catch (const ConfigError& e) {
    err << config_path << ": " << e.what() << '\n';
    return 2;
  } catch (const IncompatibleCheckpointError& e) {
    err << "incompatible checkpoint: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    err << "eval failed: " << e.what() << '\n';
    return 1;
  }
}

int run_verify(const std::string& config_path, const CliOverrides& overrides, std::ostream& out,
               std::ostream& err) {
  RunConfig rc;
  try {
    rc = resolve_run_config(apply_overrides(load_run_config(config_path), overrides));
  } catch (const ConfigError& e) {
    err << config_path << ": " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "verify failed: " << e.what() << '\n';
    return 1;
  }
  int failures = 0;
  auto line = [&](const char* status, const std::string& name, const std::string& detail) {
    out << status << ' ' << name << ": " << detail << '\n';
    if (std::string(status) == "FAIL") ++failures;
  };
  auto guard = [&](const std::string& name, const std::function<void()>& body) {
    try {
      body();
    } catch (const EnumerationCapError& e) {
      log::warn(name + " skipped: " + e.what());
      line("SKIP", name, e.what());
    } catch (const std::exception& e) {
      line("FAIL", name, e.what());
    }
  };
  const auto env = make_environment(rc.train.env);
  const std::vector<int> small = {16, 16};
  Rng rng = make_rng(rc.train.seed, "verify");

  guard("gradient", [&] {
    GCModel model(*env, small, rng);
    std::vector<TrajectoryRecord> recs;
    for (int i = 0; i < 3; ++i) {
      const Goal g = env->sample_goal(rng);
      recs.push_back(sample_forward_trajectory(model, *env, g, rng));
      recs.push_back(synthesize_backward_trajectory(model, *env, g, rng));
    }
    std::vector<const TrajectoryRecord*> ptrs;
    for (const auto& r : recs) ptrs.push_back(&r);
    double worst = 0.0;
    for (ObjectiveKind kind : {ObjectiveKind::DB, ObjectiveKind::SubTB}) {
      ObjectiveConfig oc = rc.train.objective;
      oc.kind = kind;
      oc.intensification = 1.0;
      oc.gamma0 = 1.0;
      oc.total_steps = 10;
      worst = std::max(worst, check_batch_gradient(model, *env, ptrs, oc, 0, 40, rng).max_relative_error);
    }
    line(worst < 1e-4 ? "PASS" : "FAIL", "gradient", "max relative error " + num(worst));
  });

  std::optional<EnumeratedDAG> dag;
  guard("enumerate", [&] {
    dag = enumerate_dag(*env);
    line("PASS", "enumerate",
         std::to_string(dag->states.size()) + " states, " + std::to_string(dag->terminals.size()) + " terminals");
  });
  if (dag) {
    guard("duality", [&] {
      const auto bad = check_parent_child_duality(*env, *dag);
      line(bad.empty() ? "PASS" : "FAIL", "duality", bad.empty() ? "consistent" : bad.front());
    });
    guard("trajectory-count", [&] {
      int checked = 0, wrong = 0;
      for (std::size_t i = 0; i < dag->terminals.size() && checked < 50; ++i, ++checked) {
        const EnvState& x = dag->states[dag->terminals[i]];
        if (count_trajectories(*dag, *env, x) != count_trajectories_dfs(*env, x, 10000000)) ++wrong;
      }
      line(wrong == 0 ? "PASS" : "FAIL", "trajectory-count",
           std::to_string(checked) + " terminals, " + std::to_string(wrong) + " mismatches");
    });
    guard("sampler-vs-dp", [&] {
      if (dag->terminals.size() > 200) {
        line("SKIP", "sampler-vs-dp", "more than 200 terminals");
        return;
      }
      GCModel model(*env, small, rng);
      const Goal g = env->sample_goal(rng);
      const auto exact = exact_terminal_distribution(model, *env, *dag, g);
      const int n = 100000;
      std::vector<Goal> goals(n, g);
      std::vector<Rng> rngs;
      for (int i = 0; i < n; ++i) rngs.push_back(make_rng(rc.train.seed, "verify-rollout", i));
      const auto rolls = sample_forward_trajectories(model, *env, goals, rngs);
      std::vector<double> freq(exact.size(), 0.0);
      std::unordered_map<int, std::size_t> pos;
      for (std::size_t i = 0; i < dag->terminals.size(); ++i) pos[dag->terminals[i]] = i;
      for (const auto& r : rolls) freq[pos.at(dag->index_of(r.states.back()))] += 1.0 / n;
      const double tv = total_variation(exact, freq);
      line(tv <= 0.02 ? "PASS" : "FAIL", "sampler-vs-dp", "total variation " + num(tv));
    });
    if (overrides.checkpoint) {
      guard("goal-concentration", [&] {
        const GCModel model = load_checkpoint_for(*overrides.checkpoint, rc.train.env);
        Rng grng = make_rng(rc.train.seed, "eval-goals");
        const auto goals = draw_distinct_goals(*env, std::min(rc.train.eval_goals, 16), grng);
        std::unordered_map<int, std::size_t> pos;
        for (std::size_t i = 0; i < dag->terminals.size(); ++i) pos[dag->terminals[i]] = i;
        double worst = 0.0;
        for (const auto& g : goals) {
          const auto p = exact_terminal_distribution(model, *env, *dag, g);
          std::vector<double> point(p.size(), 0.0);
          point[pos.at(dag->index_of(env->goal_state(g)))] = 1.0;
          worst = std::max(worst, total_variation(p, point));
        }
        line(worst <= 0.05 ? "PASS" : "FAIL", "goal-concentration", "worst total variation to the goal " + num(worst));
      });
    }
  }
  out << (failures ? "verify: " + std::to_string(failures) + " failure(s)" : std::string("verify: all passed")) << '\n';
  return failures ? 1 : 0;
}

std::vector<std::string> ablation_matrices() { return {"modes", "intensification", "kl", "baselines"}; }

int run_ablate(const std::string& config_path, const std::string& matrix, const CliOverrides& overrides,
               std::ostream& out, std::ostream& err) {
  try {
    const RunConfig base = apply_overrides(load_run_config(config_path), overrides);
    std::vector<std::pair<std::string, RunConfig>> runs;
    auto variant = [&](const std::string& label, const std::function<void(RunConfig&)>& edit) {
      RunConfig c = base;
      c.name = base.name + "-" + label;
      edit(c);
      runs.emplace_back(label, std::move(c));
    };
    if (matrix == "modes") {
      for (RunMode m : {RunMode::Rbs, RunMode::Her, RunMode::Plain})
        for (ObjectiveKind k : {ObjectiveKind::DB, ObjectiveKind::SubTB})
          variant(to_string(m) + "-" + to_string(k), [&](RunConfig& c) {
            c.mode = m;
            c.train.objective.kind = k;
          });
    } else if (matrix == "intensification") {
      variant("c1", [](RunConfig& c) { c.train.objective.intensification = 1.0; });
      variant("c" + num(base.train.objective.intensification), [](RunConfig&) {});
    } else if (matrix == "kl") {
      variant("gamma0", [](RunConfig& c) { c.train.objective.gamma0 = 0.0; });
      variant("gamma" + num(base.train.objective.gamma0), [](RunConfig&) {});
    } else if (matrix == "baselines") {
      for (RunMode m : {RunMode::Rbs, RunMode::Her, RunMode::DqnHer})
        variant(to_string(m), [&](RunConfig& c) { c.mode = m; });
    } else {
      err << "unknown ablation matrix '" << matrix << "'\n";
      return 2;
    }
    fs::create_directories(base.out_dir);
    std::ofstream summary((fs::path(base.out_dir) / (base.name + "-ablate-" + matrix + ".csv")).string(),
                          std::ios::trunc);
    summary << "label,mode,objective,intensification,gamma0,success_rate\n";
    for (const auto& [label, c] : runs) {
      const TrainOutcome o = train_run(c, out);
      summary << label << ',' << to_string(c.mode) << ',' << to_string(c.train.objective.kind) << ','
              << num(c.train.objective.intensification) << ',' << num(c.train.objective.gamma0) << ','
              << num(o.final_report.success_rate) << '\n';
      out << label << " success " << o.final_report.success_rate << '\n';
    }
    return 0;
  } catch (const ConfigError& e) {
    err << config_path << ": " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "ablate failed: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace rbs
