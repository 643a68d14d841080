#include "rbs/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>

#include "rbs/errors.hpp"
#include "rbs/log.hpp"

namespace rbs {

std::string to_string(DataMode mode) {
  switch (mode) {
    case DataMode::Rbs: return "rbs";
    case DataMode::Her: return "her";
    case DataMode::Plain: return "plain";
  }
  return "?";
}

DataMode data_mode_from_string(const std::string& name) {
  if (name == "rbs") return DataMode::Rbs;
  if (name == "her") return DataMode::Her;
  if (name == "plain" || name == "none") return DataMode::Plain;
  throw InvalidSpecError("unknown data mode '" + name + "'");
}

long TrainConfig::eval_cadence() const {
  if (eval_every > 0) return eval_every;
  return steps >= 100 ? steps / 100 : 1;
}

void TrainConfig::validate() const {
  env.validate();
  objective.validate();
  if (steps < 1) throw InvalidSpecError("steps must be >= 1");
  if (rollouts < 1) throw InvalidSpecError("rollouts must be >= 1");
  if (batch_size < 1) throw InvalidSpecError("batch_size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw InvalidSpecError("learning_rate must be positive");
  if (buffer_capacity < 1) throw InvalidSpecError("buffer capacity must be >= 1");
  if (!(p_max > 0.0)) throw InvalidSpecError("p_max must be positive");
  if (eval_goals < 1 || eval_trials < 1) throw InvalidEvalError("eval goals/trials must be >= 1");
  for (int h : hidden)
    if (h < 1) throw InvalidSpecError("hidden widths must be >= 1");
}

namespace {

EvalReport score_rollouts(const std::vector<TrajectoryRecord>& rolls,
                          const std::vector<RolloutStats>& stats, std::size_t goals, int trials,
                          const std::vector<bool>& unreachable) {
  EvalReport rep;
  rep.per_goal.assign(goals, 0.0);
  rep.unreachable = unreachable;
  double ent = 0.0;
  long ent_n = 0;
  for (std::size_t g = 0; g < goals; ++g) {
    if (unreachable[g]) continue;
    int ok = 0;
    for (int t = 0; t < trials; ++t) {
      const std::size_t i = g * trials + t;
      ok += rolls[i].reward;
      ent += stats[i].entropy_sum;
      ent_n += stats[i].entropy_count;
    }
    rep.per_goal[g] = static_cast<double>(ok) / trials;
  }
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t g = 0; g < goals; ++g)
    if (!unreachable[g]) {
      sum += rep.per_goal[g];
      ++counted;
    }
  rep.success_rate = counted ? sum / counted : 0.0;
  rep.entropy = ent_n ? ent / ent_n : 0.0;
  return rep;
}

EvalReport run_eval(const FlowModel& model, const Environment& env, std::span<const Goal> goals,
                    int trials, Rng& rng, const std::vector<bool>& unreachable,
                    std::vector<TrajectoryRecord>* rollouts) {
  if (goals.empty()) throw InvalidEvalError("no evaluation goals");
  if (trials < 1) throw InvalidEvalError("trials must be >= 1");
  std::vector<Goal> flat;
  std::vector<Rng> rngs;
  const std::uint64_t base = rng();
  for (std::size_t g = 0; g < goals.size(); ++g) {
    if (unreachable[g]) continue;
    for (int t = 0; t < trials; ++t) {
      flat.push_back(goals[g]);
      rngs.push_back(make_rng(base, "eval", g, static_cast<std::uint64_t>(t)));
    }
  }
  std::vector<TrajectoryRecord> got;
  std::vector<RolloutStats> got_stats;
  if (!flat.empty()) got = sample_forward_trajectories(model, env, flat, rngs, &got_stats);
  // Re-inflate to goal-major layout with empty slots for skipped goals.
  std::vector<TrajectoryRecord> rolls(goals.size() * trials);
  std::vector<RolloutStats> stats(goals.size() * trials);
  std::size_t k = 0;
  for (std::size_t g = 0; g < goals.size(); ++g) {
    if (unreachable[g]) continue;
    for (int t = 0; t < trials; ++t, ++k) {
      rolls[g * trials + t] = std::move(got[k]);
      stats[g * trials + t] = got_stats[k];
    }
  }
  EvalReport rep = score_rollouts(rolls, stats, goals.size(), trials, unreachable);
  if (rollouts) {
    rollouts->clear();
    for (std::size_t g = 0; g < goals.size(); ++g)
      if (!unreachable[g])
        for (int t = 0; t < trials; ++t) rollouts->push_back(std::move(rolls[g * trials + t]));
  }
  return rep;
}

}  // namespace

EvalReport evaluate_success_rate(const FlowModel& model, const Environment& env,
                                 std::span<const Goal> goals, int trials, Rng& rng,
                                 std::vector<TrajectoryRecord>* rollouts) {
  for (const auto& g : goals)
    if (!env.is_valid_goal(g)) throw InvalidEvalError("evaluation goal is not a valid goal");
  std::vector<bool> unreachable(goals.size(), false);
  for (std::size_t g = 0; g < goals.size(); ++g) unreachable[g] = !env.goal_reachable(goals[g]);
  return run_eval(model, env, goals, trials, rng, unreachable, rollouts);
}

EvalReport evaluate_unseen(const FlowModel& model, const Environment& trained_env,
                           const Environment& test_env, std::span<const Goal> goals, int trials,
                           Rng& rng, std::vector<TrajectoryRecord>* rollouts) {
  const HeadLayout lay = model.layout();
  if (lay.num_forward != test_env.num_forward_actions() ||
      lay.num_backward != test_env.num_backward_actions() ||
      trained_env.encoding_size() != test_env.encoding_size())
    throw ShapeError("test environment does not match the trained model");
  std::vector<bool> unreachable(goals.size(), false);
  std::size_t flagged = 0;
  for (std::size_t g = 0; g < goals.size(); ++g) {
    if (!test_env.is_valid_goal(goals[g])) {
      unreachable[g] = true;
    } else {
      unreachable[g] = !test_env.goal_reachable(goals[g]);
    }
    if (unreachable[g]) ++flagged;
  }
  if (flagged)
    log::warn(std::to_string(flagged) + " evaluation goal(s) unreachable in the test map; excluded");
  return run_eval(model, test_env, goals, trials, rng, unreachable, rollouts);
}

TrajectoryRecord her_relabel(const Environment& env, const TrajectoryRecord& record) {
  if (record.states.empty() || !env.is_terminal(record.states.back()))
    throw InvalidTrajectoryError("relabel needs a completed trajectory");
  TrajectoryRecord out = record;
  out.goal = env.phi(record.states.back());
  out.reward = 1;
  out.provenance = Provenance::Her;
  return out;
}

std::vector<Goal> draw_distinct_goals(const Environment& env, int count, Rng& rng) {
  std::vector<Goal> out;
  std::optional<std::vector<Goal>> universe;
  try {
    universe = env.goal_universe();
  } catch (const EnumerationCapError&) {
  }
  if (universe) {
    std::vector<Goal> pool;
    for (auto& g : *universe)
      if (!env.is_masked(g)) pool.push_back(std::move(g));
    // partial Fisher-Yates
    const std::size_t want = std::min<std::size_t>(pool.size(), static_cast<std::size_t>(count));
    for (std::size_t i = 0; i < want; ++i) {
      const std::size_t j = i + uniform_index(rng, pool.size() - i);
      std::swap(pool[i], pool[j]);
      out.push_back(pool[i]);
    }
    return out;
  }
  std::set<Goal> seen;
  int attempts = 0;
  while (static_cast<int>(out.size()) < count && attempts < 100 * count) {
    ++attempts;
    Goal g = env.sample_goal(rng);
    if (seen.insert(g).second) out.push_back(std::move(g));
  }
  return out;
}

Trainer::Trainer(TrainConfig config, GoalSampler goal_sampler)
    : config_(std::move(config)),
      goal_sampler_(std::move(goal_sampler)),
      buffer_(1, 1.0) {
  // The decay schedule always spans this trainer's own budget (hier slots get
  // a fraction of the configured steps).
  config_.objective.total_steps = config_.steps;
  config_.validate();
  env_ = make_environment(config_.env);
  Rng init = make_rng(config_.seed, "init");
  model_ = GCModel(*env_, config_.hidden, init);
  adam_ = AdamState::for_net(model_.net(), config_.learning_rate);
  adam_.beta1 = config_.adam_beta1;
  adam_.beta2 = config_.adam_beta2;
  adam_.epsilon = config_.adam_epsilon;
  buffer_ = PrioritizedBuffer(config_.buffer_capacity, config_.p_max);
  goal_rng_ = make_rng(config_.seed, "goal");
  buffer_rng_ = make_rng(config_.seed, "buffer");
  Rng eval_rng = make_rng(config_.seed, "eval-goals");
  eval_goals_ = draw_distinct_goals(*env_, config_.eval_goals, eval_rng);
}

StepMetrics Trainer::train_step() {
  const Environment& env = *env_;
  const auto n = static_cast<std::size_t>(config_.rollouts);
  std::vector<Goal> goals;
  goals.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    goals.push_back(goal_sampler_ ? goal_sampler_(goal_rng_) : env.sample_goal(goal_rng_));

  std::vector<Rng> fwd_rngs, bwd_rngs;
  for (std::size_t i = 0; i < n; ++i) {
    fwd_rngs.push_back(make_rng(config_.seed, "rollout", static_cast<std::uint64_t>(step_), i));
    bwd_rngs.push_back(make_rng(config_.seed, "synth", static_cast<std::uint64_t>(step_), i));
  }
  std::vector<TrajectoryRecord> forward, extra;
  try {
    forward = sample_forward_trajectories(model_, env, goals, fwd_rngs);
    if (config_.mode == DataMode::Rbs) {
      extra = synthesize_backward_trajectories(model_, env, goals, bwd_rngs);
    } else if (config_.mode == DataMode::Her) {
      for (const auto& r : forward) extra.push_back(her_relabel(env, r));
    }
  } catch (const NonFiniteError& e) {
    // No batch exists yet, so dump what the buffer holds.
    log::error(std::string("non-finite policy output during rollouts: ") + e.what());
    if (!diagnostic_path_.empty()) {
      std::vector<const TrajectoryRecord*> held;
      for (auto slot : buffer_.live_slots()) held.push_back(&buffer_.record(slot));
      std::ofstream dump(diagnostic_path_);
      write_trajectory_dump(dump, held);
      log::error("buffer contents written to " + diagnostic_path_);
    }
    throw NonFiniteError("non-finite policy output at step " + std::to_string(step_));
  }

  StepMetrics out;
  out.step = step_;
  for (std::size_t i = 0; i < n; ++i) {
    out.forward_successes += forward[i].reward;
    buffer_.insert(std::move(forward[i]));
    ++out.inserted;
    if (!extra.empty()) {
      buffer_.insert(std::move(extra[i]));
      ++out.inserted;
    }
  }

  BufferBatch batch = buffer_.sample_batch(static_cast<std::size_t>(config_.batch_size), buffer_rng_);
  BatchLoss bl = batch_total_loss(model_, env, batch.records, config_.objective, step_);
  out.loss = bl.loss;
  out.objective = bl.objective;
  out.kl = bl.kl;
  out.gamma = decay_coefficient(step_, config_.objective);
  out.batch_size = batch.records.size();
  if (!std::isfinite(bl.loss) || !bl.tape.all_finite()) {
    log::error("non-finite loss at step " + std::to_string(step_) + " (objective " +
               std::to_string(bl.objective) + ", kl " + std::to_string(bl.kl) + ")");
    if (!diagnostic_path_.empty()) {
      std::ofstream dump(diagnostic_path_);
      write_trajectory_dump(dump, batch.records);
      log::error("offending batch written to " + diagnostic_path_);
    }
    throw NonFiniteError("non-finite loss at step " + std::to_string(step_));
  }
  adam_step(model_.net(), bl.tape, adam_);
  buffer_.mark_learned(batch.slots);
  loss_sum_ += bl.loss;
  ++loss_count_;
  ++step_;
  return out;
}

EvalReport Trainer::evaluate_now() {
  Rng rng = make_rng(config_.seed, "eval", static_cast<std::uint64_t>(evals_done_));
  ++evals_done_;
  EvalReport rep = evaluate_success_rate(model_, *env_, eval_goals_, config_.eval_trials, rng);
  rep.step = step_;
  rep.gamma = decay_coefficient(step_ > 0 ? step_ - 1 : 0, config_.objective);
  rep.loss = loss_count_ ? loss_sum_ / loss_count_ : 0.0;
  rep.buffer_size = buffer_.size();
  loss_sum_ = 0.0;
  loss_count_ = 0;
  return rep;
}

void Trainer::run(const std::function<void(const EvalReport&)>& on_eval) {
  const long cadence = config_.eval_cadence();
  while (step_ < config_.steps) {
    train_step();
    if (on_eval && (step_ % cadence == 0 || step_ == config_.steps)) on_eval(evaluate_now());
  }
}

namespace {

constexpr char kCkptMagic[8] = {'R', 'B', 'S', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void put(std::ostream& out, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  unsigned char b[sizeof(T)];
  in.read(reinterpret_cast<char*>(b), sizeof(T));
  if (!in) throw FormatError("truncated checkpoint");
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const GCModel& model, const EnvSpec& spec, long step) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw FormatError("cannot write " + tmp);
    out.write(kCkptMagic, sizeof(kCkptMagic));
    put<std::uint64_t>(out, spec.shape_hash());
    put<std::int64_t>(out, step);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(model.layout().num_forward));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(model.layout().num_backward));
    write_net(out, model.net());
    if (!out) throw FormatError("write failed: " + tmp);
  }
  std::rename(tmp.c_str(), path.c_str());
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
    throw FormatError("not a checkpoint: " + path);
  Checkpoint c;
  c.shape_hash = get<std::uint64_t>(in);
  c.step = static_cast<long>(get<std::int64_t>(in));
  HeadLayout lay;
  lay.num_forward = static_cast<int>(get<std::uint32_t>(in));
  lay.num_backward = static_cast<int>(get<std::uint32_t>(in));
  DenseNet net = read_net(in);
  c.model = GCModel(lay, std::move(net));
  return c;
}

GCModel load_checkpoint_for(const std::string& path, const EnvSpec& spec) {
  Checkpoint c = load_checkpoint(path);
  if (c.shape_hash != spec.shape_hash())
    throw IncompatibleCheckpointError("checkpoint was trained on a different environment shape");
  auto env = make_environment(spec);
  if (c.model.layout().num_forward != env->num_forward_actions() ||
      c.model.layout().num_backward != env->num_backward_actions() ||
      c.model.net().input_dim() != env->encoding_size())
    throw IncompatibleCheckpointError("checkpoint heads do not match the environment");
  return std::move(c.model);
}

}  // namespace rbs
