#include "rbs/dqn.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <optional>

#include "rbs/errors.hpp"
#include "rbs/log.hpp"
#include "rbs/model.hpp"

namespace rbs {

QModel::QModel(const Environment& env, std::span<const int> hidden, Rng& rng, long sync)
    : online(DenseNet::mlp(env.encoding_size(), hidden, env.num_forward_actions(), rng)),
      target(online),
      sync_period(sync) {
  if (sync_period < 1) throw InvalidSpecError("target sync period must be >= 1");
}

std::vector<double> q_values(const DenseNet& net, const Environment& env, const EnvState& state,
                             const Goal& goal) {
  const auto enc = env.encode(state, goal);
  const Eigen::VectorXd out =
      forward(net, Eigen::Map<const Eigen::VectorXd>(enc.data(), static_cast<Eigen::Index>(enc.size())));
  return {out.data(), out.data() + out.size()};
}

int greedy_action(std::span<const double> q, const Mask& mask) {
  int best = -1;
  for (std::size_t a = 0; a < q.size(); ++a) {
    if (!mask[a]) continue;
    if (best < 0 || q[a] > q[best]) best = static_cast<int>(a);
  }
  if (best < 0) throw InvalidMaskError("no valid action");
  return best;
}

namespace {

int pick(std::span<const double> q, const Mask& mask, double epsilon, Rng& rng) {
  if (epsilon > 0.0 && uniform01(rng) < epsilon) {
    std::vector<int> valid;
    for (std::size_t a = 0; a < mask.size(); ++a)
      if (mask[a]) valid.push_back(static_cast<int>(a));
    if (valid.empty()) throw InvalidMaskError("no valid action");
    return valid[uniform_index(rng, valid.size())];
  }
  return greedy_action(q, mask);
}

// Lockstep epsilon-greedy rollouts, one generator per rollout.
std::vector<TrajectoryRecord> q_rollouts(const DenseNet& net, const Environment& env,
                                         std::span<const Goal> goals, std::span<Rng> rngs,
                                         double epsilon) {
  const std::size_t n = goals.size();
  std::vector<TrajectoryRecord> out(n);
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < n; ++i) {
    out[i].goal = goals[i];
    out[i].states.push_back(env.initial_state());
    out[i].provenance = Provenance::Forward;
    active.push_back(i);
  }
  std::vector<EnvState> states;
  std::vector<Goal> gs;
  while (!active.empty()) {
    states.clear();
    gs.clear();
    for (auto i : active) {
      states.push_back(out[i].states.back());
      gs.push_back(goals[i]);
    }
    const Eigen::MatrixXd q = forward_batch(net, encode_batch(env, states, gs));
    std::vector<std::size_t> still;
    for (std::size_t k = 0; k < active.size(); ++k) {
      const std::size_t i = active[k];
      const EnvState& s = out[i].states.back();
      std::vector<double> col(q.col(static_cast<Eigen::Index>(k)).data(),
                              q.col(static_cast<Eigen::Index>(k)).data() + q.rows());
      const int a = pick(col, env.forward_mask(s), epsilon, rngs[i]);
      out[i].actions.push_back(a);
      out[i].states.push_back(env.apply_forward(s, a));
      if (!env.is_terminal(out[i].states.back())) still.push_back(i);
    }
    active = std::move(still);
  }
  for (auto& r : out) {
    r.reward = env.reward(r.states.back(), r.goal);
    complete_backward_actions(env, r);
  }
  return out;
}

}  // namespace

int epsilon_greedy(const QModel& q, const Environment& env, const EnvState& state,
                   const Goal& goal, double epsilon, Rng& rng) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw InvalidSpecError("epsilon must lie in [0, 1]");
  if (env.is_terminal(state)) throw TerminalStateError("no action at a terminal state");
  return pick(q_values(q.online, env, state, goal), env.forward_mask(state), epsilon, rng);
}

Transition transition_at(const Environment& env, const TrajectoryRecord& record, std::size_t t) {
  if (t >= record.actions.size()) throw InvalidTrajectoryError("transition index out of range");
  Transition tr;
  tr.state = record.states[t];
  tr.action = record.actions[t];
  tr.next_state = record.states[t + 1];
  tr.terminal = env.is_terminal(tr.next_state);
  tr.reward = (t + 1 == record.actions.size()) ? record.reward : 0.0;
  tr.goal = record.goal;
  return tr;
}

DqnLoss dqn_loss(const QModel& q, const Environment& env, std::span<const Transition> batch,
                 double discount) {
  if (batch.empty()) throw EmptyBufferError("empty transition batch");
  const std::size_t b = batch.size();
  std::vector<EnvState> s, s2;
  std::vector<Goal> g;
  s.reserve(b);
  s2.reserve(b);
  g.reserve(b);
  for (const auto& t : batch) {
    s.push_back(t.state);
    s2.push_back(t.next_state);
    g.push_back(t.goal);
  }
  ForwardCache cache;
  const Eigen::MatrixXd qs = forward_batch(q.online, encode_batch(env, s, g), &cache);
  const Eigen::MatrixXd qn = forward_batch(q.target, encode_batch(env, s2, g));
  DqnLoss out;
  out.tape = GradientTape(q.online);
  Eigen::MatrixXd cot = Eigen::MatrixXd::Zero(qs.rows(), qs.cols());
  double sum = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const auto& t = batch[i];
    double y = t.reward;
    if (!t.terminal && discount != 0.0) {
      const Mask m = env.forward_mask(t.next_state);
      double best = -std::numeric_limits<double>::infinity();
      for (Eigen::Index a = 0; a < qn.rows(); ++a)
        if (m[static_cast<std::size_t>(a)]) best = std::max(best, qn(a, static_cast<Eigen::Index>(i)));
      y += discount * best;
    }
    const double d = qs(t.action, static_cast<Eigen::Index>(i)) - y;
    sum += d * d;
    cot(t.action, static_cast<Eigen::Index>(i)) = 2.0 * d / static_cast<double>(b);
  }
  out.loss = sum / static_cast<double>(b);
  backward_batch(q.online, cache, cot, out.tape);
  return out;
}

double dqn_update(QModel& q, const Environment& env, std::span<const Transition> batch,
                  double discount, AdamState& adam) {
  DqnLoss l = dqn_loss(q, env, batch, discount);
  if (!std::isfinite(l.loss) || !l.tape.all_finite())
    throw NonFiniteError("non-finite TD loss after " + std::to_string(q.updates) + " updates");
  adam_step(q.online, l.tape, adam);
  ++q.updates;
  if (q.updates % q.sync_period == 0) q.sync();
  return l.loss;
}

void DqnConfig::validate() const {
  if (!(discount >= 0.0 && discount <= 1.0)) throw InvalidSpecError("discount must lie in [0, 1]");
  if (!(epsilon_start >= 0.0 && epsilon_start <= 1.0) || !(epsilon_end >= 0.0 && epsilon_end <= 1.0))
    throw InvalidSpecError("epsilon must lie in [0, 1]");
  if (!(anneal_fraction > 0.0 && anneal_fraction <= 1.0))
    throw InvalidSpecError("anneal fraction must lie in (0, 1]");
  if (target_sync < 1) throw InvalidSpecError("target sync must be >= 1");
}

double epsilon_at(long step, long total_steps, const DqnConfig& c) {
  const double horizon = c.anneal_fraction * static_cast<double>(total_steps);
  if (horizon <= 0.0 || static_cast<double>(step) >= horizon) return c.epsilon_end;
  return c.epsilon_start + (c.epsilon_end - c.epsilon_start) * static_cast<double>(step) / horizon;
}

EvalReport evaluate_q(const QModel& q, const Environment& env, std::span<const Goal> goals,
                      int trials, double epsilon, Rng& rng) {
  if (goals.empty()) throw InvalidEvalError("no evaluation goals");
  if (trials < 1) throw InvalidEvalError("trials must be >= 1");
  const std::uint64_t base = rng();
  EvalReport rep;
  rep.per_goal.assign(goals.size(), 0.0);
  rep.unreachable.assign(goals.size(), false);
  std::vector<Goal> flat;
  std::vector<Rng> rngs;
  std::vector<std::size_t> owner;
  for (std::size_t g = 0; g < goals.size(); ++g) {
    if (!env.is_valid_goal(goals[g]) || !env.goal_reachable(goals[g])) {
      rep.unreachable[g] = true;
      continue;
    }
    for (int t = 0; t < trials; ++t) {
      flat.push_back(goals[g]);
      rngs.push_back(make_rng(base, "eval", g, static_cast<std::uint64_t>(t)));
      owner.push_back(g);
    }
  }
  if (!flat.empty()) {
    const auto rolls = q_rollouts(q.online, env, flat, rngs, epsilon);
    for (std::size_t i = 0; i < rolls.size(); ++i) rep.per_goal[owner[i]] += rolls[i].reward;
  }
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t g = 0; g < goals.size(); ++g) {
    if (rep.unreachable[g]) continue;
    rep.per_goal[g] /= trials;
    sum += rep.per_goal[g];
    ++counted;
  }
  rep.success_rate = counted ? sum / counted : 0.0;
  return rep;
}

DqnTrainer::DqnTrainer(TrainConfig train, DqnConfig dqn)
    : train_(std::move(train)), dqn_(dqn), buffer_(1, 1.0) {
  train_.validate();
  dqn_.validate();
  env_ = make_environment(train_.env);
  Rng init = make_rng(train_.seed, "init");
  q_ = QModel(*env_, train_.hidden, init, dqn_.target_sync);
  adam_ = AdamState::for_net(q_.online, train_.learning_rate);
  adam_.beta1 = train_.adam_beta1;
  adam_.beta2 = train_.adam_beta2;
  adam_.epsilon = train_.adam_epsilon;
  buffer_ = PrioritizedBuffer(train_.buffer_capacity, train_.p_max);
  goal_rng_ = make_rng(train_.seed, "goal");
  buffer_rng_ = make_rng(train_.seed, "buffer");
  Rng eval_rng = make_rng(train_.seed, "eval-goals");
  eval_goals_ = draw_distinct_goals(*env_, train_.eval_goals, eval_rng);
}

DqnStepMetrics DqnTrainer::train_step() {
  const Environment& env = *env_;
  const auto n = static_cast<std::size_t>(train_.rollouts);
  DqnStepMetrics out;
  out.step = step_;
  out.epsilon = epsilon_at(step_, train_.steps, dqn_);
  std::vector<Goal> goals;
  std::vector<Rng> rngs;
  for (std::size_t i = 0; i < n; ++i) {
    goals.push_back(env.sample_goal(goal_rng_));
    rngs.push_back(make_rng(train_.seed, "rollout", static_cast<std::uint64_t>(step_), i));
  }
  auto rolls = q_rollouts(q_.online, env, goals, rngs, out.epsilon);
  for (auto& r : rolls) {
    out.forward_successes += r.reward;
    std::optional<TrajectoryRecord> her;
    if (dqn_.relabel) her = her_relabel(env, r);
    buffer_.insert(std::move(r));
    if (her) buffer_.insert(std::move(*her));
  }
  BufferBatch batch = buffer_.sample_batch(static_cast<std::size_t>(train_.batch_size), buffer_rng_);
  std::vector<Transition> trans;
  trans.reserve(batch.records.size());
  for (const TrajectoryRecord* r : batch.records)
    trans.push_back(transition_at(env, *r, uniform_index(buffer_rng_, r->actions.size())));
  out.loss = dqn_update(q_, env, trans, dqn_.discount, adam_);
  buffer_.mark_learned(batch.slots);
  loss_sum_ += out.loss;
  ++loss_count_;
  ++step_;
  return out;
}

EvalReport DqnTrainer::evaluate_now() {
  Rng rng = make_rng(train_.seed, "eval", static_cast<std::uint64_t>(evals_done_));
  ++evals_done_;
  EvalReport rep = evaluate_q(q_, *env_, eval_goals_, train_.eval_trials, 0.0, rng);
  rep.step = step_;
  rep.gamma = 0.0;
  rep.loss = loss_count_ ? loss_sum_ / loss_count_ : 0.0;
  rep.buffer_size = buffer_.size();
  loss_sum_ = 0.0;
  loss_count_ = 0;
  return rep;
}

void DqnTrainer::run(const std::function<void(const EvalReport&)>& on_eval) {
  const long cadence = train_.eval_cadence();
  while (step_ < train_.steps) {
    train_step();
    if (on_eval && (step_ % cadence == 0 || step_ == train_.steps)) on_eval(evaluate_now());
  }
}

}  // namespace rbs

namespace rbs {

namespace {
constexpr char kQMagic[8] = {'R', 'B', 'S', 'Q', 'N', 'E', 'T', '1'};
}

void save_q_checkpoint(const std::string& path, const QModel& q, const EnvSpec& spec, long step) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw FormatError("cannot write " + tmp);
    out.write(kQMagic, sizeof(kQMagic));
    const std::uint64_t h = spec.shape_hash();
    const std::int64_t st = step;
    unsigned char b[8];
    std::memcpy(b, &h, 8);
    out.write(reinterpret_cast<const char*>(b), 8);
    std::memcpy(b, &st, 8);
    out.write(reinterpret_cast<const char*>(b), 8);
    write_net(out, q.online);
    if (!out) throw FormatError("write failed: " + tmp);
  }
  std::rename(tmp.c_str(), path.c_str());
}

QModel load_q_checkpoint_for(const std::string& path, const EnvSpec& spec) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path);
  char magic[8];
  unsigned char b[16];
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(b), 16);
  if (!in || std::memcmp(magic, kQMagic, 8) != 0) throw FormatError("not a Q-network checkpoint: " + path);
  std::uint64_t h;
  std::memcpy(&h, b, 8);
  if (h != spec.shape_hash())
    throw IncompatibleCheckpointError("checkpoint was trained on a different environment shape");
  QModel q;
  q.online = read_net(in);
  q.target = q.online;
  const auto env = make_environment(spec);
  if (q.online.output_dim() != env->num_forward_actions() || q.online.input_dim() != env->encoding_size())
    throw IncompatibleCheckpointError("checkpoint network does not match the environment");
  return q;
}

}  // namespace rbs
