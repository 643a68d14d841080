#include "rbs/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "rbs/errors.hpp"
#include "rbs/log.hpp"

namespace rbs {
namespace {

// log-probabilities and probabilities of one masked head slice
struct SoftmaxSlice {
  std::vector<double> logp;
  Mask mask;
};

SoftmaxSlice slice_softmax(const Eigen::Ref<const Eigen::MatrixXd>& heads, int col, int row,
                           int count, Mask mask) {
  std::vector<double> logits(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) logits[i] = heads(row + i, col);
  SoftmaxSlice s{masked_log_softmax(logits, mask), std::move(mask)};
  return s;
}

// adds coeff * d(logp[chosen])/d(logits) into the cotangent column slice
void add_logprob_grad(Eigen::MatrixXd& cot, int col, int row, const SoftmaxSlice& s, int chosen,
                      double coeff) {
  if (coeff == 0.0) return;
  for (std::size_t j = 0; j < s.logp.size(); ++j) {
    if (!s.mask[j]) continue;
    const double p = std::exp(s.logp[j]);
    cot(row + static_cast<int>(j), col) += coeff * ((static_cast<int>(j) == chosen ? 1.0 : 0.0) - p);
  }
}

void require_layout(const Environment& env, HeadLayout layout) {
  if (layout.num_forward != env.num_forward_actions() ||
      layout.num_backward != env.num_backward_actions())
    throw ShapeError("model heads do not match the environment");
}

}  // namespace

std::string to_string(ObjectiveKind kind) { return kind == ObjectiveKind::DB ? "db" : "subtb"; }

ObjectiveKind objective_kind_from_string(const std::string& name) {
  if (name == "db" || name == "DB") return ObjectiveKind::DB;
  if (name == "subtb" || name == "SubTB") return ObjectiveKind::SubTB;
  throw InvalidSpecError("unknown objective '" + name + "'");
}

void ObjectiveConfig::validate() const {
  if (!(intensification >= 1.0) || !std::isfinite(intensification))
    throw InvalidSpecError("intensification C must be finite and >= 1");
  if (!(reward_floor > 0.0 && reward_floor < 1.0)) throw InvalidSpecError("r_min must lie in (0, 1)");
  if (!(subtb_lambda > 0.0 && subtb_lambda <= 1.0)) throw InvalidSpecError("lambda must lie in (0, 1]");
  if (!(gamma0 >= 0.0)) throw InvalidSpecError("gamma0 must be >= 0");
  if (total_steps < 1) throw InvalidSpecError("total steps must be >= 1");
}

double default_intensification(const EnvSpec& spec) {
  if (spec.kind != EnvKind::Bits) return 1.0;
  if (spec.word_bits <= 2) return 1e7;
  if (spec.word_bits <= 3) return 1e25;
  return 1e40;
}

double terminal_log_target(int reward, const ObjectiveConfig& config) {
  return std::log(config.intensification) +
         std::log(std::max(static_cast<double>(reward), config.reward_floor));
}

double decay_coefficient(long step, const ObjectiveConfig& config) {
  if (step > config.total_steps) {
    log::warn("decay step " + std::to_string(step) + " beyond schedule end; gamma clamped to 0");
    return 0.0;
  }
  if (step < 0) step = 0;
  return config.gamma0 * (1.0 - static_cast<double>(step) / static_cast<double>(config.total_steps));
}

KlValue kl_regularizer(std::span<const double> logp, const Mask& mask) {
  if (logp.size() != mask.size()) throw ShapeError("log-probs and mask lengths differ");
  int k = 0;
  for (bool m : mask) k += m ? 1 : 0;
  if (k == 0) throw InvalidMaskError("KL over an empty support");
  double neg_entropy = 0.0;
  for (std::size_t i = 0; i < logp.size(); ++i)
    if (mask[i]) neg_entropy += std::exp(logp[i]) * logp[i];
  KlValue out;
  out.value = std::max(0.0, neg_entropy + std::log(static_cast<double>(k)));
  out.cotangent.assign(logp.size(), 0.0);
  for (std::size_t i = 0; i < logp.size(); ++i)
    if (mask[i]) out.cotangent[i] = std::exp(logp[i]) * (logp[i] - neg_entropy);
  return out;
}

RecordLoss record_loss_from_heads(const Environment& env, const TrajectoryRecord& record,
                                  const ObjectiveConfig& config, ObjectiveKind kind, double gamma,
                                  const Eigen::Ref<const Eigen::MatrixXd>& heads, HeadLayout layout,
                                  Eigen::MatrixXd* cotangent) {
  require_layout(env, layout);
  const int n = static_cast<int>(record.actions.size());
  if (n < 1 || record.states.size() != record.actions.size() + 1)
    throw InvalidTrajectoryError("record has no transitions or does not chain");
  if (heads.cols() != n + 1 || heads.rows() != layout.rows())
    throw ShapeError("head matrix does not match the record");
  std::vector<int> back = record.backward_actions;
  if (back.size() != record.actions.size()) {
    TrajectoryRecord tmp = record;
    complete_backward_actions(env, tmp);
    back = std::move(tmp.backward_actions);
  }

  // flows (terminal substituted), chosen log-probs and their softmax slices
  std::vector<double> flow(static_cast<std::size_t>(n + 1));
  std::vector<double> lpf(static_cast<std::size_t>(n)), lpb(static_cast<std::size_t>(n));
  std::vector<SoftmaxSlice> fwd, bwd;
  fwd.reserve(n);
  bwd.reserve(n);
  for (int t = 0; t < n; ++t) {
    flow[t] = heads(layout.log_flow_row(), t);
    fwd.push_back(slice_softmax(heads, t, layout.forward_row(), layout.num_forward,
                                env.forward_mask(record.states[t])));
    bwd.push_back(slice_softmax(heads, t + 1, layout.backward_row(), layout.num_backward,
                                env.backward_mask(record.states[t + 1])));
    lpf[t] = fwd[t].logp.at(record.actions[t]);
    lpb[t] = bwd[t].logp.at(back[t]);
    if (lpf[t] <= kNegInf || lpb[t] <= kNegInf)
      throw InvalidTrajectoryError("record uses a masked action at step " + std::to_string(t));
  }
  flow[n] = terminal_log_target(record.reward, config);

  // d loss / d flow[t] (t < n), d loss / d lpf[t], d loss / d lpb[t]
  std::vector<double> g_flow(static_cast<std::size_t>(n + 1), 0.0), g_pf(n, 0.0), g_pb(n, 0.0);
  RecordLoss out;
  if (kind == ObjectiveKind::DB) {
    for (int t = 0; t < n; ++t) {
      const double r = flow[t] + lpf[t] - flow[t + 1] - lpb[t];
      out.objective += r * r;
      const double g = 2.0 * r;
      g_flow[t] += g;
      g_flow[t + 1] -= g;
      g_pf[t] += g;
      g_pb[t] -= g;
    }
  } else {
    // prefix[j] = sum_{t<j} (lpf[t] - lpb[t])
    std::vector<double> prefix(static_cast<std::size_t>(n + 1), 0.0);
    for (int t = 0; t < n; ++t) prefix[t + 1] = prefix[t] + lpf[t] - lpb[t];
    std::vector<double> lam_pow(static_cast<std::size_t>(n + 1), 1.0);
    for (int d = 1; d <= n; ++d) lam_pow[d] = lam_pow[d - 1] * config.subtb_lambda;
    double norm = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j <= n; ++j) norm += lam_pow[j - i];
    std::vector<double> seg(static_cast<std::size_t>(n + 1), 0.0);
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j <= n; ++j) {
        const double w = lam_pow[j - i] / norm;
        const double r = flow[i] - flow[j] + prefix[j] - prefix[i];
        out.objective += w * r * r;
        const double g = 2.0 * w * r;
        g_flow[i] += g;
        g_flow[j] -= g;
        seg[i] += g;
        seg[j] -= g;
      }
    }
    double run = 0.0;
    for (int t = 0; t < n; ++t) {
      run += seg[t];
      g_pf[t] += run;
      g_pb[t] -= run;
    }
  }

  std::vector<KlValue> kls;
  kls.reserve(n);
  for (int t = 0; t < n; ++t) {
    kls.push_back(kl_regularizer(bwd[t].logp, bwd[t].mask));
    out.kl += kls.back().value;
  }
  out.kl /= n;
  out.total = out.objective + gamma * out.kl;

  if (cotangent) {
    Eigen::MatrixXd& cot = *cotangent;
    cot.setZero(heads.rows(), heads.cols());
    for (int t = 0; t < n; ++t) {
      cot(layout.log_flow_row(), t) += g_flow[t];  // g_flow[n] belongs to the fixed target
      add_logprob_grad(cot, t, layout.forward_row(), fwd[t], record.actions[t], g_pf[t]);
      add_logprob_grad(cot, t + 1, layout.backward_row(), bwd[t], back[t], g_pb[t]);
    }
    if (gamma != 0.0) {
      const double scale = gamma / n;
      for (int t = 0; t < n; ++t)
        for (int j = 0; j < layout.num_backward; ++j)
          cot(layout.backward_row() + j, t + 1) += scale * kls[t].cotangent[j];
    }
  }
  return out;
}

RecordLoss record_loss(const FlowModel& model, const Environment& env, const TrajectoryRecord& record,
                       const ObjectiveConfig& config, ObjectiveKind kind, double gamma) {
  const Eigen::MatrixXd h = model.heads(env, record.states, std::span(&record.goal, 1));
  return record_loss_from_heads(env, record, config, kind, gamma, h, model.layout(), nullptr);
}

std::vector<double> db_residuals(const FlowModel& model, const Environment& env,
                                 const TrajectoryRecord& record, const ObjectiveConfig& config) {
  const HeadLayout lay = model.layout();
  require_layout(env, lay);
  TrajectoryRecord r = record;
  if (r.backward_actions.size() != r.actions.size()) complete_backward_actions(env, r);
  const Eigen::MatrixXd h = model.heads(env, r.states, std::span(&r.goal, 1));
  const int n = static_cast<int>(r.actions.size());
  std::vector<double> res(static_cast<std::size_t>(n));
  for (int t = 0; t < n; ++t) {
    const auto f = slice_softmax(h, t, lay.forward_row(), lay.num_forward, env.forward_mask(r.states[t]));
    const auto b = slice_softmax(h, t + 1, lay.backward_row(), lay.num_backward,
                                 env.backward_mask(r.states[t + 1]));
    const double next = t + 1 == n ? terminal_log_target(r.reward, config)
                                   : h(lay.log_flow_row(), t + 1);
    res[t] = h(lay.log_flow_row(), t) + f.logp[r.actions[t]] - next - b.logp[r.backward_actions[t]];
  }
  return res;
}

namespace {

LossAndGrad model_loss(const GCModel& model, const Environment& env, const TrajectoryRecord& record,
                       const ObjectiveConfig& config, ObjectiveKind kind, double gamma) {
  if (record.actions.empty() || record.states.size() != record.actions.size() + 1)
    throw InvalidTrajectoryError("record has no transitions or does not chain");
  ForwardCache cache;
  const Eigen::MatrixXd h = model.heads_with_cache(env, record.states, std::span(&record.goal, 1), cache);
  Eigen::MatrixXd cot;
  const RecordLoss rl = record_loss_from_heads(env, record, config, kind, gamma, h, model.layout(), &cot);
  LossAndGrad out{rl.total, GradientTape(model.net())};
  backward_batch(model.net(), cache, cot, out.tape);
  return out;
}

}  // namespace

LossAndGrad db_loss(const GCModel& model, const Environment& env, const TrajectoryRecord& record,
                    const ObjectiveConfig& config) {
  return model_loss(model, env, record, config, ObjectiveKind::DB, 0.0);
}

LossAndGrad subtb_loss(const GCModel& model, const Environment& env, const TrajectoryRecord& record,
                       const ObjectiveConfig& config) {
  return model_loss(model, env, record, config, ObjectiveKind::SubTB, 0.0);
}

LossAndGrad total_loss(const GCModel& model, const Environment& env, const TrajectoryRecord& record,
                       const ObjectiveConfig& config, long step) {
  return model_loss(model, env, record, config, config.kind, decay_coefficient(step, config));
}

BatchLoss batch_total_loss(const GCModel& model, const Environment& env,
                           std::span<const TrajectoryRecord* const> records,
                           const ObjectiveConfig& config, long step) {
  if (records.empty()) throw EmptyBufferError("empty loss batch");
  const double gamma = decay_coefficient(step, config);
  std::vector<EnvState> states;
  std::vector<Goal> goals;
  std::vector<Eigen::Index> offsets;
  for (const auto* r : records) {
    offsets.push_back(static_cast<Eigen::Index>(states.size()));
    for (const auto& s : r->states) {
      states.push_back(s);
      goals.push_back(r->goal);
    }
  }
  ForwardCache cache;
  const Eigen::MatrixXd h = model.heads_with_cache(env, states, goals, cache);
  Eigen::MatrixXd cot = Eigen::MatrixXd::Zero(h.rows(), h.cols());
  BatchLoss out;
  const double inv_m = 1.0 / static_cast<double>(records.size());
  Eigen::MatrixXd record_cot;
  for (std::size_t k = 0; k < records.size(); ++k) {
    const auto* r = records[k];
    const auto cols = static_cast<Eigen::Index>(r->states.size());
    const RecordLoss rl = record_loss_from_heads(env, *r, config, config.kind, gamma,
                                                 h.middleCols(offsets[k], cols), model.layout(),
                                                 &record_cot);
    cot.middleCols(offsets[k], cols) = record_cot * inv_m;
    out.loss += rl.total * inv_m;
    out.objective += rl.objective * inv_m;
    out.kl += rl.kl * inv_m;
  }
  out.tape = GradientTape(model.net());
  backward_batch(model.net(), cache, cot, out.tape);
  return out;
}

}  // namespace rbs
