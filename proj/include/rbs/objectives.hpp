#pragma once

// Goal-conditioned detailed balance, sub-trajectory balance, the backward
// policy KL regularizer and its linear decay schedule.
//
// The terminal flow of every record is replaced by C * max(R, r_min); with
// C = 1 this is the plain goal-conditioned detailed-balance target.

#include <Eigen/Dense>

#include <span>
#include <string>
#include <vector>

#include "rbs/model.hpp"
#include "rbs/nn.hpp"
#include "rbs/trajectory.hpp"

namespace rbs {

enum class ObjectiveKind { DB, SubTB };

std::string to_string(ObjectiveKind kind);
ObjectiveKind objective_kind_from_string(const std::string& name);

struct ObjectiveConfig {
  ObjectiveKind kind = ObjectiveKind::DB;
  double intensification = 1.0;  // C >= 1
  double reward_floor = 1e-8;    // r_min
  double subtb_lambda = 0.9;
  double gamma0 = 1.0;
  long total_steps = 1;  // N, for the decay schedule

  void validate() const;
};

// log(C * max(R, r_min)), computed as log C + log max(R, r_min).
double terminal_log_target(int reward, const ObjectiveConfig& config);

// C used when a config leaves it unset: 1e7 / 1e25 / 1e40 for bit tasks with
// 2 / 3 / 5-bit words, 1 everywhere else.
double default_intensification(const EnvSpec& spec);

struct RecordLoss {
  double objective = 0.0;  // DB or SubTB term
  double kl = 0.0;         // mean per-transition KL(P_B || uniform)
  double total = 0.0;      // objective + gamma * kl
};

// Loss of one record from precomputed head outputs (column t = states[t]).
// When `cotangent` is non-null it is overwritten with d(total)/d(heads).
RecordLoss record_loss_from_heads(const Environment& env, const TrajectoryRecord& record,
                                  const ObjectiveConfig& config, ObjectiveKind kind, double gamma,
                                  const Eigen::Ref<const Eigen::MatrixXd>& heads, HeadLayout layout,
                                  Eigen::MatrixXd* cotangent);

// Value-only evaluation against any flow model (e.g. tabular).
RecordLoss record_loss(const FlowModel& model, const Environment& env, const TrajectoryRecord& record,
                       const ObjectiveConfig& config, ObjectiveKind kind, double gamma);

// Per-transition detailed-balance residuals
//   log F(s_t) + log P_F(s_{t+1}|s_t) - log F(s_{t+1}) - log P_B(s_t|s_{t+1}),
// with the terminal flow substituted.
std::vector<double> db_residuals(const FlowModel& model, const Environment& env,
                                 const TrajectoryRecord& record, const ObjectiveConfig& config);

struct LossAndGrad {
  double loss = 0.0;
  GradientTape tape;
};

LossAndGrad db_loss(const GCModel& model, const Environment& env, const TrajectoryRecord& record,
                    const ObjectiveConfig& config);
LossAndGrad subtb_loss(const GCModel& model, const Environment& env, const TrajectoryRecord& record,
                       const ObjectiveConfig& config);
// Objective of config.kind plus decay_coefficient(step) * mean KL.
LossAndGrad total_loss(const GCModel& model, const Environment& env, const TrajectoryRecord& record,
                       const ObjectiveConfig& config, long step);

struct KlValue {
  double value = 0.0;
  std::vector<double> cotangent;  // d value / d logits (masked entries 0)
};

// D_KL(P_B || U_k) over the k unmasked entries of a log-probability vector.
KlValue kl_regularizer(std::span<const double> backward_log_probs, const Mask& mask);

// gamma0 * (1 - step / N); steps beyond N are clamped to 0 with a warning.
double decay_coefficient(long step, const ObjectiveConfig& config);

struct BatchLoss {
  double loss = 0.0;  // mean total over records
  double objective = 0.0;
  double kl = 0.0;
  GradientTape tape;  // gradient of the mean total
};

// One forward/backward sweep over every state of every record.
BatchLoss batch_total_loss(const GCModel& model, const Environment& env,
                           std::span<const TrajectoryRecord* const> records,
                           const ObjectiveConfig& config, long step);

}  // namespace rbs
