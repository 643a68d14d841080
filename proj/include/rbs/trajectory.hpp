#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "rbs/env.hpp"

namespace rbs {

enum class Provenance { Forward, Rbs, Her };

std::string to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

// A complete trajectory s0 -> ... -> s_n with its commanded goal.
// backward_actions[t] is the backward action at states[t+1] that returns to
// states[t]; it is filled by complete_backward_actions().
struct TrajectoryRecord {
  std::vector<EnvState> states;
  std::vector<int> actions;
  std::vector<int> backward_actions;
  Goal goal;
  int reward = 0;
  Provenance provenance = Provenance::Forward;

  std::size_t num_transitions() const { return actions.size(); }
};

void complete_backward_actions(const Environment& env, TrajectoryRecord& record);

// Replays the actions through apply_forward and checks every structural
// invariant; throws InvalidTrajectoryError describing the first violation.
void validate_trajectory(const Environment& env, const TrajectoryRecord& record);
bool is_valid_trajectory(const Environment& env, const TrajectoryRecord& record);

// Line-delimited JSON: one object per record with keys
//   provenance, reward, goal (int list), actions (int list),
//   states (list of {"data": [...], "done": bool}).
std::string to_json_line(const TrajectoryRecord& record);
TrajectoryRecord from_json_line(const std::string& line);
void write_trajectory_dump(std::ostream& out, const std::vector<const TrajectoryRecord*>& records);

}  // namespace rbs
