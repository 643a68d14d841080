#include "rbs/trajectory.hpp"

#include <json.hpp>

#include <ostream>

#include "rbs/errors.hpp"

namespace rbs {

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::Forward: return "forward";
    case Provenance::Rbs: return "rbs";
    case Provenance::Her: return "her";
  }
  return "?";
}

Provenance provenance_from_string(const std::string& s) {
  if (s == "forward") return Provenance::Forward;
  if (s == "rbs") return Provenance::Rbs;
  if (s == "her") return Provenance::Her;
  throw FormatError("unknown provenance '" + s + "'");
}

void complete_backward_actions(const Environment& env, TrajectoryRecord& record) {
  record.backward_actions.resize(record.actions.size());
  for (std::size_t t = 0; t < record.actions.size(); ++t) {
    const auto b = env.backward_action_between(record.states[t + 1], record.states[t]);
    if (!b) throw InvalidTrajectoryError("no backward action for transition " + std::to_string(t));
    record.backward_actions[t] = *b;
  }
}

void validate_trajectory(const Environment& env, const TrajectoryRecord& r) {
  auto fail = [](const std::string& why) { throw InvalidTrajectoryError(why); };
  if (r.states.empty()) fail("empty state list");
  if (r.states.size() != r.actions.size() + 1) fail("state/action counts do not chain");
  if (!r.backward_actions.empty() && r.backward_actions.size() != r.actions.size())
    fail("backward action count mismatch");
  if (!env.is_initial(r.states.front())) fail("trajectory does not start at s0");
  if (static_cast<int>(r.actions.size()) > env.max_depth()) fail("trajectory exceeds DAG depth");
  for (std::size_t t = 0; t < r.actions.size(); ++t) {
    if (env.is_terminal(r.states[t])) fail("terminal state before the end at step " + std::to_string(t));
    const Mask m = env.forward_mask(r.states[t]);
    const int a = r.actions[t];
    if (a < 0 || a >= static_cast<int>(m.size()) || !m[a])
      fail("invalid action " + std::to_string(a) + " at step " + std::to_string(t));
    if (!(env.apply_forward(r.states[t], a) == r.states[t + 1]))
      fail("state list does not replay at step " + std::to_string(t));
    if (!r.backward_actions.empty()) {
      const auto b = env.backward_action_between(r.states[t + 1], r.states[t]);
      if (!b || *b != r.backward_actions[t]) fail("bad backward action at step " + std::to_string(t));
    }
  }
  const EnvState& last = r.states.back();
  if (!env.is_terminal(last)) fail("trajectory does not end in a terminal state");
  if (!env.is_valid_goal(r.goal)) fail("goal is not a valid terminal object");
  if (r.reward != 0 && r.reward != 1) fail("reward must be 0 or 1");
  if (r.provenance == Provenance::Rbs) {
    if (!(env.phi(last) == r.goal)) fail("synthesized trajectory does not end at its goal");
    if (r.reward != 1) fail("synthesized trajectory must carry reward 1");
  } else if (r.reward != env.reward(last, r.goal)) {
    fail("stored reward differs from reward(s_n, y)");
  }
}

bool is_valid_trajectory(const Environment& env, const TrajectoryRecord& record) {
  try {
    validate_trajectory(env, record);
    return true;
  } catch (const InvalidTrajectoryError&) {
    return false;
  } catch (const Error&) {
    return false;
  }
}

std::string to_json_line(const TrajectoryRecord& r) {
  nlohmann::json j;
  j["provenance"] = to_string(r.provenance);
  j["reward"] = r.reward;
  j["goal"] = r.goal.data;
  j["actions"] = r.actions;
  auto states = nlohmann::json::array();
  for (const auto& s : r.states) states.push_back({{"data", s.data}, {"done", s.done}});
  j["states"] = std::move(states);
  return j.dump();
}

TrajectoryRecord from_json_line(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    TrajectoryRecord r;
    r.provenance = provenance_from_string(j.at("provenance").get<std::string>());
    r.reward = j.at("reward").get<int>();
    r.goal.data = j.at("goal").get<std::vector<std::int16_t>>();
    r.actions = j.at("actions").get<std::vector<int>>();
    for (const auto& s : j.at("states"))
      r.states.push_back({s.at("data").get<std::vector<std::int16_t>>(), s.at("done").get<bool>()});
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad trajectory record: ") + e.what());
  }
}

void write_trajectory_dump(std::ostream& out, const std::vector<const TrajectoryRecord*>& records) {
  for (const auto* r : records) out << to_json_line(*r) << '\n';
}

}  // namespace rbs
