#include <algorithm>
#include <cmath>
#include <numeric>

#include "rbs/env_kinds.hpp"
#include "rbs/errors.hpp"

namespace rbs {

SetGeneration::SetGeneration(EnvSpec spec)
    : Environment(std::move(spec)), universe_(spec_.universe), target_(spec_.target_size) {}

void SetGeneration::check_state(const EnvState& s) const {
  if (static_cast<int>(s.data.size()) != universe_)
    throw InvalidActionError("malformed set state");
}

EnvState SetGeneration::initial_state() const {
  return EnvState{std::vector<std::int16_t>(static_cast<std::size_t>(universe_), 0), false};
}

int SetGeneration::potential(const EnvState& s) const {
  return static_cast<int>(std::count(s.data.begin(), s.data.end(), 1));
}

bool SetGeneration::is_terminal(const EnvState& s) const { return potential(s) == target_; }

Mask SetGeneration::forward_mask(const EnvState& s) const {
  check_state(s);
  if (is_terminal(s)) throw TerminalStateError("forward mask requested for a complete set");
  Mask m(static_cast<std::size_t>(universe_));
  for (int e = 0; e < universe_; ++e) m[e] = s.data[e] == 0;
  return m;
}

EnvState SetGeneration::apply_forward(const EnvState& s, int action) const {
  const Mask m = forward_mask(s);
  if (action < 0 || action >= universe_ || !m[action])
    throw InvalidActionError("cannot add element " + std::to_string(action) + " to " + describe(s));
  EnvState next = s;
  next.data[action] = 1;
  next.done = is_terminal(next);
  return next;
}

Mask SetGeneration::backward_mask(const EnvState& s) const {
  check_state(s);
  if (potential(s) == 0) throw NoParentError("empty set has no parent");
  Mask m(static_cast<std::size_t>(universe_));
  for (int e = 0; e < universe_; ++e) m[e] = s.data[e] == 1;
  return m;
}

EnvState SetGeneration::apply_backward(const EnvState& s, int action) const {
  const Mask m = backward_mask(s);
  if (action < 0 || action >= universe_ || !m[action])
    throw InvalidActionError("cannot remove element " + std::to_string(action) + " from " + describe(s));
  EnvState prev = s;
  prev.data[action] = 0;
  prev.done = false;
  return prev;
}

std::optional<int> SetGeneration::forward_action_between(const EnvState& parent,
                                                         const EnvState& child) const {
  if (is_terminal(parent) || parent.data.size() != child.data.size()) return std::nullopt;
  int added = -1;
  for (int e = 0; e < universe_; ++e) {
    if (parent.data[e] == child.data[e]) continue;
    if (added >= 0 || parent.data[e] != 0) return std::nullopt;
    added = e;
  }
  if (added < 0) return std::nullopt;
  return added;
}

std::optional<int> SetGeneration::backward_action_between(const EnvState& child,
                                                          const EnvState& parent) const {
  return forward_action_between(parent, child);
}

EnvState SetGeneration::make_state(std::span<const int> members) const {
  EnvState s = initial_state();
  for (int e : members) {
    if (e < 0 || e >= universe_) throw InvalidSpecError("set element out of range");
    if (s.data[e]) throw InvalidSpecError("repeated set element");
    s.data[e] = 1;
  }
  if (potential(s) > target_) throw InvalidSpecError("set larger than the target size");
  s.done = is_terminal(s);
  return s;
}

EnvState SetGeneration::goal_state(const Goal& goal) const {
  if (!is_valid_goal(goal)) throw InvalidActionError("invalid set goal");
  return EnvState{goal.data, true};
}

bool SetGeneration::is_valid_goal(const Goal& goal) const {
  if (static_cast<int>(goal.data.size()) != universe_) return false;
  int count = 0;
  for (auto v : goal.data) {
    if (v != 0 && v != 1) return false;
    count += v;
  }
  return count == target_;
}

double SetGeneration::terminal_count() const {
  return std::exp(std::lgamma(universe_ + 1.0) - std::lgamma(target_ + 1.0) -
                  std::lgamma(universe_ - target_ + 1.0));
}

std::vector<Goal> SetGeneration::goal_universe() const {
  if (terminal_count() > static_cast<double>(spec_.enumeration_cap))
    throw EnumerationCapError("set goal count exceeds the enumeration cap");
  std::vector<Goal> out;
  std::vector<int> pick(static_cast<std::size_t>(target_));
  std::iota(pick.begin(), pick.end(), 0);
  while (true) {
    Goal g{std::vector<std::int16_t>(static_cast<std::size_t>(universe_), 0)};
    for (int e : pick) g.data[e] = 1;
    out.push_back(std::move(g));
    int i = target_ - 1;
    while (i >= 0 && pick[i] == universe_ - target_ + i) --i;
    if (i < 0) break;
    ++pick[i];
    for (int j = i + 1; j < target_; ++j) pick[j] = pick[j - 1] + 1;
  }
  return out;
}

Goal SetGeneration::goal_from_values(std::span<const int> values) const {
  if (static_cast<int>(values.size()) != target_)
    throw InvalidSpecError("set goal needs exactly |S| members");
  return Goal{make_state(values).data};
}

std::vector<int> SetGeneration::goal_values(const Goal& goal) const {
  std::vector<int> members;
  for (int e = 0; e < static_cast<int>(goal.data.size()); ++e)
    if (goal.data[e]) members.push_back(e);
  return members;
}

std::string SetGeneration::describe(const EnvState& s) const {
  std::string out = "{";
  bool first = true;
  for (int e = 0; e < static_cast<int>(s.data.size()); ++e) {
    if (!s.data[e]) continue;
    if (!first) out += ',';
    out += std::to_string(e);
    first = false;
  }
  return out + "}";
}

void SetGeneration::encode_block(const std::vector<std::int16_t>& payload, bool,
                                 std::span<double> out) const {
  if (static_cast<int>(payload.size()) != universe_) throw ShapeError("set payload has wrong size");
  for (int e = 0; e < universe_; ++e) out[e] = payload[e];
}

Goal SetGeneration::draw_goal(Rng& rng) const {
  // Partial Fisher-Yates: the first |S| entries are a uniform |S|-subset.
  std::vector<int> perm(static_cast<std::size_t>(universe_));
  std::iota(perm.begin(), perm.end(), 0);
  Goal g{std::vector<std::int16_t>(static_cast<std::size_t>(universe_), 0)};
  for (int i = 0; i < target_; ++i) {
    const auto j = i + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(universe_ - i)));
    std::swap(perm[i], perm[j]);
    g.data[perm[i]] = 1;
  }
  return g;
}

}  // namespace rbs
