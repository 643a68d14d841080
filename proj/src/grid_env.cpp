#include <algorithm>

#include "rbs/env_kinds.hpp"
#include "rbs/errors.hpp"

namespace rbs {

GridWorld::GridWorld(EnvSpec spec)
    : Environment(std::move(spec)),
      side_(spec_.side),
      blocked_(static_cast<std::size_t>(side_ * side_), false),
      reachable_(static_cast<std::size_t>(side_ * side_), false) {
  for (const auto& c : spec_.obstacles) blocked_[index(c.x, c.y)] = true;
  // Monotone moves: a cell is reachable iff it is free and a free reachable
  // cell sits directly below or to its left.
  for (int y = 0; y < side_; ++y) {
    for (int x = 0; x < side_; ++x) {
      if (blocked_[index(x, y)]) continue;
      reachable_[index(x, y)] = (x == 0 && y == 0) || (x > 0 && reachable_[index(x - 1, y)]) ||
                                (y > 0 && reachable_[index(x, y - 1)]);
    }
  }
  for (int y = 0; y < side_; ++y)
    for (int x = 0; x < side_; ++x)
      if (reachable_[index(x, y)] && !is_masked(cell_goal(x, y)))
        sampleable_.push_back(cell_goal(x, y));
}

void GridWorld::check_state(const EnvState& s) const {
  if (s.data.size() != 2 || !in_bounds(s.data[0], s.data[1]))
    throw InvalidActionError("malformed grid state " + describe(s));
}

EnvState GridWorld::initial_state() const { return cell_state(0, 0); }

int GridWorld::potential(const EnvState& s) const { return s.data[0] + s.data[1] + (s.done ? 1 : 0); }

Mask GridWorld::forward_mask(const EnvState& s) const {
  check_state(s);
  if (s.done) throw TerminalStateError("forward mask requested for terminal state " + describe(s));
  const int x = s.data[0], y = s.data[1];
  Mask m(3, false);
  m[kRight] = x + 1 < side_ && !blocked(x + 1, y);
  m[kUp] = y + 1 < side_ && !blocked(x, y + 1);
  m[kStop] = true;
  return m;
}

EnvState GridWorld::apply_forward(const EnvState& s, int action) const {
  const Mask m = forward_mask(s);
  if (action < 0 || action >= 3 || !m[action])
    throw InvalidActionError("forward action " + std::to_string(action) + " invalid at " + describe(s));
  EnvState next = s;
  if (action == kRight) next.data[0] += 1;
  else if (action == kUp) next.data[1] += 1;
  else next.done = true;
  return next;
}

Mask GridWorld::backward_mask(const EnvState& s) const {
  check_state(s);
  if (is_initial(s)) throw NoParentError("initial state has no parent");
  Mask m(3, false);
  if (s.done) {
    m[kUnstop] = true;
    return m;
  }
  const int x = s.data[0], y = s.data[1];
  m[kLeft] = x > 0 && reachable(x - 1, y);
  m[kDown] = y > 0 && reachable(x, y - 1);
  return m;
}

EnvState GridWorld::apply_backward(const EnvState& s, int action) const {
  const Mask m = backward_mask(s);
  if (action < 0 || action >= 3 || !m[action])
    throw InvalidActionError("backward action " + std::to_string(action) + " invalid at " + describe(s));
  EnvState prev = s;
  if (action == kLeft) prev.data[0] -= 1;
  else if (action == kDown) prev.data[1] -= 1;
  else prev.done = false;
  return prev;
}

std::optional<int> GridWorld::forward_action_between(const EnvState& parent,
                                                     const EnvState& child) const {
  if (parent.done) return std::nullopt;
  const Mask m = forward_mask(parent);
  const int dx = child.data[0] - parent.data[0], dy = child.data[1] - parent.data[1];
  int a = -1;
  if (child.done && dx == 0 && dy == 0) a = kStop;
  else if (!child.done && dx == 1 && dy == 0) a = kRight;
  else if (!child.done && dx == 0 && dy == 1) a = kUp;
  if (a < 0 || !m[a]) return std::nullopt;
  return a;
}

std::optional<int> GridWorld::backward_action_between(const EnvState& child,
                                                      const EnvState& parent) const {
  const auto a = forward_action_between(parent, child);
  if (!a) return std::nullopt;
  const int b = *a == kRight ? kLeft : *a == kUp ? kDown : kUnstop;
  if (!backward_mask(child)[b]) return std::nullopt;
  return b;
}

EnvState GridWorld::goal_state(const Goal& goal) const {
  if (!is_valid_goal(goal)) throw InvalidActionError("invalid grid goal");
  return EnvState{goal.data, true};
}

bool GridWorld::is_valid_goal(const Goal& goal) const {
  return goal.data.size() == 2 && in_bounds(goal.data[0], goal.data[1]) &&
         !blocked(goal.data[0], goal.data[1]);
}

bool GridWorld::goal_reachable(const Goal& goal) const {
  return is_valid_goal(goal) && reachable(goal.data[0], goal.data[1]);
}

std::vector<Goal> GridWorld::goal_universe() const {
  if (static_cast<std::size_t>(side_) * side_ > spec_.enumeration_cap)
    throw EnumerationCapError("grid goal count exceeds the enumeration cap");
  std::vector<Goal> out;
  for (int y = 0; y < side_; ++y)
    for (int x = 0; x < side_; ++x)
      if (reachable(x, y)) out.push_back(cell_goal(x, y));
  return out;
}

double GridWorld::terminal_count() const {
  return static_cast<double>(std::count(reachable_.begin(), reachable_.end(), true));
}

Goal GridWorld::goal_from_values(std::span<const int> values) const {
  if (values.size() != 2) throw InvalidSpecError("grid goal needs two coordinates");
  Goal g = cell_goal(values[0], values[1]);
  if (!is_valid_goal(g)) throw InvalidSpecError("grid goal outside the grid or on an obstacle");
  return g;
}

std::vector<int> GridWorld::goal_values(const Goal& goal) const {
  return {goal.data.at(0), goal.data.at(1)};
}

std::string GridWorld::describe(const EnvState& s) const {
  if (s.data.size() != 2) return Environment::describe(s);
  return "(" + std::to_string(s.data[0]) + "," + std::to_string(s.data[1]) + ")" +
         (s.done ? "*" : "");
}

void GridWorld::encode_block(const std::vector<std::int16_t>& payload, bool,
                             std::span<double> out) const {
  if (payload.size() != 2 || !in_bounds(payload[0], payload[1]))
    throw ShapeError("grid payload is not a cell");
  out[payload[0]] = 1.0;
  out[side_ + payload[1]] = 1.0;
}

Goal GridWorld::draw_goal(Rng& rng) const {
  if (sampleable_.empty()) throw InvalidSpecError("no sampleable grid goal");
  return sampleable_[uniform_index(rng, sampleable_.size())];
}

}  // namespace rbs
