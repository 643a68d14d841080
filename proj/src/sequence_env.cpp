#include <algorithm>
#include <cmath>

#include "rbs/env_kinds.hpp"
#include "rbs/errors.hpp"

namespace rbs {
namespace {

// All words equal to `w` (vacuously true for the empty sequence).
bool constant_of(const std::vector<std::int16_t>& words, int w) {
  return std::all_of(words.begin(), words.end(), [w](std::int16_t v) { return v == w; });
}

bool constant(const std::vector<std::int16_t>& words) {
  return words.empty() || constant_of(words, words.front());
}

}  // namespace

SequenceEnv::SequenceEnv(EnvSpec spec)
    : Environment(std::move(spec)), vocab_(spec_.sequence_vocab()), length_(spec_.sequence_length()) {}

void SequenceEnv::check_state(const EnvState& s) const {
  if (static_cast<int>(s.data.size()) > length_) throw InvalidActionError("sequence too long");
}

EnvState SequenceEnv::initial_state() const { return EnvState{{}, false}; }

bool SequenceEnv::is_terminal(const EnvState& s) const {
  return static_cast<int>(s.data.size()) == length_;
}

int SequenceEnv::potential(const EnvState& s) const { return static_cast<int>(s.data.size()); }

Mask SequenceEnv::forward_mask(const EnvState& s) const {
  check_state(s);
  if (is_terminal(s)) throw TerminalStateError("forward mask requested for a complete sequence");
  Mask m(static_cast<std::size_t>(2 * vocab_), true);
  // prepend(w) and append(w) coincide exactly when every word equals w.
  for (int w = 0; w < vocab_; ++w)
    if (constant_of(s.data, w)) m[append(w)] = false;
  return m;
}

EnvState SequenceEnv::apply_forward(const EnvState& s, int action) const {
  const Mask m = forward_mask(s);
  if (action < 0 || action >= 2 * vocab_ || !m[action])
    throw InvalidActionError("forward action " + std::to_string(action) + " invalid at " + describe(s));
  EnvState next = s;
  if (action < vocab_) next.data.insert(next.data.begin(), static_cast<std::int16_t>(action));
  else next.data.push_back(static_cast<std::int16_t>(action - vocab_));
  next.done = is_terminal(next);
  return next;
}

Mask SequenceEnv::backward_mask(const EnvState& s) const {
  check_state(s);
  if (s.data.empty()) throw NoParentError("empty sequence has no parent");
  Mask m(2, true);
  // Removing either end of a constant sequence yields the same parent.
  if (constant(s.data)) m[kRemoveBack] = false;
  return m;
}

EnvState SequenceEnv::apply_backward(const EnvState& s, int action) const {
  const Mask m = backward_mask(s);
  if (action < 0 || action >= 2 || !m[action])
    throw InvalidActionError("backward action " + std::to_string(action) + " invalid at " + describe(s));
  EnvState prev = s;
  if (action == kRemoveFront) prev.data.erase(prev.data.begin());
  else prev.data.pop_back();
  prev.done = false;
  return prev;
}

EnvState SequenceEnv::make_state(std::span<const int> words) const {
  EnvState s;
  for (int w : words) {
    if (w < 0 || w >= vocab_) throw InvalidSpecError("word index out of range");
    s.data.push_back(static_cast<std::int16_t>(w));
  }
  check_state(s);
  s.done = is_terminal(s);
  return s;
}

EnvState SequenceEnv::goal_state(const Goal& goal) const {
  if (!is_valid_goal(goal)) throw InvalidActionError("invalid sequence goal");
  return EnvState{goal.data, true};
}

bool SequenceEnv::is_valid_goal(const Goal& goal) const {
  if (static_cast<int>(goal.data.size()) != length_) return false;
  return std::all_of(goal.data.begin(), goal.data.end(),
                     [this](std::int16_t w) { return w >= 0 && w < vocab_; });
}

double SequenceEnv::terminal_count() const { return std::pow(static_cast<double>(vocab_), length_); }

std::vector<Goal> SequenceEnv::goal_universe() const {
  if (terminal_count() > static_cast<double>(spec_.enumeration_cap))
    throw EnumerationCapError("sequence goal count exceeds the enumeration cap");
  std::vector<Goal> out;
  Goal g{std::vector<std::int16_t>(static_cast<std::size_t>(length_), 0)};
  while (true) {
    out.push_back(g);
    int i = length_ - 1;
    while (i >= 0 && g.data[i] == vocab_ - 1) g.data[i--] = 0;
    if (i < 0) break;
    ++g.data[i];
  }
  return out;
}

Goal SequenceEnv::goal_from_values(std::span<const int> values) const {
  if (static_cast<int>(values.size()) != length_)
    throw InvalidSpecError("sequence goal needs exactly " + std::to_string(length_) + " symbols");
  return Goal{make_state(values).data};
}

std::vector<int> SequenceEnv::goal_values(const Goal& goal) const {
  return {goal.data.begin(), goal.data.end()};
}

std::string SequenceEnv::describe(const EnvState& s) const {
  std::string out = "<";
  for (std::size_t i = 0; i < s.data.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(s.data[i]);
  }
  return out + ">";
}

void SequenceEnv::encode_block(const std::vector<std::int16_t>& payload, bool,
                               std::span<double> out) const {
  if (static_cast<int>(payload.size()) > length_) throw ShapeError("sequence payload too long");
  for (std::int16_t w : payload)
    if (w < 0 || w >= vocab_) throw ShapeError("sequence payload symbol out of range");
  for (std::size_t p = 0; p < payload.size(); ++p) out[p * vocab_ + payload[p]] = 1.0;
  out[static_cast<std::size_t>(length_ * vocab_) + payload.size()] = 1.0;
}

Goal SequenceEnv::draw_goal(Rng& rng) const {
  Goal g{std::vector<std::int16_t>(static_cast<std::size_t>(length_))};
  for (auto& w : g.data) w = static_cast<std::int16_t>(uniform_index(rng, static_cast<std::uint64_t>(vocab_)));
  return g;
}

}  // namespace rbs
