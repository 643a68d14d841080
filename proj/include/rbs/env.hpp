#pragma once

// Goal-augmented DAG environments.
//
// Every environment exposes the same surface: forward/backward action masks,
// transitions, the goal-reaching indicator reward, and a fixed-length one-hot
// encoding of (state, goal). phi is the identity, so a goal has the payload of
// a completed state.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rbs/rng.hpp"

namespace rbs {

enum class EnvKind { Grid, Set, Bits, TfBind, Amp, Sequence };

std::string to_string(EnvKind kind);
EnvKind env_kind_from_string(const std::string& name);

struct Cell {
  int x = 0;
  int y = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
  friend auto operator<=>(const Cell&, const Cell&) = default;
};

// Payload conventions:
//   grid      data = {x, y}; done set by the stop action
//   set       data = membership bits over the universe (canonical, sorted)
//   sequence  data = word/symbol indices, front first
struct EnvState {
  std::vector<std::int16_t> data;
  bool done = false;
  friend bool operator==(const EnvState&, const EnvState&) = default;
};

struct Goal {
  std::vector<std::int16_t> data;
  friend bool operator==(const Goal&, const Goal&) = default;
  friend auto operator<=>(const Goal&, const Goal&) = default;
};

struct EnvStateHash {
  std::size_t operator()(const EnvState& s) const noexcept;
};

struct EnvSpec {
  EnvKind kind = EnvKind::Grid;
  int side = 8;          // grid H
  int universe = 30;     // set |U|
  int target_size = 12;  // set |S|
  int word_bits = 2;     // bits: k
  int total_bits = 40;   // bits: n
  int vocab = 4;         // tfbind / amp / sequence
  int length = 8;        // tfbind / amp / sequence
  std::vector<Cell> obstacles;
  std::vector<Goal> masked_goals;
  double tolerance = 0.0;
  std::size_t enumeration_cap = 1000000;

  // Presets matching the benchmark sizes.
  static EnvSpec grid(int side);
  static EnvSpec set(int universe, int target_size);
  static EnvSpec bits(int word_bits, int total_bits);
  static EnvSpec tfbind();
  static EnvSpec amp();
  static EnvSpec sequence(int vocab, int length);

  // Effective sequence shape for Bits/TfBind/Amp/Sequence kinds.
  int sequence_vocab() const;
  int sequence_length() const;

  // Throws InvalidSpecError on a violated invariant.
  void validate() const;

  // Canonical text of the fields that define the DAG (used for checkpoint
  // compatibility); masked goals are excluded since they only affect sampling.
  std::string canonical_shape() const;
  std::uint64_t shape_hash() const;
};

using Mask = std::vector<bool>;

class Environment {
 public:
  explicit Environment(EnvSpec spec);
  virtual ~Environment() = default;

  const EnvSpec& spec() const { return spec_; }

  virtual int num_forward_actions() const = 0;
  virtual int num_backward_actions() const = 0;
  // Length of the state block; encode() emits two blocks (state, goal).
  virtual int block_size() const = 0;
  int encoding_size() const { return 2 * block_size(); }
  // Exact maximum DAG depth (number of transitions of the longest trajectory).
  virtual int max_depth() const = 0;

  virtual EnvState initial_state() const = 0;
  virtual bool is_terminal(const EnvState& s) const = 0;
  bool is_initial(const EnvState& s) const { return s == initial_state(); }
  // Monotone quantity raised by exactly one per forward transition.
  virtual int potential(const EnvState& s) const = 0;

  // Every valid action leads to a distinct child and every valid backward
  // action to a distinct parent.
  virtual Mask forward_mask(const EnvState& s) const = 0;
  virtual EnvState apply_forward(const EnvState& s, int action) const = 0;
  virtual Mask backward_mask(const EnvState& s) const = 0;
  virtual EnvState apply_backward(const EnvState& s, int action) const = 0;

  // The valid forward action taking parent to child, if any, and the valid
  // backward action taking child to parent.
  virtual std::optional<int> forward_action_between(const EnvState& parent,
                                                    const EnvState& child) const;
  virtual std::optional<int> backward_action_between(const EnvState& child,
                                                     const EnvState& parent) const;

  Goal phi(const EnvState& terminal) const { return Goal{terminal.data}; }
  // The terminal state whose phi is `goal`.
  virtual EnvState goal_state(const Goal& goal) const = 0;
  virtual bool is_valid_goal(const Goal& goal) const = 0;
  // Valid and reachable from the initial state.
  virtual bool goal_reachable(const Goal& goal) const { return is_valid_goal(goal); }

  // Indicator reward: 1 iff distance(phi(x), y) <= tolerance, with the
  // exact-match metric (0 if equal, 1 otherwise).
  int reward(const EnvState& x, const Goal& y) const;

  void encode(const EnvState& s, const Goal& goal, std::span<double> out) const;
  std::vector<double> encode(const EnvState& s, const Goal& goal) const;

  // Uniform over reachable goals not in spec().masked_goals.
  Goal sample_goal(Rng& rng) const;
  // All reachable goals (masked ones included); throws EnumerationCapError
  // when the count exceeds spec().enumeration_cap.
  virtual std::vector<Goal> goal_universe() const = 0;
  // Number of terminal objects as a double (may be astronomically large).
  virtual double terminal_count() const = 0;

  // Goal from a flat list of integers as written in configs: grid "x,y",
  // set member indices, sequence symbol indices.
  virtual Goal goal_from_values(std::span<const int> values) const = 0;
  virtual std::vector<int> goal_values(const Goal& goal) const = 0;

  bool is_masked(const Goal& goal) const;

  virtual std::string describe(const EnvState& s) const;

 protected:
  virtual void encode_block(const std::vector<std::int16_t>& payload, bool goal_block,
                            std::span<double> out) const = 0;
  virtual Goal draw_goal(Rng& rng) const = 0;

  EnvSpec spec_;
};

std::shared_ptr<const Environment> make_environment(const EnvSpec& spec);

// Obstacle/goal map files: one text line per row y = 0, 1, ...; column index
// is x. '.' free, '#' obstacle, 'G' goal (free). All lines have equal width H
// and there are H lines.
struct GridMap {
  int side = 0;
  std::vector<Cell> obstacles;
  std::vector<Cell> goals;
};

GridMap parse_grid_map(const std::string& text);
GridMap load_grid_map(const std::string& path);
std::string format_grid_map(const GridMap& map);

}  // namespace rbs
