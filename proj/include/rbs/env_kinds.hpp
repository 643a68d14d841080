#pragma once

#include <vector>

#include "rbs/env.hpp"

namespace rbs {

// H x H hyper-grid. Forward actions {+x, +y, stop}; backward actions
// {-x, -y, unstop}. Obstacle cells are removed from both parent and child
// sets, and parents unreachable from (0,0) are never offered.
class GridWorld final : public Environment {
 public:
  enum Forward : int { kRight = 0, kUp = 1, kStop = 2 };
  enum Backward : int { kLeft = 0, kDown = 1, kUnstop = 2 };

  explicit GridWorld(EnvSpec spec);

  int num_forward_actions() const override { return 3; }
  int num_backward_actions() const override { return 3; }
  int block_size() const override { return 2 * side_; }
  int max_depth() const override { return 2 * (side_ - 1) + 1; }

  EnvState initial_state() const override;
  bool is_terminal(const EnvState& s) const override { return s.done; }
  int potential(const EnvState& s) const override;

  Mask forward_mask(const EnvState& s) const override;
  EnvState apply_forward(const EnvState& s, int action) const override;
  Mask backward_mask(const EnvState& s) const override;
  EnvState apply_backward(const EnvState& s, int action) const override;
  std::optional<int> forward_action_between(const EnvState& parent,
                                            const EnvState& child) const override;
  std::optional<int> backward_action_between(const EnvState& child,
                                             const EnvState& parent) const override;

  EnvState goal_state(const Goal& goal) const override;
  bool is_valid_goal(const Goal& goal) const override;
  bool goal_reachable(const Goal& goal) const override;
  std::vector<Goal> goal_universe() const override;
  double terminal_count() const override;
  Goal goal_from_values(std::span<const int> values) const override;
  std::vector<int> goal_values(const Goal& goal) const override;
  std::string describe(const EnvState& s) const override;

  int side() const { return side_; }
  bool blocked(int x, int y) const { return blocked_[index(x, y)]; }
  bool reachable(int x, int y) const { return reachable_[index(x, y)]; }

  static Goal cell_goal(int x, int y) {
    return Goal{{static_cast<std::int16_t>(x), static_cast<std::int16_t>(y)}};
  }
  static EnvState cell_state(int x, int y, bool done = false) {
    return EnvState{{static_cast<std::int16_t>(x), static_cast<std::int16_t>(y)}, done};
  }

 protected:
  void encode_block(const std::vector<std::int16_t>& payload, bool goal_block,
                    std::span<double> out) const override;
  Goal draw_goal(Rng& rng) const override;

 private:
  int index(int x, int y) const { return y * side_ + x; }
  bool in_bounds(int x, int y) const { return x >= 0 && y >= 0 && x < side_ && y < side_; }
  void check_state(const EnvState& s) const;

  int side_;
  std::vector<bool> blocked_;
  std::vector<bool> reachable_;
  std::vector<Goal> sampleable_;  // reachable, unmasked cells
};

// Build a set of exactly |S| elements from a universe U without repeats.
// Forward action e adds element e; backward action e removes it.
class SetGeneration final : public Environment {
 public:
  explicit SetGeneration(EnvSpec spec);

  int num_forward_actions() const override { return universe_; }
  int num_backward_actions() const override { return universe_; }
  int block_size() const override { return universe_; }
  int max_depth() const override { return target_; }

  EnvState initial_state() const override;
  bool is_terminal(const EnvState& s) const override;
  int potential(const EnvState& s) const override;

  Mask forward_mask(const EnvState& s) const override;
  EnvState apply_forward(const EnvState& s, int action) const override;
  Mask backward_mask(const EnvState& s) const override;
  EnvState apply_backward(const EnvState& s, int action) const override;
  std::optional<int> forward_action_between(const EnvState& parent,
                                            const EnvState& child) const override;
  std::optional<int> backward_action_between(const EnvState& child,
                                             const EnvState& parent) const override;

  EnvState goal_state(const Goal& goal) const override;
  bool is_valid_goal(const Goal& goal) const override;
  std::vector<Goal> goal_universe() const override;
  double terminal_count() const override;
  Goal goal_from_values(std::span<const int> values) const override;
  std::vector<int> goal_values(const Goal& goal) const override;
  std::string describe(const EnvState& s) const override;

  EnvState make_state(std::span<const int> members) const;

 protected:
  void encode_block(const std::vector<std::int16_t>& payload, bool goal_block,
                    std::span<double> out) const override;
  Goal draw_goal(Rng& rng) const override;

 private:
  void check_state(const EnvState& s) const;
  int universe_;
  int target_;
};

// Prepend/append construction of a fixed-length sequence over a vocabulary.
// Forward actions: [0, V) prepend word w, [V, 2V) append word w. Backward
// actions: 0 remove front, 1 remove back. When two actions reach the same
// neighbour (empty or constant sequences) only the lower index stays valid.
class SequenceEnv final : public Environment {
 public:
  enum Backward : int { kRemoveFront = 0, kRemoveBack = 1 };

  explicit SequenceEnv(EnvSpec spec);

  int num_forward_actions() const override { return 2 * vocab_; }
  int num_backward_actions() const override { return 2; }
  // Position one-hots plus a length one-hot.
  int block_size() const override { return length_ * vocab_ + length_ + 1; }
  int max_depth() const override { return length_; }

  EnvState initial_state() const override;
  bool is_terminal(const EnvState& s) const override;
  int potential(const EnvState& s) const override;

  Mask forward_mask(const EnvState& s) const override;
  EnvState apply_forward(const EnvState& s, int action) const override;
  Mask backward_mask(const EnvState& s) const override;
  EnvState apply_backward(const EnvState& s, int action) const override;

  EnvState goal_state(const Goal& goal) const override;
  bool is_valid_goal(const Goal& goal) const override;
  std::vector<Goal> goal_universe() const override;
  double terminal_count() const override;
  Goal goal_from_values(std::span<const int> values) const override;
  std::vector<int> goal_values(const Goal& goal) const override;
  std::string describe(const EnvState& s) const override;

  int vocab() const { return vocab_; }
  int length() const { return length_; }
  int prepend(int word) const { return word; }
  int append(int word) const { return vocab_ + word; }
  EnvState make_state(std::span<const int> words) const;

 protected:
  void encode_block(const std::vector<std::int16_t>& payload, bool goal_block,
                    std::span<double> out) const override;
  Goal draw_goal(Rng& rng) const override;

 private:
  void check_state(const EnvState& s) const;
  int vocab_;
  int length_;
};

}  // namespace rbs
