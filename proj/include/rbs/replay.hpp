#pragma once

// Bounded trajectory store with age-based priorities.
//
// A record enters with priority p_max and drops to 0 once it has been
// learned from. With only two priority levels, sampling proportionally to
// priority reduces to: every fresh record first (newest first), then uniform
// draws without replacement from the learned ones.

#include <cstdint>
#include <set>
#include <span>
#include <vector>

#include "rbs/rng.hpp"
#include "rbs/trajectory.hpp"

namespace rbs {

// Monotone insertion serial; stays unique across evictions so stale ids can
// be detected.
using SlotId = std::uint64_t;

struct BufferBatch {
  std::vector<const TrajectoryRecord*> records;  // valid until the next insert
  std::vector<SlotId> slots;
  std::size_t fresh_count = 0;  // leading entries taken from the fresh segment
};

class PrioritizedBuffer {
 public:
  explicit PrioritizedBuffer(std::size_t capacity, double p_max = 1.0);

  SlotId insert(TrajectoryRecord record);
  BufferBatch sample_batch(std::size_t m, Rng& rng) const;
  // Stale ids (evicted since sampling) are skipped and counted.
  void mark_learned(std::span<const SlotId> slots);

  std::size_t size() const { return records_.size() < capacity_ ? records_.size() : capacity_; }
  std::size_t capacity() const { return capacity_; }
  double p_max() const { return p_max_; }
  std::size_t fresh_count() const { return fresh_.size(); }
  std::size_t learned_count() const { return learned_.size(); }
  std::uint64_t inserted() const { return inserted_; }
  std::uint64_t stale_marks() const { return stale_marks_; }

  bool live(SlotId slot) const;
  double priority(SlotId slot) const;
  const TrajectoryRecord& record(SlotId slot) const;
  // Live records, oldest first.
  std::vector<SlotId> live_slots() const;

 private:
  std::size_t ring_index(SlotId slot) const { return static_cast<std::size_t>(slot % capacity_); }
  void remove_learned(SlotId slot);

  std::size_t capacity_;
  double p_max_;
  std::vector<TrajectoryRecord> records_;
  std::vector<double> priorities_;
  std::uint64_t inserted_ = 0;
  std::uint64_t stale_marks_ = 0;
  std::set<SlotId> fresh_;
  std::vector<SlotId> learned_;                 // unordered pool
  std::vector<std::size_t> learned_position_;  // ring index -> position in learned_
};

}  // namespace rbs
