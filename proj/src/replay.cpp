#include "rbs/replay.hpp"

#include <algorithm>
#include <limits>
#include <unordered_set>

#include "rbs/errors.hpp"

namespace rbs {
namespace {
constexpr std::size_t kNotLearned = std::numeric_limits<std::size_t>::max();
}

PrioritizedBuffer::PrioritizedBuffer(std::size_t capacity, double p_max)
    : capacity_(capacity), p_max_(p_max) {
  if (capacity_ == 0) throw InvalidSpecError("buffer capacity must be >= 1");
  if (!(p_max_ > 0.0)) throw InvalidSpecError("p_max must be > 0");
}

bool PrioritizedBuffer::live(SlotId slot) const {
  return slot < inserted_ && inserted_ - slot <= capacity_;
}

double PrioritizedBuffer::priority(SlotId slot) const {
  if (!live(slot)) throw InvalidSpecError("slot is not live");
  return priorities_[ring_index(slot)];
}

const TrajectoryRecord& PrioritizedBuffer::record(SlotId slot) const {
  if (!live(slot)) throw InvalidSpecError("slot is not live");
  return records_[ring_index(slot)];
}

std::vector<SlotId> PrioritizedBuffer::live_slots() const {
  std::vector<SlotId> out;
  for (SlotId s = inserted_ - size(); s < inserted_; ++s) out.push_back(s);
  return out;
}

void PrioritizedBuffer::remove_learned(SlotId slot) {
  const std::size_t idx = ring_index(slot);
  const std::size_t pos = learned_position_[idx];
  if (pos == kNotLearned) return;
  const SlotId moved = learned_.back();
  learned_[pos] = moved;
  learned_position_[ring_index(moved)] = pos;
  learned_.pop_back();
  learned_position_[idx] = kNotLearned;
}

SlotId PrioritizedBuffer::insert(TrajectoryRecord record) {
  const SlotId slot = inserted_;
  const std::size_t idx = ring_index(slot);
  if (records_.size() < capacity_) {
    records_.push_back(std::move(record));
    priorities_.push_back(p_max_);
    learned_position_.push_back(kNotLearned);
  } else {
    const SlotId evicted = slot - capacity_;
    fresh_.erase(evicted);
    remove_learned(evicted);
    records_[idx] = std::move(record);
    priorities_[idx] = p_max_;
  }
  fresh_.insert(slot);
  ++inserted_;
  return slot;
}

BufferBatch PrioritizedBuffer::sample_batch(std::size_t m, Rng& rng) const {
  if (size() == 0) throw EmptyBufferError("cannot sample from an empty buffer");
  if (m == 0) throw InvalidSpecError("batch size must be >= 1");
  BufferBatch batch;
  for (auto it = fresh_.rbegin(); it != fresh_.rend() && batch.slots.size() < m; ++it)
    batch.slots.push_back(*it);
  batch.fresh_count = batch.slots.size();
  const std::size_t remainder = m - batch.slots.size();
  if (remainder > 0 && !learned_.empty()) {
    if (size() >= m) {
      // size >= m and fresh < m imply learned_.size() >= remainder.
      std::unordered_set<std::size_t> taken;
      while (taken.size() < remainder) {
        const auto k = static_cast<std::size_t>(uniform_index(rng, learned_.size()));
        if (taken.insert(k).second) batch.slots.push_back(learned_[k]);
      }
    } else {
      for (std::size_t i = 0; i < remainder; ++i)
        batch.slots.push_back(learned_[uniform_index(rng, learned_.size())]);
    }
  }
  batch.records.reserve(batch.slots.size());
  for (SlotId s : batch.slots) batch.records.push_back(&records_[ring_index(s)]);
  return batch;
}

void PrioritizedBuffer::mark_learned(std::span<const SlotId> slots) {
  for (SlotId s : slots) {
    if (!live(s)) {
      ++stale_marks_;
      continue;
    }
    const std::size_t idx = ring_index(s);
    if (priorities_[idx] == 0.0) continue;
    priorities_[idx] = 0.0;
    fresh_.erase(s);
    learned_position_[idx] = learned_.size();
    learned_.push_back(s);
  }
}

}  // namespace rbs
