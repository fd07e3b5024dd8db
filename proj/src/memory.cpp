#include "lemix/memory.hpp"

#include <algorithm>

namespace lemix {

GpuMemState::GpuMemState(Bytes weights, Bytes capacity, Bytes threshold)
    : weights_(weights), capacity_(capacity), threshold_(threshold), resident_(weights), peak_(weights) {}

void GpuMemState::grow(Bytes bytes) {
  resident_ += bytes;
  if (resident_ > peak_) peak_ = resident_;
  if (resident_ > capacity_) ++capacity_violations_;
}

void GpuMemState::shrink(Bytes bytes) { resident_ = std::max(weights_, resident_ - bytes); }

void GpuMemState::note_admission(Bytes demand) {
  if (resident_ + demand > threshold_) ++threshold_violations_;
}

void GpuMemState::add_transient(Bytes bytes) { grow(bytes); }

void GpuMemState::release_transient(Bytes bytes) { shrink(bytes); }

void GpuMemState::hold(TaskId id, Bytes activation, Bytes kv) {
  Holding& h = held_[id];
  h.activation += activation;
  h.kv += kv;
  if (!h.offloaded) grow(activation + kv);
}

void GpuMemState::drop_if_empty(std::map<TaskId, Holding>::iterator it) {
  if (it->second.activation <= 0.0 && it->second.kv <= 0.0) held_.erase(it);
}

void GpuMemState::release_activation(TaskId id) {
  auto it = held_.find(id);
  if (it == held_.end()) return;
  if (!it->second.offloaded) shrink(it->second.activation);
  it->second.activation = 0.0;
  drop_if_empty(it);
}

void GpuMemState::release_kv(TaskId id, Bytes bytes) {
  auto it = held_.find(id);
  if (it == held_.end()) return;
  const Bytes freed = std::min(bytes, it->second.kv);
  if (!it->second.offloaded) shrink(freed);
  it->second.kv -= freed;
  drop_if_empty(it);
}

Bytes GpuMemState::offload(TaskId id) {
  ++offloads_;
  Holding& h = held_[id];
  if (h.offloaded) return 0.0;
  h.offloaded = true;
  const Bytes moved = h.activation + h.kv;
  shrink(moved);
  return moved;
}

bool GpuMemState::is_offloaded(TaskId id) const {
  auto it = held_.find(id);
  return it != held_.end() && it->second.offloaded;
}

const GpuMemState::Holding* GpuMemState::holding(TaskId id) const {
  auto it = held_.find(id);
  return it == held_.end() ? nullptr : &it->second;
}

Admission decide_admission(const GpuMemState& mem, Bytes demand, Seconds waited, Seconds t_max,
                           bool memory_aware) {
  if (!memory_aware || mem.fits(demand)) return Admission::kExecute;
  return waited >= t_max ? Admission::kOffload : Admission::kWait;
}

}  // namespace lemix
