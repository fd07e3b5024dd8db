#include "lemix/batching.hpp"

#include <algorithm>

namespace lemix {

BatchingResult continuous_batch(const std::deque<const Task*>& queue, int c_max, Seconds t_w,
                                Seconds t_start, Seconds now) {
  if (c_max < 1) throw ContractViolation("continuous_batch: c_max must be >= 1");
  BatchingResult out;
  Batch b;
  for (const Task* t : queue) {
    if (static_cast<int>(b.members.size()) >= c_max) break;
    if (t->requires_backward()) break;
    b.members.push_back(t->id);
    b.padded_length = std::max(b.padded_length, t->length);
    b.total_batch += t->batch_size;
  }
  if (b.members.empty()) return out;

  const bool full = static_cast<int>(b.members.size()) >= c_max;
  const Seconds deadline = t_start + t_w;
  if (full || now >= deadline) {
    b.formed_at = now;
    out.taken = b.members.size();
    out.batch = std::move(b);
  } else {
    out.wake_at = deadline;
  }
  return out;
}

int active_batch(const std::vector<DecodeMember>& members) {
  int c = 0;
  for (const auto& m : members) c += m.batch;
  return c;
}

int max_context(const std::vector<DecodeMember>& members) {
  int ctx = 0;
  for (const auto& m : members) ctx = std::max(ctx, m.context);
  return ctx;
}

Seconds decode_step_latency(const StageProfile& stage, const std::vector<DecodeMember>& members) {
  if (members.empty()) return 0.0;
  return decode_latency(stage, active_batch(members), max_context(members));
}

Bytes decode_step_kv(const StageProfile& stage, const std::vector<DecodeMember>& members) {
  return stage.mem_kv_coeff * active_batch(members);
}

std::vector<DecodeMember> advance_decode(std::vector<DecodeMember>& members) {
  std::vector<DecodeMember> finished;
  for (auto& m : members) {
    ++m.context;
    --m.remaining;
    if (m.remaining <= 0) finished.push_back(m);
  }
  std::erase_if(members, [](const DecodeMember& m) { return m.remaining <= 0; });
  return finished;
}

}  // namespace lemix
