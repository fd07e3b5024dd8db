#pragma once

#include <deque>
#include <optional>
#include <vector>

#include "lemix/cluster.hpp"
#include "lemix/task.hpp"

namespace lemix {

/// Inference requests served together. Costs use the padded length and the
/// summed batch size of the members.
struct Batch {
  std::vector<TaskId> members;
  Seconds formed_at = 0.0;
  int padded_length = 0;
  int total_batch = 0;
};

struct BatchingResult {
  std::optional<Batch> batch;
  std::size_t taken = 0;         // requests to pop from the queue front
  std::optional<Seconds> wake_at;  // when to retry if nothing was emitted
};

/// Greedy FCFS fill of up to `c_max` inference requests from the queue front,
/// stopping at the first training task. The batch is emitted when full or
/// once `now >= t_start + t_w`; otherwise `wake_at` says when to try again.
BatchingResult continuous_batch(const std::deque<const Task*>& queue, int c_max, Seconds t_w,
                                Seconds t_start, Seconds now);

/// A generative request in the decode phase.
struct DecodeMember {
  TaskId id = 0;
  int batch = 1;
  int context = 0;    // tokens currently in the KV cache
  int remaining = 0;  // decode steps still to run
};

int active_batch(const std::vector<DecodeMember>& members);
int max_context(const std::vector<DecodeMember>& members);

/// Latency of one decode step on a stage: eta_d * C_active * max context.
Seconds decode_step_latency(const StageProfile& stage, const std::vector<DecodeMember>& members);

/// KV bytes a decode step appends on a stage (one token per active sequence).
Bytes decode_step_kv(const StageProfile& stage, const std::vector<DecodeMember>& members);

/// Advances every member by one token and removes the finished ones, which
/// are returned in member order.
std::vector<DecodeMember> advance_decode(std::vector<DecodeMember>& members);

}  // namespace lemix
