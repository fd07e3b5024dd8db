#pragma once

#include <map>

#include "lemix/cluster.hpp"
#include "lemix/task.hpp"

namespace lemix {

/// Resident memory of one GPU: static weights plus per-task activation and KV
/// bytes. Offloaded bytes live on the host and are not counted.
class GpuMemState {
 public:
  struct Holding {
    Bytes activation = 0.0;
    Bytes kv = 0.0;
    bool offloaded = false;
  };

  GpuMemState() = default;
  GpuMemState(Bytes weights, Bytes capacity, Bytes threshold);

  Bytes resident() const { return resident_; }
  Bytes peak() const { return peak_; }
  Bytes capacity() const { return capacity_; }
  Bytes threshold() const { return threshold_; }
  int offloads() const { return offloads_; }
  /// Admissions whose projected residency exceeded the threshold.
  int threshold_violations() const { return threshold_violations_; }
  /// Moments at which residency exceeded physical capacity.
  int capacity_violations() const { return capacity_violations_; }

  bool fits(Bytes demand) const { return resident_ + demand <= threshold_; }

  /// Counts a threshold violation when the projected residency is over the
  /// threshold. Call once per admitted execution.
  void note_admission(Bytes demand);

  /// Transient bytes that are freed by `release_transient`.
  void add_transient(Bytes bytes);
  void release_transient(Bytes bytes);

  void hold(TaskId id, Bytes activation, Bytes kv);
  void release_activation(TaskId id);
  void release_kv(TaskId id, Bytes bytes);
  /// Moves the task's held bytes to the host. Returns the bytes moved.
  Bytes offload(TaskId id);
  bool is_offloaded(TaskId id) const;
  const Holding* holding(TaskId id) const;

 private:
  void grow(Bytes bytes);
  void shrink(Bytes bytes);
  void drop_if_empty(std::map<TaskId, Holding>::iterator it);

  Bytes weights_ = 0.0;
  Bytes capacity_ = 0.0;
  Bytes threshold_ = 0.0;
  Bytes resident_ = 0.0;
  Bytes peak_ = 0.0;
  int offloads_ = 0;
  int threshold_violations_ = 0;
  int capacity_violations_ = 0;
  std::map<TaskId, Holding> held_;
};

enum class Admission { kExecute, kWait, kOffload };

/// One step of the wait-or-drop policy: execute when the demand fits under
/// the threshold, keep waiting until `waited` reaches `t_max`, then offload.
/// Without memory awareness every execution is admitted immediately.
Admission decide_admission(const GpuMemState& mem, Bytes demand, Seconds waited, Seconds t_max,
                           bool memory_aware);

/// Outcome of a whole admission attempt against a scripted memory timeline.
struct AdmissionOutcome {
  Admission result = Admission::kExecute;  // kExecute or kOffload
  Seconds waited = 0.0;
};

/// Replays the policy with polls every `delta_t`; `resident_at(t)` gives the
/// stage's resident bytes at time t since the first attempt.
template <typename ResidentAt>
AdmissionOutcome run_admission(Bytes threshold, Bytes demand, Seconds delta_t, Seconds t_max,
                               ResidentAt&& resident_at) {
  Seconds waited = 0.0;
  int polls = 0;
  for (;;) {
    if (resident_at(waited) + demand <= threshold) return {Admission::kExecute, waited};
    if (waited >= t_max) return {Admission::kOffload, waited};
    ++polls;
    waited = polls * delta_t;
  }
}

}  // namespace lemix
