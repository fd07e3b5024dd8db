#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lemix/allocator.hpp"
#include "lemix/cluster.hpp"
#include "lemix/task.hpp"

namespace lemix {

/// Raised when a run cannot finish: an infeasible task or a stalled event loop.
class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EngineOptions {
  /// Events processed without any stage completing before the run is
  /// declared stalled.
  std::uint64_t stall_budget = 2'000'000;
};

struct TaskRecord {
  TaskId id = 0;
  TaskKind kind = TaskKind::kInference;
  Seconds arrival = 0.0;
  Seconds release = 0.0;   // effective arrival (training waits for its predecessor)
  Seconds dispatch = 0.0;  // when the scheduler placed it
  int node = -1;
  std::int64_t item = -1;  // planning unit that carried the task
  int length = 0;
  int batch_size = 1;
  int output_length = 0;
  Seconds slo_deadline = 0.0;
  Seconds forward_estimate = 0.0;  // single-node forward latency used for the SLO
  ExecPath planned_path;           // as planned when the item was committed
  ExecPath actual_path;
  Seconds first_token = 0.0;       // final-stage forward end
  Seconds completion = 0.0;
  std::optional<Seconds> tbt;      // mean time between tokens, generative only
  std::optional<long> version;     // model version at forward start, inference only
  int deferrals = 0;               // times pushed behind an inference request
  bool offloaded = false;
  Seconds memory_wait = 0.0;

  Seconds ttft() const { return first_token - arrival; }
};

/// One allocation decision.
struct PlanRecord {
  std::int64_t item = 0;
  TaskKind kind = TaskKind::kInference;
  std::vector<TaskId> members;
  int node = 0;
  Seconds dispatch = 0.0;
  Seconds planned_arrival = 0.0;  // dispatch plus any charged decision cost
  int length = 0;
  int batch = 0;
  double score = 0.0;
  Seconds ii = 0.0;
  Seconds raw_ii = 0.0;
  Seconds response = 0.0;
  ExecPath planned_path;
  std::vector<TaskId> executed_training;
};

struct GpuRecord {
  int node = 0;
  int stage = 0;
  Seconds busy = 0.0;
  Seconds idle = 0.0;
  Bytes capacity = 0.0;
  Bytes threshold = 0.0;
  Bytes peak_memory = 0.0;
  int offloads = 0;
  int threshold_violations = 0;
  int capacity_violations = 0;
  std::vector<StageSpan> busy_intervals;  // in start order
};

struct SimResult {
  Policy policy = Policy::kLeMix;
  bool memory_aware = true;
  int num_nodes = 0;
  int num_stages = 0;
  Seconds horizon = 0.0;  // end of the last stage execution
  std::uint64_t events = 0;
  std::vector<TaskRecord> tasks;  // in input order
  std::vector<PlanRecord> plans;  // in decision order
  std::vector<GpuRecord> gpus;    // node-major
  /// Wall-clock seconds spent in each allocation decision. Not part of the
  /// simulated outcome and excluded from determinism checks.
  std::vector<double> decision_seconds;

  const GpuRecord& gpu(int node, int stage) const {
    return gpus.at(static_cast<std::size_t>(node * num_stages + stage));
  }
};

/// Runs the cluster simulation to quiescence. Tasks must be sorted by
/// arrival. Tasks whose slo_deadline is not after their arrival get the
/// default deadline of `params.slo_multiple` forward latencies.
SimResult run(const ClusterConfig& cluster, std::vector<Task> tasks, const SchedulerParams& params,
              std::uint64_t seed, const EngineOptions& options = {});

}  // namespace lemix
