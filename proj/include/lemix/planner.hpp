#pragma once

#include <optional>
#include <vector>

#include "lemix/cluster.hpp"
#include "lemix/task.hpp"

namespace lemix {

/// The unit the planner schedules on a node: a single task or a batch of
/// inference requests padded to a common length.
struct PlanItem {
  TaskId id = 0;
  TaskKind kind = TaskKind::kInference;
  Seconds arrival = 0.0;
  int length = 1;
  int batch = 1;
};

struct QueueEntry {
  PlanItem item;
  ExecPath path;
};

/// Per-node forecast of pending work. `train` holds training items whose
/// backward has not finished; `inference` holds inference items whose forward
/// has not finished. `last` is the most recently enqueued item of any kind and
/// is kept after it completes.
struct TraceQueues {
  std::vector<QueueEntry> train;
  std::vector<QueueEntry> inference;
  std::optional<QueueEntry> last;

  bool empty() const { return train.empty() && inference.empty(); }
  bool contains(TaskId id) const;
  const QueueEntry* find(TaskId id) const;
};

struct PlanResult {
  Seconds idleness = 0.0;      // II, clamped at 0
  Seconds raw_idleness = 0.0;  // signed sum before clamping
  Seconds response = 0.0;      // R = end_f^S - arrival
  ExecPath path;               // forward spans only
  /// Training items whose stage-1 backward completes in the planned timeline
  /// before this item arrives; the caller drops them when committing.
  std::vector<TaskId> executed_training;
};

/// Forward planning with far-dependency rescheduling. Pure: `queues` is not
/// modified.
PlanResult compute_idleness(const TraceQueues& queues, const NodeConfig& node, const PlanItem& item);

/// Backward spans for a training item whose forward path is planned. Stages
/// run in reverse and queue behind any backward already planned on the stage.
ExecPath plan_backward(const PlanItem& item, const ExecPath& path, const NodeConfig& node,
                       const TraceQueues& queues);

/// Commits a planned item: drops `plan.executed_training`, appends the item to
/// its queue and makes it `last`. `path` must include backward spans for
/// training items.
void commit_plan(TraceQueues& queues, const PlanItem& item, const ExecPath& path,
                 const std::vector<TaskId>& executed_training = {});

/// Overwrites one stage span with measured times, shifts the item's later
/// dependent spans so the path stays ordered, and retires finished items.
/// Throws std::out_of_range for an unknown item.
void calibrate(TraceQueues& queues, TaskId id, int stage, Seconds actual_start, Seconds actual_end,
               Pass op);

/// Latest planned final-stage forward end on the node, if anything was planned.
std::optional<Seconds> latest_forward_end(const TraceQueues& queues);

}  // namespace lemix
