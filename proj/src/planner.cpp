#include "lemix/planner.hpp"

#include <algorithm>
#include <deque>
#include <stdexcept>

namespace lemix {

namespace {

double work(int batch, int length) {
  const double l = length;
  return batch * l * l;
}

QueueEntry* find_mut(std::vector<QueueEntry>& v, TaskId id) {
  for (auto& e : v)
    if (e.item.id == id) return &e;
  return nullptr;
}

void shift_forward_from(ExecPath& p, std::size_t first) {
  for (std::size_t s = first; s < p.forward.size(); ++s) {
    const Seconds lag = p.forward[s - 1].end - p.forward[s].start;
    if (lag > 0) {
      p.forward[s].start += lag;
      p.forward[s].end += lag;
    }
  }
}

// Backward spans run from the last stage down to stage 0.
void shift_backward_below(ExecPath& p, std::size_t stage) {
  for (std::size_t s = stage; s-- > 0;) {
    const Seconds lag = p.backward[s + 1].end - p.backward[s].start;
    if (lag > 0) {
      p.backward[s].start += lag;
      p.backward[s].end += lag;
    }
  }
}

void shift_backward_after_forward(ExecPath& p) {
  if (!p.has_backward()) return;
  const std::size_t last = p.backward.size() - 1;
  const Seconds lag = p.forward.back().end - p.backward[last].start;
  if (lag > 0) {
    p.backward[last].start += lag;
    p.backward[last].end += lag;
  }
  shift_backward_below(p, last);
}

}  // namespace

bool TraceQueues::contains(TaskId id) const { return find(id) != nullptr; }

const QueueEntry* TraceQueues::find(TaskId id) const {
  for (const auto& e : train)
    if (e.item.id == id) return &e;
  for (const auto& e : inference)
    if (e.item.id == id) return &e;
  return nullptr;
}

PlanResult compute_idleness(const TraceQueues& queues, const NodeConfig& node, const PlanItem& item) {
  const std::size_t num_stages = node.stages.size();
  PlanResult result;
  result.path.forward.resize(num_stages);
  const double item_work = work(item.batch, item.length);
  Seconds upstream_end = item.arrival;

  // Without a predecessor a stage is measured from when the item reaches it,
  // so an empty node adds no idleness.
  const QueueEntry* prev = queues.last ? &*queues.last : nullptr;
  auto prev_end = [&](std::size_t s) { return prev ? prev->path.forward[s].end : upstream_end; };

  std::deque<const QueueEntry*> pending;
  for (const auto& e : queues.train) pending.push_back(&e);
  Seconds idle = 0.0;

  for (std::size_t s = 0; s < num_stages; ++s) {
    const auto& stage = node.stages[s];
    const Seconds duration = stage.eta_f * item_work;
    Seconds start = std::max(upstream_end, prev_end(s));
    Seconds end = start + duration;
    Seconds offset = 0.0;

    while (!pending.empty()) {
      const QueueEntry* train = pending.front();
      pending.pop_front();
      const StageSpan& bwd = train->path.backward[s];
      if (end <= bwd.start) {
        // Fits in the idle gap ahead of this backward; keep it for later stages.
        pending.push_front(train);
        break;
      }
      start = std::max(start, bwd.end);
      end = start + duration;
      if (prev_end(s) <= bwd.start) offset += stage.eta_b * work(train->item.batch, train->item.length);
      if (s == 0 && train->path.backward[0].end <= item.arrival)
        result.executed_training.push_back(train->item.id);
    }

    idle += start - prev_end(s) - offset;
    result.path.forward[s] = {start, end};
    upstream_end = end;
  }

  result.raw_idleness = idle;
  result.idleness = std::max(0.0, idle);
  result.response = upstream_end - item.arrival;
  return result;
}

ExecPath plan_backward(const PlanItem& item, const ExecPath& path, const NodeConfig& node,
                       const TraceQueues& queues) {
  if (item.kind != TaskKind::kTraining) throw ContractViolation("plan_backward called on an inference item");
  const std::size_t num_stages = node.stages.size();
  if (path.forward.size() != num_stages) throw ContractViolation("plan_backward: forward path incomplete");

  ExecPath out = path;
  out.backward.assign(num_stages, {});
  const double item_work = work(item.batch, item.length);
  Seconds downstream_end = path.forward.back().end;
  for (std::size_t s = num_stages; s-- > 0;) {
    Seconds start = downstream_end;
    for (const auto& e : queues.train)
      if (e.item.id != item.id) start = std::max(start, e.path.backward[s].end);
    const Seconds end = start + node.stages[s].eta_b * item_work;
    out.backward[s] = {start, end};
    downstream_end = end;
  }
  return out;
}

void commit_plan(TraceQueues& queues, const PlanItem& item, const ExecPath& path,
                 const std::vector<TaskId>& executed_training) {
  if (item.kind == TaskKind::kTraining && !path.has_backward())
    throw ContractViolation("commit_plan: training item needs a backward path");
  if (!executed_training.empty()) {
    std::erase_if(queues.train, [&](const QueueEntry& e) {
      return std::find(executed_training.begin(), executed_training.end(), e.item.id) != executed_training.end();
    });
  }
  QueueEntry entry{item, path};
  if (item.kind == TaskKind::kTraining) {
    queues.train.push_back(entry);
  } else {
    queues.inference.push_back(entry);
  }
  queues.last = std::move(entry);
}

void calibrate(TraceQueues& queues, TaskId id, int stage, Seconds actual_start, Seconds actual_end,
               Pass op) {
  QueueEntry* entry = find_mut(queues.train, id);
  const bool is_train = entry != nullptr;
  if (!entry) entry = find_mut(queues.inference, id);
  if (!entry) throw std::out_of_range("calibrate: unknown item " + std::to_string(id));

  const auto s = static_cast<std::size_t>(stage);
  ExecPath& p = entry->path;
  if (op == Pass::kForward) {
    p.forward.at(s) = {actual_start, actual_end};
    shift_forward_from(p, s + 1);
    shift_backward_after_forward(p);
  } else {
    if (!p.has_backward()) throw ContractViolation("calibrate: backward on an inference item");
    p.backward.at(s) = {actual_start, actual_end};
    shift_backward_below(p, s);
  }

  if (queues.last && queues.last->item.id == id) queues.last->path = p;

  const bool forward_done = op == Pass::kForward && s + 1 == p.forward.size();
  const bool backward_done = op == Pass::kBackward && s == 0;
  if (is_train && backward_done) {
    std::erase_if(queues.train, [id](const QueueEntry& e) { return e.item.id == id; });
  } else if (!is_train && forward_done) {
    std::erase_if(queues.inference, [id](const QueueEntry& e) { return e.item.id == id; });
  }
}

std::optional<Seconds> latest_forward_end(const TraceQueues& queues) {
  std::optional<Seconds> latest;
  auto consider = [&](const QueueEntry& e) {
    const Seconds end = e.path.forward.back().end;
    if (!latest || end > *latest) latest = end;
  };
  for (const auto& e : queues.train) consider(e);
  for (const auto& e : queues.inference) consider(e);
  if (queues.last) consider(*queues.last);
  return latest;
}

}  // namespace lemix
