#include "lemix/engine.hpp"

#include <algorithm>
#include <chrono>
#include <deque>
#include <queue>
#include <random>
#include <sstream>

#include "lemix/batching.hpp"
#include "lemix/memory.hpp"
#include "lemix/planner.hpp"
#include "lemix/versions.hpp"

namespace lemix {

namespace {

enum class EventKind {
  kArrival,
  kStageForwardDone,
  kStageBackwardDone,
  kMemoryCheck,
  kDecodeStepDone,
  kBatchTimer,
  kSyncDone,
};

struct Event {
  Seconds time = 0.0;
  std::uint64_t seq = 0;
  EventKind kind = EventKind::kArrival;
  int gpu = -1;
  long value = 0;  // task index or checkpoint version
};

struct EventAfter {
  bool operator()(const Event& a, const Event& b) const {
    if (a.time != b.time) return a.time > b.time;
    return a.seq > b.seq;
  }
};

enum class OpKind { kForward, kBackward, kDecode };

struct Op {
  int item = -1;
  int stage = 0;
  OpKind kind = OpKind::kForward;
  Seconds key = 0.0;    // planned start; orders planned ops on a GPU
  Seconds ready = 0.0;  // decode ops: when the step became runnable
};

struct Item {
  PlanItem plan;
  std::vector<int> members;  // task indices
  int node = 0;
  Seconds ready = 0.0;       // dispatch plus charged decision cost
  bool generative = false;
  int forward_done = 0;      // forward stages finished, in order
  int backward_low = -1;     // lowest stage whose backward finished
  ExecPath actual;
  std::vector<DecodeMember> decode;
  std::vector<bool> reloaded;  // per stage: host bytes already brought back
};

struct Gpu {
  int node = 0;
  int stage = 0;
  std::deque<Op> planned;
  std::deque<Op> decode;
  bool busy = false;
  Op current;
  Seconds current_start = 0.0;
  Bytes transient = 0.0;
  bool waiting = false;  // head op blocked on memory
  bool waiting_decode = false;
  int polls = 0;
  GpuMemState mem;
  std::vector<StageSpan> intervals;
};

struct TaskState {
  bool arrived = false;
  bool done = false;
  int deferred_for = -1;  // inference task this training task was pushed behind
};

class Simulator {
 public:
  Simulator(const ClusterConfig& cluster, std::vector<Task> tasks, const SchedulerParams& params,
            std::uint64_t seed, const EngineOptions& options)
      : cluster_(cluster),
        tasks_(std::move(tasks)),
        params_(params),
        options_(options),
        allocator_(params),
        rng_(seed),
        versions_(static_cast<int>(cluster.nodes.size()),
                  is_colocated(params.policy) ? UpdateMode::kCoLocated : UpdateMode::kSeparate,
                  cluster.sync_interval) {
    validate(cluster_);
    num_nodes_ = static_cast<int>(cluster_.nodes.size());
    num_stages_ = cluster_.nodes.front().num_stages();
    for (const auto& n : cluster_.nodes)
      if (n.num_stages() != num_stages_) throw ConfigError("cluster: every node needs the same stage count");
    for (std::size_t i = 0; i < tasks_.size(); ++i) {
      validate(tasks_[i]);
      if (i > 0 && tasks_[i].arrival < tasks_[i - 1].arrival)
        throw ContractViolation("run: tasks must be sorted by arrival");
    }
    queues_.resize(static_cast<std::size_t>(num_nodes_));
    histories_.resize(static_cast<std::size_t>(num_nodes_));
    tasks_per_node_.assign(static_cast<std::size_t>(num_nodes_), 0);
    for (int n = 0; n < num_nodes_; ++n) {
      for (int s = 0; s < num_stages_; ++s) {
        const NodeConfig& cfg = node_config(n);
        const StageProfile& sp = cfg.stages[static_cast<std::size_t>(s)];
        Gpu g;
        g.node = n;
        g.stage = s;
        g.mem = GpuMemState(sp.mem_weights, sp.mem_capacity, memory_threshold(cfg, s));
        gpus_.push_back(std::move(g));
      }
    }
    state_.resize(tasks_.size());
    next_inference_from_.assign(tasks_.size() + 1, -1);
    for (std::size_t i = tasks_.size(); i-- > 0;) {
      next_inference_from_[i] =
          tasks_[i].kind == TaskKind::kInference ? static_cast<int>(i) : next_inference_from_[i + 1];
    }
    const NodeConfig& ref = node_config(0);
    double inference_len_sum = 0.0;
    int inference_count = 0;
    for (auto& t : tasks_) {
      if (!(t.slo_deadline > t.arrival))
        t.slo_deadline = t.arrival + params_.slo_multiple * node_forward_latency(ref, t.batch_size, t.length);
      if (t.kind == TaskKind::kInference) {
        inference_len_sum += t.length;
        ++inference_count;
      }
    }
    if (params_.batch_wait) {
      batch_wait_ = *params_.batch_wait;
    } else {
      const int mean_len = inference_count ? static_cast<int>(inference_len_sum / inference_count + 0.5) : 1;
      batch_wait_ = 0.5 * node_forward_latency(ref, 1, std::max(1, mean_len));
    }
    init_task_arrays();
  }

  SimResult run() {
    for (std::size_t i = 0; i < tasks_.size(); ++i) push(tasks_[i].arrival, EventKind::kArrival, -1, static_cast<long>(i));

    std::uint64_t since_progress = 0;
    while (!events_.empty()) {
      const Event e = events_.top();
      events_.pop();
      now_ = e.time;
      ++event_count_;
      if (++since_progress > options_.stall_budget) throw SimulationError("event loop stalled: " + diagnostics());
      const std::uint64_t progress_before = progress_;
      handle(e);
      dispatch();
      if (progress_ != progress_before) since_progress = 0;
    }
    if (completed_ != tasks_.size()) {
      throw SimulationError("run ended with " + std::to_string(tasks_.size() - completed_) +
                            " unfinished tasks: " + diagnostics());
    }
    return collect();
  }

 private:
  const NodeConfig& node_config(int n) const { return cluster_.nodes[static_cast<std::size_t>(n)]; }
  const StageProfile& profile(int n, int s) const {
    return node_config(n).stages[static_cast<std::size_t>(s)];
  }
  Gpu& gpu(int n, int s) { return gpus_[static_cast<std::size_t>(n * num_stages_ + s)]; }
  int gpu_index(const Gpu& g) const { return g.node * num_stages_ + g.stage; }

  void push(Seconds t, EventKind kind, int gpu_idx, long value = 0) {
    events_.push(Event{t, next_seq_++, kind, gpu_idx, value});
  }

  // ---- event handling -------------------------------------------------

  void handle(const Event& e) {
    switch (e.kind) {
      case EventKind::kArrival:
        on_arrival(static_cast<int>(e.value));
        break;
      case EventKind::kStageForwardDone:
      case EventKind::kStageBackwardDone:
      case EventKind::kDecodeStepDone:
        on_op_done(gpus_[static_cast<std::size_t>(e.gpu)]);
        break;
      case EventKind::kMemoryCheck: {
        Gpu& g = gpus_[static_cast<std::size_t>(e.gpu)];
        if (g.waiting) {
          ++g.polls;
          attempt(g, g.waiting_decode);
        }
        break;
      }
      case EventKind::kBatchTimer:
        for (auto& g : gpus_) try_start(g);
        break;
      case EventKind::kSyncDone: {
        std::vector<int> all(static_cast<std::size_t>(num_nodes_));
        for (int n = 0; n < num_nodes_; ++n) all[static_cast<std::size_t>(n)] = n;
        versions_.apply_sync(e.value, all);
        break;
      }
    }
  }

  void on_arrival(int idx) {
    ++progress_;
    state_[static_cast<std::size_t>(idx)].arrived = true;
    next_arrival_ = static_cast<std::size_t>(idx) + 1;
    recent_arrivals_.push_back(now_);
    const Task& t = tasks_[static_cast<std::size_t>(idx)];
    if (t.kind == TaskKind::kTraining) {
      training_backlog_.push_back(idx);
      release_training();
      return;
    }
    release_[static_cast<std::size_t>(idx)] = now_;
    // A training task waiting for this request lets it go first.
    auto it = std::find_if(queue_.begin(), queue_.end(),
                           [&](int q) { return state_[static_cast<std::size_t>(q)].deferred_for == idx; });
    queue_.insert(it, idx);
  }

  /// Training tasks enter the queue one at a time: the next one is released
  /// when its predecessor finishes its first-stage forward.
  void release_training() {
    if (!training_gate_open_ || training_backlog_.empty()) return;
    const int idx = training_backlog_.front();
    training_backlog_.pop_front();
    training_gate_open_ = false;
    release_[static_cast<std::size_t>(idx)] = now_;
    queue_.push_back(idx);
  }

  // ---- dispatching ----------------------------------------------------

  double observed_rate() {
    while (!recent_arrivals_.empty() && recent_arrivals_.front() <= now_ - params_.rate_window)
      recent_arrivals_.pop_front();
    return static_cast<double>(recent_arrivals_.size()) / params_.rate_window;
  }

  double utilization(int n) const {
    const Seconds window = params_.luf_window;
    const Seconds from = now_ - window;
    double total = 0.0;
    for (int s = 0; s < num_stages_; ++s) {
      const Gpu& g = gpus_[static_cast<std::size_t>(n * num_stages_ + s)];
      Seconds busy = 0.0;
      if (g.busy) busy += now_ - std::max(from, g.current_start);
      for (auto it = g.intervals.rbegin(); it != g.intervals.rend() && it->end > from; ++it)
        busy += it->end - std::max(from, it->start);
      total += std::min(1.0, busy / window);
    }
    return total / num_stages_;
  }

  std::vector<NodeView> node_views(bool with_utilization) const {
    std::vector<NodeView> views(static_cast<std::size_t>(num_nodes_));
    for (int n = 0; n < num_nodes_; ++n) {
      auto& v = views[static_cast<std::size_t>(n)];
      v.config = &node_config(n);
      v.queues = &queues_[static_cast<std::size_t>(n)];
      v.history = &histories_[static_cast<std::size_t>(n)];
      if (with_utilization) v.utilization = utilization(n);
    }
    return views;
  }

  /// The first inference request behind queue position 0, or the next one
  /// still to arrive.
  int next_inference_after_head() const {
    for (std::size_t i = 1; i < queue_.size(); ++i)
      if (tasks_[static_cast<std::size_t>(queue_[i])].kind == TaskKind::kInference) return queue_[i];
    return next_arrival_ < tasks_.size() ? next_inference_from_[next_arrival_] : -1;
  }

  void dispatch() {
    while (!queue_.empty()) {
      if (now_ < scheduler_free_) return;
      const int head = queue_.front();
      const Task& t = tasks_[static_cast<std::size_t>(head)];
      if (t.kind == TaskKind::kTraining) {
        if (params_.policy == Policy::kLeMix && params_.prioritize) {
          const int next = next_inference_after_head();
          if (next >= 0) {
            TaskState& st = state_[static_cast<std::size_t>(head)];
            if (st.deferred_for == next) return;  // still waiting for that request
            const Task& nt = tasks_[static_cast<std::size_t>(next)];
            PlanItem ni{nt.id, TaskKind::kInference, nt.arrival, nt.length, nt.batch_size};
            const Seconds budget =
                params_.slo_multiple * node_forward_latency(node_config(0), nt.batch_size, nt.length);
            const auto views = node_views(false);
            if (should_deprioritize(ni, budget, views)) {
              st.deferred_for = next;
              ++deferrals_[static_cast<std::size_t>(head)];
              auto pos = std::find(queue_.begin(), queue_.end(), next);
              if (pos == queue_.end()) return;  // wait for it to arrive
              queue_.pop_front();
              pos = std::find(queue_.begin(), queue_.end(), next);
              queue_.insert(pos + 1, head);
              continue;
            }
          }
        }
        queue_.pop_front();
        dispatch_item({head});
        continue;
      }

      if (params_.max_batch == 1) {
        queue_.pop_front();
        dispatch_item({head});
        continue;
      }
      std::deque<const Task*> view;
      for (int q : queue_) view.push_back(&tasks_[static_cast<std::size_t>(q)]);
      const Seconds t_start = std::max(release_[static_cast<std::size_t>(head)], last_emit_);
      BatchingResult res = continuous_batch(view, params_.max_batch, batch_wait_, t_start, now_);
      if (!res.batch) {
        if (res.wake_at && (!timer_at_ || *timer_at_ != *res.wake_at)) {
          timer_at_ = *res.wake_at;
          push(*res.wake_at, EventKind::kBatchTimer, -1);
        }
        return;
      }
      std::vector<int> members(queue_.begin(), queue_.begin() + static_cast<long>(res.taken));
      queue_.erase(queue_.begin(), queue_.begin() + static_cast<long>(res.taken));
      last_emit_ = now_;
      dispatch_item(members);
    }
  }

  void check_feasible(const Item& it, int n) const {
    for (int s = 0; s < num_stages_; ++s) {
      const StageProfile& sp = profile(n, s);
      const Bytes demand = forward_demand(it, sp);
      const Bytes room_physical = sp.mem_capacity - sp.mem_weights;
      const Bytes room_threshold = memory_threshold(node_config(n), s) - sp.mem_weights;
      if (demand > room_physical || (params_.memory_aware && demand > room_threshold)) {
        std::ostringstream msg;
        msg << "infeasible task: item " << it.plan.id << " needs " << demand << " bytes on node " << n
            << " stage " << s << " but only " << (params_.memory_aware ? room_threshold : room_physical)
            << " are available";
        throw SimulationError(msg.str());
      }
    }
  }

  void dispatch_item(const std::vector<int>& members) {
    Item it;
    it.members = members;
    const Task& first = tasks_[static_cast<std::size_t>(members.front())];
    it.plan.id = static_cast<TaskId>(items_.size());
    it.plan.kind = first.kind;
    it.plan.arrival = now_;
    it.plan.length = 0;
    it.plan.batch = 0;
    for (int m : members) {
      const Task& t = tasks_[static_cast<std::size_t>(m)];
      it.plan.length = std::max(it.plan.length, t.length);
      it.plan.batch += t.batch_size;
      if (t.output_length > 0) it.generative = true;
    }

    const bool luf = params_.policy == Policy::kLUF;
    const auto views = node_views(luf);
    const AllocationContext ctx{now_, observed_rate()};
    const auto t0 = std::chrono::steady_clock::now();
    AllocationDecision d = allocator_.allocate(it.plan, views, ctx);
    const auto t1 = std::chrono::steady_clock::now();
    decision_seconds_.push_back(std::chrono::duration<double>(t1 - t0).count());

    const int n = d.node_id;
    it.node = n;
    it.plan.arrival = now_ + d.charged_latency;
    it.ready = it.plan.arrival;
    if (d.charged_latency > 0) {
      scheduler_free_ = it.ready;
      push(scheduler_free_, EventKind::kBatchTimer, -1);
    }
    check_feasible(it, n);

    TraceQueues& q = queues_[static_cast<std::size_t>(n)];
    ExecPath path = d.plan.path;
    if (it.plan.kind == TaskKind::kTraining) path = plan_backward(it.plan, path, node_config(n), q);
    commit_plan(q, it.plan, path, d.plan.executed_training);
    histories_[static_cast<std::size_t>(n)].record(it.plan.length, now_);

    it.actual.forward.resize(static_cast<std::size_t>(num_stages_));
    if (it.plan.kind == TaskKind::kTraining) it.actual.backward.resize(static_cast<std::size_t>(num_stages_));
    it.reloaded.assign(static_cast<std::size_t>(num_stages_), false);

    PlanRecord rec;
    rec.item = it.plan.id;
    rec.kind = it.plan.kind;
    rec.node = n;
    rec.dispatch = now_;
    rec.planned_arrival = it.plan.arrival;
    rec.length = it.plan.length;
    rec.batch = it.plan.batch;
    rec.score = d.score;
    rec.ii = d.plan.idleness;
    rec.raw_ii = d.plan.raw_idleness;
    rec.response = d.plan.response;
    rec.planned_path = path;
    rec.executed_training = d.plan.executed_training;
    for (int m : members) {
      rec.members.push_back(tasks_[static_cast<std::size_t>(m)].id);
      dispatch_[static_cast<std::size_t>(m)] = now_;
      node_of_[static_cast<std::size_t>(m)] = n;
      item_of_[static_cast<std::size_t>(m)] = it.plan.id;
    }
    plans_.push_back(std::move(rec));
    tasks_per_node_[static_cast<std::size_t>(n)] += static_cast<int>(members.size());

    const int id = static_cast<int>(items_.size());
    items_.push_back(std::move(it));
    for (int s = 0; s < num_stages_; ++s) {
      insert_planned(gpu(n, s), Op{id, s, OpKind::kForward, path.forward[static_cast<std::size_t>(s)].start, 0.0});
      if (path.has_backward())
        insert_planned(gpu(n, s),
                       Op{id, s, OpKind::kBackward, path.backward[static_cast<std::size_t>(s)].start, 0.0});
    }
    for (int s = 0; s < num_stages_; ++s) try_start(gpu(n, s));
  }

  void insert_planned(Gpu& g, const Op& op) {
    auto begin = g.planned.begin();
    if (g.waiting && !g.waiting_decode && begin != g.planned.end()) ++begin;  // head is locked
    auto pos = std::upper_bound(begin, g.planned.end(), op.key,
                                [](Seconds key, const Op& o) { return key < o.key; });
    g.planned.insert(pos, op);
  }

  // ---- execution ------------------------------------------------------

  Bytes forward_demand(const Item& it, const StageProfile& sp) const {
    const double tokens = static_cast<double>(it.plan.batch) * it.plan.length;
    Bytes d = sp.mem_act_coeff * tokens;
    if (it.generative) d += sp.mem_kv_coeff * tokens;
    return d;
  }

  Bytes demand(const Gpu& g, const Op& op) const {
    const Item& it = items_[static_cast<std::size_t>(op.item)];
    const StageProfile& sp = profile(g.node, g.stage);
    switch (op.kind) {
      case OpKind::kForward:
        return forward_demand(it, sp);
      case OpKind::kBackward:
        return sp.mem_act_coeff * static_cast<double>(it.plan.batch) * it.plan.length;  // gradient workspace
      case OpKind::kDecode:
        return g.mem.is_offloaded(it.plan.id) ? 0.0 : decode_step_kv(sp, it.decode);
    }
    return 0.0;
  }

  bool op_ready(const Op& op, Seconds* ready_at) const {
    const Item& it = items_[static_cast<std::size_t>(op.item)];
    const auto s = static_cast<std::size_t>(op.stage);
    if (op.kind == OpKind::kForward) {
      if (op.stage == 0) {
        *ready_at = it.ready;
        return it.ready <= now_;
      }
      *ready_at = it.actual.forward[s - 1].end;
      return it.forward_done >= op.stage;
    }
    if (op.stage == num_stages_ - 1) {
      *ready_at = it.actual.forward[s].end;
      return it.forward_done == num_stages_;
    }
    *ready_at = it.actual.backward[s + 1].end;
    return it.backward_low == op.stage + 1;
  }

  void try_start(Gpu& g) {
    if (g.busy || g.waiting) return;
    Seconds planned_ready = 0.0;
    const bool planned_ok = !g.planned.empty() && op_ready(g.planned.front(), &planned_ready);
    const bool decode_ok = !g.decode.empty();
    if (!planned_ok && !decode_ok) return;
    const bool use_decode = decode_ok && (!planned_ok || g.decode.front().ready < planned_ready);
    attempt(g, use_decode);
  }

  void attempt(Gpu& g, bool use_decode) {
    const Op op = use_decode ? g.decode.front() : g.planned.front();
    const NodeConfig& cfg = node_config(g.node);
    const Seconds waited = g.waiting ? g.polls * cfg.delta_t : 0.0;
    const Admission adm = decide_admission(g.mem, demand(g, op), waited, cfg.t_max, params_.memory_aware);
    if (adm == Admission::kWait) {
      if (!g.waiting) {
        g.waiting = true;
        g.waiting_decode = use_decode;
        g.polls = 0;
      }
      push(now_ + cfg.delta_t, EventKind::kMemoryCheck, gpu_index(g));
      return;
    }
    if (use_decode) {
      g.decode.pop_front();
    } else {
      g.planned.pop_front();
    }
    g.waiting = false;
    if (waited > 0) {
      for (int m : items_[static_cast<std::size_t>(op.item)].members)
        memory_wait_[static_cast<std::size_t>(m)] += waited;
    }
    start_op(g, op, adm == Admission::kOffload);
  }

  void start_op(Gpu& g, const Op& op, bool offload) {
    Item& it = items_[static_cast<std::size_t>(op.item)];
    const StageProfile& sp = profile(g.node, g.stage);
    const NodeConfig& cfg = node_config(g.node);
    const auto s = static_cast<std::size_t>(op.stage);
    const TaskId key = it.plan.id;
    const double tokens = static_cast<double>(it.plan.batch) * it.plan.length;
    const Bytes act = sp.mem_act_coeff * tokens;
    const Bytes kv = it.generative ? sp.mem_kv_coeff * tokens : 0.0;
    const Bytes need = demand(g, op);

    Seconds duration = 0.0;
    switch (op.kind) {
      case OpKind::kForward:
        duration = forward_latency(sp, it.plan.batch, it.plan.length);
        break;
      case OpKind::kBackward:
        duration = backward_latency(sp, it.plan.batch, it.plan.length);
        break;
      case OpKind::kDecode:
        duration = decode_step_latency(sp, it.decode);
        break;
    }
    if (params_.latency_noise > 0) {
      std::uniform_real_distribution<double> noise(-params_.latency_noise, params_.latency_noise);
      duration *= 1.0 + noise(rng_);
    }

    Bytes moved = 0.0;
    g.transient = 0.0;
    if (offload) {
      moved += g.mem.offload(key) + need;
      for (int m : it.members) offloaded_[static_cast<std::size_t>(m)] = true;
      it.reloaded[s] = false;
    } else {
      g.mem.note_admission(need);
      if (op.kind != OpKind::kForward && g.mem.is_offloaded(key) && !it.reloaded[s]) {
        const auto* h = g.mem.holding(key);
        if (h) moved += h->activation + h->kv;
        it.reloaded[s] = true;
      }
    }
    switch (op.kind) {
      case OpKind::kForward:
        if (it.plan.kind == TaskKind::kTraining) {
          g.mem.hold(key, act, kv);
        } else {
          if (kv > 0) g.mem.hold(key, 0.0, kv);
          if (!offload) {
            g.mem.add_transient(act);
            g.transient = act;
          }
        }
        if (op.stage == 0 && it.plan.kind == TaskKind::kInference) {
          for (int m : it.members) version_[static_cast<std::size_t>(m)] = versions_.version(g.node);
        }
        break;
      case OpKind::kBackward:
        if (!offload) {
          g.mem.add_transient(need);
          g.transient = need;
        }
        break;
      case OpKind::kDecode:
        g.mem.hold(key, 0.0, decode_step_kv(sp, it.decode));
        break;
    }
    duration += cfg.offload_penalty * moved / kGiB;

    g.busy = true;
    g.current = op;
    g.current_start = now_;
    const EventKind done = op.kind == OpKind::kForward    ? EventKind::kStageForwardDone
                           : op.kind == OpKind::kBackward ? EventKind::kStageBackwardDone
                                                          : EventKind::kDecodeStepDone;
    push(now_ + duration, done, gpu_index(g));
  }

  void complete_task(int idx, Seconds when) {
    state_[static_cast<std::size_t>(idx)].done = true;
    completion_[static_cast<std::size_t>(idx)] = when;
    ++completed_;
  }

  void release_member_kv(const Item& it, int batch, int context) {
    for (int s = 0; s < num_stages_; ++s) {
      const StageProfile& sp = profile(it.node, s);
      gpu(it.node, s).mem.release_kv(it.plan.id, sp.mem_kv_coeff * batch * static_cast<double>(context));
    }
  }

  void on_op_done(Gpu& g) {
    ++progress_;
    const Op op = g.current;
    g.busy = false;
    g.intervals.push_back({g.current_start, now_});
    if (g.transient > 0) g.mem.release_transient(g.transient);
    g.transient = 0.0;

    Item& it = items_[static_cast<std::size_t>(op.item)];
    const auto s = static_cast<std::size_t>(op.stage);
    const int n = it.node;
    TraceQueues& q = queues_[static_cast<std::size_t>(n)];
    const int last = num_stages_ - 1;

    if (op.kind == OpKind::kForward) {
      it.actual.forward[s] = {g.current_start, now_};
      it.forward_done = op.stage + 1;
      if (q.contains(it.plan.id)) calibrate(q, it.plan.id, op.stage, g.current_start, now_, Pass::kForward);
      if (op.stage == 0 && it.plan.kind == TaskKind::kTraining) {
        training_gate_open_ = true;
        release_training();
      }
      if (op.stage < last) {
        try_start(gpu(n, op.stage + 1));
      } else {
        for (int m : it.members) first_token_[static_cast<std::size_t>(m)] = now_;
        if (it.plan.kind == TaskKind::kInference) finish_prefill(it);
      }
    } else if (op.kind == OpKind::kBackward) {
      it.actual.backward[s] = {g.current_start, now_};
      it.backward_low = op.stage;
      g.mem.release_activation(it.plan.id);
      if (q.contains(it.plan.id)) calibrate(q, it.plan.id, op.stage, g.current_start, now_, Pass::kBackward);
      if (op.stage > 0) {
        try_start(gpu(n, op.stage - 1));
      } else {
        for (int m : it.members) complete_task(m, now_);
        if (auto ck = versions_.apply_model_update(n))
          push(now_ + sync_latency(cluster_, cluster_.model_bytes, num_nodes_), EventKind::kSyncDone, -1, *ck);
      }
    } else {
      if (op.stage < last) {
        enqueue_decode(it, op.item, op.stage + 1);
      } else {
        const auto finished = advance_decode(it.decode);
        for (const auto& f : finished) {
          for (int m : it.members) {
            if (tasks_[static_cast<std::size_t>(m)].id == f.id) {
              const Task& t = tasks_[static_cast<std::size_t>(m)];
              tbt_[static_cast<std::size_t>(m)] = (now_ - first_token_[static_cast<std::size_t>(m)]) / t.output_length;
              complete_task(m, now_);
            }
          }
          release_member_kv(it, f.batch, f.context);
        }
        if (!it.decode.empty()) enqueue_decode(it, op.item, 0);
      }
    }
    try_start(g);
  }

  void finish_prefill(Item& it) {
    const int item_index = static_cast<int>(it.plan.id);
    it.decode.clear();
    for (int m : it.members) {
      const Task& t = tasks_[static_cast<std::size_t>(m)];
      if (t.output_length > 0) {
        it.decode.push_back(DecodeMember{t.id, t.batch_size, it.plan.length, t.output_length});
      } else {
        complete_task(m, now_);
        if (it.generative) release_member_kv(it, t.batch_size, it.plan.length);
      }
    }
    if (!it.decode.empty()) enqueue_decode(it, item_index, 0);
  }

  void enqueue_decode(const Item& it, int item_index, int stage) {
    Gpu& g = gpu(it.node, stage);
    g.decode.push_back(Op{item_index, stage, OpKind::kDecode, now_, now_});
    try_start(g);
  }

  // ---- reporting ------------------------------------------------------

  std::string diagnostics() const {
    std::ostringstream out;
    out << "t=" << now_ << " events=" << event_count_ << " queued=" << queue_.size()
        << " training_backlog=" << training_backlog_.size() << " completed=" << completed_ << "/" << tasks_.size();
    for (const auto& g : gpus_) {
      if (g.busy || g.waiting || !g.planned.empty() || !g.decode.empty()) {
        out << " | gpu(" << g.node << "," << g.stage << ") busy=" << g.busy << " waiting=" << g.waiting
            << " planned=" << g.planned.size() << " decode=" << g.decode.size() << " resident=" << g.mem.resident();
      }
    }
    return out.str();
  }

  SimResult collect() {
    SimResult r;
    r.policy = params_.policy;
    r.memory_aware = params_.memory_aware;
    r.num_nodes = num_nodes_;
    r.num_stages = num_stages_;
    r.events = event_count_;
    r.plans = std::move(plans_);
    r.decision_seconds = std::move(decision_seconds_);

    Seconds horizon = 0.0;
    for (const auto& g : gpus_)
      if (!g.intervals.empty()) horizon = std::max(horizon, g.intervals.back().end);
    for (std::size_t i = 0; i < tasks_.size(); ++i) horizon = std::max(horizon, completion_[i]);
    r.horizon = horizon;

    for (const auto& g : gpus_) {
      GpuRecord rec;
      rec.node = g.node;
      rec.stage = g.stage;
      rec.capacity = g.mem.capacity();
      rec.threshold = g.mem.threshold();
      rec.peak_memory = g.mem.peak();
      rec.offloads = g.mem.offloads();
      rec.threshold_violations = g.mem.threshold_violations();
      rec.capacity_violations = g.mem.capacity_violations();
      rec.busy_intervals = g.intervals;
      Seconds cursor = 0.0;
      for (const auto& iv : g.intervals) {
        rec.busy += iv.end - iv.start;
        if (iv.start > cursor) rec.idle += iv.start - cursor;
        cursor = std::max(cursor, iv.end);
      }
      if (horizon > cursor) rec.idle += horizon - cursor;
      r.gpus.push_back(std::move(rec));
    }

    const NodeConfig& ref = node_config(0);
    r.tasks.reserve(tasks_.size());
    for (std::size_t i = 0; i < tasks_.size(); ++i) {
      const Task& t = tasks_[i];
      TaskRecord rec;
      rec.id = t.id;
      rec.kind = t.kind;
      rec.arrival = t.arrival;
      rec.release = release_[i];
      rec.dispatch = dispatch_[i];
      rec.node = node_of_[i];
      rec.item = item_of_[i];
      rec.length = t.length;
      rec.batch_size = t.batch_size;
      rec.output_length = t.output_length;
      rec.slo_deadline = t.slo_deadline;
      rec.forward_estimate = node_forward_latency(ref, t.batch_size, t.length);
      if (rec.item >= 0) {
        const Item& it = items_[static_cast<std::size_t>(rec.item)];
        rec.planned_path = r.plans[static_cast<std::size_t>(rec.item)].planned_path;
        rec.actual_path = it.actual;
      }
      rec.first_token = first_token_[i];
      rec.completion = completion_[i];
      rec.tbt = tbt_[i];
      if (t.kind == TaskKind::kInference) rec.version = version_[i];
      rec.deferrals = deferrals_[i];
      rec.offloaded = offloaded_[i];
      rec.memory_wait = memory_wait_[i];
      r.tasks.push_back(std::move(rec));
    }
    return r;
  }

  void init_task_arrays() {
    const std::size_t n = tasks_.size();
    release_.assign(n, 0.0);
    dispatch_.assign(n, 0.0);
    node_of_.assign(n, -1);
    item_of_.assign(n, -1);
    first_token_.assign(n, 0.0);
    completion_.assign(n, 0.0);
    tbt_.assign(n, std::nullopt);
    version_.assign(n, 0);
    deferrals_.assign(n, 0);
    offloaded_.assign(n, false);
    memory_wait_.assign(n, 0.0);
  }

  ClusterConfig cluster_;
  std::vector<Task> tasks_;
  SchedulerParams params_;
  EngineOptions options_;
  Allocator allocator_;
  std::mt19937_64 rng_;
  ModelVersionState versions_;
  int num_nodes_ = 0;
  int num_stages_ = 0;

  std::priority_queue<Event, std::vector<Event>, EventAfter> events_;
  std::uint64_t next_seq_ = 0;
  std::uint64_t event_count_ = 0;
  std::uint64_t progress_ = 0;
  Seconds now_ = 0.0;

  std::vector<TraceQueues> queues_;
  std::vector<NodeHistory> histories_;
  std::vector<Gpu> gpus_;
  std::vector<Item> items_;
  std::vector<PlanRecord> plans_;
  std::vector<double> decision_seconds_;
  std::vector<int> tasks_per_node_;

  std::deque<int> queue_;  // global queue of task indices
  std::deque<int> training_backlog_;
  bool training_gate_open_ = true;
  std::deque<Seconds> recent_arrivals_;
  std::size_t next_arrival_ = 0;
  std::vector<int> next_inference_from_;
  Seconds scheduler_free_ = 0.0;
  Seconds last_emit_ = 0.0;
  Seconds batch_wait_ = 0.0;
  std::optional<Seconds> timer_at_;
  std::size_t completed_ = 0;

  std::vector<TaskState> state_;
  std::vector<Seconds> release_;
  std::vector<Seconds> dispatch_;
  std::vector<int> node_of_;
  std::vector<std::int64_t> item_of_;
  std::vector<Seconds> first_token_;
  std::vector<Seconds> completion_;
  std::vector<std::optional<Seconds>> tbt_;
  std::vector<long> version_;
  std::vector<int> deferrals_;
  std::vector<bool> offloaded_;
  std::vector<Seconds> memory_wait_;
};

}  // namespace

SimResult run(const ClusterConfig& cluster, std::vector<Task> tasks, const SchedulerParams& params,
              std::uint64_t seed, const EngineOptions& options) {
  Simulator sim(cluster, std::move(tasks), params, seed, options);
  return sim.run();
}

}  // namespace lemix
