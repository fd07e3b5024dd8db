#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lemix/cluster.hpp"
#include "lemix/planner.hpp"

namespace lemix {

enum class Policy { kLeMix, kSeparate, kSeparateDynamic, kRoundRobin, kLUF };

/// Length consistency of a node with fewer than two samples: either the
/// configured constant, or the density under the cluster-wide length profile
/// (a cold node is scored as an average node).
enum class ColdNodeLC { kClusterProfile, kConstant };

const char* to_string(Policy p);
Policy policy_from_string(const std::string& s);
const char* to_string(ColdNodeLC c);
ColdNodeLC cold_lc_from_string(const std::string& s);
bool is_colocated(Policy p);

/// Length history of work placed on a node.
class NodeHistory {
 public:
  void record(int length, Seconds arrival);
  /// Adds another node's samples; the last arrival is left unchanged.
  void merge(const NodeHistory& other);
  std::size_t size() const { return count_; }
  double mean() const { return count_ ? sum_ / static_cast<double>(count_) : 0.0; }
  double stddev() const;
  std::optional<Seconds> last_arrival() const { return last_arrival_; }

 private:
  std::size_t count_ = 0;
  double sum_ = 0.0;
  double sum_sq_ = 0.0;
  std::optional<Seconds> last_arrival_;
};

struct SchedulerParams {
  Policy policy = Policy::kLeMix;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  Seconds tau = 0.0;             // idleness tolerance
  double slo_multiple = 5.0;     // tau_R as a multiple of the forward latency
  double sigma_floor = 1.0;      // tokens
  ColdNodeLC cold_lc = ColdNodeLC::kConstant;
  double lc_neutral = 0.0;       // cold-node LC in constant mode, or before any history
  bool prioritize = true;        // queue-level training deprioritization
  bool memory_aware = true;      // wait-or-drop admission
  int max_batch = 1;             // C_max for continuous batching
  std::optional<Seconds> batch_wait;  // T_w; default half an inference latency
  Seconds luf_query_latency = 0.076;
  Seconds luf_window = 1.0;
  double dynamic_rate_threshold = 50.0;  // rps, SeparateDynamic
  Seconds rate_window = 1.0;
  double training_rate = 0.5;    // alpha used to size the Separate partition
  double latency_noise = 0.0;    // multiplicative noise on executed stage latency
};

void validate(const SchedulerParams& p);

struct AllocationDecision {
  int node_id = 0;
  double score = 0.0;
  Seconds ii = 0.0;
  Seconds response = 0.0;
  bool deprioritized = false;
  Seconds charged_latency = 0.0;  // simulated decision cost
  PlanResult plan;
};

Seconds idleness_profit(Seconds ii, int num_stages, Seconds gap, Seconds tau);
double gaussian_density(double x, double mean, double sigma);
double length_consistency(int length, const NodeHistory& history, double sigma_floor, double lc_neutral);
double priority_score(double ip, double lc, Seconds response, const SchedulerParams& params);

/// Read-only view of one node handed to the allocator.
struct NodeView {
  const NodeConfig* config = nullptr;
  const TraceQueues* queues = nullptr;
  const NodeHistory* history = nullptr;
  double utilization = 0.0;  // windowed busy fraction, LUF only
};

struct AllocationContext {
  Seconds now = 0.0;
  double observed_rate = 0.0;  // recent arrivals per second, SeparateDynamic only
};

/// Number of nodes reserved for training by the Separate baseline.
int separate_training_nodes(int num_nodes, double training_rate);

class Allocator {
 public:
  explicit Allocator(SchedulerParams params);

  const SchedulerParams& params() const { return params_; }

  /// Chooses a node and returns the plan for that node. Never fails for a
  /// non-empty cluster.
  AllocationDecision allocate(const PlanItem& item, std::span<const NodeView> nodes, const AllocationContext& ctx);

  int rr_assign(int num_nodes);
  int separate_assign(const PlanItem& item, int num_nodes, int num_training_nodes);
  static int luf_assign(std::span<const double> utilization);

 private:
  AllocationDecision allocate_lemix(const PlanItem& item, std::span<const NodeView> nodes) const;

  SchedulerParams params_;
  std::size_t rr_next_ = 0;
  std::size_t sep_train_next_ = 0;
  std::size_t sep_infer_next_ = 0;
};

/// True when dispatching a pending training item now would push the next
/// inference item past its response budget (`slo_budget`, seconds) on every node.
bool should_deprioritize(const std::optional<PlanItem>& next_inference, Seconds slo_budget,
                         std::span<const NodeView> nodes);

}  // namespace lemix
