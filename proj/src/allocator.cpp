#include "lemix/allocator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace lemix {

const char* to_string(Policy p) {
  switch (p) {
    case Policy::kLeMix:
      return "lemix";
    case Policy::kSeparate:
      return "separate";
    case Policy::kSeparateDynamic:
      return "separate-dynamic";
    case Policy::kRoundRobin:
      return "rr";
    case Policy::kLUF:
      return "luf";
  }
  return "?";
}

Policy policy_from_string(const std::string& s) {
  if (s == "lemix") return Policy::kLeMix;
  if (s == "separate") return Policy::kSeparate;
  if (s == "separate-dynamic") return Policy::kSeparateDynamic;
  if (s == "rr" || s == "naivemix" || s == "round-robin") return Policy::kRoundRobin;
  if (s == "luf" || s == "mix-luf") return Policy::kLUF;
  throw ConfigError("unknown policy '" + s + "'");
}

const char* to_string(ColdNodeLC c) { return c == ColdNodeLC::kConstant ? "constant" : "cluster"; }

ColdNodeLC cold_lc_from_string(const std::string& s) {
  if (s == "cluster") return ColdNodeLC::kClusterProfile;
  if (s == "constant") return ColdNodeLC::kConstant;
  throw ConfigError("scheduler.cold_lc must be 'cluster' or 'constant', got '" + s + "'");
}

bool is_colocated(Policy p) { return p != Policy::kSeparate && p != Policy::kSeparateDynamic; }

void NodeHistory::record(int length, Seconds arrival) {
  ++count_;
  sum_ += length;
  sum_sq_ += static_cast<double>(length) * length;
  last_arrival_ = arrival;
}

void NodeHistory::merge(const NodeHistory& other) {
  count_ += other.count_;
  sum_ += other.sum_;
  sum_sq_ += other.sum_sq_;
}

double NodeHistory::stddev() const {
  if (count_ < 2) return 0.0;
  const double m = mean();
  return std::sqrt(std::max(0.0, sum_sq_ / static_cast<double>(count_) - m * m));
}

void validate(const SchedulerParams& p) {
  if (!(p.lambda1 > 0)) throw ConfigError("scheduler.lambda1 must be > 0");
  if (p.lambda2 < 0) throw ConfigError("scheduler.lambda2 must be >= 0");
  if (!(p.slo_multiple > 0)) throw ConfigError("scheduler.slo_multiple must be > 0");
  if (!(p.sigma_floor > 0)) throw ConfigError("scheduler.sigma_floor must be > 0");
  if (p.max_batch < 1) throw ConfigError("scheduler.max_batch must be >= 1");
  if (p.batch_wait && *p.batch_wait < 0) throw ConfigError("scheduler.batch_wait must be >= 0");
  if (p.luf_query_latency < 0) throw ConfigError("scheduler.luf_query_latency must be >= 0");
  if (!(p.luf_window > 0)) throw ConfigError("scheduler.luf_window must be > 0");
  if (!(p.rate_window > 0)) throw ConfigError("scheduler.rate_window must be > 0");
  if (!(p.training_rate >= 0 && p.training_rate <= 1)) throw ConfigError("scheduler.training_rate must be in [0, 1]");
  if (p.latency_noise < 0 || p.latency_noise >= 1) throw ConfigError("scheduler.latency_noise must be in [0, 1)");
}

Seconds idleness_profit(Seconds ii, int num_stages, Seconds gap, Seconds tau) {
  return -std::max(ii / num_stages - gap, tau);
}

double gaussian_density(double x, double mean, double sigma) {
  const double z = (x - mean) / sigma;
  return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * std::numbers::pi));
}

double length_consistency(int length, const NodeHistory& history, double sigma_floor, double lc_neutral) {
  if (history.size() < 2) return lc_neutral;
  const double sigma = std::max(history.stddev(), sigma_floor);
  return gaussian_density(length, history.mean(), sigma);
}

double priority_score(double ip, double lc, Seconds response, const SchedulerParams& params) {
  if (!(response > 0)) throw ContractViolation("priority_score: response time must be > 0");
  return (ip + params.lambda2 * lc) / (params.lambda1 * response);
}

int separate_training_nodes(int num_nodes, double training_rate) {
  const int raw = static_cast<int>(std::floor(num_nodes * training_rate + 0.5));
  if (training_rate <= 0.0) return 0;
  if (training_rate >= 1.0) return num_nodes;
  if (num_nodes < 2) throw ConfigError("separate policy needs at least 2 nodes when both task kinds are present");
  return std::clamp(raw, 1, num_nodes - 1);
}

Allocator::Allocator(SchedulerParams params) : params_(params) { validate(params_); }

int Allocator::rr_assign(int num_nodes) {
  return static_cast<int>(rr_next_++ % static_cast<std::size_t>(num_nodes));
}

int Allocator::separate_assign(const PlanItem& item, int num_nodes, int num_training_nodes) {
  const int num_inference = num_nodes - num_training_nodes;
  if (item.kind == TaskKind::kTraining) {
    if (num_training_nodes == 0) throw ConfigError("separate policy has no training nodes");
    return num_inference + static_cast<int>(sep_train_next_++ % static_cast<std::size_t>(num_training_nodes));
  }
  if (num_inference == 0) throw ConfigError("separate policy has no inference nodes");
  return static_cast<int>(sep_infer_next_++ % static_cast<std::size_t>(num_inference));
}

int Allocator::luf_assign(std::span<const double> utilization) {
  // Lowest utilization first; ties go to the lowest node id.
  return static_cast<int>(std::min_element(utilization.begin(), utilization.end()) - utilization.begin());
}

AllocationDecision Allocator::allocate_lemix(const PlanItem& item, std::span<const NodeView> nodes) const {
  double cold_lc = params_.lc_neutral;
  if (params_.cold_lc == ColdNodeLC::kClusterProfile) {
    NodeHistory cluster;
    for (const auto& v : nodes) cluster.merge(*v.history);
    cold_lc = length_consistency(item.length, cluster, params_.sigma_floor, params_.lc_neutral);
  }

  AllocationDecision best;
  bool have_best = false;
  for (std::size_t n = 0; n < nodes.size(); ++n) {
    const NodeView& view = nodes[n];
    PlanResult plan = compute_idleness(*view.queues, *view.config, item);
    const auto last = view.history->last_arrival();
    const Seconds gap = last ? std::max(0.0, item.arrival - *last) : 0.0;
    const double ip = idleness_profit(plan.idleness, view.config->num_stages(), gap, params_.tau);
    const double lc = length_consistency(item.length, *view.history, params_.sigma_floor, cold_lc);
    const double f = priority_score(ip, lc, plan.response, params_);
    if (!have_best || f > best.score) {
      best.node_id = static_cast<int>(n);
      best.score = f;
      best.ii = plan.idleness;
      best.response = plan.response;
      best.plan = std::move(plan);
      have_best = true;
    }
  }
  return best;
}

AllocationDecision Allocator::allocate(const PlanItem& item, std::span<const NodeView> nodes,
                                       const AllocationContext& ctx) {
  if (nodes.empty()) throw ConfigError("allocate: cluster has no nodes");
  if (params_.policy == Policy::kLeMix) return allocate_lemix(item, nodes);

  const int num_nodes = static_cast<int>(nodes.size());
  AllocationDecision d;
  switch (params_.policy) {
    case Policy::kRoundRobin:
      d.node_id = rr_assign(num_nodes);
      break;
    case Policy::kSeparate:
      d.node_id = separate_assign(item, num_nodes, separate_training_nodes(num_nodes, params_.training_rate));
      break;
    case Policy::kSeparateDynamic: {
      int train_nodes = separate_training_nodes(num_nodes, params_.training_rate);
      if (train_nodes > 0 && train_nodes < num_nodes) {
        // Light traffic keeps a single inference node ("1-3" on four nodes),
        // heavier traffic splits evenly ("2-2").
        train_nodes = ctx.observed_rate < params_.dynamic_rate_threshold ? num_nodes - 1
                                                                        : std::max(1, num_nodes / 2);
      }
      d.node_id = separate_assign(item, num_nodes, train_nodes);
      break;
    }
    case Policy::kLUF: {
      std::vector<double> util;
      util.reserve(nodes.size());
      for (const auto& v : nodes) util.push_back(v.utilization);
      d.node_id = luf_assign(util);
      d.charged_latency = params_.luf_query_latency;
      break;
    }
    case Policy::kLeMix:
      break;
  }
  PlanItem delayed = item;
  delayed.arrival = item.arrival + d.charged_latency;
  const NodeView& view = nodes[static_cast<std::size_t>(d.node_id)];
  d.plan = compute_idleness(*view.queues, *view.config, delayed);
  d.ii = d.plan.idleness;
  d.response = d.plan.response;
  return d;
}

bool should_deprioritize(const std::optional<PlanItem>& next_inference, Seconds slo_budget,
                         std::span<const NodeView> nodes) {
  if (!next_inference || nodes.empty()) return false;
  const PlanItem& next = *next_inference;
  Seconds best = std::numeric_limits<Seconds>::infinity();
  for (const auto& view : nodes) {
    const Seconds queue_end = std::max(latest_forward_end(*view.queues).value_or(next.arrival), next.arrival);
    const Seconds estimate = queue_end + forward_latency(view.config->stages.back(), next.batch, next.length);
    best = std::min(best, estimate);
  }
  return best - next.arrival > slo_budget;
}

}  // namespace lemix
