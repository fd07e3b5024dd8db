#include "lemix/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <numeric>

#include "hash.hpp"
#include "lemix/workload.hpp"

namespace lemix {

double percentile(std::vector<double> xs, double q) {
  if (xs.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  const double pos = std::clamp(q, 0.0, 100.0) / 100.0 * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (xs[hi] - xs[lo]) * (pos - static_cast<double>(lo));
}

Distribution describe(const std::vector<double>& xs) {
  Distribution d;
  d.count = xs.size();
  if (xs.empty()) return d;
  d.p50 = percentile(xs, 50);
  d.p95 = percentile(xs, 95);
  d.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  return d;
}

std::uint64_t workload_hash(const SimResult& result) {
  Fnv f;
  for (const auto& t : result.tasks) {
    f.add(t.arrival);
    f.add(static_cast<int>(t.kind));
    f.add(t.length);
    f.add(t.batch_size);
    f.add(t.output_length);
  }
  return f.h;
}

std::optional<double> slo_attainment(const SimResult& result, std::optional<double> slo_multiple) {
  std::size_t total = 0, met = 0;
  for (const auto& t : result.tasks) {
    if (t.kind != TaskKind::kInference) continue;
    ++total;
    const Seconds deadline = slo_multiple ? t.arrival + *slo_multiple * t.forward_estimate : t.slo_deadline;
    if (t.first_token <= deadline) ++met;
  }
  if (total == 0) return std::nullopt;
  return static_cast<double>(met) / static_cast<double>(total);
}

double mean_active_nodes(const SimResult& result, Seconds window) {
  if (!(window > 0)) throw ConfigError("active-node window must be > 0");
  std::map<long long, std::set<int>> per_window;
  for (const auto& p : result.plans) per_window[static_cast<long long>(std::floor(p.dispatch / window))].insert(p.node);
  if (per_window.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& [w, nodes] : per_window) sum += static_cast<double>(nodes.size());
  return sum / static_cast<double>(per_window.size());
}

MetricsReport summarize(const SimResult& result, Seconds active_window) {
  MetricsReport r;
  r.policy = to_string(result.policy);
  r.workload_hash = workload_hash(result);
  r.completed = result.tasks.size();
  r.makespan = result.horizon;
  r.throughput = result.horizon > 0 ? static_cast<double>(r.completed) / result.horizon : 0.0;

  const auto nodes = static_cast<std::size_t>(result.num_nodes);
  std::vector<Seconds> first(nodes, std::numeric_limits<Seconds>::infinity());
  std::vector<Seconds> last(nodes, 0.0);
  std::vector<std::vector<int>> lengths(nodes);
  std::vector<double> ttft, tbt;
  double version_sum = 0.0;
  std::size_t version_count = 0;
  for (const auto& t : result.tasks) {
    if (t.node >= 0) {
      const auto n = static_cast<std::size_t>(t.node);
      first[n] = std::min(first[n], t.arrival);
      last[n] = std::max(last[n], t.completion);
      lengths[n].push_back(t.length);
    }
    if (t.kind != TaskKind::kInference) continue;
    ttft.push_back(t.ttft());
    if (t.tbt) tbt.push_back(*t.tbt);
    if (t.version) {
      version_sum += static_cast<double>(*t.version);
      ++version_count;
    }
  }
  r.ttft = describe(ttft);
  r.tbt = describe(tbt);
  const auto slo = slo_attainment(result);
  r.slo_attainment = slo.value_or(1.0);
  r.slo_vacuous = !slo;
  r.mean_version_at_inference = version_count ? version_sum / static_cast<double>(version_count) : 0.0;

  r.mean_active_nodes = mean_active_nodes(result, active_window);
  r.e2e_latency.assign(nodes, 0.0);
  r.per_node_length_std.assign(nodes, 0.0);
  for (std::size_t n = 0; n < nodes; ++n) {
    if (lengths[n].empty()) continue;
    ++r.active_nodes;
    r.e2e_latency[n] = last[n] - first[n];
    r.per_node_length_std[n] = sample_stddev(lengths[n]);
  }

  for (const auto& g : result.gpus) {
    r.utilization.push_back(result.horizon > 0 ? g.busy / result.horizon : 0.0);
    r.offloads += g.offloads;
    r.threshold_violations += g.threshold_violations;
    r.capacity_violations += g.capacity_violations;
  }
  if (!r.utilization.empty())
    r.mean_utilization =
        std::accumulate(r.utilization.begin(), r.utilization.end(), 0.0) / static_cast<double>(r.utilization.size());

  if (!result.decision_seconds.empty()) {
    r.decision_latency_mean =
        std::accumulate(result.decision_seconds.begin(), result.decision_seconds.end(), 0.0) /
        static_cast<double>(result.decision_seconds.size());
    r.decision_latency_p99 = percentile(result.decision_seconds, 99);
  }
  return r;
}

const std::vector<std::string>& compared_metrics() {
  static const std::vector<std::string> names = {
      "throughput", "slo_attainment",     "ttft_mean",    "ttft_p95",
      "tbt_mean",   "mean_utilization",   "active_nodes", "mean_active_nodes",
      "mean_version_at_inference",
  };
  return names;
}

double metric_value(const MetricsReport& r, const std::string& metric) {
  if (metric == "throughput") return r.throughput;
  if (metric == "slo_attainment") return r.slo_attainment;
  if (metric == "ttft_mean") return r.ttft.mean;
  if (metric == "ttft_p95") return r.ttft.p95;
  if (metric == "tbt_mean") return r.tbt.mean;
  if (metric == "mean_utilization") return r.mean_utilization;
  if (metric == "active_nodes") return r.active_nodes;
  if (metric == "mean_active_nodes") return r.mean_active_nodes;
  if (metric == "mean_version_at_inference") return r.mean_version_at_inference;
  throw ConfigError("unknown metric '" + metric + "'");
}

ComparisonTable compare(const std::map<std::string, MetricsReport>& reports) {
  ComparisonTable table;
  const auto base = reports.find(table.baseline);
  if (base == reports.end()) throw ConfigError("compare: no '" + table.baseline + "' report to compare against");
  for (const auto& [name, rep] : reports) {
    if (rep.workload_hash != base->second.workload_hash)
      throw ConfigError("compare: report '" + name + "' was produced from a different workload");
  }
  for (const auto& [name, rep] : reports) {
    for (const auto& m : compared_metrics()) {
      ComparisonRow row{name, m, metric_value(rep, m), metric_value(base->second, m), 0.0};
      if (row.value == row.baseline)
        row.ratio = 1.0;
      else
        row.ratio = row.baseline != 0.0 ? row.value / row.baseline : std::numeric_limits<double>::infinity();
      table.rows.push_back(std::move(row));
    }
  }
  return table;
}

void ComparisonTable::write_csv(std::ostream& out) const {
  out << "policy,metric,value,baseline,ratio\n";
  const auto old = out.precision(12);
  for (const auto& r : rows) out << r.policy << ',' << r.metric << ',' << r.value << ',' << r.baseline << ',' << r.ratio << '\n';
  out.precision(old);
}

}  // namespace lemix
