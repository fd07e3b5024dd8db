#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "lemix/engine.hpp"

namespace lemix {

struct Distribution {
  double p50 = 0.0;
  double p95 = 0.0;
  double mean = 0.0;
  std::size_t count = 0;
};

/// Linear-interpolated percentile, q in [0, 100]. Empty input gives 0.
double percentile(std::vector<double> xs, double q);
Distribution describe(const std::vector<double>& xs);

struct MetricsReport {
  std::string policy;
  std::uint64_t workload_hash = 0;
  std::size_t completed = 0;
  Seconds makespan = 0.0;
  double throughput = 0.0;                 // tasks/s
  std::vector<Seconds> e2e_latency;        // per node; 0 for idle nodes
  Distribution ttft;
  Distribution tbt;
  double slo_attainment = 1.0;
  bool slo_vacuous = false;                // no inference tasks
  std::vector<double> utilization;         // node-major, per GPU
  double mean_utilization = 0.0;
  int active_nodes = 0;                    // nodes given at least one task over the run
  double mean_active_nodes = 0.0;          // nodes given work per window, averaged over busy windows
  double mean_version_at_inference = 0.0;
  std::vector<double> per_node_length_std; // tokens; 0 for nodes with < 2 tasks
  double decision_latency_mean = 0.0;
  double decision_latency_p99 = 0.0;
  int offloads = 0;
  int threshold_violations = 0;
  int capacity_violations = 0;
};

/// Hash of the input workload as seen in the result (arrival, kind, length,
/// batch, output length); identical traces hash identically.
std::uint64_t workload_hash(const SimResult& result);

/// Fraction of inference tasks that met their deadline. With `slo_multiple`
/// the deadline is recomputed as arrival + multiple * forward estimate.
/// Returns nullopt when there are no inference tasks.
std::optional<double> slo_attainment(const SimResult& result, std::optional<double> slo_multiple = std::nullopt);

/// Average, over fixed windows of dispatch time that saw any dispatch, of the
/// number of distinct nodes that received work in the window.
double mean_active_nodes(const SimResult& result, Seconds window);

MetricsReport summarize(const SimResult& result, Seconds active_window = 1.0);

struct ComparisonRow {
  std::string policy;
  std::string metric;
  double value = 0.0;
  double baseline = 0.0;
  double ratio = 0.0;
};

struct ComparisonTable {
  std::string baseline = "separate";
  std::vector<ComparisonRow> rows;

  void write_csv(std::ostream& out) const;
};

const std::vector<std::string>& compared_metrics();
double metric_value(const MetricsReport& r, const std::string& metric);

/// Ratios of each policy's metrics against the Separate report. Refuses
/// reports built from different workloads.
ComparisonTable compare(const std::map<std::string, MetricsReport>& reports);

}  // namespace lemix
