#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lemix/allocator.hpp"
#include "lemix/cluster.hpp"
#include "lemix/workload.hpp"

namespace lemix {

/// Everything one `run` or `sweep` needs. Parsed from a sectioned key/value
/// file:
///
///   [cluster]    model, nodes, stages, kappa, t_max, delta_t, offload_penalty,
///                sync_interval, sync_base, sync_per_node, sync_reference_gib
///   [stage.N]    eta_f, eta_b, eta_d, mem_capacity_gib, mem_weights_gib,
///                mem_act_coeff, mem_kv_coeff (applied to stage N of every node)
///   [workload]   rate, train_rate, tasks, horizon, length_family, length_mean,
///                length_std, length_min, length_max, output_mean, output_std,
///                output_min, output_max, batch_size, trace, trace_window
///   [scheduler]  every SchedulerParams field by name
///   [run]        seeds (comma separated), output
struct RunConfig {
  std::string model = "gpt-2.5b";
  int num_nodes = 4;
  int num_stages = 2;
  ClusterConfig cluster;
  WorkloadSpec workload;
  std::optional<std::string> trace_path;
  std::optional<Seconds> trace_window;
  SchedulerParams scheduler;
  std::vector<std::uint64_t> seeds = {1};
  std::string output_dir = "out";
};

/// Throws ConfigError naming the offending key; ParseError for malformed files.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

void validate(const RunConfig& cfg);

/// Canonical text of the effective configuration; seeds and output location
/// are excluded so every seed of one config shares a hash.
std::string canonical_config(const RunConfig& cfg);
std::string config_hash(const RunConfig& cfg);

/// The tasks for one seed: the trace if configured, else a Poisson draw.
std::vector<Task> make_workload(const RunConfig& cfg, std::uint64_t seed);

}  // namespace lemix
