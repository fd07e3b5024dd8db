#pragma once

#include <map>
#include <string>
#include <vector>

#include "lemix/task.hpp"

namespace lemix {

inline constexpr double kGiB = 1024.0 * 1024.0 * 1024.0;

/// Cost and memory coefficients for one pipeline stage (one GPU).
struct StageProfile {
  double eta_f = 1e-7;          // s / (token^2 * item)
  double eta_b = 1e-7;          // s / (token^2 * item)
  double eta_d = 1e-8;          // s / (context token * item), one decode step
  Bytes mem_capacity = 48.0 * kGiB;
  Bytes mem_weights = 1.0 * kGiB;
  double mem_act_coeff = 1e5;   // bytes / (token * item)
  double mem_kv_coeff = 1e4;    // bytes / (token * item)
};

struct NodeConfig {
  int id = 0;
  std::vector<StageProfile> stages;
  double kappa = 0.9;
  Seconds t_max = 1.0;
  Seconds delta_t = 0.01;
  double offload_penalty = 0.04;  // s per GiB moved

  int num_stages() const { return static_cast<int>(stages.size()); }
};

struct ClusterConfig {
  std::vector<NodeConfig> nodes;
  int sync_interval = 100;
  Seconds sync_base = 0.2;
  Seconds sync_per_node = 0.1;
  Bytes model_bytes = 1.0 * kGiB;
  Bytes sync_reference_bytes = 1.0 * kGiB;

  int num_nodes() const { return static_cast<int>(nodes.size()); }
};

void validate(const StageProfile& p);
void validate(const NodeConfig& n);
void validate(const ClusterConfig& c);

Seconds forward_latency(const StageProfile& p, int batch, int length);
Seconds backward_latency(const StageProfile& p, int batch, int length);
/// One decode iteration on this stage: eta_d * batch * context_length.
Seconds decode_latency(const StageProfile& p, int batch, int context_length);

/// Sum of forward latencies over every stage of a node.
Seconds node_forward_latency(const NodeConfig& n, int batch, int length);

Bytes memory_threshold(const NodeConfig& n, int stage);

/// Affine in peer count, linear in model size; zero when there is nobody to sync with.
Seconds sync_latency(const ClusterConfig& c, Bytes model_bytes, int num_nodes);

// ---------------------------------------------------------------------------
// Offline profiling

struct ProfilingObservation {
  int stage = 0;
  Pass op = Pass::kForward;
  int batch = 1;
  int length = 1;
  Seconds measured_latency = 0.0;
};

struct FittedStage {
  double eta_f = 0.0;
  double eta_b = 0.0;
};

class ProfilingIncomplete : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mean of latency / (C * l^2) per (stage, op). Stages are 0..max observed.
std::map<int, FittedStage> fit_coefficients(const std::vector<ProfilingObservation>& obs);

std::vector<ProfilingObservation> load_observations_csv(const std::string& path);
std::vector<ProfilingObservation> parse_observations_csv(const std::string& text);

// ---------------------------------------------------------------------------
// Presets

struct ModelPreset {
  std::string name;
  Bytes model_bytes;
  int layers;
  int hidden;
  Seconds forward;   // per stage, at the reference shape
  Seconds backward;  // per stage, at the reference shape
  Bytes gpu_memory;
};

inline constexpr int kReferenceBatch = 1;
inline constexpr int kReferenceLength = 500;

const std::vector<ModelPreset>& model_presets();
const ModelPreset& find_preset(const std::string& name);

/// A node of `num_stages` identical stages fitted to the preset at the
/// reference shape, with default kappa, T_max and check interval.
NodeConfig make_node(const ModelPreset& preset, int num_stages, int id = 0);
ClusterConfig make_cluster(const ModelPreset& preset, int num_nodes, int num_stages);

}  // namespace lemix
