#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "lemix/cluster.hpp"
#include "lemix/task.hpp"

namespace lemix {

enum class LengthFamily { kLogNormal, kNormal, kEmpirical };

const char* to_string(LengthFamily f);
LengthFamily length_family_from_string(const std::string& s);

/// Query (or output) length distribution in tokens. Samples are rounded and
/// clamped to [min_length, max_length].
struct LengthDistribution {
  LengthFamily family = LengthFamily::kLogNormal;
  double mean = 256.0;
  double stddev = 128.0;
  int min_length = 16;
  int max_length = 2048;
  std::vector<int> empirical_samples;

  int sample(std::mt19937_64& rng) const;
};

void validate(const LengthDistribution& d, const std::string& field = "length_dist");

struct WorkloadSpec {
  double request_rate = 10.0;   // tasks per second
  double training_rate = 0.5;   // fraction of tasks that are training
  std::optional<Seconds> horizon;
  std::optional<int> task_count;
  LengthDistribution length_dist;
  /// Output tokens for inference requests; unset means non-generative.
  std::optional<LengthDistribution> output_dist;
  int batch_size = 1;
  std::uint64_t seed = 1;
};

void validate(const WorkloadSpec& spec);

/// Poisson arrivals with i.i.d. exponential gaps, seeded Bernoulli task kind.
std::vector<Task> generate_poisson(const WorkloadSpec& spec);

/// Reads the trace CSV (arrival_time,kind,length,batch_size,output_length).
/// With `rescale_window`, arrivals are mapped affinely onto [0, window].
std::vector<Task> load_trace(const std::string& path, std::optional<Seconds> rescale_window = std::nullopt);
std::vector<Task> parse_trace(const std::string& text, std::optional<Seconds> rescale_window = std::nullopt);
void write_trace(const std::string& path, const std::vector<Task>& tasks);

/// One distribution per level: same mean, stddev = level. Empirical bases are
/// resampled to a subset of their own samples whose spread matches the level.
std::vector<LengthDistribution> make_heterogeneity_sweep(const LengthDistribution& base,
                                                         const std::vector<double>& variance_levels);

/// slo_deadline = arrival + multiple * (single-node forward latency).
void assign_slo(std::vector<Task>& tasks, const NodeConfig& reference_node, double multiple);

double sample_mean(const std::vector<int>& xs);
double sample_stddev(const std::vector<int>& xs);

}  // namespace lemix
