#include "lemix/workload.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "csv.hpp"

namespace lemix {

const char* to_string(LengthFamily f) {
  switch (f) {
    case LengthFamily::kLogNormal:
      return "lognormal";
    case LengthFamily::kNormal:
      return "normal";
    case LengthFamily::kEmpirical:
      return "empirical";
  }
  return "?";
}

LengthFamily length_family_from_string(const std::string& s) {
  if (s == "lognormal") return LengthFamily::kLogNormal;
  if (s == "normal") return LengthFamily::kNormal;
  if (s == "empirical") return LengthFamily::kEmpirical;
  throw ConfigError("unknown length family '" + s + "'");
}

namespace {

int clamp_round(double x, int lo, int hi) {
  const double r = std::round(x);
  if (r < lo) return lo;
  if (r > hi) return hi;
  return static_cast<int>(r);
}

}  // namespace

int LengthDistribution::sample(std::mt19937_64& rng) const {
  switch (family) {
    case LengthFamily::kEmpirical: {
      std::uniform_int_distribution<std::size_t> pick(0, empirical_samples.size() - 1);
      return std::clamp(empirical_samples[pick(rng)], min_length, max_length);
    }
    case LengthFamily::kNormal: {
      if (stddev <= 0) return clamp_round(mean, min_length, max_length);
      std::normal_distribution<double> d(mean, stddev);
      return clamp_round(d(rng), min_length, max_length);
    }
    case LengthFamily::kLogNormal: {
      if (stddev <= 0) return clamp_round(mean, min_length, max_length);
      // Match the first two moments of the unclamped distribution.
      const double s2 = std::log1p((stddev * stddev) / (mean * mean));
      const double mu = std::log(mean) - 0.5 * s2;
      std::lognormal_distribution<double> d(mu, std::sqrt(s2));
      return clamp_round(d(rng), min_length, max_length);
    }
  }
  return min_length;
}

void validate(const LengthDistribution& d, const std::string& field) {
  if (d.min_length < 1) throw ConfigError(field + ".min must be >= 1");
  if (d.max_length < d.min_length) throw ConfigError(field + ".max must be >= " + field + ".min");
  if (d.family == LengthFamily::kEmpirical) {
    if (d.empirical_samples.empty()) throw ConfigError(field + ".empirical_samples must be non-empty");
    return;
  }
  if (!(d.mean > 0)) throw ConfigError(field + ".mean must be > 0");
  if (d.stddev < 0) throw ConfigError(field + ".std must be >= 0");
}

void validate(const WorkloadSpec& spec) {
  if (!(spec.request_rate > 0)) throw ConfigError("workload.request_rate must be > 0");
  if (!(spec.training_rate >= 0.0 && spec.training_rate <= 1.0))
    throw ConfigError("workload.training_rate must be in [0, 1]");
  if (spec.horizon.has_value() == spec.task_count.has_value())
    throw ConfigError("workload: exactly one of horizon / task_count must be set");
  if (spec.horizon && !(*spec.horizon > 0)) throw ConfigError("workload.horizon must be > 0");
  if (spec.task_count && *spec.task_count < 0) throw ConfigError("workload.task_count must be >= 0");
  if (spec.batch_size < 1) throw ConfigError("workload.batch_size must be >= 1");
  validate(spec.length_dist, "workload.length_dist");
  if (spec.output_dist) {
    // min may be 0 for outputs
    if (spec.output_dist->min_length < 0 || spec.output_dist->max_length < spec.output_dist->min_length)
      throw ConfigError("workload.output_dist: need 0 <= min <= max");
  }
}

std::vector<Task> generate_poisson(const WorkloadSpec& spec) {
  validate(spec);
  std::mt19937_64 rng(spec.seed);
  std::exponential_distribution<double> gap(spec.request_rate);
  std::bernoulli_distribution is_training(spec.training_rate);

  std::vector<Task> tasks;
  if (spec.task_count) tasks.reserve(static_cast<std::size_t>(*spec.task_count));
  Seconds t = 0.0;
  for (TaskId id = 0;; ++id) {
    if (spec.task_count && id >= *spec.task_count) break;
    t += gap(rng);
    if (spec.horizon && t > *spec.horizon) break;
    Task task;
    task.id = id;
    task.arrival = t;
    task.kind = is_training(rng) ? TaskKind::kTraining : TaskKind::kInference;
    task.length = spec.length_dist.sample(rng);
    task.batch_size = spec.batch_size;
    if (task.kind == TaskKind::kInference && spec.output_dist) {
      task.output_length = spec.output_dist->sample(rng);
    }
    tasks.push_back(std::move(task));
  }
  return tasks;
}

std::vector<Task> parse_trace(const std::string& text, std::optional<Seconds> rescale_window) {
  std::vector<Task> tasks;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    const auto f = csv::split_line(line);
    if (f.empty()) continue;
    if (!header_seen) {
      header_seen = true;
      if (f[0] == "arrival_time") continue;
    }
    if (f.size() != 5) throw ParseError("expected 5 fields arrival_time,kind,length,batch_size,output_length", line_no);
    Task t;
    try {
      std::size_t used = 0;
      t.arrival = std::stod(f[0], &used);
      if (used != f[0].size()) throw std::invalid_argument("trailing");
      if (f[1] != "inference" && f[1] != "training") throw ParseError("kind must be inference or training", line_no);
      t.kind = task_kind_from_string(f[1]);
      t.length = std::stoi(f[2]);
      t.batch_size = std::stoi(f[3]);
      t.output_length = std::stoi(f[4]);
    } catch (const std::logic_error&) {
      throw ParseError("malformed field", line_no);
    }
    try {
      validate(t);
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), line_no);
    }
    tasks.push_back(t);
  }
  std::stable_sort(tasks.begin(), tasks.end(),
                   [](const Task& a, const Task& b) { return a.arrival < b.arrival; });
  if (rescale_window && !tasks.empty()) {
    const Seconds lo = tasks.front().arrival;
    const Seconds span = tasks.back().arrival - lo;
    for (auto& t : tasks) t.arrival = span > 0 ? (t.arrival - lo) * (*rescale_window / span) : 0.0;
  }
  for (std::size_t i = 0; i < tasks.size(); ++i) tasks[i].id = static_cast<TaskId>(i);
  return tasks;
}

std::vector<Task> load_trace(const std::string& path, std::optional<Seconds> rescale_window) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open trace file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_trace(ss.str(), rescale_window);
}

void write_trace(const std::string& path, const std::vector<Task>& tasks) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write trace file '" + path + "'");
  f << "arrival_time,kind,length,batch_size,output_length\n";
  f << std::setprecision(17);
  for (const auto& t : tasks)
    f << t.arrival << ',' << to_string(t.kind) << ',' << t.length << ',' << t.batch_size << ','
      << t.output_length << '\n';
}

double sample_mean(const std::vector<int>& xs) {
  if (xs.empty()) return 0.0;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double sample_stddev(const std::vector<int>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = sample_mean(xs);
  double ss = 0.0;
  for (int x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size()));
}

namespace {

// Picks the prefix of `ordered` (at least `min_size` long) whose stddev is
// closest to `target`.
std::vector<int> best_prefix(const std::vector<int>& ordered, double target, std::size_t min_size) {
  double sum = 0.0, sum_sq = 0.0;
  std::size_t best_len = ordered.size();
  double best_err = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    sum += ordered[i];
    sum_sq += static_cast<double>(ordered[i]) * ordered[i];
    const std::size_t n = i + 1;
    if (n < min_size) continue;
    const double m = sum / n;
    const double sd = std::sqrt(std::max(0.0, sum_sq / n - m * m));
    const double err = std::abs(sd - target);
    if (err < best_err) {
      best_err = err;
      best_len = n;
    }
  }
  return {ordered.begin(), ordered.begin() + static_cast<std::ptrdiff_t>(best_len)};
}

}  // namespace

std::vector<LengthDistribution> make_heterogeneity_sweep(const LengthDistribution& base,
                                                         const std::vector<double>& variance_levels) {
  validate(base, "base");
  std::vector<LengthDistribution> out;
  for (double level : variance_levels) {
    if (level < 0) throw ConfigError("variance level must be >= 0");
    LengthDistribution d = base;
    if (base.family == LengthFamily::kEmpirical) {
      const double mu = sample_mean(base.empirical_samples);
      if (level == 0.0) {
        d.family = LengthFamily::kNormal;
        d.mean = mu;
        d.stddev = 0.0;
        d.empirical_samples.clear();
      } else {
        std::vector<int> by_distance = base.empirical_samples;
        std::stable_sort(by_distance.begin(), by_distance.end(),
                         [mu](int a, int b) { return std::abs(a - mu) < std::abs(b - mu); });
        const std::size_t min_size = std::max<std::size_t>(2, by_distance.size() / 10);
        const double base_sd = sample_stddev(base.empirical_samples);
        if (level > base_sd) std::reverse(by_distance.begin(), by_distance.end());
        d.empirical_samples = best_prefix(by_distance, level, min_size);
        d.mean = sample_mean(d.empirical_samples);
        d.stddev = sample_stddev(d.empirical_samples);
      }
    } else {
      d.stddev = level;
    }
    out.push_back(std::move(d));
  }
  return out;
}

void assign_slo(std::vector<Task>& tasks, const NodeConfig& reference_node, double multiple) {
  for (auto& t : tasks)
    t.slo_deadline = t.arrival + multiple * node_forward_latency(reference_node, t.batch_size, t.length);
}

}  // namespace lemix
