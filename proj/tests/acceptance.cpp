// Runs every acceptance criterion and prints one PASS/FAIL line for each.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <string>
#include <tuple>
#include <vector>

#include "lemix/engine.hpp"
#include "lemix/metrics.hpp"
#include "lemix/workload.hpp"
#include "oracle.hpp"
#include "report_io.hpp"

using namespace lemix;

namespace {

constexpr int kSeeds = 10;
constexpr int kTasks = 1000;
const std::vector<double> kRates = {10, 50, 100, 150};
const std::vector<double> kAlphas = {0.1, 0.5, 0.9};

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::vector<Task> workload(double rate, double alpha, std::uint64_t seed, int tasks = kTasks,
                           std::optional<LengthDistribution> output = std::nullopt) {
  WorkloadSpec w;
  w.request_rate = rate;
  w.training_rate = alpha;
  w.task_count = tasks;
  w.length_dist.mean = 180;
  w.length_dist.stddev = 100;
  w.output_dist = output;
  w.seed = seed;
  return generate_poisson(w);
}

// Every simulated run goes through here: it is executed twice to check
// determinism and its invariants are checked on the first execution.
struct Ledger {
  int runs = 0;
  int nondeterministic = 0;
  int broken = 0;
  std::string first_break;
};
Ledger ledger;

struct Outcome {
  SimResult result;
  MetricsReport metrics;
};

Outcome simulate(const ClusterConfig& c, const std::vector<Task>& tasks, const SchedulerParams& p,
                 std::uint64_t seed) {
  Outcome o;
  o.result = run(c, tasks, p, seed);
  o.metrics = summarize(o.result);
  const MetricsReport again = summarize(run(c, tasks, p, seed));
  ++ledger.runs;
  if (io::metrics_to_json(o.metrics).dump() != io::metrics_to_json(again).dump()) ++ledger.nondeterministic;
  if (auto why = oracle::invariant_violation(o.result); !why.empty()) {
    if (!ledger.broken++) ledger.first_break = why;
  }
  return o;
}

const ClusterConfig& gpt_cluster() {
  static const ClusterConfig c = make_cluster(find_preset("gpt-2.5b"), 4, 2);
  return c;
}

SchedulerParams params(Policy policy, double alpha) {
  SchedulerParams p;
  p.policy = policy;
  p.training_rate = alpha;
  return p;
}

struct SeedMeans {
  double throughput = 0, slo = 0, active = 0, version = 0;
  double seconds = 0;
};

// Seed-averaged metrics for the standard workload, memoised by setup.
SeedMeans averaged(Policy policy, double rate, double alpha, bool prioritize = true) {
  static std::map<std::tuple<int, double, double, bool>, SeedMeans> cache;
  const auto key = std::make_tuple(static_cast<int>(policy), rate, alpha, prioritize);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  SchedulerParams p = params(policy, alpha);
  p.prioritize = prioritize;
  SeedMeans m;
  const auto t0 = Clock::now();
  for (int seed = 1; seed <= kSeeds; ++seed) {
    const auto o = simulate(gpt_cluster(), workload(rate, alpha, seed), p, seed);
    m.throughput += o.metrics.throughput / kSeeds;
    m.slo += o.metrics.slo_attainment / kSeeds;
    m.active += o.metrics.mean_active_nodes / kSeeds;
    m.version += o.metrics.mean_version_at_inference / kSeeds;
  }
  m.seconds = since(t0);
  return cache[key] = m;
}

int passed = 0;

void report(int id, const char* name, bool ok, const std::string& detail) {
  passed += ok;
  std::printf("[%s] %2d %s: %s\n", ok ? "PASS" : "FAIL", id, name, detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void planner_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  int plans = 0, bad = 0;
  for (int k = 0; k < 1000; ++k) {
    const auto inst = oracle::random_instance(rng, 10, 4, 2);
    const auto r = run(inst.cluster, inst.tasks, SchedulerParams{}, static_cast<std::uint64_t>(k));
    const auto actual = oracle::actual_paths(r);
    for (const auto& t : r.tasks) bad += !oracle::same_path(t.planned_path, t.actual_path);
    for (std::size_t i = 0; i < r.plans.size(); ++i) {
      const auto& pl = r.plans[i];
      const auto st = oracle::node_state_before(r, i, actual);
      const PlanItem item{pl.item, pl.kind, pl.planned_arrival, pl.length, pl.batch};
      const auto ref = oracle::plan_forward(st.pending, st.last, inst.cluster.nodes[static_cast<std::size_t>(pl.node)], item);
      const Seconds executed = actual.at(pl.item).forward_end() - pl.planned_arrival;
      bad += !oracle::near(ref.raw_idleness, pl.raw_ii) || !oracle::near(ref.response, pl.response) ||
             !oracle::near(executed, pl.response);
      ++plans;
    }
  }
  const double secs = since(t0);
  report(1, "planner-oracle equivalence", bad == 0 && secs < 30,
         fmt("%d mismatches over %d plans in 1000 instances, %.2f s (limit 30 s)", bad, plans, secs));
}

void throughput_ordering() {
  const auto lemix = averaged(Policy::kLeMix, 100, 0.5);
  const auto rr = averaged(Policy::kRoundRobin, 100, 0.5);
  const auto sep = averaged(Policy::kSeparate, 100, 0.5);
  const double ratio = lemix.throughput / sep.throughput;
  const double secs = lemix.seconds + rr.seconds + sep.seconds;
  const bool ok = lemix.throughput >= rr.throughput && rr.throughput >= sep.throughput && ratio >= 1.2 && secs < 120;
  report(2, "throughput ordering", ok,
         fmt("lemix %.2f >= rr %.2f >= separate %.2f tasks/s, lemix/separate %.3f (need >= 1.2), %.1f s",
             lemix.throughput, rr.throughput, sep.throughput, ratio, secs));
}

void slo_monotonicity() {
  bool ok = true;
  std::string detail;
  for (auto [policy, name] : {std::pair{Policy::kLeMix, "lemix"}, {Policy::kSeparate, "separate"},
                              {Policy::kRoundRobin, "rr"}, {Policy::kLUF, "luf"}}) {
    detail += std::string(detail.empty() ? "" : "; ") + name;
    double prev = 2.0;
    for (double rate : kRates) {
      const double s = averaged(policy, rate, 0.5).slo;
      ok = ok && s <= prev + 0.02;
      prev = s;
      detail += fmt(" %.3f", s);
    }
  }
  report(3, "slo attainment non-increasing in rate", ok, detail + " (rates 10/50/100/150, tolerance 0.02)");
}

void consolidation() {
  std::map<std::pair<double, double>, double> m;
  for (double a : kAlphas)
    for (double r : kRates) m[{r, a}] = averaged(Policy::kLeMix, r, a).active;
  bool ok = m[{10, 0.1}] < 4;
  std::string detail;
  for (double a : kAlphas) {
    detail += fmt("%salpha %.1f:", detail.empty() ? "" : "; ", a);
    for (std::size_t i = 0; i < kRates.size(); ++i) {
      detail += fmt(" %.2f", m[{kRates[i], a}]);
      if (i) ok = ok && m[{kRates[i], a}] >= m[{kRates[i - 1], a}] - 0.25;
    }
  }
  for (double r : kRates)
    for (std::size_t j = 1; j < kAlphas.size(); ++j) ok = ok && m[{r, kAlphas[j]}] >= m[{r, kAlphas[j - 1]}] - 0.25;
  report(4, "consolidation of active nodes", ok,
         detail + fmt(" (rates 10/50/100/150; corner %.2f < 4, tolerance 0.25)", m[{10, 0.1}]));
}

void deprioritization_ablation() {
  const double with = averaged(Policy::kLeMix, 100, 0.5).slo;
  const double without = averaged(Policy::kLeMix, 100, 0.5, false).slo;
  const double ratio = without > 0 ? with / without : INFINITY;
  report(5, "deprioritization ablation", ratio >= 1.5,
         fmt("slo %.3f with vs %.3f without, ratio %.3f (need >= 1.5)", with, without, ratio));
}

void memory_ablation() {
  const ClusterConfig c = make_cluster(find_preset("llama-70b"), 4, 4);
  const LengthDistribution output{LengthFamily::kLogNormal, 64, 32, 8, 256, {}};
  int aware_violations = 0, unaware_violations = 0, offloads = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto tasks = workload(20, 0.5, seed, kTasks, output);
    SchedulerParams p;
    p.max_batch = 8;
    const auto aware = simulate(c, tasks, p, seed);
    p.memory_aware = false;
    const auto unaware = simulate(c, tasks, p, seed);
    aware_violations += aware.metrics.threshold_violations;
    offloads += aware.metrics.offloads;
    unaware_violations += unaware.metrics.threshold_violations;
  }
  report(6, "memory-awareness ablation", aware_violations == 0 && unaware_violations >= 1,
         fmt("llama-70b 4x4, generative, batch 8, 20 rps, 3 seeds: %d violations aware (%d offloads), %d unaware",
             aware_violations, offloads, unaware_violations));
}

void freshness() {
  const double lemix = averaged(Policy::kLeMix, 100, 0.5).version;
  const double sep = averaged(Policy::kSeparate, 100, 0.5).version;
  report(8, "freshness proxy", lemix >= sep,
         fmt("mean version at inference lemix %.2f vs separate %.2f (sync every %d updates)", lemix, sep,
             gpt_cluster().sync_interval));
}

void overhead_scaling() {
  std::vector<double> xs, ys;
  double at_4x2 = 0;
  std::string detail;
  for (int s : {2, 4})
    for (int n : {2, 4, 8, 16}) {
      const ClusterConfig c = make_cluster(find_preset("gpt-2.5b"), n, s);
      const auto tasks = workload(100, 0.5, 1);
      double best = INFINITY;
      for (int rep = 0; rep < 3; ++rep) {
        const SimResult r = run(c, tasks, params(Policy::kLeMix, 0.5), 1);
        const double mean = std::accumulate(r.decision_seconds.begin(), r.decision_seconds.end(), 0.0) /
                            static_cast<double>(r.decision_seconds.size());
        best = std::min(best, mean);
      }
      xs.push_back(std::log(static_cast<double>(n * s)));
      ys.push_back(std::log(best));
      if (n == 4 && s == 2) at_4x2 = best;
      detail += fmt("%s%dx%d %.1f us", detail.empty() ? "" : ", ", n, s, best * 1e6);
    }
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / static_cast<double>(ys.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  const double slope = sxy / sxx;
  report(9, "scheduler overhead scaling", slope <= 1.2 && at_4x2 < 1e-3,
         fmt("exponent %.3f in N*S (limit 1.2), %.1f us at 4x2 (limit 1 ms); ", slope, at_4x2 * 1e6) + detail);
}

}  // namespace

int main() {
  try {
    planner_oracle();
    throughput_ordering();
    slo_monotonicity();
    consolidation();
    deprioritization_ablation();
    memory_ablation();
    report(7, "conservation and safety invariants", ledger.broken == 0,
           fmt("%d of %d runs broke an invariant%s", ledger.broken, ledger.runs,
               ledger.broken ? (": " + ledger.first_break).c_str() : ""));
    freshness();
    overhead_scaling();
    report(10, "determinism", ledger.nondeterministic == 0,
           fmt("%d of %d runs differed on a same-seed repeat", ledger.nondeterministic, ledger.runs));
  } catch (const std::exception& e) {
    std::printf("acceptance harness aborted: %s\n", e.what());
    return 2;
  }
  std::printf("%d of 10 criteria passed\n", passed);
  return 0;
}
