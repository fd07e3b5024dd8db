#include <CLI11.hpp>
#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "lemix/config.hpp"
#include "lemix/engine.hpp"
#include "lemix/metrics.hpp"
#include "report_io.hpp"

namespace fs = std::filesystem;
using namespace lemix;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct Overrides {
  std::string config_path;
  std::optional<std::string> policy;
  std::optional<double> rate;
  std::optional<double> train_rate;
  std::vector<std::uint64_t> seeds;
  std::optional<std::string> output;
  unsigned jobs = std::max(1u, std::thread::hardware_concurrency());
  bool dump_plans = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_path, "Run configuration file");
  cmd->add_option("--policy", o.policy, "lemix, separate, separate-dynamic, rr, luf");
  cmd->add_option("--rate", o.rate, "Request rate (tasks/s)");
  cmd->add_option("--train-rate", o.train_rate, "Fraction of training tasks");
  cmd->add_option("--seed", o.seeds, "Seed(s); replaces the configured list");
  cmd->add_option("--output", o.output, "Output directory");
  cmd->add_option("--jobs", o.jobs, "Parallel runs")->check(CLI::PositiveNumber);
  cmd->add_flag("--dump-plans", o.dump_plans, "Also write every allocation decision");
}

RunConfig effective_config(const Overrides& o) {
  RunConfig cfg = o.config_path.empty() ? parse_config("") : load_config(o.config_path);
  if (o.policy) cfg.scheduler.policy = policy_from_string(*o.policy);
  if (o.rate) cfg.workload.request_rate = *o.rate;
  if (o.train_rate) {
    cfg.workload.training_rate = *o.train_rate;
    cfg.scheduler.training_rate = *o.train_rate;
  }
  if (!o.seeds.empty()) cfg.seeds = o.seeds;
  if (o.output) cfg.output_dir = *o.output;
  validate(cfg);
  return cfg;
}

struct RunOutcome {
  std::string hash;
  std::uint64_t seed = 0;
  MetricsReport report;
};

RunOutcome execute(const RunConfig& cfg, std::uint64_t seed, const std::string& stem, bool dump_plans) {
  const std::string hash = config_hash(cfg);
  SimResult result = run(cfg.cluster, make_workload(cfg, seed), cfg.scheduler, seed);
  MetricsReport report = summarize(result);
  const auto header = io::run_header(hash, seed, report);

  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);
  auto open = [&](const std::string& name) {
    std::ofstream f(dir / name);
    if (!f) throw std::runtime_error("cannot write '" + (dir / name).string() + "'");
    return f;
  };
  auto jsonl = open(stem + ".jsonl");
  io::write_run_jsonl(jsonl, header, result);
  auto ledger = open(stem + "_gpus.csv");
  io::write_gpu_ledger(ledger, hash, seed, result);
  if (dump_plans) {
    auto plans = open(stem + "_plans.jsonl");
    io::write_plans_jsonl(plans, header, result);
  }
  return {hash, seed, std::move(report)};
}

// Runs jobs[i]() on a fixed pool; the first exception is rethrown after all
// workers stop.
void run_pool(std::vector<std::function<void()>>& jobs, unsigned workers) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&] {
    for (std::size_t i; (i = next++) < jobs.size();) {
      try {
        jobs[i]();
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
        next = jobs.size();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < std::min<std::size_t>(workers, jobs.size()); ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

void print_summary(const RunOutcome& o) {
  const auto& r = o.report;
  std::cout << r.policy << " seed=" << o.seed << " hash=" << o.hash << " throughput=" << r.throughput
            << " slo=" << r.slo_attainment << " ttft_p95=" << r.ttft.p95 << " active_nodes=" << r.active_nodes
            << '\n';
}

int cmd_run(const Overrides& o) {
  const RunConfig cfg = effective_config(o);
  std::vector<RunOutcome> outcomes(cfg.seeds.size());
  std::vector<std::function<void()>> jobs;
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
    jobs.push_back([&, i] {
      const auto seed = cfg.seeds[i];
      outcomes[i] = execute(cfg, seed, std::string(to_string(cfg.scheduler.policy)) + "_seed" + std::to_string(seed),
                            o.dump_plans);
    });
  }
  run_pool(jobs, o.jobs);
  for (const auto& out : outcomes) print_summary(out);
  return 0;
}

std::vector<double> parse_values(const std::vector<std::string>& raw, const std::string& axis) {
  std::vector<double> v;
  for (const auto& s : raw) {
    try {
      std::size_t pos = 0;
      v.push_back(std::stod(s, &pos));
      if (pos != s.size()) throw std::invalid_argument(s);
    } catch (const std::logic_error&) {
      throw ConfigError("sweep: '" + s + "' is not a number for axis " + axis);
    }
  }
  return v;
}

int cmd_sweep(const Overrides& o, const std::string& axis, const std::vector<std::string>& values,
              std::vector<std::string> policies) {
  if (values.empty()) throw ConfigError("sweep: --values must list at least one value");
  const RunConfig base = effective_config(o);
  if (axis == "policy") policies = values;
  for (const auto& p : policies) policy_from_string(p);

  struct Point {
    std::string value;
    RunConfig cfg;
  };
  std::vector<Point> points;
  if (axis == "policy") {
    points.push_back({"-", base});
  } else {
    const auto nums = parse_values(values, axis);
    std::vector<LengthDistribution> lengths;
    if (axis == "heterogeneity") lengths = make_heterogeneity_sweep(base.workload.length_dist, nums);
    for (std::size_t i = 0; i < nums.size(); ++i) {
      Point pt{values[i], base};
      if (axis == "rate") {
        pt.cfg.workload.request_rate = nums[i];
      } else if (axis == "train_rate") {
        pt.cfg.workload.training_rate = nums[i];
        pt.cfg.scheduler.training_rate = nums[i];
      } else if (axis == "heterogeneity") {
        pt.cfg.workload.length_dist = lengths[i];
      } else {
        throw ConfigError("sweep: unknown axis '" + axis + "' (rate, train_rate, heterogeneity, policy)");
      }
      validate(pt.cfg);
      points.push_back(std::move(pt));
    }
  }

  struct Cell {
    std::size_t point;
    std::string policy;
    std::uint64_t seed;
    RunOutcome outcome;
  };
  std::vector<Cell> cells;
  for (std::size_t p = 0; p < points.size(); ++p)
    for (const auto& pol : policies)
      for (auto seed : base.seeds) cells.push_back({p, pol, seed, {}});

  std::vector<std::function<void()>> jobs;
  for (auto& cell : cells) {
    jobs.push_back([&] {
      RunConfig cfg = points[cell.point].cfg;
      cfg.scheduler.policy = policy_from_string(cell.policy);
      cfg.output_dir = (fs::path(base.output_dir) / "runs").string();
      const std::string stem =
          axis + "-" + points[cell.point].value + "_" + cell.policy + "_seed" + std::to_string(cell.seed);
      cell.outcome = execute(cfg, cell.seed, stem, o.dump_plans);
    });
  }
  run_pool(jobs, o.jobs);

  std::ofstream runs(fs::path(base.output_dir) / "sweep_runs.csv");
  runs << "axis,value,seed,policy,config_hash,throughput,slo_attainment,ttft_mean,ttft_p95,tbt_mean,"
          "mean_utilization,active_nodes,mean_active_nodes,mean_version_at_inference,offloads\n";
  runs.precision(12);
  for (const auto& c : cells) {
    const auto& r = c.outcome.report;
    runs << axis << ',' << points[c.point].value << ',' << c.seed << ',' << c.policy << ',' << c.outcome.hash << ','
         << r.throughput << ',' << r.slo_attainment << ',' << r.ttft.mean << ',' << r.ttft.p95 << ',' << r.tbt.mean
         << ',' << r.mean_utilization << ',' << r.active_nodes << ',' << r.mean_active_nodes << ','
         << r.mean_version_at_inference << ','
         << r.offloads << '\n';
  }

  if (std::find(policies.begin(), policies.end(), "separate") == policies.end()) {
    std::cerr << "sweep: no 'separate' runs, comparison table skipped\n";
  } else {
    std::ofstream cmp(fs::path(base.output_dir) / "sweep_comparison.csv");
    cmp << "axis,value,seed,";
    bool header_done = false;
    for (std::size_t p = 0; p < points.size(); ++p) {
      for (auto seed : base.seeds) {
        std::map<std::string, MetricsReport> reports;
        for (const auto& c : cells)
          if (c.point == p && c.seed == seed) reports[c.outcome.report.policy] = c.outcome.report;
        std::ostringstream table;
        compare(reports).write_csv(table);
        std::string line;
        std::istringstream lines(table.str());
        std::getline(lines, line);
        if (!header_done) {
          cmp << line << '\n';
          header_done = true;
        }
        while (std::getline(lines, line)) cmp << axis << ',' << points[p].value << ',' << seed << ',' << line << '\n';
      }
    }
  }
  std::cout << "sweep: " << cells.size() << " runs written to " << base.output_dir << '\n';
  return 0;
}

int cmd_fit(const std::string& csv, const std::optional<std::string>& output) {
  const auto fitted = fit_coefficients(load_observations_csv(csv));
  std::ostringstream out;
  out.precision(17);
  out << "# fitted from " << fs::path(csv).filename().string() << '\n';
  for (const auto& [stage, f] : fitted)
    out << "[stage." << stage << "]\neta_f = " << f.eta_f << "\neta_b = " << f.eta_b << '\n';
  if (output) {
    std::ofstream f(*output);
    if (!f) throw std::runtime_error("cannot write '" + *output + "'");
    f << out.str();
  } else {
    std::cout << out.str();
  }
  return 0;
}

int cmd_compare(const std::vector<std::string>& files, const std::optional<std::string>& output) {
  std::map<std::string, MetricsReport> reports;
  for (const auto& path : files) {
    MetricsReport r = io::metrics_from_json(io::read_run_header(path).at("metrics"));
    const std::string name = r.policy;
    if (!reports.emplace(name, std::move(r)).second)
      throw ConfigError("compare: more than one run file for policy '" + name + "'");
  }
  const auto table = compare(reports);
  if (output) {
    std::ofstream f(*output);
    if (!f) throw std::runtime_error("cannot write '" + *output + "'");
    table.write_csv(f);
  } else {
    table.write_csv(std::cout);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Co-located training and inference cluster simulator"};
  app.require_subcommand(1);

  Overrides run_opts, sweep_opts;
  auto* run_cmd = app.add_subcommand("run", "Simulate one configuration for each seed");
  add_common(run_cmd, run_opts);

  auto* sweep_cmd = app.add_subcommand("sweep", "Simulate a grid of values x policies x seeds");
  add_common(sweep_cmd, sweep_opts);
  std::string axis;
  std::vector<std::string> values;
  std::vector<std::string> policies = {"lemix", "separate", "rr", "luf"};
  sweep_cmd->add_option("--axis", axis, "rate, train_rate, heterogeneity or policy")->required();
  sweep_cmd->add_option("--values", values, "Axis values")->delimiter(',');
  sweep_cmd->add_option("--policies", policies, "Policies to run at every point")->delimiter(',');

  auto* fit_cmd = app.add_subcommand("fit", "Fit per-stage latency coefficients from profiling data");
  std::string obs_csv;
  std::optional<std::string> fit_out;
  fit_cmd->add_option("observations", obs_csv, "CSV: stage,op,batch,length,latency_s")->required();
  fit_cmd->add_option("--output", fit_out, "Write the [stage.N] sections here");

  auto* cmp_cmd = app.add_subcommand("compare", "Compare run files against the Separate run");
  std::vector<std::string> run_files;
  std::optional<std::string> cmp_out;
  cmp_cmd->add_option("runs", run_files, "Run .jsonl files, one per policy")->required();
  cmp_cmd->add_option("--output", cmp_out, "CSV output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run_cmd) return cmd_run(run_opts);
    if (*sweep_cmd) return cmd_sweep(sweep_opts, axis, values, policies);
    if (*fit_cmd) return cmd_fit(obs_csv, fit_out);
    if (*cmp_cmd) return cmd_compare(run_files, cmp_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ProfilingIncomplete& e) {
    std::cerr << "profiling error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
