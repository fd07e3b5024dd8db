#include "report_io.hpp"

#include <chrono>
#include <ctime>
#include <fstream>

namespace lemix::io {

namespace {

json dist_to_json(const Distribution& d) { return {{"p50", d.p50}, {"p95", d.p95}, {"mean", d.mean}, {"count", d.count}}; }

Distribution dist_from_json(const json& j) {
  Distribution d;
  d.p50 = j.at("p50").get<double>();
  d.p95 = j.at("p95").get<double>();
  d.mean = j.at("mean").get<double>();
  d.count = j.at("count").get<std::size_t>();
  return d;
}

json path_to_json(const ExecPath& p) {
  auto spans = [](const std::vector<StageSpan>& v) {
    json a = json::array();
    for (const auto& s : v) a.push_back({s.start, s.end});
    return a;
  };
  json j = {{"forward", spans(p.forward)}};
  if (p.has_backward()) j["backward"] = spans(p.backward);
  return j;
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

}  // namespace

json metrics_to_json(const MetricsReport& r) {
  return {
      {"policy", r.policy},
      {"workload_hash", r.workload_hash},
      {"completed", r.completed},
      {"makespan", r.makespan},
      {"throughput", r.throughput},
      {"e2e_latency", r.e2e_latency},
      {"ttft", dist_to_json(r.ttft)},
      {"tbt", dist_to_json(r.tbt)},
      {"slo_attainment", r.slo_attainment},
      {"slo_vacuous", r.slo_vacuous},
      {"utilization", r.utilization},
      {"mean_utilization", r.mean_utilization},
      {"active_nodes", r.active_nodes},
      {"mean_active_nodes", r.mean_active_nodes},
      {"mean_version_at_inference", r.mean_version_at_inference},
      {"per_node_length_std", r.per_node_length_std},
      {"offloads", r.offloads},
      {"threshold_violations", r.threshold_violations},
      {"capacity_violations", r.capacity_violations},
  };
}

json timing_to_json(const MetricsReport& r) {
  return {{"decision_latency_mean", r.decision_latency_mean}, {"decision_latency_p99", r.decision_latency_p99}};
}

MetricsReport metrics_from_json(const json& j) {
  MetricsReport r;
  r.policy = j.at("policy").get<std::string>();
  r.workload_hash = j.at("workload_hash").get<std::uint64_t>();
  r.completed = j.at("completed").get<std::size_t>();
  r.makespan = j.at("makespan").get<double>();
  r.throughput = j.at("throughput").get<double>();
  r.e2e_latency = j.at("e2e_latency").get<std::vector<double>>();
  r.ttft = dist_from_json(j.at("ttft"));
  r.tbt = dist_from_json(j.at("tbt"));
  r.slo_attainment = j.at("slo_attainment").get<double>();
  r.slo_vacuous = j.at("slo_vacuous").get<bool>();
  r.utilization = j.at("utilization").get<std::vector<double>>();
  r.mean_utilization = j.at("mean_utilization").get<double>();
  r.active_nodes = j.at("active_nodes").get<int>();
  r.mean_active_nodes = j.at("mean_active_nodes").get<double>();
  r.mean_version_at_inference = j.at("mean_version_at_inference").get<double>();
  r.per_node_length_std = j.at("per_node_length_std").get<std::vector<double>>();
  r.offloads = j.at("offloads").get<int>();
  r.threshold_violations = j.at("threshold_violations").get<int>();
  r.capacity_violations = j.at("capacity_violations").get<int>();
  return r;
}

json task_to_json(const TaskRecord& t) {
  json j = {
      {"type", "task"},
      {"id", t.id},
      {"kind", to_string(t.kind)},
      {"arrival", t.arrival},
      {"release", t.release},
      {"dispatch", t.dispatch},
      {"node", t.node},
      {"length", t.length},
      {"batch_size", t.batch_size},
      {"output_length", t.output_length},
      {"slo_deadline", t.slo_deadline},
      {"first_token", t.first_token},
      {"completion", t.completion},
      {"ttft", t.ttft()},
      {"deferrals", t.deferrals},
      {"offloaded", t.offloaded},
      {"memory_wait", t.memory_wait},
      {"planned_path", path_to_json(t.planned_path)},
      {"actual_path", path_to_json(t.actual_path)},
  };
  if (t.tbt) j["tbt"] = *t.tbt;
  if (t.version) j["version"] = *t.version;
  return j;
}

json plan_to_json(const PlanRecord& p) {
  return {
      {"type", "plan"},
      {"item", p.item},
      {"kind", to_string(p.kind)},
      {"members", p.members},
      {"node", p.node},
      {"dispatch", p.dispatch},
      {"planned_arrival", p.planned_arrival},
      {"length", p.length},
      {"batch", p.batch},
      {"score", p.score},
      {"ii", p.ii},
      {"raw_ii", p.raw_ii},
      {"response", p.response},
      {"planned_path", path_to_json(p.planned_path)},
      {"executed_training", p.executed_training},
  };
}

json run_header(const std::string& config_hash, std::uint64_t seed, const MetricsReport& r) {
  return {
      {"type", "header"},
      {"config_hash", config_hash},
      {"seed", seed},
      {"policy", r.policy},
      {"metrics", metrics_to_json(r)},
      {"timing", timing_to_json(r)},
      {"generated_at", timestamp()},
  };
}

void write_run_jsonl(std::ostream& out, const json& header, const SimResult& result) {
  out << header.dump() << '\n';
  for (const auto& t : result.tasks) out << task_to_json(t).dump() << '\n';
}

void write_plans_jsonl(std::ostream& out, const json& header, const SimResult& result) {
  out << header.dump() << '\n';
  for (const auto& p : result.plans) out << plan_to_json(p).dump() << '\n';
}

void write_gpu_ledger(std::ostream& out, const std::string& config_hash, std::uint64_t seed, const SimResult& result) {
  out << "# config_hash=" << config_hash << " seed=" << seed << '\n';
  out << "node,stage,busy_s,idle_s,peak_mem_bytes,offloads\n";
  out.precision(17);
  for (const auto& g : result.gpus)
    out << g.node << ',' << g.stage << ',' << g.busy << ',' << g.idle << ',' << g.peak_memory << ',' << g.offloads
        << '\n';
}

json read_run_header(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open run file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("run file '" + path + "' is empty");
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw ParseError("run file '" + path + "': " + e.what(), 1);
  }
  if (j.value("type", "") != "header") throw ConfigError("run file '" + path + "' has no header record");
  return j;
}

}  // namespace lemix::io
