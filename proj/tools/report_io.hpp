#pragma once

#include <json.hpp>
#include <ostream>
#include <string>

#include "lemix/engine.hpp"
#include "lemix/metrics.hpp"

namespace lemix::io {

using nlohmann::json;

/// Metric fields only. Wall-clock decision latencies are kept apart because
/// they differ between otherwise identical runs.
json metrics_to_json(const MetricsReport& r);
MetricsReport metrics_from_json(const json& j);
json timing_to_json(const MetricsReport& r);

json task_to_json(const TaskRecord& t);
json plan_to_json(const PlanRecord& p);

/// First line of a run file.
json run_header(const std::string& config_hash, std::uint64_t seed, const MetricsReport& r);

void write_run_jsonl(std::ostream& out, const json& header, const SimResult& result);
void write_gpu_ledger(std::ostream& out, const std::string& config_hash, std::uint64_t seed, const SimResult& result);
void write_plans_jsonl(std::ostream& out, const json& header, const SimResult& result);

/// Reads the header record of a run file written by write_run_jsonl.
json read_run_header(const std::string& path);

}  // namespace lemix::io
