#include "lemix/cluster.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "csv.hpp"

namespace lemix {

void validate(const StageProfile& p) {
  if (!(p.eta_f > 0)) throw ConfigError("stage.eta_f must be > 0");
  if (!(p.eta_b > 0)) throw ConfigError("stage.eta_b must be > 0");
  if (!(p.eta_d > 0)) throw ConfigError("stage.eta_d must be > 0");
  if (!(p.mem_capacity > 0)) throw ConfigError("stage.mem_capacity must be > 0");
  if (!(p.mem_weights > 0)) throw ConfigError("stage.mem_weights must be > 0");
  if (!(p.mem_act_coeff > 0)) throw ConfigError("stage.mem_act_coeff must be > 0");
  if (!(p.mem_kv_coeff > 0)) throw ConfigError("stage.mem_kv_coeff must be > 0");
  if (!(p.mem_weights < p.mem_capacity))
    throw ConfigError("stage.mem_weights must be < stage.mem_capacity");
}

void validate(const NodeConfig& n) {
  if (n.stages.empty()) throw ConfigError("node.stages must be non-empty");
  if (!(n.kappa > 0.0 && n.kappa <= 1.0)) throw ConfigError("node.kappa must be in (0, 1]");
  if (!(n.delta_t > 0)) throw ConfigError("node.delta_t must be > 0");
  if (!(n.delta_t < n.t_max)) throw ConfigError("node.delta_t must be < node.t_max");
  if (n.offload_penalty < 0) throw ConfigError("node.offload_penalty must be >= 0");
  for (const auto& s : n.stages) {
    validate(s);
    if (!(n.kappa * s.mem_capacity > s.mem_weights))
      throw ConfigError("node.kappa * stage.mem_capacity must exceed stage.mem_weights");
  }
}

void validate(const ClusterConfig& c) {
  if (c.nodes.empty()) throw ConfigError("cluster.nodes must be non-empty");
  if (c.sync_interval < 1) throw ConfigError("cluster.sync_interval must be >= 1");
  if (c.sync_base < 0 || c.sync_per_node < 0) throw ConfigError("cluster.sync_base/sync_per_node must be >= 0");
  if (!(c.sync_reference_bytes > 0)) throw ConfigError("cluster.sync_reference_bytes must be > 0");
  for (const auto& n : c.nodes) validate(n);
}

Seconds forward_latency(const StageProfile& p, int batch, int length) {
  const double l = length;
  return p.eta_f * batch * l * l;
}

Seconds backward_latency(const StageProfile& p, int batch, int length) {
  const double l = length;
  return p.eta_b * batch * l * l;
}

Seconds decode_latency(const StageProfile& p, int batch, int context_length) {
  return p.eta_d * batch * static_cast<double>(context_length);
}

Seconds node_forward_latency(const NodeConfig& n, int batch, int length) {
  Seconds total = 0.0;
  for (const auto& s : n.stages) total += forward_latency(s, batch, length);
  return total;
}

Bytes memory_threshold(const NodeConfig& n, int stage) {
  return n.kappa * n.stages.at(static_cast<std::size_t>(stage)).mem_capacity;
}

Seconds sync_latency(const ClusterConfig& c, Bytes model_bytes, int num_nodes) {
  if (num_nodes < 2) return 0.0;
  const double scale = model_bytes / c.sync_reference_bytes;
  return (c.sync_base + c.sync_per_node * (num_nodes - 1)) * scale;
}

std::map<int, FittedStage> fit_coefficients(const std::vector<ProfilingObservation>& obs) {
  struct Acc {
    double sum = 0.0;
    int count = 0;
  };
  std::map<std::pair<int, int>, Acc> acc;
  int max_stage = -1;
  for (const auto& o : obs) {
    if (!(o.measured_latency > 0)) throw ConfigError("observation.measured_latency must be > 0");
    if (o.batch < 1 || o.length < 1 || o.stage < 0)
      throw ConfigError("observation batch/length must be >= 1 and stage >= 0");
    const double l = o.length;
    auto& a = acc[{o.stage, static_cast<int>(o.op)}];
    a.sum += o.measured_latency / (o.batch * l * l);
    ++a.count;
    max_stage = std::max(max_stage, o.stage);
  }
  std::string gaps;
  std::map<int, FittedStage> fitted;
  if (max_stage < 0) throw ProfilingIncomplete("profiling incomplete: no observations");
  for (int s = 0; s <= max_stage; ++s) {
    for (int op = 0; op < 2; ++op) {
      auto it = acc.find({s, op});
      if (it == acc.end()) {
        if (!gaps.empty()) gaps += ", ";
        gaps += "stage " + std::to_string(s) + (op == 0 ? " forward" : " backward");
        continue;
      }
      const double eta = it->second.sum / it->second.count;
      if (op == 0) {
        fitted[s].eta_f = eta;
      } else {
        fitted[s].eta_b = eta;
      }
    }
  }
  if (!gaps.empty()) throw ProfilingIncomplete("profiling incomplete, missing: " + gaps);
  return fitted;
}

std::vector<ProfilingObservation> parse_observations_csv(const std::string& text) {
  std::vector<ProfilingObservation> out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = csv::split_line(line);
    if (fields.empty()) continue;
    if (!header_seen) {
      header_seen = true;
      if (fields[0] == "stage") continue;
    }
    if (fields.size() != 5) throw ParseError("expected 5 fields stage,op,batch,length,latency", line_no);
    ProfilingObservation o;
    try {
      o.stage = std::stoi(fields[0]);
      if (fields[1] == "forward") {
        o.op = Pass::kForward;
      } else if (fields[1] == "backward") {
        o.op = Pass::kBackward;
      } else {
        throw ParseError("op must be forward or backward", line_no);
      }
      o.batch = std::stoi(fields[2]);
      o.length = std::stoi(fields[3]);
      o.measured_latency = std::stod(fields[4]);
    } catch (const std::logic_error&) {
      throw ParseError("malformed number", line_no);
    }
    out.push_back(o);
  }
  return out;
}

std::vector<ProfilingObservation> load_observations_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open observations file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_observations_csv(ss.str());
}

const std::vector<ModelPreset>& model_presets() {
  static const std::vector<ModelPreset> presets = {
      {"gpt-400m", 1.0 * kGiB, 12, 768, 0.03, 0.04, 48.0 * kGiB},
      {"gpt-1.4b", 2.3 * kGiB, 24, 1024, 0.08, 0.09, 48.0 * kGiB},
      {"gpt-2.5b", 4.5 * kGiB, 36, 1280, 0.12, 0.14, 48.0 * kGiB},
      {"llama-8b", 13.0 * kGiB, 32, 4096, 0.11, 0.15, 80.0 * kGiB},
      {"llama-13b", 26.0 * kGiB, 40, 5120, 0.24, 0.36, 80.0 * kGiB},
      {"llama-70b", 132.0 * kGiB, 80, 8192, 0.73, 1.05, 80.0 * kGiB},
  };
  return presets;
}

const ModelPreset& find_preset(const std::string& name) {
  std::string key = name;
  std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
  for (const auto& p : model_presets())
    if (p.name == key) return p;
  throw ConfigError("unknown model preset '" + name + "'");
}

NodeConfig make_node(const ModelPreset& preset, int num_stages, int id) {
  if (num_stages < 1) throw ConfigError("stages must be >= 1");
  const double ref_work = static_cast<double>(kReferenceBatch) * kReferenceLength * kReferenceLength;
  const double layers_per_stage = static_cast<double>(preset.layers) / num_stages;
  StageProfile p;
  p.eta_f = preset.forward / ref_work;
  p.eta_b = preset.backward / ref_work;
  // One decode step over a reference-length context costs a tenth of a prefill.
  p.eta_d = preset.forward / (10.0 * kReferenceBatch * kReferenceLength);
  p.mem_capacity = preset.gpu_memory;
  p.mem_weights = preset.model_bytes / num_stages;
  p.mem_act_coeff = 34.0 * layers_per_stage * preset.hidden;
  p.mem_kv_coeff = 4.0 * layers_per_stage * preset.hidden;

  NodeConfig n;
  n.id = id;
  n.stages.assign(static_cast<std::size_t>(num_stages), p);
  n.t_max = 10.0 * preset.forward;
  n.delta_t = 0.1 * preset.forward;
  validate(n);
  return n;
}

ClusterConfig make_cluster(const ModelPreset& preset, int num_nodes, int num_stages) {
  if (num_nodes < 1) throw ConfigError("nodes must be >= 1");
  ClusterConfig c;
  for (int i = 0; i < num_nodes; ++i) c.nodes.push_back(make_node(preset, num_stages, i));
  c.model_bytes = preset.model_bytes;
  validate(c);
  return c;
}

}  // namespace lemix
