#include "lemix/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "hash.hpp"

namespace lemix {

namespace pt = boost::property_tree;

namespace {

// Reads one section and remembers which keys were consumed so leftovers can
// be reported as typos.
class Section {
 public:
  Section(const pt::ptree* tree, std::string name) : tree_(tree), name_(std::move(name)) {}

  std::optional<std::string> text(const std::string& key) {
    used_.insert(key);
    if (!tree_) return std::nullopt;
    auto it = tree_->find(key);
    if (it == tree_->not_found()) return std::nullopt;
    return it->second.data();
  }

  template <class T>
  void read(const std::string& key, T& out) {
    if (auto v = get<T>(key)) out = *v;
  }

  template <class T>
  std::optional<T> get(const std::string& key) {
    auto s = text(key);
    if (!s) return std::nullopt;
    return convert<T>(key, *s);
  }

  std::vector<std::string> list(const std::string& key) {
    std::vector<std::string> out;
    auto s = text(key);
    if (!s) return out;
    std::stringstream ss(*s);
    std::string item;
    while (std::getline(ss, item, ',')) {
      trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  void reject_unknown() const {
    if (!tree_) return;
    for (const auto& [key, _] : *tree_)
      if (!used_.count(key)) throw ConfigError("unknown key '" + name_ + "." + key + "'");
  }

  std::string field(const std::string& key) const { return name_ + "." + key; }

 private:
  static void trim(std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    s = b == std::string::npos ? "" : s.substr(b, e - b + 1);
  }

  template <class T>
  T convert(const std::string& key, std::string s) {
    trim(s);
    try {
      std::size_t pos = 0;
      if constexpr (std::is_same_v<T, std::string>) {
        return s;
      } else if constexpr (std::is_same_v<T, bool>) {
        if (s == "true" || s == "1" || s == "yes") return true;
        if (s == "false" || s == "0" || s == "no") return false;
        throw std::invalid_argument(s);
      } else if constexpr (std::is_same_v<T, double>) {
        const double v = std::stod(s, &pos);
        if (pos == s.size()) return v;
      } else if constexpr (std::is_same_v<T, std::uint64_t>) {
        const auto v = std::stoull(s, &pos);
        if (pos == s.size() && s.front() != '-') return v;
      } else {
        const long long v = std::stoll(s, &pos);
        if (pos == s.size()) return static_cast<T>(v);
      }
    } catch (const std::logic_error&) {
    }
    throw ConfigError(field(key) + ": cannot parse '" + s + "'");
  }

  const pt::ptree* tree_;
  std::string name_;
  std::set<std::string> used_;
};

void read_stage(Section& sec, StageProfile& p) {
  sec.read("eta_f", p.eta_f);
  sec.read("eta_b", p.eta_b);
  sec.read("eta_d", p.eta_d);
  if (auto v = sec.get<double>("mem_capacity_gib")) p.mem_capacity = *v * kGiB;
  if (auto v = sec.get<double>("mem_weights_gib")) p.mem_weights = *v * kGiB;
  sec.read("mem_act_coeff", p.mem_act_coeff);
  sec.read("mem_kv_coeff", p.mem_kv_coeff);
}

void read_lengths(Section& sec, const std::string& prefix, LengthDistribution& d) {
  if (auto f = sec.get<std::string>(prefix + "_family")) d.family = length_family_from_string(*f);
  sec.read(prefix + "_mean", d.mean);
  sec.read(prefix + "_std", d.stddev);
  sec.read(prefix + "_min", d.min_length);
  sec.read(prefix + "_max", d.max_length);
  for (const auto& s : sec.list(prefix + "_samples")) {
    try {
      d.empirical_samples.push_back(std::stoi(s));
    } catch (const std::logic_error&) {
      throw ConfigError(sec.field(prefix + "_samples") + ": cannot parse '" + s + "'");
    }
  }
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ParseError(e.message(), static_cast<int>(e.line()));
  }

  static const std::set<std::string> known = {"cluster", "workload", "scheduler", "run"};
  for (const auto& [name, sub] : tree) {
    if (sub.empty() && !sub.data().empty()) throw ConfigError("key '" + name + "' must be inside a section");
    if (!known.count(name) && name.rfind("stage.", 0) != 0) throw ConfigError("unknown section [" + name + "]");
  }
  auto section = [&](const std::string& name) {
    auto it = tree.find(name);
    return Section(it == tree.not_found() ? nullptr : &it->second, name);
  };

  RunConfig cfg;
  Section cl = section("cluster");
  cl.read("model", cfg.model);
  cl.read("nodes", cfg.num_nodes);
  cl.read("stages", cfg.num_stages);
  cfg.cluster = make_cluster(find_preset(cfg.model), cfg.num_nodes, cfg.num_stages);
  NodeConfig node = cfg.cluster.nodes.front();
  cl.read("kappa", node.kappa);
  cl.read("t_max", node.t_max);
  cl.read("delta_t", node.delta_t);
  cl.read("offload_penalty", node.offload_penalty);
  cl.read("sync_interval", cfg.cluster.sync_interval);
  cl.read("sync_base", cfg.cluster.sync_base);
  cl.read("sync_per_node", cfg.cluster.sync_per_node);
  if (auto v = cl.get<double>("sync_reference_gib")) cfg.cluster.sync_reference_bytes = *v * kGiB;
  cl.reject_unknown();

  for (const auto& [name, sub] : tree) {
    if (name.rfind("stage.", 0) != 0) continue;
    int idx = -1;
    try {
      std::size_t pos = 0;
      idx = std::stoi(name.substr(6), &pos);
      if (pos != name.size() - 6) idx = -1;
    } catch (const std::logic_error&) {
    }
    if (idx < 0 || idx >= cfg.num_stages)
      throw ConfigError("section [" + name + "] does not name a stage in 0.." + std::to_string(cfg.num_stages - 1));
    Section st(&sub, name);
    read_stage(st, node.stages[static_cast<std::size_t>(idx)]);
    st.reject_unknown();
  }
  for (auto& n : cfg.cluster.nodes) {
    const int id = n.id;
    n = node;
    n.id = id;
  }

  Section wl = section("workload");
  wl.read("rate", cfg.workload.request_rate);
  wl.read("train_rate", cfg.workload.training_rate);
  if (auto v = wl.get<int>("tasks")) cfg.workload.task_count = *v;
  if (auto v = wl.get<double>("horizon")) cfg.workload.horizon = *v;
  if (!cfg.workload.task_count && !cfg.workload.horizon) cfg.workload.task_count = 1000;
  read_lengths(wl, "length", cfg.workload.length_dist);
  LengthDistribution out;
  out.mean = 0.0;
  out.stddev = 0.0;
  out.min_length = 0;
  read_lengths(wl, "output", out);
  if (out.mean > 0 || !out.empirical_samples.empty()) cfg.workload.output_dist = out;
  wl.read("batch_size", cfg.workload.batch_size);
  if (auto v = wl.get<std::string>("trace")) cfg.trace_path = *v;
  if (auto v = wl.get<double>("trace_window")) cfg.trace_window = *v;
  wl.reject_unknown();

  Section sc = section("scheduler");
  SchedulerParams& p = cfg.scheduler;
  if (auto v = sc.get<std::string>("policy")) p.policy = policy_from_string(*v);
  sc.read("lambda1", p.lambda1);
  sc.read("lambda2", p.lambda2);
  sc.read("tau", p.tau);
  sc.read("slo_multiple", p.slo_multiple);
  sc.read("sigma_floor", p.sigma_floor);
  if (auto v = sc.get<std::string>("cold_lc")) p.cold_lc = cold_lc_from_string(*v);
  sc.read("lc_neutral", p.lc_neutral);
  sc.read("prioritize", p.prioritize);
  sc.read("memory_aware", p.memory_aware);
  sc.read("max_batch", p.max_batch);
  if (auto v = sc.get<double>("batch_wait")) p.batch_wait = *v;
  sc.read("luf_query_latency", p.luf_query_latency);
  sc.read("luf_window", p.luf_window);
  sc.read("dynamic_rate_threshold", p.dynamic_rate_threshold);
  sc.read("rate_window", p.rate_window);
  p.training_rate = cfg.workload.training_rate;
  sc.read("training_rate", p.training_rate);
  sc.read("latency_noise", p.latency_noise);
  sc.reject_unknown();

  Section rn = section("run");
  if (auto seeds = rn.list("seeds"); !seeds.empty()) {
    cfg.seeds.clear();
    for (const auto& s : seeds) {
      try {
        if (s.front() == '-') throw std::invalid_argument(s);
        cfg.seeds.push_back(std::stoull(s));
      } catch (const std::logic_error&) {
        throw ConfigError("run.seeds: cannot parse '" + s + "'");
      }
    }
  }
  rn.read("output", cfg.output_dir);
  rn.reject_unknown();

  validate(cfg);
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void validate(const RunConfig& cfg) {
  validate(cfg.cluster);
  if (!cfg.trace_path) validate(cfg.workload);
  if (cfg.trace_window && !(*cfg.trace_window > 0)) throw ConfigError("workload.trace_window must be > 0");
  validate(cfg.scheduler);
  if (cfg.seeds.empty()) throw ConfigError("run.seeds must not be empty");
}

namespace {

void put(std::ostream& out, const char* key, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out << key << " = " << buf << '\n';
}

void put_lengths(std::ostream& out, const std::string& prefix, const LengthDistribution& d) {
  out << prefix << "_family = " << to_string(d.family) << '\n';
  put(out, (prefix + "_mean").c_str(), d.mean);
  put(out, (prefix + "_std").c_str(), d.stddev);
  out << prefix << "_min = " << d.min_length << '\n' << prefix << "_max = " << d.max_length << '\n';
  if (!d.empirical_samples.empty()) {
    out << prefix << "_samples = ";
    for (std::size_t i = 0; i < d.empirical_samples.size(); ++i) out << (i ? "," : "") << d.empirical_samples[i];
    out << '\n';
  }
}

}  // namespace

std::string canonical_config(const RunConfig& cfg) {
  std::ostringstream out;
  const ClusterConfig& c = cfg.cluster;
  out << "[cluster]\nmodel = " << cfg.model << "\nnodes = " << c.num_nodes()
      << "\nstages = " << c.nodes.front().num_stages() << '\n';
  for (const auto& n : c.nodes) {
    out << "[node." << n.id << "]\n";
    put(out, "kappa", n.kappa);
    put(out, "t_max", n.t_max);
    put(out, "delta_t", n.delta_t);
    put(out, "offload_penalty", n.offload_penalty);
    for (std::size_t s = 0; s < n.stages.size(); ++s) {
      const StageProfile& p = n.stages[s];
      out << "[node." << n.id << ".stage." << s << "]\n";
      put(out, "eta_f", p.eta_f);
      put(out, "eta_b", p.eta_b);
      put(out, "eta_d", p.eta_d);
      put(out, "mem_capacity", p.mem_capacity);
      put(out, "mem_weights", p.mem_weights);
      put(out, "mem_act_coeff", p.mem_act_coeff);
      put(out, "mem_kv_coeff", p.mem_kv_coeff);
    }
  }
  out << "[sync]\nsync_interval = " << c.sync_interval << '\n';
  put(out, "sync_base", c.sync_base);
  put(out, "sync_per_node", c.sync_per_node);
  put(out, "model_bytes", c.model_bytes);
  put(out, "sync_reference_bytes", c.sync_reference_bytes);

  out << "[workload]\n";
  if (cfg.trace_path) {
    out << "trace = " << *cfg.trace_path << '\n';
    if (cfg.trace_window) put(out, "trace_window", *cfg.trace_window);
  } else {
    const WorkloadSpec& w = cfg.workload;
    put(out, "rate", w.request_rate);
    put(out, "train_rate", w.training_rate);
    if (w.task_count) out << "tasks = " << *w.task_count << '\n';
    if (w.horizon) put(out, "horizon", *w.horizon);
    put_lengths(out, "length", w.length_dist);
    if (w.output_dist) put_lengths(out, "output", *w.output_dist);
    out << "batch_size = " << w.batch_size << '\n';
  }

  const SchedulerParams& p = cfg.scheduler;
  out << "[scheduler]\npolicy = " << to_string(p.policy) << '\n';
  put(out, "lambda1", p.lambda1);
  put(out, "lambda2", p.lambda2);
  put(out, "tau", p.tau);
  put(out, "slo_multiple", p.slo_multiple);
  put(out, "sigma_floor", p.sigma_floor);
  out << "cold_lc = " << to_string(p.cold_lc) << '\n';
  put(out, "lc_neutral", p.lc_neutral);
  out << "prioritize = " << p.prioritize << "\nmemory_aware = " << p.memory_aware << "\nmax_batch = " << p.max_batch
      << '\n';
  if (p.batch_wait) put(out, "batch_wait", *p.batch_wait);
  put(out, "luf_query_latency", p.luf_query_latency);
  put(out, "luf_window", p.luf_window);
  put(out, "dynamic_rate_threshold", p.dynamic_rate_threshold);
  put(out, "rate_window", p.rate_window);
  put(out, "training_rate", p.training_rate);
  put(out, "latency_noise", p.latency_noise);
  return out.str();
}

std::string config_hash(const RunConfig& cfg) {
  Fnv f;
  f.add(std::string_view(canonical_config(cfg)));
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(f.h));
  return buf;
}

std::vector<Task> make_workload(const RunConfig& cfg, std::uint64_t seed) {
  if (cfg.trace_path) return load_trace(*cfg.trace_path, cfg.trace_window);
  WorkloadSpec spec = cfg.workload;
  spec.seed = seed;
  return generate_poisson(spec);
}

}  // namespace lemix
