#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "lemix/allocator.hpp"

using namespace lemix;

namespace {

NodeConfig single_stage(double eta_f, double eta_b) {
  NodeConfig n;
  StageProfile p;
  p.eta_f = eta_f;
  p.eta_b = eta_b;
  n.stages = {p};
  return n;
}

struct Fixture {
  std::vector<NodeConfig> configs;
  std::vector<TraceQueues> queues;
  std::vector<NodeHistory> histories;

  explicit Fixture(int n, const NodeConfig& c) : configs(n, c), queues(n), histories(n) {}

  std::vector<NodeView> views() const {
    std::vector<NodeView> v;
    for (std::size_t i = 0; i < configs.size(); ++i) v.push_back({&configs[i], &queues[i], &histories[i], 0.0});
    return v;
  }
};

double density(double x, double mu, double sigma) {
  return std::exp(-(x - mu) * (x - mu) / (2 * sigma * sigma)) / (sigma * std::sqrt(2 * std::numbers::pi));
}

}  // namespace

TEST_CASE("idleness profit") {
  CHECK(idleness_profit(0.0, 2, 2.0, 0.0) == 0.0);
  CHECK(idleness_profit(10.0, 2, 0.0, 1.0) == doctest::Approx(-5.0));
  CHECK(idleness_profit(1.0, 2, 0.0, 1.0) == doctest::Approx(-1.0));
}

TEST_CASE("idleness profit never exceeds minus tau") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int i = 0; i < 2000; ++i) {
    const double tau = u(rng) / 10;
    CHECK(idleness_profit(u(rng), 1 + i % 4, u(rng), tau) <= -tau);
  }
}

TEST_CASE("length consistency") {
  NodeHistory h;
  h.record(90, 0.0);
  h.record(110, 1.0);
  CHECK(h.mean() == doctest::Approx(100.0));
  CHECK(h.stddev() == doctest::Approx(10.0));
  CHECK(length_consistency(100, h, 1.0, 0.0) == doctest::Approx(1.0 / (10.0 * std::sqrt(2 * std::numbers::pi))).scale(0));
  CHECK(length_consistency(100, h, 1.0, 0.0) == doctest::Approx(0.03989).epsilon(1e-3).scale(0));
  CHECK(length_consistency(110, h, 1.0, 0.0) == doctest::Approx(density(110, 100, 10)).scale(0));
  CHECK(length_consistency(110, h, 1.0, 0.0) == doctest::Approx(0.02420).epsilon(1e-3).scale(0));

  NodeHistory empty;
  CHECK(length_consistency(50, empty, 1.0, 0.25) == 0.25);
  NodeHistory one;
  one.record(50, 0.0);
  CHECK(length_consistency(50, one, 1.0, 0.25) == 0.25);

  NodeHistory flat;
  flat.record(40, 0.0);
  flat.record(40, 1.0);
  CHECK(length_consistency(40, flat, 1.0, 0.0) == doctest::Approx(density(40, 40, 1.0)).scale(0));
}

TEST_CASE("length consistency peaks at the mean and falls off with distance") {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> len(1, 400);
  for (int trial = 0; trial < 200; ++trial) {
    NodeHistory h;
    for (int i = 0; i < 5; ++i) h.record(len(rng), i);
    const int mu = static_cast<int>(std::lround(h.mean()));
    double prev = length_consistency(mu, h, 1.0, 0.0);
    for (int d = 1; d < 50; ++d) {
      const double cur = length_consistency(mu + d, h, 1.0, 0.0);
      CHECK(cur <= prev);
      prev = cur;
    }
  }
}

TEST_CASE("priority score") {
  SchedulerParams p;
  p.lambda2 = 2.0;
  CHECK(priority_score(-1.0, 0.5, 2.0, p) == doctest::Approx(0.0));
  p.lambda1 = 2.0;
  p.lambda2 = 1.0;
  CHECK(priority_score(-3.0, 0.0, 1.5, p) == doctest::Approx(-1.0));
  CHECK_THROWS_AS(priority_score(0.0, 0.0, 0.0, p), ContractViolation);
}

TEST_CASE("identical empty nodes choose node 0") {
  Fixture fx(4, single_stage(1e-4, 1e-4));
  Allocator a(SchedulerParams{});
  const auto d = a.allocate({0, TaskKind::kInference, 0.0, 100, 1}, fx.views(), {});
  CHECK(d.node_id == 0);
  CHECK(d.response == doctest::Approx(1.0));
}

TEST_CASE("a node whose pending backward delays the task loses to an idle node") {
  Fixture fx(2, single_stage(1e-4, 2e-4));
  // Node 0: a training item ran its forward over [0, 1] and has a 2 s
  // backward planned at [1.5, 3.5]; it was placed 0.1 s before the new task.
  ExecPath p;
  p.forward = {{0.0, 1.0}};
  p.backward = {{1.5, 3.5}};
  commit_plan(fx.queues[0], {1, TaskKind::kTraining, 0.0, 100, 1}, p);
  fx.histories[0].record(100, 1.1);

  const PlanItem item{2, TaskKind::kInference, 1.2, 100, 1};
  // Hand scoring. Node 0: the forward [1.2, 2.2] collides with the backward,
  // moves to [3.5, 4.5]; II = (3.5 - 1) - 2 = 0.5, gap = 0.1,
  // IP = -(0.5 - 0.1) = -0.4, R = 3.3, f = -0.4 / 3.3. Node 1: II = 0, no
  // history, f = 0.
  const double f0 = -0.4 / 3.3;
  Allocator a(SchedulerParams{});
  const auto d = a.allocate(item, fx.views(), {});
  CHECK(d.node_id == 1);
  CHECK(d.score == doctest::Approx(0.0));
  const PlanResult r0 = compute_idleness(fx.queues[0], fx.configs[0], item);
  CHECK(r0.idleness == doctest::Approx(0.5));
  CHECK(priority_score(idleness_profit(r0.idleness, 1, 0.1, 0.0), 0.0, r0.response, SchedulerParams{}) ==
        doctest::Approx(f0));
}

TEST_CASE("scaling lambda1 keeps the chosen node") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> len(10, 60);
  std::uniform_real_distribution<double> gap(0.0, 0.2), coin(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    Fixture fx(3, single_stage(2e-4, 3e-4));
    SchedulerParams base;
    Allocator placer(base);
    Seconds t = 0.0;
    for (int i = 0; i < 8; ++i) {
      const PlanItem it{i, coin(rng) < 0.5 ? TaskKind::kTraining : TaskKind::kInference, t, len(rng), 1};
      const auto d = placer.allocate(it, fx.views(), {});
      ExecPath path = d.plan.path;
      auto& q = fx.queues[static_cast<std::size_t>(d.node_id)];
      if (it.kind == TaskKind::kTraining) path = plan_backward(it, path, fx.configs[0], q);
      commit_plan(q, it, path, d.plan.executed_training);
      fx.histories[static_cast<std::size_t>(d.node_id)].record(it.length, t);
      t += gap(rng);
    }
    const PlanItem probe{100, TaskKind::kInference, t, len(rng), 1};
    const auto ref = Allocator(base).allocate(probe, fx.views(), {});
    for (double c : {0.1, 3.0, 250.0}) {
      SchedulerParams scaled = base;
      scaled.lambda1 = c;
      const auto d = Allocator(scaled).allocate(probe, fx.views(), {});
      CHECK(d.node_id == ref.node_id);
      CHECK(d.score == doctest::Approx(ref.score / c));
    }
  }
}

TEST_CASE("deprioritization test") {
  Fixture fx(2, single_stage(1e-4, 1e-4));
  const PlanItem next{7, TaskKind::kInference, 0.0, 100, 1};
  CHECK_FALSE(should_deprioritize(next, 5.0, fx.views()));
  CHECK_FALSE(should_deprioritize(std::nullopt, 5.0, fx.views()));

  for (auto& q : fx.queues) {
    ExecPath p;
    p.forward = {{9.0, 10.0}};
    commit_plan(q, {1, TaskKind::kInference, 0.0, 100, 1}, p);
  }
  CHECK(should_deprioritize(next, 5.0, fx.views()));
}

TEST_CASE("deprioritization agrees with an exhaustive evaluation") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> t(0.0, 5.0), budget(0.1, 4.0);
  std::uniform_int_distribution<int> len(10, 200);
  for (int trial = 0; trial < 500; ++trial) {
    NodeConfig cfg;
    StageProfile s;
    s.eta_f = 1e-5;
    cfg.stages = {s, s};
    Fixture fx(3, cfg);
    for (auto& q : fx.queues)
      for (int k = 0; k < 3; ++k) {
        const double a = t(rng);
        ExecPath p;
        p.forward = {{a, a + 0.1}, {a + 0.1, a + 0.2 + t(rng) / 10}};
        commit_plan(q, {k, TaskKind::kInference, a, 50, 1}, p);
      }
    const PlanItem next{9, TaskKind::kInference, t(rng), len(rng), 1};
    const double tau = budget(rng);
    bool every_node_late = true;
    for (const auto& q : fx.queues) {
      double latest = next.arrival;
      for (const auto& e : q.inference) latest = std::max(latest, e.path.forward.back().end);
      const double done = latest + s.eta_f * next.length * next.length;
      if (done - next.arrival <= tau) every_node_late = false;
    }
    CHECK(should_deprioritize(next, tau, fx.views()) == every_node_late);
  }
}

TEST_CASE("separate partition sizes") {
  CHECK(separate_training_nodes(4, 0.5) == 2);
  CHECK(separate_training_nodes(4, 0.1) == 1);
  CHECK(separate_training_nodes(4, 0.9) == 3);
  CHECK(separate_training_nodes(4, 0.0) == 0);
  CHECK(separate_training_nodes(4, 1.0) == 4);
  CHECK_THROWS_AS(separate_training_nodes(1, 0.5), ConfigError);
}

TEST_CASE("separate keeps training and inference on disjoint nodes") {
  Allocator a(SchedulerParams{});
  for (int i = 0; i < 20; ++i) {
    CHECK(a.separate_assign({i, TaskKind::kTraining, 0.0, 10, 1}, 4, 2) >= 2);
    CHECK(a.separate_assign({i, TaskKind::kInference, 0.0, 10, 1}, 4, 2) < 2);
  }
}

TEST_CASE("round robin cycles over one global order") {
  SchedulerParams p;
  p.policy = Policy::kRoundRobin;
  Allocator a(p);
  Fixture fx(4, single_stage(1e-4, 1e-4));
  std::vector<int> got;
  for (int i = 0; i < 6; ++i) {
    const auto kind = i % 2 ? TaskKind::kTraining : TaskKind::kInference;
    got.push_back(a.allocate({i, kind, 0.0, 10, 1}, fx.views(), {}).node_id);
  }
  CHECK(got == std::vector<int>{0, 1, 2, 3, 0, 1});
}

TEST_CASE("least utilized first") {
  const std::vector<double> u = {0.9, 0.1, 0.5, 0.5};
  CHECK(Allocator::luf_assign(u) == 1);
  const std::vector<double> flat = {0.3, 0.3, 0.3};
  CHECK(Allocator::luf_assign(flat) == 0);

  SchedulerParams p;
  p.policy = Policy::kLUF;
  Allocator a(p);
  Fixture fx(2, single_stage(1e-4, 1e-4));
  const auto d = a.allocate({0, TaskKind::kInference, 1.0, 100, 1}, fx.views(), {});
  CHECK(d.charged_latency == doctest::Approx(0.076).scale(0));
  CHECK(d.plan.path.forward[0].start == doctest::Approx(1.076));
}

TEST_CASE("dynamic separate switches partitions with the observed rate") {
  SchedulerParams p;
  p.policy = Policy::kSeparateDynamic;
  Allocator a(p);
  Fixture fx(4, single_stage(1e-4, 1e-4));
  // Light traffic: one inference node.
  for (int i = 0; i < 4; ++i)
    CHECK(a.allocate({i, TaskKind::kInference, 0.0, 10, 1}, fx.views(), {0.0, 10.0}).node_id == 0);
  // Heavy traffic: two inference nodes.
  std::set<int> seen;
  for (int i = 0; i < 4; ++i) seen.insert(a.allocate({i, TaskKind::kInference, 0.0, 10, 1}, fx.views(), {0.0, 80.0}).node_id);
  CHECK(seen == std::set<int>{0, 1});
}

TEST_CASE("scheduler parameter validation") {
  SchedulerParams p;
  p.lambda1 = 0.0;
  CHECK_THROWS_AS(Allocator{p}, ConfigError);
  p = {};
  p.max_batch = 0;
  CHECK_THROWS_AS(Allocator{p}, ConfigError);
  CHECK_THROWS_AS(policy_from_string("fastest"), ConfigError);
  CHECK(policy_from_string("naivemix") == Policy::kRoundRobin);
  CHECK(policy_from_string("mix-luf") == Policy::kLUF);
}
