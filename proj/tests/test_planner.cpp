#include <doctest.h>

#include <random>

#include "lemix/planner.hpp"
#include "oracle.hpp"

using namespace lemix;

namespace {

NodeConfig uniform_node(int stages, double eta_f, double eta_b) {
  NodeConfig n;
  StageProfile p;
  p.eta_f = eta_f;
  p.eta_b = eta_b;
  n.stages.assign(static_cast<std::size_t>(stages), p);
  return n;
}

// Plans and commits `item` the way the scheduler does.
ExecPath place(TraceQueues& q, const NodeConfig& node, const PlanItem& item) {
  PlanResult r = compute_idleness(q, node, item);
  ExecPath path = r.path;
  if (item.kind == TaskKind::kTraining) path = plan_backward(item, path, node, q);
  commit_plan(q, item, path, r.executed_training);
  return path;
}

std::vector<ExecPath> pending_paths(const TraceQueues& q) {
  std::vector<ExecPath> v;
  for (const auto& e : q.train) v.push_back(e.path);
  return v;
}

std::optional<ExecPath> last_path(const TraceQueues& q) {
  if (!q.last) return std::nullopt;
  return q.last->path;
}

struct RandomQueue {
  NodeConfig node;
  TraceQueues queues;
  Seconds clock = 0.0;
};

RandomQueue random_queue(std::mt19937_64& rng, int max_tasks, int max_stages) {
  std::uniform_int_distribution<int> stages(1, max_stages), count(0, max_tasks - 1), len(1, 40), bat(1, 3);
  std::uniform_real_distribution<double> eta(1e-4, 1e-3), gap(0.0, 0.3), coin(0.0, 1.0);
  RandomQueue rq;
  const int s = stages(rng);
  for (int i = 0; i < s; ++i) {
    StageProfile p;
    p.eta_f = eta(rng);
    p.eta_b = eta(rng);
    rq.node.stages.push_back(p);
  }
  const int n = count(rng);
  for (int i = 0; i < n; ++i) {
    PlanItem it{i, coin(rng) < 0.5 ? TaskKind::kTraining : TaskKind::kInference, rq.clock, len(rng), bat(rng)};
    place(rq.queues, rq.node, it);
    rq.clock += gap(rng);
  }
  return rq;
}

}  // namespace

TEST_CASE("empty node: no idleness, response is the forward chain") {
  const NodeConfig node = uniform_node(2, 1e-4, 1e-4);
  const PlanResult r = compute_idleness({}, node, {0, TaskKind::kInference, 0.0, 100, 1});
  CHECK(r.idleness == 0.0);
  CHECK(r.response == doctest::Approx(2.0));
  CHECK(r.path.forward[1].start == doctest::Approx(1.0));
}

TEST_CASE("a forward that collides with a pending backward waits and the backward fills the gap") {
  // One stage; forward of the new item takes 1 s, the queued backward 2 s.
  const NodeConfig node = uniform_node(1, 1e-4, 2e-4);
  TraceQueues q;
  const PlanItem train{1, TaskKind::kTraining, 4.0, 100, 1};
  ExecPath p;
  p.forward = {{4.0, 5.0}};
  p.backward = {{5.0, 7.0}};
  commit_plan(q, train, p);

  const PlanResult r = compute_idleness(q, node, {2, TaskKind::kInference, 5.0, 100, 1});
  CHECK(r.path.forward[0].start == doctest::Approx(7.0));
  CHECK(r.raw_idleness == doctest::Approx(0.0));
  CHECK(r.idleness == doctest::Approx(0.0));
  CHECK(r.response == doctest::Approx(3.0));
}

TEST_CASE("a forward that fits before a pending backward runs first") {
  const NodeConfig node = uniform_node(1, 1e-4, 2e-4);
  TraceQueues q;
  ExecPath p;
  p.forward = {{0.0, 1.0}};
  p.backward = {{5.0, 7.0}};
  commit_plan(q, {1, TaskKind::kTraining, 0.0, 100, 1}, p);
  const PlanResult r = compute_idleness(q, node, {2, TaskKind::kInference, 2.0, 100, 1});
  CHECK(r.path.forward[0].start == doctest::Approx(2.0));
  CHECK(r.idleness == doctest::Approx(1.0));
}

TEST_CASE("training whose backward finished before the arrival is reported as executed") {
  const NodeConfig node = uniform_node(1, 1e-4, 1e-4);
  TraceQueues q;
  place(q, node, {1, TaskKind::kTraining, 0.0, 100, 1});
  REQUIRE(q.train.size() == 1);
  const PlanResult r = compute_idleness(q, node, {2, TaskKind::kInference, 10.0, 100, 1});
  REQUIRE(r.executed_training.size() == 1);
  CHECK(r.executed_training[0] == 1);
  commit_plan(q, {2, TaskKind::kInference, 10.0, 100, 1}, r.path, r.executed_training);
  CHECK(q.train.empty());
  CHECK(q.last->item.id == 2);
}

TEST_CASE("planner agrees with the reference planner on random queues") {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> len(1, 40), bat(1, 3);
  std::uniform_real_distribution<double> gap(0.0, 0.3), coin(0.0, 1.0);
  int contended = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    RandomQueue rq = random_queue(rng, 6, 3);
    const PlanItem item{99, coin(rng) < 0.5 ? TaskKind::kTraining : TaskKind::kInference, rq.clock + gap(rng),
                        len(rng), bat(rng)};
    const PlanResult got = compute_idleness(rq.queues, rq.node, item);
    const auto want = oracle::plan_forward(pending_paths(rq.queues), last_path(rq.queues), rq.node, item);
    CHECK(oracle::near(got.raw_idleness, want.raw_idleness));
    CHECK(oracle::near(got.response, want.response));
    CHECK(got.idleness == doctest::Approx(std::max(0.0, want.raw_idleness)));
    for (std::size_t s = 0; s < want.forward.size(); ++s) {
      CHECK(oracle::near(got.path.forward[s].start, want.forward[s].start));
      CHECK(oracle::near(got.path.forward[s].end, want.forward[s].end));
    }
    contended += got.raw_idleness != 0.0;
  }
  CHECK(contended > 200);
}

TEST_CASE("compute_idleness is pure") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    RandomQueue rq = random_queue(rng, 6, 3);
    const TraceQueues before = rq.queues;
    const PlanItem item{50, TaskKind::kInference, rq.clock, 20, 1};
    const PlanResult a = compute_idleness(rq.queues, rq.node, item);
    const PlanResult b = compute_idleness(rq.queues, rq.node, item);
    CHECK(a.path == b.path);
    CHECK(a.raw_idleness == b.raw_idleness);
    CHECK(a.response == b.response);
    REQUIRE(before.train.size() == rq.queues.train.size());
    for (std::size_t i = 0; i < before.train.size(); ++i) CHECK(before.train[i].path == rq.queues.train[i].path);
  }
}

TEST_CASE("appending a pending backward never shortens the response") {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> len(1, 40);
  for (int trial = 0; trial < 1000; ++trial) {
    RandomQueue rq = random_queue(rng, 6, 3);
    const PlanItem item{50, TaskKind::kInference, rq.clock, len(rng), 1};
    const Seconds base = compute_idleness(rq.queues, rq.node, item).response;

    // A further training item planned behind everything already queued.
    TraceQueues more = rq.queues;
    const PlanItem extra{60, TaskKind::kTraining, rq.clock, len(rng), 1};
    PlanResult fwd = compute_idleness(more, rq.node, extra);
    ExecPath path = plan_backward(extra, fwd.path, rq.node, more);
    more.train.push_back({extra, path});
    CHECK(compute_idleness(more, rq.node, item).response >= base - 1e-12);
  }
}

TEST_CASE("backward planning") {
  SUBCASE("single stage") {
    const NodeConfig node = uniform_node(1, 1e-4, 0.5e-4);
    ExecPath f;
    f.forward = {{2.0, 3.0}};
    const ExecPath p = plan_backward({1, TaskKind::kTraining, 2.0, 100, 1}, f, node, {});
    CHECK(p.backward[0].start == doctest::Approx(3.0));
    CHECK(p.backward[0].end == doctest::Approx(3.5));
  }
  SUBCASE("two symmetric stages chain from the last forward") {
    const NodeConfig node = uniform_node(2, 1e-4, 1e-4);
    const PlanItem item{1, TaskKind::kTraining, 0.0, 100, 1};
    const PlanResult r = compute_idleness({}, node, item);
    const ExecPath p = plan_backward(item, r.path, node, {});
    CHECK(p.backward[0].end == doctest::Approx(r.path.forward[1].end + 2.0));
    CHECK(p.backward[1].start == doctest::Approx(r.path.forward[1].end));
  }
  SUBCASE("inference items have no backward") {
    const NodeConfig node = uniform_node(1, 1e-4, 1e-4);
    ExecPath f;
    f.forward = {{0.0, 1.0}};
    CHECK_THROWS_AS(plan_backward({1, TaskKind::kInference, 0.0, 100, 1}, f, node, {}), ContractViolation);
  }
}

TEST_CASE("backwards of queued training items never overlap on a stage") {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> len(1, 40);
  std::uniform_real_distribution<double> gap(0.0, 0.3);
  for (int trial = 0; trial < 500; ++trial) {
    RandomQueue rq;
    rq.node = uniform_node(1 + trial % 3, 3e-4, 5e-4);
    Seconds t = 0.0;
    std::vector<ExecPath> paths;
    for (int i = 0; i < 6; ++i) {
      paths.push_back(place(rq.queues, rq.node, {i, TaskKind::kTraining, t, len(rng), 1}));
      t += gap(rng);
    }
    for (std::size_t s = 0; s < rq.node.stages.size(); ++s)
      for (std::size_t a = 0; a < paths.size(); ++a)
        for (std::size_t b = a + 1; b < paths.size(); ++b) {
          const auto& x = paths[a].backward[s];
          const auto& y = paths[b].backward[s];
          CHECK((x.end <= y.start + 1e-12 || y.end <= x.start + 1e-12));
        }
  }
}

TEST_CASE("calibration") {
  const NodeConfig node = uniform_node(2, 1e-4, 1e-4);
  TraceQueues q;
  const PlanItem a{1, TaskKind::kTraining, 0.0, 100, 1};
  const ExecPath planned = place(q, node, a);

  SUBCASE("measured equals planned leaves the queue unchanged") {
    calibrate(q, 1, 0, planned.forward[0].start, planned.forward[0].end, Pass::kForward);
    CHECK(q.train.front().path == planned);
  }
  SUBCASE("a late stage pushes every dependent span") {
    calibrate(q, 1, 0, planned.forward[0].start, planned.forward[0].end + 1.0, Pass::kForward);
    const ExecPath& p = q.train.front().path;
    CHECK(p.forward[1].start >= planned.forward[1].start + 1.0 - 1e-12);
    CHECK(p.backward[1].start >= planned.backward[1].start + 1.0 - 1e-12);
    CHECK(p.backward[0].start >= planned.backward[0].start + 1.0 - 1e-12);
    CHECK(q.last->path == p);
  }
  SUBCASE("finishing the last backward retires the item") {
    const PlanItem b{2, TaskKind::kTraining, 0.5, 100, 1};
    place(q, node, b);
    REQUIRE(q.train.size() == 2);
    const ExecPath p1 = q.train[0].path;
    calibrate(q, 1, 1, p1.backward[1].start, p1.backward[1].end, Pass::kBackward);
    CHECK(q.train.size() == 2);
    calibrate(q, 1, 0, p1.backward[0].start, p1.backward[0].end, Pass::kBackward);
    REQUIRE(q.train.size() == 1);
    CHECK(q.train[0].item.id == 2);
    CHECK_FALSE(q.contains(1));
  }
  SUBCASE("finishing the last forward retires an inference item") {
    const PlanItem c{3, TaskKind::kInference, 0.5, 100, 1};
    const ExecPath p = place(q, node, c);
    CHECK(q.inference.size() == 1);
    calibrate(q, 3, 1, p.forward[1].start, p.forward[1].end, Pass::kForward);
    CHECK(q.inference.empty());
    CHECK(q.last->item.id == 3);
  }
  SUBCASE("unknown items are rejected") {
    CHECK_THROWS_AS(calibrate(q, 42, 0, 0.0, 1.0, Pass::kForward), std::out_of_range);
  }
}

TEST_CASE("latest forward end") {
  const NodeConfig node = uniform_node(2, 1e-4, 1e-4);
  TraceQueues q;
  CHECK_FALSE(latest_forward_end(q).has_value());
  place(q, node, {1, TaskKind::kInference, 0.0, 100, 1});
  CHECK(*latest_forward_end(q) == doctest::Approx(2.0));
}
