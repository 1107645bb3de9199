#include <doctest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "marvel/gat_policy.hpp"
#include "marvel/io.hpp"
#include "marvel/sim.hpp"
#include "test_util.hpp"

using namespace marvel;
using marvel::testing::make_graph;
using marvel::testing::scenario_for;

namespace {

// Always takes the lowest-id candidate.
class FirstEdge : public Policy {
 public:
  EdgeId choose(const DecisionContext& ctx, Rng&) const override { return ctx.candidates.front(); }
  std::string name() const override { return "first"; }
};

class GiveUp : public Policy {
 public:
  EdgeId choose(const DecisionContext&, Rng&) const override { return kNoEdge; }
  std::string name() const override { return "give_up"; }
};

EpisodeState fresh_state(const ScenarioConfig& sc) {
  EpisodeState s;
  s.belief = BeliefState::initial(*sc.graph);
  for (const auto& a : sc.agents) s.belief.agents.push_back(AgentPosition{a.origin, 0.0, AgentStatus::Active});
  s.transit.resize(sc.agents.size());
  s.step_count.assign(sc.agents.size(), 0);
  for (const auto& a : sc.agents) s.paths.push_back({a.origin});
  return s;
}

}  // namespace

TEST_CASE("truncated sampling respects the floor") {
  const EdgeAttr e{0, 0, 1, 2.0, 2.0, 1.0, true};
  Rng rng(1);
  double sum = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = sample_edge_cost(e, rng, true);
    CHECK(x >= 1.0);
    sum += x;
  }
  CHECK(sum / n > 2.0);  // the floor shifts the mean upward
  bool below = false;
  for (int i = 0; i < 2000 && !below; ++i) below = sample_edge_cost(e, rng, false) < 1.0;
  CHECK(below);
  const EdgeAttr fixed{0, 0, 1, 3.0, 0.0, 1.0, true};
  CHECK(sample_edge_cost(fixed, rng) == 3.0);
}

TEST_CASE("truncated normal mean closed form") {
  CHECK(truncated_normal_mean(0.0, 1.0, 0.0) == doctest::Approx(std::sqrt(2.0 / std::acos(-1.0))));
  CHECK(truncated_normal_mean(5.0, 1.0, -1e9) == doctest::Approx(5.0));
  CHECK(truncated_normal_mean(4.0, 0.0, 2.0) == 4.0);
  // mu = 10, sigma = 2.5, floor 5 is 2 sigma below: lambda(-2) = phi(2) / Phi(2)
  const double a = -2.0;
  const double phi = std::exp(-0.5 * a * a) / std::sqrt(2.0 * std::acos(-1.0));
  CHECK(truncated_normal_mean(10.0, 2.5, 5.0) == doctest::Approx(10.0 + 2.5 * phi / (1.0 - normal_cdf(a))));
}

TEST_CASE("ground truth opens edges with probability p") {
  const auto g = make_graph(2, {{0, 1, 1, 0.1, 0.3}, {1, 0, 1, 0.1}});
  Rng rng(2);
  int open = 0;
  for (int i = 0; i < 20000; ++i) {
    const auto t = sample_ground_truth(g, rng);
    open += t.is_open(0);
    CHECK(t.is_open(1));
  }
  CHECK(open / 20000.0 == doctest::Approx(0.3).epsilon(0.05));
  CHECK_FALSE(fixed_ground_truth(g, false).is_open(0));
  CHECK(fixed_ground_truth(g, false).is_open(1));
}

TEST_CASE("step accounting and revelation at the head") {
  // 0 -> 1 -> 2 with 1 -> 2 uncertain (p 0.5), plus 1 -> 3 -> 2 detour
  auto g = std::make_shared<const UncertainGraph>(
      make_graph(4, {{0, 1, 2, 0.5}, {1, 2, 2, 0.5, 0.5}, {1, 3, 3, 0.5}, {3, 2, 3, 0.5}}));
  const auto sc = scenario_for(g, {AgentSpec{0, 0, 2, 7.0, 1.0}});
  auto s = fresh_state(sc);
  const auto truth = fixed_ground_truth(*g, false);
  step(s, sc, 0, 0, truth, 2.5);
  CHECK(s.belief.agents[0].node == 1);
  CHECK(s.belief.agents[0].spent == 2.5);
  CHECK(s.belief.status(1) == EdgeStatus::Blocked);
  REQUIRE(s.steps.size() == 1);
  CHECK(s.steps[0].revealed == std::vector<EdgeId>{1});
  CHECK(s.steps[0].delta_h == doctest::Approx(std::log(2.0)));
  CHECK(s.steps[0].arrive_time == 2.5);
  CHECK_THROWS_AS(step(s, sc, 0, 1, truth, 1.0), InvariantError);  // blocked
  CHECK_THROWS_AS(step(s, sc, 0, 3, truth, 1.0), InvariantError);  // does not leave node 1
  CHECK_THROWS_AS(step(s, sc, 0, 2, truth, std::nan("")), InvariantError);
  step(s, sc, 0, 2, truth, 3.0);
  step(s, sc, 0, 3, truth, 1.4);
  CHECK(s.belief.agents[0].status == AgentStatus::Arrived);
  CHECK(s.belief.agents[0].spent == doctest::Approx(6.9));
  CHECK(s.paths[0] == std::vector<NodeId>{0, 1, 3, 2});
  CHECK_THROWS_AS(step(s, sc, 0, 0, truth, 1.0), InvariantError);  // no longer active
}

TEST_CASE("late arrival and failure by deadline") {
  auto g = std::make_shared<const UncertainGraph>(make_graph(3, {{0, 1, 2, 0.5}, {1, 2, 2, 0.5}, {1, 0, 2, 0.5}}));
  const auto sc = scenario_for(g, {AgentSpec{0, 0, 2, 3.0, 1.0}});
  const auto truth = fixed_ground_truth(*g, true);
  auto s = fresh_state(sc);
  step(s, sc, 0, 0, truth, 3.0);  // spent == T at a non-destination
  CHECK(s.belief.agents[0].status == AgentStatus::FailedLate);

  // arrival exactly at T counts as on time
  const auto sc2 = scenario_for(g, {AgentSpec{0, 0, 2, 4.0, 1.0}});
  auto s2 = fresh_state(sc2);
  step(s2, sc2, 0, 0, truth, 2.0);
  step(s2, sc2, 0, 1, truth, 2.0);
  CHECK(s2.belief.agents[0].status == AgentStatus::Arrived);
}

TEST_CASE("episode outcome: on-time flags, team score, cost accounting") {
  auto g = std::make_shared<const UncertainGraph>(make_figure1());
  const auto sc = figure1_scenario(0.3, 0.7, 3);
  const auto let = let_baseline_policy(g);
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const auto out = run_episode(*let, sc, seed);
    double team = 0.0;
    for (std::size_t i = 0; i < out.agents.size(); ++i) {
      const auto& a = out.agents[i];
      double spent = 0.0;
      for (const auto& st : out.steps)
        if (st.agent == i) spent += st.cost;
      CHECK(a.spent == doctest::Approx(spent).epsilon(1e-12));
      CHECK(a.on_time == (a.status == AgentStatus::Arrived && a.spent <= sc.agents[i].budget));
      CHECK(a.path.front() == sc.agents[i].origin);
      if (a.status == AgentStatus::Arrived) CHECK(a.path.back() == sc.agents[i].destination);
      if (a.on_time) team += sc.agents[i].weight;
    }
    CHECK(out.team_score == doctest::Approx(team));
    for (const auto& st : out.steps) {
      CHECK(st.completed);
      CHECK(st.cost >= 0.5 * g->edge(st.edge).mu);
      CHECK(st.arrive_time == doctest::Approx(st.depart_time + st.cost));
    }
  }
}

TEST_CASE("robot A under LET always routes 9-10-11-12") {
  const auto sc = figure1_scenario(0.3, 0.7);
  const auto let = let_baseline_policy(sc.graph);
  const auto& g = *sc.graph;
  const std::vector<NodeId> expect{g.node_of(9), g.node_of(10), g.node_of(11), g.node_of(12)};
  for (std::uint64_t seed = 1; seed <= 30; ++seed) CHECK(run_episode(*let, sc, seed).agents[0].path == expect);
}

TEST_CASE("agent cost streams are independent of other agents") {
  // certain graph, so no shared information between agents
  auto g = std::make_shared<const UncertainGraph>(
      make_graph(4, {{0, 1, 2, 0.8}, {1, 2, 2, 0.8}, {2, 3, 2, 0.8}, {3, 0, 2, 0.8}, {0, 2, 5, 1.0}}));
  const auto let = let_baseline_policy(g);
  const auto solo = scenario_for(g, {AgentSpec{0, 0, 3, 8.0, 1.0}});
  const auto pair = scenario_for(g, {AgentSpec{0, 0, 3, 8.0, 0.5}, AgentSpec{1, 1, 0, 10.0, 0.5}});
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto a = run_episode(*let, solo, seed);
    const auto b = run_episode(*let, pair, seed);
    CHECK(a.agents[0].spent == b.agents[0].spent);
    CHECK(a.agents[0].path == b.agents[0].path);
  }
}

TEST_CASE("revelations are shared by the team") {
  // Agent 0 reaches node 1 first (cost 1) and reveals 1 -> 3 is closed.
  // Agent 1 reaches node 1 at time 4 and must not see 1 -> 3 as a candidate.
  auto g = std::make_shared<const UncertainGraph>(make_graph(
      5, {{0, 1, 1, 0.0}, {2, 1, 4, 0.0}, {1, 3, 1, 0.0, 0.5}, {1, 4, 1, 0.0}, {4, 3, 1, 0.0}, {3, 0, 1, 0.0}}));
  const auto sc = scenario_for(g, {AgentSpec{0, 0, 4, 10.0, 0.5}, AgentSpec{1, 2, 3, 10.0, 0.5}});
  Episode ep(sc, fixed_ground_truth(*g, false), 1);
  std::vector<std::pair<std::size_t, std::vector<EdgeId>>> seen;
  while (auto ev = ep.advance()) {
    if (ev->kind != Episode::EventKind::Decision) continue;
    const auto c = ep.candidates(ev->agent);
    seen.emplace_back(ev->agent, c);
    ep.depart(ev->agent, c.back());
  }
  const auto out = ep.outcome();
  CHECK(out.explored == std::vector<EdgeId>{2});
  CHECK(out.agents[1].path == std::vector<NodeId>{2, 1, 4, 3});
  for (const auto& [agent, c] : seen) CHECK(std::find(c.begin(), c.end(), 2) == c.end());
}

TEST_CASE("event order: arrivals before decisions, lower index first") {
  // deterministic costs: both agents arrive at time 2
  auto g = std::make_shared<const UncertainGraph>(
      make_graph(4, {{0, 1, 2, 0.0}, {2, 1, 2, 0.0}, {1, 3, 1, 0.0}, {3, 0, 1, 0.0}}));
  const auto sc = scenario_for(g, {AgentSpec{0, 2, 3, 10.0, 0.5}, AgentSpec{1, 0, 3, 10.0, 0.5}});
  Episode ep(sc, fixed_ground_truth(*g, true), 1);
  std::vector<std::tuple<Episode::EventKind, std::size_t, double>> events;
  while (auto ev = ep.advance()) {
    events.emplace_back(ev->kind, ev->agent, ev->time);
    if (ev->kind == Episode::EventKind::Decision) ep.depart(ev->agent, ep.candidates(ev->agent).front());
  }
  using K = Episode::EventKind;
  const std::vector<std::tuple<K, std::size_t, double>> expect{
      {K::Decision, 0, 0.0}, {K::Decision, 1, 0.0}, {K::Arrival, 0, 2.0}, {K::Arrival, 1, 2.0},
      {K::Decision, 0, 2.0}, {K::Decision, 1, 2.0}, {K::Arrival, 0, 3.0}, {K::Arrival, 1, 3.0}};
  CHECK(events == expect);
}

TEST_CASE("a pending decision blocks advance") {
  const auto sc = figure1_scenario(0.3, 0.7);
  Episode ep(sc, fixed_ground_truth(*sc.graph, true), 1);
  auto ev = ep.advance();
  REQUIRE(ev);
  CHECK_THROWS_AS(ep.advance(), InvariantError);
  CHECK_THROWS_AS(ep.depart(ev->agent, 9999), InvariantError);
}

TEST_CASE("dead ends and giving up are reported as stuck") {
  auto g = std::make_shared<const UncertainGraph>(make_graph(3, {{0, 1, 1, 0.0, 0.5}, {0, 2, 1, 0.0}, {2, 0, 1, 0.0}}));
  const auto sc = scenario_for(g, {AgentSpec{0, 0, 1, 5.0, 1.0}});
  const auto out = run_episode(FirstEdge{}, sc, fixed_ground_truth(*g, false), 1);
  // 0 -> 1 revealed closed at the origin; bouncing 0 <-> 2 until the deadline
  CHECK(out.agents[0].status == AgentStatus::FailedLate);

  auto g2 = std::make_shared<const UncertainGraph>(make_graph(3, {{0, 1, 1, 0.0}, {0, 2, 1, 0.0}, {1, 0, 1, 0.0}}));
  const auto sc2 = scenario_for(g2, {AgentSpec{0, 0, 1, 5.0, 1.0}});
  CHECK(run_episode(GiveUp{}, sc2, 1).agents[0].status == AgentStatus::FailedStuck);

  // node 2 has no exit
  auto g3 = std::make_shared<const UncertainGraph>(make_graph(3, {{0, 2, 1, 0.0}, {0, 1, 5, 0.0}}));
  const auto sc3 = scenario_for(g3, {AgentSpec{0, 0, 1, 50.0, 1.0}});
  CHECK(run_episode(FirstEdge{}, sc3, 1).agents[0].status == AgentStatus::FailedStuck);
}

TEST_CASE("step cap stops endless wandering") {
  auto g = std::make_shared<const UncertainGraph>(make_graph(3, {{0, 2, 1, 0.0}, {2, 0, 1, 0.0}, {1, 0, 1, 0.0}}));
  auto sc = scenario_for(g, {AgentSpec{0, 0, 1, 1e9, 1.0}});
  const auto out = run_episode(FirstEdge{}, sc, 1);
  CHECK(out.agents[0].status == AgentStatus::FailedStuck);
  CHECK(out.agents[0].steps == sc.step_cap());
  CHECK(sc.step_cap() == 4 * 3 + 16);
}

TEST_CASE("scenario validation") {
  auto g = std::make_shared<const UncertainGraph>(make_graph(2, {{0, 1, 1, 0.1}}));
  CHECK_NOTHROW(scenario_for(g, {AgentSpec{0, 0, 1, 5.0, 1.0}}).validate());
  CHECK_THROWS_AS(scenario_for(g, {AgentSpec{0, 0, 1, 5.0, 0.5}, AgentSpec{1, 0, 1, 5.0, 0.6}}).validate(), InputError);
  CHECK_THROWS_AS(scenario_for(g, {AgentSpec{0, 0, 1, 5.0, 1.0}, AgentSpec{1, 0, 1, 5.0, 0.0}}).validate(), InputError);
  CHECK_THROWS_AS(scenario_for(g, {AgentSpec{0, 0, 1, -1.0, 1.0}}).validate(), InputError);
  CHECK_THROWS_AS(scenario_for(g, {AgentSpec{0, 1, 1, 5.0, 1.0}}).validate(), InputError);
  CHECK_THROWS_AS(scenario_for(g, {}).validate(), InputError);
}

TEST_CASE("entropy accounting along an episode") {
  const auto sc = figure1_scenario(0.3, 0.7);
  ExpertPolicy expert(sc, ExpertConfig{});
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto out = run_episode(expert, sc, seed);
    CHECK(out.total_delta_h == doctest::Approx(out.initial_entropy - out.final_entropy).epsilon(1e-12));
    if (!out.explored.empty()) CHECK(out.final_entropy == 0.0);
  }
}

TEST_CASE("episodes and trajectory dumps are deterministic") {
  const auto sc = figure1_scenario(0.3, 0.7);
  ExpertPolicy expert(sc, ExpertConfig{});
  std::stringstream a, b, c;
  write_trajectory_jsonl(a, *sc.graph, run_episode(expert, sc, 7));
  write_trajectory_jsonl(b, *sc.graph, run_episode(expert, sc, 7));
  write_trajectory_jsonl(c, *sc.graph, run_episode(expert, sc, 8));
  CHECK(a.str() == b.str());
  CHECK(a.str() != c.str());
  std::string line;
  int steps = 0, agents = 0, team = 0;
  while (std::getline(a, line)) {
    const auto j = Json::parse(line);
    const auto type = j.at("type").get<std::string>();
    steps += type == "step";
    agents += type == "agent";
    team += type == "team";
  }
  CHECK(agents == 2);
  CHECK(team == 1);
  CHECK(steps > 0);
}
