#include <doctest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "marvel/eval.hpp"
#include "marvel/io.hpp"
#include "test_util.hpp"

using namespace marvel;
using marvel::testing::make_graph;
using marvel::testing::scenario_for;

namespace {

std::shared_ptr<const UncertainGraph> chain() {
  return std::make_shared<const UncertainGraph>(
      make_graph(4, {{0, 1, 2.0, 0.8}, {1, 2, 2.0, 0.8}, {2, 3, 2.0, 0.8}}));
}

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("on-time frequency matches the normal CDF without truncation") {
  auto sc = scenario_for(chain(), {AgentSpec{0, 0, 3, 6.5, 1.0}});
  sc.truncate = false;
  LetPolicy let(sc.graph);
  const auto r = monte_carlo_sota(let, sc, 10000, 17, 4);
  const double expect = normal_cdf(0.5 / std::sqrt(3 * 0.64));
  const double se = std::sqrt(expect * (1 - expect) / 10000);
  CHECK(std::abs(r.agents[0].on_time - expect) < 3 * se);
  CHECK(r.agents[0].std_err == doctest::Approx(std::sqrt(r.agents[0].on_time * (1 - r.agents[0].on_time) / 10000)));
  // reaching the destination after T counts as arrived but not on time
  CHECK(r.agents[0].arrived + r.agents[0].failed_late + r.agents[0].failed_stuck == doctest::Approx(1.0));
  CHECK(r.agents[0].on_time <= r.agents[0].arrived);
}

TEST_CASE("mean arrival matches the truncated closed form") {
  auto g = std::make_shared<const UncertainGraph>(make_graph(2, {{0, 1, 2.0, 1.5}}));
  const auto sc = scenario_for(g, {AgentSpec{0, 0, 1, 100.0, 1.0}});
  LetPolicy let(g);
  const int n = 10000;
  const auto r = monte_carlo_sota(let, sc, n, 3, 2);
  const double mean = truncated_normal_mean(2.0, 1.5, 1.0);
  // the truncated variance is below sigma^2, so sigma / sqrt(n) is a conservative error bound
  CHECK(std::abs(r.agents[0].mean_arrival - mean) < 3 * 1.5 / std::sqrt(n));
  CHECK(r.agents[0].on_time == 1.0);
}

TEST_CASE("team score is recomputable from the per-trial record") {
  const auto sc = figure1_scenario(0.3, 0.7);
  LetPolicy let(sc.graph);
  const auto r = monte_carlo_sota(let, sc, 500, 5, 3);
  REQUIRE(r.on_time.size() == 500 * 2);
  double team = 0.0;
  for (int t = 0; t < 500; ++t)
    for (std::size_t i = 0; i < 2; ++i) team += sc.agents[i].weight * r.on_time[static_cast<std::size_t>(t) * 2 + i];
  CHECK(r.team == doctest::Approx(team / 500));
  double mix = 0.0;
  for (std::size_t i = 0; i < 2; ++i) mix += sc.agents[i].weight * r.agents[i].on_time;
  CHECK(r.team == doctest::Approx(mix));
  CHECK(r.team_se > 0.0);
  CHECK(r.trials == 500);
  CHECK(r.seed == 5);
}

TEST_CASE("reports do not depend on the thread count") {
  const auto sc = figure1_scenario(0.3, 0.7);
  ExpertPolicy expert(sc, ExpertConfig{});
  const auto a = monte_carlo_sota(expert, sc, 64, 9, 1);
  const auto b = monte_carlo_sota(expert, sc, 64, 9, 5);
  CHECK(a.on_time == b.on_time);
  CHECK(a.team == b.team);
  CHECK(a.agents[1].mean_arrival == b.agents[1].mean_arrival);
  CHECK(trial_seed(9, 3) == derive_seed(9, 3));
  CHECK(trial_seed(9, 3) != trial_seed(9, 4));
}

TEST_CASE("evaluation input errors") {
  const auto sc = figure1_scenario(0.3, 0.7);
  LetPolicy let(sc.graph);
  CHECK_THROWS_AS(monte_carlo_sota(let, sc, 0, 1), InputError);
}

TEST_CASE("random OD pairs") {
  const auto g = std::make_shared<const UncertainGraph>(make_figure1());
  const auto a = random_od_pairs(*g, 6, 4);
  const auto b = random_od_pairs(*g, 6, 4);
  REQUIRE(a.size() == 6);
  double w = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].origin != a[i].destination);
    CHECK(a[i].origin == b[i].origin);
    CHECK(a[i].weight == b[i].weight);
    CHECK(a[i].weight > 0.0);
    CHECK_NOTHROW(least_expected_time(*g, a[i].origin, a[i].destination));
    w += a[i].weight;
  }
  CHECK(w == doctest::Approx(1.0));
}

TEST_CASE("team scenario budgets follow priority") {
  // node 3 only has an out-edge, so nothing reaches it
  auto g = std::make_shared<const UncertainGraph>(
      make_graph(4, {{0, 1, 1.0, 0.1}, {1, 0, 1.0, 0.1}, {1, 2, 2.0, 0.1}, {2, 1, 2.0, 0.1}, {3, 0, 1.0, 0.1}}));
  const std::vector<OdPair> od{{0, 2, 0.5}, {2, 0, 0.3}, {1, 2, 0.15}, {0, 3, 0.05}};
  std::vector<std::string> skipped;
  const auto sc = team_scenario(g, od, 0.95, 1.2, 1, &skipped);
  REQUIRE(sc.agents.size() == 3);
  CHECK(skipped.size() == 1);
  CHECK(sc.agents[0].budget == doctest::Approx(0.95 * 3.0));
  CHECK(sc.agents[1].budget == doctest::Approx(1.2 * 3.0));
  CHECK(sc.agents[2].budget == doctest::Approx(1.2 * 2.0));
  double w = 0.0;
  for (const auto& a : sc.agents) w += a.weight;
  CHECK(w == doctest::Approx(1.0));
}

TEST_CASE("budget battery is monotone under common random numbers") {
  const auto g = std::make_shared<const UncertainGraph>(make_figure1());
  const auto od = random_od_pairs(*g, 4, 2);
  const std::vector<double> mult{0.95, 1.0, 1.05};
  const auto rep = budget_battery([](const ScenarioConfig& s) { return let_baseline_policy(s.graph); }, g, od, mult,
                                  2000, 11, 4);
  REQUIRE(rep.rows.size() == 3);
  CHECK(rep.rows[0].report.team <= rep.rows[1].report.team);
  CHECK(rep.rows[1].report.team <= rep.rows[2].report.team);
  for (const auto& row : rep.rows) {
    CHECK(row.high_priority_mean >= 0.0);
    CHECK(row.high_priority_mean <= 1.0);
  }
  std::ostringstream out;
  write_battery_csv(out, std::span<const BatteryReport>(&rep, 1));
  CHECK(lines(out.str()) == 4);
  CHECK(out.str().find(",tight,") != std::string::npos);
}

TEST_CASE("battery warns about dropped pairs") {
  auto g = std::make_shared<const UncertainGraph>(
      make_graph(3, {{0, 1, 1.0, 0.1}, {1, 0, 1.0, 0.1}, {2, 0, 1.0, 0.1}}));
  const std::vector<OdPair> od{{0, 1, 0.6}, {1, 2, 0.4}};
  const std::vector<double> mult{1.0};
  const auto rep =
      budget_battery([](const ScenarioConfig& s) { return let_baseline_policy(s.graph); }, g, od, mult, 10, 1);
  CHECK_FALSE(rep.warnings.empty());
  CHECK(rep.rows.at(0).report.agents.size() == 1);
}

TEST_CASE("report writers") {
  const auto sc = figure1_scenario(0.3, 0.7);
  LetPolicy let(sc.graph);
  const auto r = monte_carlo_sota(let, sc, 50, 1);
  std::ostringstream csv;
  write_report_csv(csv, sc, r);
  CHECK(lines(csv.str()) == 1 + sc.agents.size() + 1);
  CHECK(csv.str().rfind("policy,row,origin,destination,budget,weight,on_time", 0) == 0);
  CHECK(csv.str().find("\nlet,team,") != std::string::npos);
  const auto j = report_to_json(sc, r);
  CHECK(j["agents"].size() == 2);
  CHECK(j["team"].get<double>() == doctest::Approx(r.team));
  CHECK(schedule_name(0.95) == "tight");
  CHECK(schedule_name(1.0) == "exact");
  CHECK(schedule_name(1.05) == "relaxed");

  std::ostringstream f3, f4;
  const std::vector<Fig3Row> r3{{"s1", "let", 0, 0.5}};
  const std::vector<Fig4Row> r4{{"sfn", "exact", "let", 0.5}};
  write_fig3_csv(f3, r3);
  write_fig4_csv(f4, r4);
  CHECK(lines(f3.str()) == 2);
  CHECK(lines(f4.str()) == 2);
}

TEST_CASE("ablation variants") {
  const auto names = ablation_names();
  const auto cfgs = ablation_configs(TrainConfig{});
  REQUIRE(names.size() == 4);
  REQUIRE(cfgs.size() == 4);
  CHECK(names[0] == "full");
  CHECK_FALSE(cfgs[1].attention);
  CHECK_FALSE(cfgs[2].entropy);
  CHECK_FALSE(cfgs[3].expert_loss);
  CHECK((cfgs[0].attention && cfgs[0].entropy && cfgs[0].expert_loss));
}

TEST_CASE("exact values agree with the planning evaluator") {
  const auto sc = figure1_scenario(0.7, 0.3);
  Planner pl(sc);
  CHECK(exact_team_value(sc, pl.let_policy()) == doctest::Approx(exact_let_value(sc)));
}
