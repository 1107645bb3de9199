#include "marvel/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <thread>

namespace marvel {

std::uint64_t trial_seed(std::uint64_t master_seed, int trial) {
  return derive_seed(master_seed, static_cast<std::uint64_t>(trial));
}

EvalReport monte_carlo_sota(const Policy& policy, const ScenarioConfig& scenario, int trials, std::uint64_t master_seed,
                            int threads) {
  if (trials < 1) throw InputError("trials must be >= 1");
  scenario.validate();
  const std::size_t n = scenario.agents.size();
  std::vector<EpisodeOutcome> outcomes(static_cast<std::size_t>(trials));
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      const int t = next.fetch_add(1);
      if (t >= trials) return;
      try {
        outcomes[static_cast<std::size_t>(t)] = run_episode(policy, scenario, trial_seed(master_seed, t));
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = trials;
        return;
      }
    }
  };
  const int workers = std::clamp(threads, 1, trials);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  EvalReport r;
  r.policy = policy.name();
  r.trials = trials;
  r.seed = master_seed;
  r.agents.resize(n);
  r.on_time.resize(static_cast<std::size_t>(trials) * n);
  std::vector<double> arrival_sum(n, 0.0);
  double team_sum = 0.0, team_sq = 0.0;
  for (int t = 0; t < trials; ++t) {
    const auto& o = outcomes[static_cast<std::size_t>(t)];
    double team = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& a = o.agents[i];
      auto& s = r.agents[i];
      r.on_time[static_cast<std::size_t>(t) * n + i] = a.on_time;
      s.on_time += a.on_time;
      s.arrived += a.status == AgentStatus::Arrived;
      s.failed_late += a.status == AgentStatus::FailedLate;
      s.failed_stuck += a.status == AgentStatus::FailedStuck;
      if (a.status == AgentStatus::Arrived) arrival_sum[i] += a.arrival_time;
      if (a.on_time) team += scenario.agents[i].weight;
    }
    team_sum += team;
    team_sq += team * team;
  }
  const double nt = static_cast<double>(trials);
  for (std::size_t i = 0; i < n; ++i) {
    auto& s = r.agents[i];
    s.mean_arrival = s.arrived > 0 ? arrival_sum[i] / s.arrived : 0.0;
    s.on_time /= nt;
    s.arrived /= nt;
    s.failed_late /= nt;
    s.failed_stuck /= nt;
    s.std_err = std::sqrt(s.on_time * (1.0 - s.on_time) / nt);
    r.team += scenario.agents[i].weight * s.on_time;
  }
  const double mean = team_sum / nt;
  r.team_se = std::sqrt(std::max(0.0, team_sq / nt - mean * mean) / nt);
  return r;
}

double exact_team_value(const ScenarioConfig& scenario, const PlanPolicy& policy) {
  Planner planner(scenario);
  return planner.evaluate(initial_plan_state(scenario), policy, PlanObjective{false});
}

double exact_let_value(const ScenarioConfig& scenario) {
  Planner planner(scenario);
  return planner.evaluate(initial_plan_state(scenario), planner.let_policy(), PlanObjective{false});
}

double exact_optimal_value(const ScenarioConfig& scenario) {
  OptimalSolver solver(scenario, PlanObjective{false});
  return solver.value(initial_plan_state(scenario));
}

std::vector<OdPair> random_od_pairs(const UncertainGraph& graph, std::size_t count, std::uint64_t seed) {
  if (graph.num_nodes() < 2) throw InputError("graph needs at least two nodes");
  Rng rng(seed);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(graph.num_nodes()) - 1);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::vector<OdPair> od;
  int attempts = 0;
  while (od.size() < count) {
    if (++attempts > 1000 * static_cast<int>(count + 1)) throw InputError("could not draw enough reachable OD pairs");
    const NodeId o = pick(rng), d = pick(rng);
    if (o == d) continue;
    if (!shortest_path_expected(graph, BeliefState::initial(graph), o, d, UnknownMode::ExpectedCost).reachable) continue;
    od.push_back(OdPair{o, d, u(rng)});
  }
  double total = 0.0;
  for (const auto& p : od) total += p.weight;
  for (auto& p : od) p.weight /= total;
  return od;
}

ScenarioConfig team_scenario(std::shared_ptr<const UncertainGraph> graph, std::span<const OdPair> od, double multiplier,
                             double low_priority_multiplier, std::uint64_t seed, std::vector<std::string>* skipped) {
  if (od.empty()) throw InputError("no OD pairs");
  std::vector<OdPair> kept;
  std::vector<double> let;
  for (const auto& p : od) {
    try {
      let.push_back(least_expected_time(*graph, p.origin, p.destination));
      kept.push_back(p);
    } catch (const UnreachableError&) {
      if (skipped)
        skipped->push_back("OD " + std::to_string(graph->label(p.origin)) + "->" +
                           std::to_string(graph->label(p.destination)) + " unreachable; skipped");
    }
  }
  if (kept.empty()) throw InputError("every OD pair is unreachable");
  double total = 0.0;
  for (const auto& p : kept) total += p.weight;
  ScenarioConfig s;
  s.graph = std::move(graph);
  s.seed = seed;
  const double high_threshold = 1.0 / static_cast<double>(kept.size());
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const double w = kept[i].weight / total;
    const double m = w >= high_threshold ? multiplier : low_priority_multiplier;
    s.agents.push_back(AgentSpec{static_cast<int>(i), kept[i].origin, kept[i].destination, m * let[i], w});
  }
  s.validate();
  return s;
}

BatteryReport budget_battery(const PolicyFactory& factory, std::shared_ptr<const UncertainGraph> graph,
                             std::span<const OdPair> od, std::span<const double> multipliers, int trials,
                             std::uint64_t seed, int threads, double low_priority_multiplier) {
  if (od.empty()) throw InputError("budget battery needs OD pairs");
  BatteryReport b;
  for (double m : multipliers) {
    std::vector<std::string> skipped;
    const auto sc = team_scenario(graph, od, m, low_priority_multiplier, seed, &skipped);
    if (b.rows.empty()) b.warnings = skipped;
    const auto policy = factory(sc);
    BatteryRow row;
    row.multiplier = m;
    row.report = monte_carlo_sota(*policy, sc, trials, seed, threads);
    b.policy = row.report.policy;
    int high = 0;
    const double threshold = 1.0 / static_cast<double>(sc.agents.size());
    for (std::size_t i = 0; i < sc.agents.size(); ++i)
      if (sc.agents[i].weight >= threshold) {
        row.high_priority_mean += row.report.agents[i].on_time;
        ++high;
      }
    if (high > 0) row.high_priority_mean /= high;
    b.rows.push_back(std::move(row));
  }
  return b;
}

std::vector<std::string> ablation_names() { return {"full", "no_attention", "no_entropy", "no_cross_entropy"}; }

std::vector<TrainConfig> ablation_configs(const TrainConfig& base) {
  std::vector<TrainConfig> c(4, base);
  c[0].attention = c[0].entropy = c[0].expert_loss = true;
  c[1] = c[0];
  c[1].attention = false;
  c[2] = c[0];
  c[2].entropy = false;
  c[3] = c[0];
  c[3].expert_loss = false;
  return c;
}

std::vector<AblationRow> ablation_battery(const ScenarioConfig& scenario, const TrainConfig& base, int trials,
                                          std::uint64_t eval_seed, int threads,
                                          std::shared_ptr<EmbeddingCache> embeddings) {
  if (!embeddings) embeddings = make_embedding_cache(scenario, base);
  const auto configs = ablation_configs(base);
  const auto names = ablation_names();
  std::vector<AblationRow> rows;
  for (std::size_t k = 0; k < configs.size(); ++k) {
    AblationRow row;
    row.name = names[k];
    row.config = configs[k];
    auto result = train(scenario, configs[k], embeddings);
    row.converged_epoch = result.converged_epoch;
    std::vector<double> obj;
    for (const auto& l : result.log) obj.push_back(l.objective);
    if (!obj.empty()) row.final_objective = moving_average(obj, configs[k].convergence_window).back();
    auto model = std::make_shared<const GatModel>(result.params, GatOptions{configs[k].attention, 0.2}, embeddings);
    GatPolicy policy(model);
    row.report = monte_carlo_sota(policy, scenario, trials, eval_seed, threads);
    row.report.policy = names[k];
    row.params = std::move(result.params);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_report_csv(std::ostream& out, const ScenarioConfig& scenario, const EvalReport& r) {
  const auto& g = *scenario.graph;
  out << "policy,row,origin,destination,budget,weight,on_time,std_err,mean_arrival,failed_late,failed_stuck,trials\n";
  out.precision(10);
  for (std::size_t i = 0; i < r.agents.size(); ++i) {
    const auto& a = scenario.agents[i];
    const auto& s = r.agents[i];
    out << r.policy << ",agent" << i << ',' << g.label(a.origin) << ',' << g.label(a.destination) << ',' << a.budget << ','
        << a.weight << ',' << s.on_time << ',' << s.std_err << ',' << s.mean_arrival << ',' << s.failed_late << ','
        << s.failed_stuck << ',' << r.trials << '\n';
  }
  out << r.policy << ",team,,,,1," << r.team << ',' << r.team_se << ",,,," << r.trials << '\n';
}

Json report_to_json(const ScenarioConfig& scenario, const EvalReport& r) {
  const auto& g = *scenario.graph;
  Json agents = Json::array();
  for (std::size_t i = 0; i < r.agents.size(); ++i) {
    const auto& a = scenario.agents[i];
    const auto& s = r.agents[i];
    agents.push_back({{"agent", i},
                      {"origin", g.label(a.origin)},
                      {"destination", g.label(a.destination)},
                      {"budget", a.budget},
                      {"weight", a.weight},
                      {"on_time", s.on_time},
                      {"std_err", s.std_err},
                      {"mean_arrival", s.mean_arrival},
                      {"failed_late", s.failed_late},
                      {"failed_stuck", s.failed_stuck}});
  }
  return Json{{"policy", r.policy}, {"trials", r.trials}, {"seed", r.seed},
              {"team", r.team},     {"team_se", r.team_se}, {"agents", agents}};
}

std::string schedule_name(double m) {
  if (std::abs(m - 0.95) < 1e-9) return "tight";
  if (std::abs(m - 1.0) < 1e-9) return "exact";
  if (std::abs(m - 1.05) < 1e-9) return "relaxed";
  char buf[32];
  std::snprintf(buf, sizeof buf, "x%.3g", m);
  return buf;
}

void write_battery_csv(std::ostream& out, std::span<const BatteryReport> reports) {
  out << "policy,multiplier,schedule,team,team_se,high_priority_mean,trials\n";
  out.precision(10);
  for (const auto& b : reports)
    for (const auto& r : b.rows)
      out << b.policy << ',' << r.multiplier << ',' << schedule_name(r.multiplier) << ',' << r.report.team << ','
          << r.report.team_se << ',' << r.high_priority_mean << ',' << r.report.trials << '\n';
}

void write_ablation_csv(std::ostream& out, std::span<const AblationRow> rows) {
  out << "variant,team,team_se,converged_epoch,final_objective,trials\n";
  out.precision(10);
  for (const auto& r : rows) {
    out << r.name << ',' << r.report.team << ',' << r.report.team_se << ',';
    if (r.converged_epoch)
      out << *r.converged_epoch;
    else
      out << "not_convergent";
    out << ',' << r.final_objective << ',' << r.report.trials << '\n';
  }
}

void write_fig3_csv(std::ostream& out, std::span<const Fig3Row> rows) {
  out << "scenario,policy,agent,sota\n";
  out.precision(10);
  for (const auto& r : rows) out << r.scenario << ',' << r.policy << ',' << r.agent << ',' << r.sota << '\n';
}

void write_fig4_csv(std::ostream& out, std::span<const Fig4Row> rows) {
  out << "network,schedule,policy,sota\n";
  out.precision(10);
  for (const auto& r : rows) out << r.network << ',' << r.schedule << ',' << r.policy << ',' << r.sota << '\n';
}

}  // namespace marvel
