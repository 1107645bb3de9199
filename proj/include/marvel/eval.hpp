#pragma once

#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "marvel/gat_policy.hpp"
#include "marvel/json.hpp"
#include "marvel/planning.hpp"
#include "marvel/sim.hpp"
#include "marvel/trainer.hpp"

namespace marvel {

struct AgentStats {
  double on_time = 0.0;  // frequency over trials
  double std_err = 0.0;  // sqrt(p (1 - p) / n)
  double mean_arrival = 0.0;  // over trials that reached the destination; 0 if none
  double arrived = 0.0;
  double failed_late = 0.0;
  double failed_stuck = 0.0;
};

struct EvalReport {
  std::string policy;
  std::vector<AgentStats> agents;
  double team = 0.0;      // sum lambda_i p_i
  double team_se = 0.0;   // standard error of the per-trial team score
  int trials = 0;
  std::uint64_t seed = 0;
  /// on_time[t * agents + i]; kept so the team score can be recomputed.
  std::vector<unsigned char> on_time;
};

/// Trial t uses episode seed derive_seed(master_seed, t); aggregation is in trial order, so the
/// report does not depend on the thread count.
EvalReport monte_carlo_sota(const Policy& policy, const ScenarioConfig& scenario, int trials, std::uint64_t master_seed,
                            int threads = 1);

std::uint64_t trial_seed(std::uint64_t master_seed, int trial);

/// Exact sum lambda_i P_i of a deterministic policy under the planning model.
double exact_team_value(const ScenarioConfig& scenario, const PlanPolicy& policy);
double exact_let_value(const ScenarioConfig& scenario);
double exact_optimal_value(const ScenarioConfig& scenario);

struct OdPair {
  NodeId origin = kNoNode;
  NodeId destination = kNoNode;
  double weight = 0.0;
};

/// Uniform over ordered node pairs reachable at expected cost; weights U(0,1) normalized to 1.
std::vector<OdPair> random_od_pairs(const UncertainGraph& graph, std::size_t count, std::uint64_t seed);

/// Agents with lambda >= 1/n are high priority and get multiplier * t_LET, the rest
/// low_priority_multiplier * t_LET. Unreachable pairs are dropped and listed in `skipped`.
ScenarioConfig team_scenario(std::shared_ptr<const UncertainGraph> graph, std::span<const OdPair> od, double multiplier,
                             double low_priority_multiplier = 1.2, std::uint64_t seed = 1,
                             std::vector<std::string>* skipped = nullptr);

using PolicyFactory = std::function<std::shared_ptr<Policy>(const ScenarioConfig&)>;

struct BatteryRow {
  double multiplier = 0.0;
  EvalReport report;
  double high_priority_mean = 0.0;  // unweighted mean on-time of high-priority agents
};

struct BatteryReport {
  std::string policy;
  std::vector<BatteryRow> rows;
  std::vector<std::string> warnings;
};

BatteryReport budget_battery(const PolicyFactory& factory, std::shared_ptr<const UncertainGraph> graph,
                             std::span<const OdPair> od, std::span<const double> multipliers, int trials,
                             std::uint64_t seed, int threads = 1, double low_priority_multiplier = 1.2);

struct AblationRow {
  std::string name;
  TrainConfig config;
  EvalReport report;
  std::optional<int> converged_epoch;
  double final_objective = 0.0;  // moving average at the last epoch
  GatParams params;
};

/// Variants: full, no_attention (uniform alpha), no_entropy, no_cross_entropy.
std::vector<TrainConfig> ablation_configs(const TrainConfig& base);
std::vector<std::string> ablation_names();

std::vector<AblationRow> ablation_battery(const ScenarioConfig& scenario, const TrainConfig& base, int trials,
                                          std::uint64_t eval_seed, int threads = 1,
                                          std::shared_ptr<EmbeddingCache> embeddings = nullptr);

/// One row per agent plus a final "team" row.
void write_report_csv(std::ostream& out, const ScenarioConfig& scenario, const EvalReport& report);
Json report_to_json(const ScenarioConfig& scenario, const EvalReport& report);
void write_battery_csv(std::ostream& out, std::span<const BatteryReport> reports);
void write_ablation_csv(std::ostream& out, std::span<const AblationRow> rows);

/// Per-robot success rates by scenario and policy (bar-chart layout).
struct Fig3Row {
  std::string scenario;
  std::string policy;
  std::size_t agent = 0;
  double sota = 0.0;
};
void write_fig3_csv(std::ostream& out, std::span<const Fig3Row> rows);
/// Team SOTA by network, schedule and policy.
struct Fig4Row {
  std::string network;
  std::string schedule;
  std::string policy;
  double sota = 0.0;
};
void write_fig4_csv(std::ostream& out, std::span<const Fig4Row> rows);
std::string schedule_name(double multiplier);

}  // namespace marvel
