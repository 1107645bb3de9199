#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "marvel/graph.hpp"
#include "marvel/sim.hpp"

namespace marvel {

/// S(z), z = kappa (T - spent - mu_rem) / sqrt(var_rem + 1e-6); 0 when the path is unreachable.
double sota_surrogate(double budget, double spent, const PathResult& path, double kappa = 1.0);

/// Planning model: every traversal takes its mean time, variances accumulate along the way,
/// and on arrival P_i = Phi((T - mean) / sqrt(var)). Revelation outcomes are enumerated
/// exactly, each Unknown edge branching on p_open when its start node is reached.
struct PlanAgent {
  NodeId node = kNoNode;
  double mean = 0.0;
  double var = 0.0;
  AgentStatus status = AgentStatus::Active;
  bool arriving = false;  // at `node` but its revelation has not been processed yet
  int steps = 0;
  double prob = 0.0;           // P_i once terminated
  std::uint64_t visited = 0;   // nodes seen since the last revelation (optimal search only)
};

struct PlanState {
  std::vector<EdgeStatus> status;
  std::vector<PlanAgent> agents;
};

/// All agents at their origins, nothing revealed yet.
PlanState initial_plan_state(const ScenarioConfig& scenario);
/// Snapshot of a running episode; agents in transit are placed at the edge head at
/// departure time + mu with the edge's variance.
PlanState plan_state_from_episode(const ScenarioConfig& scenario, const EpisodeState& state);

/// Thread-safe cache of shortest-path trees keyed by (edge statuses, destination).
class LetOracle {
 public:
  explicit LetOracle(std::shared_ptr<const UncertainGraph> graph);
  std::shared_ptr<const ShortestPathTree> tree(std::span<const EdgeStatus> status, NodeId dst) const;
  /// Next hop on the ExpectedCost shortest path; kNoEdge when unreachable or at dst.
  EdgeId next_hop(std::span<const EdgeStatus> status, NodeId node, NodeId dst) const;
  const UncertainGraph& graph() const { return *graph_; }
  std::size_t size() const;

 private:
  std::shared_ptr<const UncertainGraph> graph_;
  mutable std::mutex mutex_;
  mutable std::unordered_map<std::string, std::shared_ptr<const ShortestPathTree>> cache_;
};

/// Chooses an edge for `agent` among `candidates`; kNoEdge means the agent gives up (stuck).
using PlanPolicy = std::function<EdgeId(const PlanState&, std::size_t agent, std::span<const EdgeId> candidates)>;

struct PlanObjective {
  bool entropy = true;  // subtract H(final belief)
};

class Planner {
 public:
  Planner(const ScenarioConfig& scenario, std::shared_ptr<const LetOracle> oracle = nullptr);

  /// E[sum lambda_i P_i - H(final)] with every decision made by `policy`.
  double evaluate(const PlanState& state, const PlanPolicy& policy, const PlanObjective& objective) const;
  /// Shortest-path (LET) policy under the current belief.
  PlanPolicy let_policy() const;
  /// Candidates of a deciding agent: non-Blocked out-edges in ascending id order.
  std::vector<EdgeId> candidates(const PlanState& state, std::size_t agent) const;
  /// Applies a departure.
  void depart(PlanState& state, std::size_t agent, EdgeId edge) const;

  const ScenarioConfig& scenario() const { return scenario_; }
  const LetOracle& oracle() const { return *oracle_; }
  double terminal_value(const PlanState& state, const PlanObjective& objective) const;

  /// Index of the agent whose event comes next (arrivals first at equal times), or npos.
  std::size_t next_agent(const PlanState& state) const;
  /// Completes an arrival whose revelations are all resolved.
  void finish_arrival(PlanState& state, std::size_t agent) const;

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

 private:
  double run(PlanState s, const PlanPolicy& policy, const PlanObjective& objective) const;

  const ScenarioConfig& scenario_;
  std::shared_ptr<const LetOracle> oracle_;
};

/// Centralized optimum of the planning model by memoized max/chance search. An agent may not
/// return to a node it has visited since the last revelation; without a fresh move it is stuck.
class OptimalSolver {
 public:
  OptimalSolver(const ScenarioConfig& scenario, PlanObjective objective);

  double value(const PlanState& state);
  /// Value of each candidate for the agent that decides next in `state`.
  struct Choice {
    std::size_t agent = Planner::npos;
    std::vector<EdgeId> edges;
    std::vector<double> values;
  };
  /// Advances through pending arrivals that need no branching; returns an empty choice when
  /// the next event is a chance node or the episode is over.
  Choice choices(const PlanState& state);
  std::size_t memo_size() const { return memo_.size(); }

 private:
  double solve(PlanState s);
  std::string key(const PlanState& s) const;
  std::vector<EdgeId> allowed(const PlanState& s, std::size_t agent) const;
  double single_best(PlanState& s, std::size_t agent);

  Planner planner_;
  PlanObjective objective_;
  std::unordered_map<std::string, double> memo_;
  std::unordered_map<std::string, double> single_memo_;
};

struct ExpertConfig {
  enum class Mode { Auto, Expectimax, HeuristicDijkstra };
  Mode mode = Mode::Auto;
  std::size_t max_unknown = 8;
  std::size_t max_nodes = 30;
  double smoothing = 0.1;  // q = (1 - s) one-hot + s / |A|
  bool entropy = true;
  double kappa = 1.0;
};

struct ExpertDecision {
  EdgeId edge = kNoEdge;
  std::size_t index = 0;
  std::vector<EdgeId> candidates;
  std::vector<double> scores;
  std::vector<double> distribution;
  ExpertConfig::Mode mode = ExpertConfig::Mode::Expectimax;
};

/// Resolved mode for a graph and belief: Expectimax only within the size thresholds.
ExpertConfig::Mode expert_mode(const ExpertConfig& config, const UncertainGraph& graph,
                               std::span<const EdgeStatus> status);

/// Expectimax: exact expected team objective of each candidate when every agent follows LET
/// afterwards. HeuristicDijkstra: surrogate of (edge + shortest remaining path) plus the entropy
/// of Unknown edges at the head. Throws DeadEndError without candidates.
ExpertDecision expert_action(const Planner& planner, const PlanState& state, std::size_t agent,
                             const ExpertConfig& config);

std::vector<double> smoothed_one_hot(std::size_t n, std::size_t index, double smoothing);

}  // namespace marvel
