#pragma once

#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "marvel/graph.hpp"

namespace marvel {

struct AgentSpec {
  int id = 0;
  NodeId origin = kNoNode;
  NodeId destination = kNoNode;
  double budget = 0.0;  // T, time units
  double weight = 1.0;  // lambda
};

struct ScenarioConfig {
  std::shared_ptr<const UncertainGraph> graph;
  std::vector<AgentSpec> agents;
  std::uint64_t seed = 1;
  /// Reject cost samples below 0.5 mu. Disabled only for calibration tests.
  bool truncate = true;
  int max_steps_per_agent = 0;  // 0: 4 * |V| + 16

  /// Throws InputError. A lone agent may carry weight 1.
  void validate() const;
  int step_cap() const;
  std::vector<NodeId> destinations() const;
};

/// Fixed per episode: openness of every edge (certain edges always open).
struct GroundTruth {
  std::vector<unsigned char> open;
  bool is_open(EdgeId id) const { return open.at(static_cast<std::size_t>(id)) != 0; }
};

GroundTruth sample_ground_truth(const UncertainGraph& graph, Rng& rng);
/// Every uncertain edge forced open or closed.
GroundTruth fixed_ground_truth(const UncertainGraph& graph, bool uncertain_open);

/// Gaussian(mu, sigma), redrawn while below 0.5 mu when truncate is set.
double sample_edge_cost(const EdgeAttr& edge, Rng& rng, bool truncate = true);
/// Closed-form mean of N(mu, sigma) conditioned on X >= lower.
double truncated_normal_mean(double mu, double sigma, double lower);

struct StepRecord {
  std::size_t agent = 0;
  NodeId from = kNoNode;
  NodeId to = kNoNode;
  EdgeId edge = kNoEdge;
  double depart_time = 0.0;
  double cost = 0.0;
  double arrive_time = 0.0;
  std::vector<EdgeId> revealed;  // at `to`, on arrival
  double delta_h = 0.0;
  bool completed = false;  // arrival processed
};

/// In-flight movement of an agent.
struct Transit {
  EdgeId edge = kNoEdge;
  double depart_time = 0.0;
  double cost = 0.0;
  std::size_t step = 0;  // index into EpisodeState::steps
};

struct EpisodeState {
  BeliefState belief;  // statuses + agent positions (node is the last node reached)
  std::vector<std::optional<Transit>> transit;
  std::vector<int> step_count;
  std::vector<std::vector<NodeId>> paths;
  std::vector<StepRecord> steps;
  std::vector<EdgeId> origin_reveals;
  std::vector<EdgeId> explored;  // every revelation, in the order it happened
  double origin_delta_h = 0.0;
  double initial_entropy = 0.0;
};

struct AgentResult {
  AgentStatus status = AgentStatus::Active;
  double spent = 0.0;
  double arrival_time = 0.0;  // meaningful when status == Arrived
  bool on_time = false;
  std::vector<NodeId> path;
  int steps = 0;
};

struct EpisodeOutcome {
  std::vector<AgentResult> agents;
  std::vector<EdgeId> explored;  // revealed edges in revelation order
  double total_delta_h = 0.0;    // sum of per-step and origin deltas
  double initial_entropy = 0.0;
  double final_entropy = 0.0;
  double team_score = 0.0;  // sum lambda_i * on_time_i
  std::vector<StepRecord> steps;
  std::vector<EdgeStatus> final_status;
};

/// One decision point handed to a policy.
struct DecisionContext {
  const ScenarioConfig& scenario;
  const EpisodeState& state;
  std::size_t agent;
  std::span<const EdgeId> candidates;  // non-Blocked out-edges, ascending id
};

/// choose() may return kNoEdge to give up (the agent is reported FailedStuck).
class Policy {
 public:
  virtual ~Policy() = default;
  virtual EdgeId choose(const DecisionContext& ctx, Rng& rng) const = 0;
  virtual std::string name() const = 0;
};

/// Applies a completed traversal: move, spent += cost, team-shared reveal at the head,
/// status update. Throws InvariantError for an illegal edge.
void step(EpisodeState& state, const ScenarioConfig& scenario, std::size_t agent, EdgeId edge,
          const GroundTruth& truth, double cost);
void step(EpisodeState& state, const ScenarioConfig& scenario, std::size_t agent, EdgeId edge,
          const GroundTruth& truth, Rng& rng);

/// Event-driven episode. Events are ordered by simulated clock; at equal times arrivals precede
/// decisions and lower agent indices go first. Costs are drawn at departure from the departing
/// agent's own stream; the traversal takes effect at its arrival event.
class Episode {
 public:
  enum class EventKind { Decision, Arrival };
  struct Event {
    EventKind kind;
    std::size_t agent;
    double time;
    std::size_t step = 0;  // Arrival: index of the completed StepRecord
  };

  Episode(const ScenarioConfig& scenario, GroundTruth truth, std::uint64_t seed);

  /// Next decision or arrival; nullopt when every agent has terminated. Dead ends are
  /// resolved internally (FailedStuck) and not reported.
  std::optional<Event> advance();
  /// Candidates of the agent awaiting a decision.
  std::vector<EdgeId> candidates(std::size_t agent) const;
  /// Commits the pending decision. Returns the index of the new StepRecord.
  std::size_t depart(std::size_t agent, EdgeId edge);
  /// Resolves the pending decision as a give-up: the agent becomes FailedStuck.
  void abandon(std::size_t agent);

  const EpisodeState& state() const { return state_; }
  const ScenarioConfig& scenario() const { return scenario_; }
  const GroundTruth& truth() const { return truth_; }
  bool done() const;
  EpisodeOutcome outcome() const;

 private:
  const ScenarioConfig& scenario_;
  GroundTruth truth_;
  EpisodeState state_;
  std::vector<Rng> rngs_;
  std::vector<unsigned char> awaiting_;  // decision handed out, depart() pending
};

/// Runs one episode. Ground truth and per-agent cost streams derive from `seed`.
EpisodeOutcome run_episode(const Policy& policy, const ScenarioConfig& scenario, std::uint64_t seed);
EpisodeOutcome run_episode(const Policy& policy, const ScenarioConfig& scenario, const GroundTruth& truth,
                           std::uint64_t seed);

/// Seed of the ground-truth draw and of agent i's cost stream for an episode seed.
std::uint64_t truth_seed(std::uint64_t episode_seed);
std::uint64_t agent_stream_seed(std::uint64_t episode_seed, std::size_t agent);

const char* to_string(AgentStatus s);
const char* to_string(EdgeStatus s);

/// JSON-lines: one "step" object per traversal, then one "agent" object per agent, then "team".
void write_trajectory_jsonl(std::ostream& out, const UncertainGraph& graph, const EpisodeOutcome& outcome);

}  // namespace marvel
