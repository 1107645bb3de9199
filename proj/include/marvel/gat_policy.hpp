#pragma once

#include <memory>
#include <string>
#include <vector>

#include "marvel/embedding.hpp"
#include "marvel/planning.hpp"
#include "marvel/policy_net.hpp"
#include "marvel/sim.hpp"

namespace marvel {

std::vector<AgentView> agent_views(const ScenarioConfig& scenario, const EpisodeState& state);
/// Planning snapshot; spent is the mean elapsed time.
std::vector<AgentView> agent_views(const ScenarioConfig& scenario, const PlanState& state);

/// Parameters plus the belief-keyed embedding store that feeds them.
class GatModel {
 public:
  GatModel(GatParams params, GatOptions options, std::shared_ptr<EmbeddingCache> embeddings);

  struct Decision {
    ForwardResult forward;
    ActionDistribution dist;
  };
  /// Forward pass for `ego` standing at views[ego].node.
  Decision decide(std::span<const EdgeStatus> status, std::span<const AgentView> views, std::size_t ego) const;

  GatParams& params() { return params_; }
  const GatParams& params() const { return params_; }
  const GatOptions& options() const { return options_; }
  EmbeddingCache& embeddings() const { return *embeddings_; }
  std::shared_ptr<EmbeddingCache> embeddings_ptr() const { return embeddings_; }

 private:
  GatParams params_;
  GatOptions options_;
  std::shared_ptr<EmbeddingCache> embeddings_;
};

/// Greedy (argmax, lowest edge id on ties) or sampling wrapper for the simulator.
class GatPolicy : public Policy {
 public:
  GatPolicy(std::shared_ptr<const GatModel> model, bool greedy = true);
  EdgeId choose(const DecisionContext& ctx, Rng& rng) const override;
  std::string name() const override { return "marvel"; }

 private:
  std::shared_ptr<const GatModel> model_;
  bool greedy_;
};

/// Greedy GAT decisions inside the planning model.
PlanPolicy gat_plan_policy(std::shared_ptr<const GatModel> model, const ScenarioConfig& scenario);

/// Follows the ExpectedCost shortest path under the current belief; never explores.
class LetPolicy : public Policy {
 public:
  explicit LetPolicy(std::shared_ptr<const UncertainGraph> graph);
  EdgeId choose(const DecisionContext& ctx, Rng& rng) const override;
  std::string name() const override { return "let"; }

 private:
  std::shared_ptr<const LetOracle> oracle_;
};

std::shared_ptr<Policy> let_baseline_policy(std::shared_ptr<const UncertainGraph> graph);

/// Queries the expert at every decision (upper reference for evaluation).
class ExpertPolicy : public Policy {
 public:
  ExpertPolicy(const ScenarioConfig& scenario, ExpertConfig config);
  EdgeId choose(const DecisionContext& ctx, Rng& rng) const override;
  std::string name() const override { return "expert"; }

 private:
  const ScenarioConfig& scenario_;
  Planner planner_;
  ExpertConfig config_;
};

}  // namespace marvel
