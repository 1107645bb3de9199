#include "marvel/gat_policy.hpp"

namespace marvel {

std::vector<AgentView> agent_views(const ScenarioConfig& scenario, const EpisodeState& state) {
  std::vector<AgentView> v;
  v.reserve(scenario.agents.size());
  for (std::size_t i = 0; i < scenario.agents.size(); ++i) {
    const auto& p = state.belief.agents[i];
    const auto& a = scenario.agents[i];
    v.push_back(AgentView{p.node, a.destination, a.budget, p.spent, p.active()});
  }
  return v;
}

std::vector<AgentView> agent_views(const ScenarioConfig& scenario, const PlanState& state) {
  std::vector<AgentView> v;
  v.reserve(scenario.agents.size());
  for (std::size_t i = 0; i < scenario.agents.size(); ++i) {
    const auto& p = state.agents[i];
    const auto& a = scenario.agents[i];
    v.push_back(AgentView{p.node, a.destination, a.budget, p.mean, p.status == AgentStatus::Active});
  }
  return v;
}

GatModel::GatModel(GatParams params, GatOptions options, std::shared_ptr<EmbeddingCache> embeddings)
    : params_(std::move(params)), options_(options), embeddings_(std::move(embeddings)) {
  if (!embeddings_) throw ConfigError("GAT model needs an embedding store");
  if (params_.in_dim() != embeddings_->base().dim() + kPositionalChannels)
    throw ConfigError("GAT input width " + std::to_string(params_.in_dim()) + " does not match embedding dim " +
                      std::to_string(embeddings_->base().dim()) + " + " + std::to_string(kPositionalChannels));
}

GatModel::Decision GatModel::decide(std::span<const EdgeStatus> status, std::span<const AgentView> views,
                                    std::size_t ego) const {
  const auto& graph = embeddings_->graph();
  const auto emb = embeddings_->get(status);
  const auto features = assemble_features(*emb, graph, status, views, ego);
  const auto nbhd = build_neighborhoods(graph, status);
  Decision d{gat_forward(params_, features, nbhd, options_), {}};
  d.dist = action_distribution(d.forward.reprs, graph, status, views[ego].node);
  return d;
}

GatPolicy::GatPolicy(std::shared_ptr<const GatModel> model, bool greedy) : model_(std::move(model)), greedy_(greedy) {}

EdgeId GatPolicy::choose(const DecisionContext& ctx, Rng& rng) const {
  const auto views = agent_views(ctx.scenario, ctx.state);
  const auto d = model_->decide(ctx.state.belief.statuses(), views, ctx.agent);
  return d.dist.edges[greedy_ ? d.dist.argmax() : d.dist.sample(rng)];
}

PlanPolicy gat_plan_policy(std::shared_ptr<const GatModel> model, const ScenarioConfig& scenario) {
  const auto* sc = &scenario;
  return [model, sc](const PlanState& s, std::size_t agent, std::span<const EdgeId>) {
    const auto views = agent_views(*sc, s);
    const auto d = model->decide(s.status, views, agent);
    return d.dist.edges[d.dist.argmax()];
  };
}

LetPolicy::LetPolicy(std::shared_ptr<const UncertainGraph> graph)
    : oracle_(std::make_shared<const LetOracle>(std::move(graph))) {}

EdgeId LetPolicy::choose(const DecisionContext& ctx, Rng&) const {
  const auto& p = ctx.state.belief.agents[ctx.agent];
  return oracle_->next_hop(ctx.state.belief.statuses(), p.node, ctx.scenario.agents[ctx.agent].destination);
}

std::shared_ptr<Policy> let_baseline_policy(std::shared_ptr<const UncertainGraph> graph) {
  return std::make_shared<LetPolicy>(std::move(graph));
}

ExpertPolicy::ExpertPolicy(const ScenarioConfig& scenario, ExpertConfig config)
    : scenario_(scenario), planner_(scenario), config_(config) {}

EdgeId ExpertPolicy::choose(const DecisionContext& ctx, Rng&) const {
  const auto s = plan_state_from_episode(scenario_, ctx.state);
  return expert_action(planner_, s, ctx.agent, config_).edge;
}

}  // namespace marvel
