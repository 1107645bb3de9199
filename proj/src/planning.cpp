#include "marvel/planning.hpp"

#include <algorithm>
#include <cstring>
#include <limits>

namespace marvel {

double sota_surrogate(double budget, double spent, const PathResult& path, double kappa) {
  if (!path.reachable) return 0.0;
  if (!(kappa > 0.0)) throw ConfigError("surrogate sharpness must be positive");
  const double z = kappa * (budget - spent - path.mu_total) / std::sqrt(path.var_total + 1e-6);
  return logistic(z);
}

namespace {

std::uint64_t node_bit(NodeId v) { return v < 64 ? (std::uint64_t{1} << v) : 0; }

double arrival_probability(double budget, double mean, double var) {
  if (var <= 0.0) return mean <= budget ? 1.0 : 0.0;
  return normal_cdf((budget - mean) / std::sqrt(var));
}

void reset_visited(PlanState& s) {
  for (auto& a : s.agents) a.visited = node_bit(a.node);
}

}  // namespace

PlanState initial_plan_state(const ScenarioConfig& scenario) {
  scenario.validate();
  PlanState s;
  const auto b = BeliefState::initial(*scenario.graph);
  s.status.assign(b.statuses().begin(), b.statuses().end());
  for (const auto& spec : scenario.agents) {
    PlanAgent a;
    a.node = spec.origin;
    a.arriving = true;
    a.visited = node_bit(spec.origin);
    s.agents.push_back(a);
  }
  return s;
}

PlanState plan_state_from_episode(const ScenarioConfig& scenario, const EpisodeState& state) {
  const auto& graph = *scenario.graph;
  PlanState s;
  s.status.assign(state.belief.statuses().begin(), state.belief.statuses().end());
  for (std::size_t i = 0; i < scenario.agents.size(); ++i) {
    const auto& pos = state.belief.agents[i];
    const auto& spec = scenario.agents[i];
    PlanAgent a;
    a.node = pos.node;
    a.mean = pos.spent;
    a.status = pos.status;
    a.steps = state.step_count[i];
    if (pos.status == AgentStatus::Arrived) a.prob = pos.spent <= spec.budget ? 1.0 : 0.0;
    if (pos.active() && state.transit[i]) {
      const auto& e = graph.edge(state.transit[i]->edge);
      a.node = e.to;
      a.mean = state.transit[i]->depart_time + e.mu;
      a.var = e.sigma * e.sigma;
      a.arriving = true;
      ++a.steps;
    }
    a.visited = node_bit(a.node);
    s.agents.push_back(a);
  }
  return s;
}

LetOracle::LetOracle(std::shared_ptr<const UncertainGraph> graph) : graph_(std::move(graph)) {
  if (!graph_) throw InputError("oracle needs a graph");
}

std::shared_ptr<const ShortestPathTree> LetOracle::tree(std::span<const EdgeStatus> status, NodeId dst) const {
  std::string key;
  key.reserve(graph_->uncertain_edges().size() + 8);
  for (EdgeId id : graph_->uncertain_edges()) key.push_back(static_cast<char>('0' + static_cast<int>(status[id])));
  key += '#';
  key += std::to_string(dst);
  {
    std::lock_guard lock(mutex_);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  }
  auto t = std::make_shared<const ShortestPathTree>(shortest_path_tree(*graph_, status, dst, UnknownMode::ExpectedCost));
  std::lock_guard lock(mutex_);
  return cache_.emplace(key, std::move(t)).first->second;
}

EdgeId LetOracle::next_hop(std::span<const EdgeStatus> status, NodeId node, NodeId dst) const {
  return tree(status, dst)->next_edge[static_cast<std::size_t>(node)];
}

std::size_t LetOracle::size() const {
  std::lock_guard lock(mutex_);
  return cache_.size();
}

Planner::Planner(const ScenarioConfig& scenario, std::shared_ptr<const LetOracle> oracle)
    : scenario_(scenario), oracle_(oracle ? std::move(oracle) : std::make_shared<const LetOracle>(scenario.graph)) {
  scenario_.validate();
}

std::vector<EdgeId> Planner::candidates(const PlanState& state, std::size_t agent) const {
  std::vector<EdgeId> c;
  for (EdgeId id : scenario_.graph->out_edges(state.agents[agent].node))
    if (state.status[static_cast<std::size_t>(id)] != EdgeStatus::Blocked) c.push_back(id);
  std::sort(c.begin(), c.end());
  return c;
}

void Planner::depart(PlanState& state, std::size_t agent, EdgeId edge) const {
  auto& a = state.agents[agent];
  const auto& e = scenario_.graph->edge(edge);
  if (e.from != a.node) throw InvariantError("edge does not leave the agent's node");
  if (state.status[static_cast<std::size_t>(edge)] == EdgeStatus::Blocked) throw InvariantError("edge is Blocked");
  a.node = e.to;
  a.mean += e.mu;
  a.var += e.sigma * e.sigma;
  a.arriving = true;
  ++a.steps;
  a.visited |= node_bit(e.to);
}

std::size_t Planner::next_agent(const PlanState& state) const {
  std::size_t best = npos;
  for (std::size_t i = 0; i < state.agents.size(); ++i) {
    const auto& a = state.agents[i];
    if (a.status != AgentStatus::Active) continue;
    if (best == npos) {
      best = i;
      continue;
    }
    const auto& b = state.agents[best];
    if (a.mean < b.mean || (a.mean == b.mean && a.arriving && !b.arriving)) best = i;
  }
  return best;
}

void Planner::finish_arrival(PlanState& state, std::size_t agent) const {
  auto& a = state.agents[agent];
  const auto& spec = scenario_.agents[agent];
  a.arriving = false;
  if (a.node == spec.destination) {
    a.status = AgentStatus::Arrived;
    a.prob = arrival_probability(spec.budget, a.mean, a.var);
  } else if (a.steps >= scenario_.step_cap()) {
    a.status = AgentStatus::FailedStuck;
    a.prob = 0.0;
  }
}

double Planner::terminal_value(const PlanState& state, const PlanObjective& objective) const {
  double v = 0.0;
  for (std::size_t i = 0; i < state.agents.size(); ++i) v += scenario_.agents[i].weight * state.agents[i].prob;
  if (objective.entropy) v -= graph_entropy(*scenario_.graph, state.status);
  return v;
}

double Planner::run(PlanState s, const PlanPolicy& policy, const PlanObjective& objective) const {
  const auto& graph = *scenario_.graph;
  for (;;) {
    const std::size_t i = next_agent(s);
    if (i == npos) return terminal_value(s, objective);
    auto& a = s.agents[i];
    if (a.arriving) {
      const auto unknown = unknown_out_edges(graph, s.status, a.node);
      if (!unknown.empty()) {
        const EdgeId e = unknown.front();
        const double p = graph.edge(e).p_open;
        PlanState open = s;
        open.status[static_cast<std::size_t>(e)] = EdgeStatus::Open;
        reset_visited(open);
        s.status[static_cast<std::size_t>(e)] = EdgeStatus::Blocked;
        reset_visited(s);
        return p * run(std::move(open), policy, objective) + (1.0 - p) * run(std::move(s), policy, objective);
      }
      finish_arrival(s, i);
      continue;
    }
    const auto cands = candidates(s, i);
    const EdgeId e = cands.empty() ? kNoEdge : policy(s, i, cands);
    if (e == kNoEdge) {
      a.status = AgentStatus::FailedStuck;
      a.prob = 0.0;
      continue;
    }
    if (!std::binary_search(cands.begin(), cands.end(), e)) throw InvariantError("policy chose a non-candidate edge");
    depart(s, i, e);
  }
}

double Planner::evaluate(const PlanState& state, const PlanPolicy& policy, const PlanObjective& objective) const {
  return run(state, policy, objective);
}

PlanPolicy Planner::let_policy() const {
  auto oracle = oracle_;
  const auto* scenario = &scenario_;
  return [oracle, scenario](const PlanState& s, std::size_t agent, std::span<const EdgeId>) {
    return oracle->next_hop(s.status, s.agents[agent].node, scenario->agents[agent].destination);
  };
}

OptimalSolver::OptimalSolver(const ScenarioConfig& scenario, PlanObjective objective)
    : planner_(scenario), objective_(objective) {
  if (scenario.graph->num_nodes() > 64) throw ConfigError("optimal search supports at most 64 nodes");
}

std::string OptimalSolver::key(const PlanState& s) const {
  std::string k(s.status.size(), '\0');
  for (std::size_t i = 0; i < s.status.size(); ++i) k[i] = static_cast<char>(s.status[i]);
  for (const auto& a : s.agents) {
    const auto off = k.size();
    k.resize(off + sizeof(NodeId) + 3 * sizeof(double) + sizeof(int) + sizeof(std::uint64_t) + 2);
    char* p = k.data() + off;
    std::memcpy(p, &a.node, sizeof(NodeId)), p += sizeof(NodeId);
    std::memcpy(p, &a.mean, sizeof(double)), p += sizeof(double);
    std::memcpy(p, &a.var, sizeof(double)), p += sizeof(double);
    std::memcpy(p, &a.prob, sizeof(double)), p += sizeof(double);
    std::memcpy(p, &a.steps, sizeof(int)), p += sizeof(int);
    std::memcpy(p, &a.visited, sizeof(std::uint64_t)), p += sizeof(std::uint64_t);
    *p++ = static_cast<char>(a.status);
    *p = static_cast<char>(a.arriving);
  }
  return k;
}

std::vector<EdgeId> OptimalSolver::allowed(const PlanState& s, std::size_t agent) const {
  auto cands = planner_.candidates(s, agent);
  std::vector<EdgeId> fresh;
  const auto& graph = planner_.scenario().graph;
  for (EdgeId e : cands)
    if (!(s.agents[agent].visited & node_bit(graph->edge(e).to))) fresh.push_back(e);
  return fresh;
}

double OptimalSolver::single_best(PlanState& s, std::size_t i) {
  auto& a = s.agents[i];
  if (a.arriving) planner_.finish_arrival(s, i);
  if (a.status != AgentStatus::Active) return a.prob;
  std::string k(s.status.size(), '\0');
  for (std::size_t j = 0; j < s.status.size(); ++j) k[j] = static_cast<char>(s.status[j]);
  k.append(reinterpret_cast<const char*>(&i), sizeof i);
  k.append(reinterpret_cast<const char*>(&a.node), sizeof a.node);
  k.append(reinterpret_cast<const char*>(&a.mean), sizeof a.mean);
  k.append(reinterpret_cast<const char*>(&a.var), sizeof a.var);
  k.append(reinterpret_cast<const char*>(&a.steps), sizeof a.steps);
  k.append(reinterpret_cast<const char*>(&a.visited), sizeof a.visited);
  if (auto it = single_memo_.find(k); it != single_memo_.end()) return it->second;
  double best = 0.0;
  const PlanAgent saved = a;
  for (EdgeId e : allowed(s, i)) {
    planner_.depart(s, i, e);
    best = std::max(best, single_best(s, i));
    s.agents[i] = saved;
  }
  single_memo_.emplace(std::move(k), best);
  return best;
}

double OptimalSolver::solve(PlanState s) {
  const auto& graph = *planner_.scenario().graph;
  for (;;) {
    if (std::find(s.status.begin(), s.status.end(), EdgeStatus::Unknown) == s.status.end()) {
      // Nothing left to learn: agents no longer interact.
      double v = 0.0;
      for (std::size_t i = 0; i < s.agents.size(); ++i)
        v += planner_.scenario().agents[i].weight * single_best(s, i);
      return v;
    }
    const std::size_t i = planner_.next_agent(s);
    if (i == Planner::npos) return planner_.terminal_value(s, objective_);
    auto& a = s.agents[i];
    if (a.arriving) {
      const auto unknown = unknown_out_edges(graph, s.status, a.node);
      if (!unknown.empty()) {
        const EdgeId e = unknown.front();
        const double p = graph.edge(e).p_open;
        PlanState open = s;
        open.status[static_cast<std::size_t>(e)] = EdgeStatus::Open;
        reset_visited(open);
        s.status[static_cast<std::size_t>(e)] = EdgeStatus::Blocked;
        reset_visited(s);
        return p * solve(std::move(open)) + (1.0 - p) * solve(std::move(s));
      }
      planner_.finish_arrival(s, i);
      continue;
    }
    const auto cands = allowed(s, i);
    if (cands.empty()) {
      a.status = AgentStatus::FailedStuck;
      a.prob = 0.0;
      continue;
    }
    const auto k = key(s);
    if (auto it = memo_.find(k); it != memo_.end()) return it->second;
    double best = -std::numeric_limits<double>::infinity();
    for (EdgeId e : cands) {
      PlanState t = s;
      planner_.depart(t, i, e);
      best = std::max(best, solve(std::move(t)));
    }
    memo_.emplace(k, best);
    return best;
  }
}

double OptimalSolver::value(const PlanState& state) { return solve(state); }

OptimalSolver::Choice OptimalSolver::choices(const PlanState& state) {
  const auto& graph = *planner_.scenario().graph;
  PlanState s = state;
  for (;;) {
    const std::size_t i = planner_.next_agent(s);
    if (i == Planner::npos) return {};
    auto& a = s.agents[i];
    if (a.arriving) {
      if (!unknown_out_edges(graph, s.status, a.node).empty()) return {};
      planner_.finish_arrival(s, i);
      continue;
    }
    Choice c;
    c.agent = i;
    const auto fresh = allowed(s, i);
    for (EdgeId e : planner_.candidates(s, i)) {
      PlanState t = s;
      planner_.depart(t, i, e);
      c.edges.push_back(e);
      c.values.push_back(std::binary_search(fresh.begin(), fresh.end(), e) ? solve(std::move(t))
                                                                          : -std::numeric_limits<double>::infinity());
    }
    return c;
  }
}

ExpertConfig::Mode expert_mode(const ExpertConfig& config, const UncertainGraph& graph,
                               std::span<const EdgeStatus> status) {
  const std::size_t unknown =
      static_cast<std::size_t>(std::count(status.begin(), status.end(), EdgeStatus::Unknown));
  const bool small = unknown <= config.max_unknown && graph.num_nodes() <= config.max_nodes;
  switch (config.mode) {
    case ExpertConfig::Mode::Auto:
      return small ? ExpertConfig::Mode::Expectimax : ExpertConfig::Mode::HeuristicDijkstra;
    case ExpertConfig::Mode::Expectimax:
      if (!small) throw ConfigError("expectimax expert exceeds its size thresholds");
      return ExpertConfig::Mode::Expectimax;
    case ExpertConfig::Mode::HeuristicDijkstra:
      return ExpertConfig::Mode::HeuristicDijkstra;
  }
  return ExpertConfig::Mode::HeuristicDijkstra;
}

std::vector<double> smoothed_one_hot(std::size_t n, std::size_t index, double smoothing) {
  if (index >= n) throw InputError("one-hot index out of range");
  std::vector<double> q(n, smoothing / static_cast<double>(n));
  q[index] += 1.0 - smoothing;
  return q;
}

ExpertDecision expert_action(const Planner& planner, const PlanState& state, std::size_t agent,
                             const ExpertConfig& config) {
  const auto& scenario = planner.scenario();
  const auto& graph = *scenario.graph;
  ExpertDecision d;
  d.candidates = planner.candidates(state, agent);
  if (d.candidates.empty())
    throw DeadEndError("node " + std::to_string(graph.label(state.agents[agent].node)) + " has no usable out-edge");
  d.mode = expert_mode(config, graph, state.status);
  const PlanObjective objective{config.entropy};
  const auto& a = state.agents[agent];
  const auto& spec = scenario.agents[agent];
  if (d.mode == ExpertConfig::Mode::Expectimax) {
    const auto let = planner.let_policy();
    for (EdgeId e : d.candidates) {
      PlanState t = state;
      planner.depart(t, agent, e);
      d.scores.push_back(planner.evaluate(t, let, objective));
    }
  } else {
    for (EdgeId e : d.candidates) {
      const auto& x = graph.edge(e);
      auto rest = shortest_path_expected(graph, state.status, x.to, spec.destination, UnknownMode::ExpectedCost);
      if (rest.reachable) {
        rest.mu_total += x.mu;
        rest.var_total += x.sigma * x.sigma + a.var;
      }
      double score = sota_surrogate(spec.budget, a.mean, rest, config.kappa);
      if (config.entropy)
        for (EdgeId u : unknown_out_edges(graph, state.status, x.to)) score += binary_entropy(graph.edge(u).p_open);
      d.scores.push_back(score);
    }
  }
  for (std::size_t i = 1; i < d.scores.size(); ++i)
    if (d.scores[i] > d.scores[d.index]) d.index = i;
  d.edge = d.candidates[d.index];
  d.distribution = smoothed_one_hot(d.candidates.size(), d.index, config.smoothing);
  return d;
}

}  // namespace marvel
