#include "marvel/sim.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>
#include <tuple>

#include "marvel/json.hpp"

namespace marvel {

void ScenarioConfig::validate() const {
  if (!graph) throw InputError("scenario has no graph");
  if (agents.empty()) throw InputError("scenario has no agents");
  double total = 0.0;
  for (const auto& a : agents) {
    graph->check_node(a.origin);
    graph->check_node(a.destination);
    if (a.origin == a.destination) throw InputError("agent " + std::to_string(a.id) + ": origin equals destination");
    if (!(a.budget > 0.0)) throw InputError("agent " + std::to_string(a.id) + ": budget must be positive");
    const bool lone = agents.size() == 1 && a.weight == 1.0;
    if (!lone && !(a.weight > 0.0 && a.weight < 1.0))
      throw InputError("agent " + std::to_string(a.id) + ": weight must lie in (0, 1)");
    total += a.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) throw InputError("agent weights must sum to 1");
}

int ScenarioConfig::step_cap() const {
  if (max_steps_per_agent > 0) return max_steps_per_agent;
  return 4 * static_cast<int>(graph ? graph->num_nodes() : 0) + 16;
}

std::vector<NodeId> ScenarioConfig::destinations() const {
  std::vector<NodeId> d;
  for (const auto& a : agents)
    if (std::find(d.begin(), d.end(), a.destination) == d.end()) d.push_back(a.destination);
  return d;
}

GroundTruth sample_ground_truth(const UncertainGraph& graph, Rng& rng) {
  GroundTruth t;
  t.open.assign(graph.num_edges(), 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (EdgeId id : graph.uncertain_edges()) t.open[static_cast<std::size_t>(id)] = u(rng) < graph.edge(id).p_open;
  return t;
}

GroundTruth fixed_ground_truth(const UncertainGraph& graph, bool uncertain_open) {
  GroundTruth t;
  t.open.assign(graph.num_edges(), 1);
  for (EdgeId id : graph.uncertain_edges()) t.open[static_cast<std::size_t>(id)] = uncertain_open;
  return t;
}

double sample_edge_cost(const EdgeAttr& edge, Rng& rng, bool truncate) {
  if (edge.sigma == 0.0) return edge.mu;
  std::normal_distribution<double> n(edge.mu, edge.sigma);
  const double floor = 0.5 * edge.mu;
  for (;;) {
    const double x = n(rng);
    if (!truncate || x >= floor) return x;
  }
}

double truncated_normal_mean(double mu, double sigma, double lower) {
  if (sigma == 0.0) return mu;
  const double a = (lower - mu) / sigma;
  const double pdf = std::exp(-0.5 * a * a) / std::sqrt(2.0 * std::acos(-1.0));
  return mu + sigma * pdf / (1.0 - normal_cdf(a));
}

std::uint64_t truth_seed(std::uint64_t episode_seed) { return derive_seed(episode_seed, 0x7472757468ULL); }

std::uint64_t agent_stream_seed(std::uint64_t episode_seed, std::size_t agent) {
  return derive_seed(episode_seed, 0x636f7374ULL, agent);
}

namespace {

void check_agent(const EpisodeState& state, std::size_t agent) {
  if (agent >= state.belief.agents.size()) throw InputError("agent index out of range");
}

}  // namespace

void step(EpisodeState& state, const ScenarioConfig& scenario, std::size_t agent, EdgeId edge,
          const GroundTruth& truth, double cost) {
  const auto& graph = *scenario.graph;
  check_agent(state, agent);
  auto& pos = state.belief.agents[agent];
  if (!pos.active()) throw InvariantError("agent " + std::to_string(agent) + " is not active");
  if (edge < 0 || static_cast<std::size_t>(edge) >= graph.num_edges()) throw InvariantError("edge id out of range");
  const auto& e = graph.edge(edge);
  if (e.from != pos.node) throw InvariantError("edge does not leave the agent's node");
  const auto s = state.belief.status(edge);
  if (s == EdgeStatus::Blocked) throw InvariantError("edge is Blocked");
  if (s == EdgeStatus::Unknown) throw InvariantError("edge has not been revealed");
  if (!truth.is_open(edge)) throw InvariantError("edge is closed in the ground truth");
  if (!std::isfinite(cost) || (scenario.truncate && !(cost > 0.0)))
    throw InvariantError("traversal cost must be positive and finite");

  StepRecord* rec = nullptr;
  if (state.transit.size() > agent && state.transit[agent]) {
    rec = &state.steps.at(state.transit[agent]->step);
  } else {
    state.steps.push_back(StepRecord{agent, pos.node, e.to, edge, pos.spent, cost, 0.0, {}, 0.0, false});
    rec = &state.steps.back();
  }

  pos.spent += cost;
  pos.node = e.to;
  state.paths[agent].push_back(e.to);
  ++state.step_count[agent];

  const double before = graph_entropy(graph, state.belief);
  rec->revealed =
      reveal_in_place(graph, state.belief, e.to, [&](const EdgeAttr& x) { return truth.is_open(x.id); });
  rec->delta_h = before - graph_entropy(graph, state.belief);
  rec->arrive_time = pos.spent;
  rec->completed = true;
  state.explored.insert(state.explored.end(), rec->revealed.begin(), rec->revealed.end());

  const auto& spec = scenario.agents[agent];
  if (e.to == spec.destination)
    pos.status = AgentStatus::Arrived;
  else if (pos.spent >= spec.budget)
    pos.status = AgentStatus::FailedLate;
  else if (state.step_count[agent] >= scenario.step_cap())
    pos.status = AgentStatus::FailedStuck;
  if (state.transit.size() > agent) state.transit[agent].reset();
}

void step(EpisodeState& state, const ScenarioConfig& scenario, std::size_t agent, EdgeId edge,
          const GroundTruth& truth, Rng& rng) {
  if (edge < 0 || static_cast<std::size_t>(edge) >= scenario.graph->num_edges())
    throw InvariantError("edge id out of range");
  step(state, scenario, agent, edge, truth, sample_edge_cost(scenario.graph->edge(edge), rng, scenario.truncate));
}

Episode::Episode(const ScenarioConfig& scenario, GroundTruth truth, std::uint64_t seed)
    : scenario_(scenario), truth_(std::move(truth)) {
  scenario_.validate();
  const auto& graph = *scenario_.graph;
  if (truth_.open.size() != graph.num_edges()) throw InputError("ground truth does not match the graph");
  const std::size_t n = scenario_.agents.size();
  state_.belief = BeliefState::initial(graph);
  state_.belief.agents.resize(n);
  state_.transit.resize(n);
  state_.step_count.assign(n, 0);
  state_.paths.resize(n);
  awaiting_.assign(n, 0);
  state_.initial_entropy = graph_entropy(graph, state_.belief);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = scenario_.agents[i];
    state_.belief.agents[i] = AgentPosition{a.origin, 0.0, AgentStatus::Active};
    state_.paths[i].push_back(a.origin);
    rngs_.emplace_back(agent_stream_seed(seed, i));
  }
  for (std::size_t i = 0; i < n; ++i) {
    auto r = reveal_in_place(graph, state_.belief, scenario_.agents[i].origin,
                             [&](const EdgeAttr& x) { return truth_.is_open(x.id); });
    state_.origin_reveals.insert(state_.origin_reveals.end(), r.begin(), r.end());
  }
  state_.explored = state_.origin_reveals;
  state_.origin_delta_h = state_.initial_entropy - graph_entropy(graph, state_.belief);
}

std::vector<EdgeId> Episode::candidates(std::size_t agent) const {
  check_agent(state_, agent);
  std::vector<EdgeId> c;
  for (EdgeId id : scenario_.graph->out_edges(state_.belief.agents[agent].node))
    if (state_.belief.status(id) != EdgeStatus::Blocked) c.push_back(id);
  std::sort(c.begin(), c.end());
  return c;
}

bool Episode::done() const {
  return std::none_of(state_.belief.agents.begin(), state_.belief.agents.end(),
                      [](const AgentPosition& p) { return p.active(); });
}

std::optional<Episode::Event> Episode::advance() {
  if (std::any_of(awaiting_.begin(), awaiting_.end(), [](unsigned char a) { return a != 0; }))
    throw InvariantError("a decision is pending; call depart() first");
  for (;;) {
    // (time, kind rank, agent); arrivals rank before decisions.
    std::optional<std::tuple<double, int, std::size_t>> best;
    for (std::size_t i = 0; i < state_.belief.agents.size(); ++i) {
      const auto& p = state_.belief.agents[i];
      if (!p.active()) continue;
      const auto key = state_.transit[i] ? std::make_tuple(state_.transit[i]->depart_time + state_.transit[i]->cost, 0, i)
                                         : std::make_tuple(p.spent, 1, i);
      if (!best || key < *best) best = key;
    }
    if (!best) return std::nullopt;
    const auto [time, rank, agent] = *best;
    if (rank == 0) {
      const Transit t = *state_.transit[agent];
      step(state_, scenario_, agent, t.edge, truth_, t.cost);
      return Event{EventKind::Arrival, agent, state_.belief.agents[agent].spent, t.step};
    }
    if (candidates(agent).empty()) {
      state_.belief.agents[agent].status = AgentStatus::FailedStuck;
      continue;
    }
    awaiting_[agent] = 1;
    return Event{EventKind::Decision, agent, time, 0};
  }
}

std::size_t Episode::depart(std::size_t agent, EdgeId edge) {
  check_agent(state_, agent);
  if (!awaiting_[agent]) throw InvariantError("agent " + std::to_string(agent) + " is not awaiting a decision");
  const auto c = candidates(agent);
  if (!std::binary_search(c.begin(), c.end(), edge)) throw InvariantError("edge is not a candidate");
  if (state_.belief.status(edge) != EdgeStatus::Open) throw InvariantError("edge has not been revealed");
  const auto& e = scenario_.graph->edge(edge);
  const auto& pos = state_.belief.agents[agent];
  const double cost = sample_edge_cost(e, rngs_[agent], scenario_.truncate);
  state_.steps.push_back(StepRecord{agent, pos.node, e.to, edge, pos.spent, cost, pos.spent + cost, {}, 0.0, false});
  state_.transit[agent] = Transit{edge, pos.spent, cost, state_.steps.size() - 1};
  awaiting_[agent] = 0;
  return state_.steps.size() - 1;
}

void Episode::abandon(std::size_t agent) {
  check_agent(state_, agent);
  if (!awaiting_[agent]) throw InvariantError("agent " + std::to_string(agent) + " is not awaiting a decision");
  state_.belief.agents[agent].status = AgentStatus::FailedStuck;
  awaiting_[agent] = 0;
}

EpisodeOutcome Episode::outcome() const {
  const auto& graph = *scenario_.graph;
  EpisodeOutcome out;
  out.initial_entropy = state_.initial_entropy;
  out.final_entropy = graph_entropy(graph, state_.belief);
  out.explored = state_.explored;
  out.steps = state_.steps;
  out.final_status.assign(state_.belief.statuses().begin(), state_.belief.statuses().end());
  out.total_delta_h = state_.origin_delta_h;
  for (const auto& s : state_.steps) out.total_delta_h += s.delta_h;
  for (std::size_t i = 0; i < scenario_.agents.size(); ++i) {
    const auto& p = state_.belief.agents[i];
    AgentResult r;
    r.status = p.status;
    r.spent = p.spent;
    r.arrival_time = p.arrived() ? p.spent : 0.0;
    r.on_time = p.arrived() && p.spent <= scenario_.agents[i].budget;
    r.path = state_.paths[i];
    r.steps = state_.step_count[i];
    if (r.on_time) out.team_score += scenario_.agents[i].weight;
    out.agents.push_back(std::move(r));
  }
  return out;
}

EpisodeOutcome run_episode(const Policy& policy, const ScenarioConfig& scenario, const GroundTruth& truth,
                           std::uint64_t seed) {
  Episode ep(scenario, truth, seed);
  Rng policy_rng(derive_seed(seed, 0x706f6c696379ULL));
  while (auto ev = ep.advance()) {
    if (ev->kind != Episode::EventKind::Decision) continue;
    const auto cands = ep.candidates(ev->agent);
    const DecisionContext ctx{scenario, ep.state(), ev->agent, cands};
    const EdgeId edge = policy.choose(ctx, policy_rng);
    if (edge == kNoEdge)
      ep.abandon(ev->agent);
    else
      ep.depart(ev->agent, edge);
  }
  return ep.outcome();
}

EpisodeOutcome run_episode(const Policy& policy, const ScenarioConfig& scenario, std::uint64_t seed) {
  Rng truth_rng(truth_seed(seed));
  return run_episode(policy, scenario, sample_ground_truth(*scenario.graph, truth_rng), seed);
}

const char* to_string(AgentStatus s) {
  switch (s) {
    case AgentStatus::Active: return "active";
    case AgentStatus::Arrived: return "arrived";
    case AgentStatus::FailedLate: return "failed_late";
    case AgentStatus::FailedStuck: return "failed_stuck";
  }
  return "?";
}

const char* to_string(EdgeStatus s) {
  switch (s) {
    case EdgeStatus::Unknown: return "unknown";
    case EdgeStatus::Open: return "open";
    case EdgeStatus::Blocked: return "blocked";
  }
  return "?";
}

void write_trajectory_jsonl(std::ostream& out, const UncertainGraph& graph, const EpisodeOutcome& outcome) {
  auto revealed_json = [&](const std::vector<EdgeId>& ids) {
    Json a = Json::array();
    for (EdgeId id : ids) {
      const auto& e = graph.edge(id);
      a.push_back({{"edge", id},
                   {"from", graph.label(e.from)},
                   {"to", graph.label(e.to)},
                   {"status", to_string(outcome.final_status[static_cast<std::size_t>(id)])}});
    }
    return a;
  };
  for (const auto& s : outcome.steps) {
    Json j{{"type", "step"},
           {"agent", s.agent},
           {"from", graph.label(s.from)},
           {"to", graph.label(s.to)},
           {"edge", s.edge},
           {"depart", s.depart_time},
           {"cost", s.cost},
           {"arrive", s.arrive_time},
           {"delta_h", s.delta_h},
           {"revealed", revealed_json(s.revealed)}};
    out << j.dump() << '\n';
  }
  for (std::size_t i = 0; i < outcome.agents.size(); ++i) {
    const auto& a = outcome.agents[i];
    Json path = Json::array();
    for (NodeId v : a.path) path.push_back(graph.label(v));
    Json j{{"type", "agent"}, {"agent", i},         {"status", to_string(a.status)}, {"spent", a.spent},
           {"on_time", a.on_time}, {"steps", a.steps}, {"path", path}};
    out << j.dump() << '\n';
  }
  Json team{{"type", "team"},
            {"team_score", outcome.team_score},
            {"initial_entropy", outcome.initial_entropy},
            {"final_entropy", outcome.final_entropy},
            {"total_delta_h", outcome.total_delta_h},
            {"explored", revealed_json(outcome.explored)}};
  out << team.dump() << '\n';
}

}  // namespace marvel
