#include "marvel/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

namespace marvel {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr decay must lie in (0, 1]");
  if (decay_every < 1) throw ConfigError("decay interval must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must lie in [0, 1]");
  if (!(kappa > 0.0)) throw ConfigError("kappa must be positive");
  if (embed_dim < 1 || heads < 1 || head_dim < 1 || layers < 1) throw ConfigError("network dimensions must be positive");
  if (refresh.skipgram.dim != embed_dim) throw ConfigError("refresh skip-gram dim must equal embed_dim");
  if (convergence_window < 1 || convergence_hold < 1 || !(convergence_band > 0.0))
    throw ConfigError("invalid convergence settings");
}

double learning_rate(const TrainConfig& config, int epoch) {
  return config.lr * std::pow(config.lr_decay, static_cast<double>(epoch / config.decay_every));
}

GatGradients compute_gradient(std::span<const StepTerm> terms, const StepNormalizer& norm, const TrainConfig& config) {
  if (terms.empty()) throw InputError("no trajectory steps to differentiate");
  GatGradients g = terms.front().grad_logp.zeros_like();
  for (const auto& t : terms) {
    if (t.agent >= norm.agent_steps.size()) throw InputError("step agent out of range");
    const double m_i = norm.agent_steps[t.agent];
    if (!(m_i > 0.0)) throw InvariantError("agent step count M is zero");
    double coef = t.weight * t.surrogate / m_i;
    if (config.entropy) {
      if (!(norm.team_steps > 0.0)) throw InvariantError("team step count M is zero");
      coef += t.delta_h / norm.team_steps;
    }
    if (coef != 0.0) g.add_scaled(coef, t.grad_logp);
    if (config.expert_loss && config.beta > 0.0 && t.grad_ce) g.add_scaled(-config.beta, *t.grad_ce);
  }
  return g;
}

double agent_surrogate(const ScenarioConfig& scenario, const EpisodeState& state, std::size_t agent, double kappa) {
  const auto& p = state.belief.agents.at(agent);
  const auto& spec = scenario.agents[agent];
  switch (p.status) {
    case AgentStatus::FailedStuck:
      return 0.0;
    case AgentStatus::Arrived: {
      PathResult here;
      here.reachable = true;
      here.node_seq = {p.node};
      return sota_surrogate(spec.budget, p.spent, here, kappa);
    }
    default:
      break;
  }
  const auto path =
      shortest_path_expected(*scenario.graph, state.belief.statuses(), p.node, spec.destination, UnknownMode::ExpectedCost);
  return sota_surrogate(spec.budget, p.spent, path, kappa);
}

Adam::Adam(std::size_t size, double beta1, double beta2, double eps)
    : m_(size, 0.0), v_(size, 0.0), b1_(beta1), b2_(beta2), eps_(eps) {}

void Adam::ascend(GatParams& params, const GatGradients& grad, double lr) {
  auto theta = params.flatten();
  const auto g = grad.flatten();
  if (g.size() != m_.size() || theta.size() != m_.size()) throw ConfigError("optimizer size mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    m_[i] = b1_ * m_[i] + (1.0 - b1_) * g[i];
    v_[i] = b2_ * v_[i] + (1.0 - b2_) * g[i] * g[i];
    theta[i] += lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
  params.assign(theta);
}

std::shared_ptr<EmbeddingCache> make_embedding_cache(const ScenarioConfig& scenario, const TrainConfig& config) {
  RefreshConfig rc = config.refresh;
  rc.skipgram.dim = config.embed_dim;
  return std::make_shared<EmbeddingCache>(scenario.graph, scenario.destinations(), rc);
}

namespace {

struct Pending {
  GatGradients grad_logp;
  std::optional<GatGradients> grad_ce;
  TrajectoryStep record;
};

// q over `dist` candidates, taken from the expert's distribution over its own candidate list.
std::vector<double> align_target(const ActionDistribution& dist, const ExpertDecision& expert) {
  std::vector<double> q(dist.size(), 0.0);
  for (std::size_t i = 0; i < dist.size(); ++i) {
    const auto it = std::find(expert.candidates.begin(), expert.candidates.end(), dist.edges[i]);
    if (it == expert.candidates.end()) throw InvariantError("expert and policy candidates differ");
    q[i] = expert.distribution[static_cast<std::size_t>(it - expert.candidates.begin())];
  }
  return q;
}

}  // namespace

TrainResult train(const ScenarioConfig& scenario, const TrainConfig& config, std::shared_ptr<EmbeddingCache> embeddings,
                  const EpochCallback& callback) {
  config.validate();
  scenario.validate();
  const auto& graph = *scenario.graph;
  if (!embeddings) embeddings = make_embedding_cache(scenario, config);
  if (embeddings->base().dim() != config.embed_dim) throw ConfigError("embedding store dim differs from embed_dim");

  GatModel model(init_params(config.dims(), derive_seed(config.seed, 0x696e6974ULL)),
                 GatOptions{config.attention, 0.2}, embeddings);
  GatParams& params = model.params();
  Planner planner(scenario);
  ExpertConfig expert_cfg = config.expert;
  expert_cfg.entropy = config.entropy;
  Adam adam(params.size(), config.adam_beta1, config.adam_beta2, config.adam_eps);

  const std::size_t n = scenario.agents.size();
  StepNormalizer norm;
  const auto initial = BeliefState::initial(graph);
  for (const auto& a : scenario.agents) {
    const auto p = shortest_path_expected(graph, initial, a.origin, a.destination, UnknownMode::ExpectedCost);
    norm.agent_steps.push_back(std::max<double>(1.0, static_cast<double>(p.edge_seq.size())));
  }
  norm.team_steps = std::accumulate(norm.agent_steps.begin(), norm.agent_steps.end(), 0.0);

  TrainResult result;
  std::vector<double> objectives;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = learning_rate(config, epoch);
    const std::uint64_t ep_seed = derive_seed(config.seed, 0x65706f6368ULL, static_cast<std::uint64_t>(epoch));
    Rng truth_rng(truth_seed(ep_seed));
    Episode ep(scenario, sample_ground_truth(graph, truth_rng), ep_seed);
    Rng act_rng(derive_seed(ep_seed, 0x616374ULL));
    std::vector<std::optional<Pending>> pending(n);
    Trajectory traj;
    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    int agree = 0;
    double ce_sum = 0.0;

    while (auto ev = ep.advance()) {
      const std::size_t i = ev->agent;
      if (ev->kind == Episode::EventKind::Decision) {
        const auto views = agent_views(scenario, ep.state());
        const auto statuses = ep.state().belief.statuses();
        const auto d = model.decide(statuses, views, i);
        const std::size_t a = d.dist.sample(act_rng);
        Pending p;
        p.grad_logp = gat_backward(params, d.forward.cache, d.dist, logprob_logit_grad(d.dist, a));
        p.record.belief_key = ep.state().belief.key();
        p.record.agent = i;
        p.record.node = views[i].node;
        p.record.edge = d.dist.edges[a];
        p.record.log_prob = std::log(d.dist.probs[a]);
        if (config.expert_loss) {
          const auto ex = expert_action(planner, plan_state_from_episode(scenario, ep.state()), i, expert_cfg);
          const auto q = align_target(d.dist, ex);
          p.record.expert_edge = ex.edge;
          agree += d.dist.edges[d.dist.argmax()] == ex.edge;
          ce_sum += cross_entropy(q, d.dist.probs);
          if (config.beta > 0.0) p.grad_ce = gat_backward(params, d.forward.cache, d.dist, cross_entropy_logit_grad(d.dist, q));
        }
        ++log.decisions;
        pending[i] = std::move(p);
        ep.depart(i, d.dist.edges[a]);
        continue;
      }
      if (!pending[i]) throw InvariantError("arrival without a recorded decision");
      Pending p = std::move(*pending[i]);
      pending[i].reset();
      const auto& rec = ep.state().steps.at(ev->step);
      StepTerm term;
      term.agent = i;
      term.weight = scenario.agents[i].weight;
      term.surrogate = agent_surrogate(scenario, ep.state(), i, config.kappa);
      term.delta_h = rec.delta_h;
      term.grad_logp = std::move(p.grad_logp);
      term.grad_ce = std::move(p.grad_ce);
      const auto g = compute_gradient(std::span<const StepTerm>(&term, 1), norm, config);
      adam.ascend(params, g, lr);
      if (!params.all_finite())
        throw NumericalError("parameters diverged at epoch " + std::to_string(epoch) + " (non-finite weights)");
      p.record.cost = rec.cost;
      p.record.delta_h = rec.delta_h;
      p.record.surrogate = term.surrogate;
      traj.steps.push_back(std::move(p.record));
    }

    const auto out = ep.outcome();
    for (std::size_t i = 0; i < n; ++i) log.objective += scenario.agents[i].weight * agent_surrogate(scenario, ep.state(), i, config.kappa);
    if (!std::isfinite(log.objective)) throw NumericalError("objective is not finite at epoch " + std::to_string(epoch));
    log.team_score = out.team_score;
    log.entropy_term = out.total_delta_h;
    log.expert_agreement = log.decisions > 0 && config.expert_loss ? static_cast<double>(agree) / log.decisions : 0.0;
    log.cross_entropy = log.decisions > 0 ? ce_sum / log.decisions : 0.0;
    for (std::size_t i = 0; i < n; ++i) norm.agent_steps[i] = std::max(1, ep.state().step_count[i]);
    norm.team_steps = std::accumulate(norm.agent_steps.begin(), norm.agent_steps.end(), 0.0);

    objectives.push_back(log.objective);
    result.log.push_back(log);
    result.last_trajectories = {std::move(traj)};
    if (callback) callback(log, params);
  }
  result.params = params;
  result.converged_epoch =
      convergence_epoch(objectives, config.convergence_window, config.convergence_hold, config.convergence_band);
  return result;
}

std::vector<double> moving_average(std::span<const double> values, int window) {
  if (window < 1) throw ConfigError("window must be >= 1");
  std::vector<double> ma(values.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    sum += values[i];
    if (i >= static_cast<std::size_t>(window)) sum -= values[i - static_cast<std::size_t>(window)];
    ma[i] = sum / static_cast<double>(std::min<std::size_t>(i + 1, static_cast<std::size_t>(window)));
  }
  return ma;
}

std::optional<int> convergence_epoch(std::span<const double> objective, int window, int hold, double band) {
  const auto ma = moving_average(objective, window);
  const int n = static_cast<int>(ma.size());
  if (n < window + hold - 1) return std::nullopt;
  const double final_value = ma.back();
  const double tol = band * std::abs(final_value);
  int run = 0;
  for (int e = window - 1; e < n; ++e) {
    run = std::abs(ma[static_cast<std::size_t>(e)] - final_value) <= tol ? run + 1 : 0;
    if (run == hold) return e - hold + 1;
  }
  return std::nullopt;
}

void write_train_log_csv(std::ostream& out, std::span<const EpochLog> log) {
  out << "epoch,objective,lr,expert_agreement,entropy_term,cross_entropy,decisions,team_score\n";
  out.precision(10);
  for (const auto& l : log)
    out << l.epoch << ',' << l.objective << ',' << l.lr << ',' << l.expert_agreement << ',' << l.entropy_term << ','
        << l.cross_entropy << ',' << l.decisions << ',' << l.team_score << '\n';
}

}  // namespace marvel
