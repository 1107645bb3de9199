#pragma once

#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "marvel/embedding.hpp"
#include "marvel/gat_policy.hpp"
#include "marvel/planning.hpp"
#include "marvel/policy_net.hpp"
#include "marvel/sim.hpp"

namespace marvel {

struct TrainConfig {
  double lr = 1e-3;
  double lr_decay = 0.95;
  int decay_every = 100;
  int epochs = 1000;
  int embed_dim = 128;
  int heads = 8;
  int head_dim = 16;
  int layers = 2;
  double beta = 0.5;  // weight of the expert cross-entropy term
  bool entropy = true;
  bool attention = true;
  bool expert_loss = true;
  double kappa = 1.0;
  std::uint64_t seed = 1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  ExpertConfig expert;
  RefreshConfig refresh;
  int convergence_window = 100;  // moving-average length
  int convergence_hold = 200;    // epochs that must stay inside the band
  double convergence_band = 0.01;

  /// Throws ConfigError.
  void validate() const;
  GatDims dims() const { return GatDims{embed_dim + kPositionalChannels, head_dim, heads, layers}; }
};

/// lr(epoch) = lr * decay^floor(epoch / decay_every), epochs counted from 0.
double learning_rate(const TrainConfig& config, int epoch);

struct TrajectoryStep {
  std::string belief_key;
  std::size_t agent = 0;
  NodeId node = kNoNode;
  EdgeId edge = kNoEdge;
  double log_prob = 0.0;
  double cost = 0.0;
  double delta_h = 0.0;
  EdgeId expert_edge = kNoEdge;
  double surrogate = 0.0;
};

struct Trajectory {
  std::vector<TrajectoryStep> steps;
};

/// One decision's contribution: score-function and expert gradients taken at departure,
/// surrogate and entropy change observed at arrival.
struct StepTerm {
  std::size_t agent = 0;
  double weight = 0.0;     // lambda_i
  double surrogate = 0.0;  // S at the post-step state
  double delta_h = 0.0;    // entropy reduction caused by the step (>= 0)
  GatGradients grad_logp;
  std::optional<GatGradients> grad_ce;
};

/// Per-agent and team step counts used to average the per-step credit.
struct StepNormalizer {
  std::vector<double> agent_steps;
  double team_steps = 0.0;
};

/// Ascent direction: sum over terms of
///   (lambda_i S / M_i + [entropy] dH / M_team) grad log pi - [expert] beta grad CE.
/// Throws InputError on an empty term list and InvariantError on a zero normalizer.
GatGradients compute_gradient(std::span<const StepTerm> terms, const StepNormalizer& norm, const TrainConfig& config);

/// Surrogate of an agent's position in a running episode (0 once stuck).
double agent_surrogate(const ScenarioConfig& scenario, const EpisodeState& state, std::size_t agent, double kappa);

class Adam {
 public:
  Adam(std::size_t size, double beta1, double beta2, double eps);
  /// params += lr * corrected first moment / (sqrt(second) + eps).
  void ascend(GatParams& params, const GatGradients& grad, double lr);
  long steps() const { return t_; }

 private:
  std::vector<double> m_, v_;
  double b1_, b2_, eps_;
  long t_ = 0;
};

struct EpochLog {
  int epoch = 0;
  double objective = 0.0;  // sum lambda_i S_i at episode end
  double lr = 0.0;
  double expert_agreement = 0.0;
  double entropy_term = 0.0;  // total entropy reduction of the episode
  double cross_entropy = 0.0;  // mean CE to the expert over decisions
  int decisions = 0;
  double team_score = 0.0;  // realized on-time score
};

struct TrainResult {
  GatParams params;
  std::vector<EpochLog> log;
  std::optional<int> converged_epoch;
  std::vector<Trajectory> last_trajectories;
};

std::shared_ptr<EmbeddingCache> make_embedding_cache(const ScenarioConfig& scenario, const TrainConfig& config);

/// Checkpoint hook: called after each epoch.
using EpochCallback = std::function<void(const EpochLog&, const GatParams&)>;

/// Online expert-augmented policy gradient; one sampled episode per epoch, one Adam update at
/// each traversal's arrival. Throws NumericalError on divergence.
TrainResult train(const ScenarioConfig& scenario, const TrainConfig& config,
                  std::shared_ptr<EmbeddingCache> embeddings = nullptr, const EpochCallback& callback = {});

/// First epoch e (e >= window - 1) such that the moving average of epochs e .. e + hold - 1 stays
/// within band * |final moving average| of the final moving average; nullopt if none.
std::optional<int> convergence_epoch(std::span<const double> objective, int window, int hold, double band);
std::vector<double> moving_average(std::span<const double> values, int window);

void write_train_log_csv(std::ostream& out, std::span<const EpochLog> log);

}  // namespace marvel
