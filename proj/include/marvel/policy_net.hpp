#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <span>
#include <vector>

#include "marvel/embedding.hpp"
#include "marvel/graph.hpp"

namespace marvel {

struct GatDims {
  int in_dim = 128 + kPositionalChannels;
  int head_dim = 16;
  int heads = 8;
  int layers = 2;
};

struct GatHead {
  Eigen::MatrixXd W;  // out_dim x in_dim
  Eigen::VectorXd a;  // 2 * out_dim: [source half | neighbor half]
};

struct GatLayer {
  int in_dim = 0;
  int out_dim = 0;  // per head
  std::vector<GatHead> heads;
  int output_dim() const { return out_dim * static_cast<int>(heads.size()); }
};

/// All learnable weights. `version` changes whenever values are modified through the
/// member functions, so a ForwardCache can detect that it no longer matches.
struct GatParams {
  std::vector<GatLayer> layers;
  std::uint64_t version = 0;

  int in_dim() const { return layers.empty() ? 0 : layers.front().in_dim; }
  int output_dim() const { return layers.empty() ? 0 : layers.back().output_dim(); }
  std::size_t size() const;
  GatParams zeros_like() const;
  void add_scaled(double scale, const GatParams& other);
  void scale(double s);
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);
  bool all_finite() const;
  double squared_norm() const;
  bool same_shape(const GatParams& other) const;
  void touch() { ++version; }
};

using GatGradients = GatParams;

/// Glorot-uniform init, s = sqrt(6 / (fan_in + fan_out)). Throws ConfigError on a bad chain.
GatParams init_params(const GatDims& dims, std::uint64_t seed);

struct GatOptions {
  bool attention = true;  // false: alpha_ij = 1 / |N_i|
  double leaky_slope = 0.2;
};

/// Attention neighborhoods: self first, then distinct non-Blocked out-neighbors.
struct Neighborhoods {
  std::vector<std::vector<NodeId>> nodes;
};

Neighborhoods build_neighborhoods(const UncertainGraph& graph, std::span<const EdgeStatus> status);

struct HeadCache {
  Eigen::MatrixXd z;                       // n x out: W h_j
  std::vector<std::vector<double>> logit;  // e_ij before LeakyReLU, aligned with neighborhoods
  std::vector<std::vector<double>> alpha;
  Eigen::MatrixXd agg;                     // n x out: sum_j alpha_ij W h_j
};

struct LayerCache {
  Eigen::MatrixXd input;
  std::vector<HeadCache> heads;
  Eigen::MatrixXd output;  // ELU(agg), heads concatenated
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  Neighborhoods neighborhoods;
  GatOptions options;
  const GatParams* params = nullptr;
  std::uint64_t params_version = 0;
};

struct ForwardResult {
  Eigen::MatrixXd reprs;  // n x output_dim
  ForwardCache cache;
};

ForwardResult gat_forward(const GatParams& params, const FeatureMatrix& features, const Neighborhoods& neighborhoods,
                          const GatOptions& options = {});

struct ActionDistribution {
  NodeId current = kNoNode;
  std::vector<EdgeId> edges;
  std::vector<NodeId> heads;
  std::vector<double> logits;
  std::vector<double> probs;

  std::size_t size() const { return edges.size(); }
  /// Highest probability; ties broken by lowest edge id.
  std::size_t argmax() const;
  std::size_t index_of(EdgeId edge) const;
  std::size_t sample(Rng& rng) const;
};

/// Candidates are the non-Blocked out-edges of `current`; logit = h_current . h_head.
/// Throws DeadEndError when there are none.
ActionDistribution action_distribution(const Eigen::MatrixXd& reprs, const UncertainGraph& graph,
                                       std::span<const EdgeStatus> status, NodeId current);

/// d log pi(action) / d logits.
std::vector<double> logprob_logit_grad(const ActionDistribution& dist, std::size_t action);
/// d CE(target, pi) / d logits = pi - target.
std::vector<double> cross_entropy_logit_grad(const ActionDistribution& dist, std::span<const double> target);
double cross_entropy(std::span<const double> target, std::span<const double> probs);

/// Backpropagates an upstream gradient on the candidate logits into every parameter.
/// Throws InvariantError if `cache` was produced with different or since-modified params.
GatGradients gat_backward(const GatParams& params, const ForwardCache& cache, const ActionDistribution& dist,
                          std::span<const double> logit_grad);

/// Checkpoint: JSON object {"format": "marvel-gat", "version": 1, "dims": {...}, "attention": bool,
/// "layers": [{"in_dim", "out_dim", "heads": [{"W": [row-major], "a": [...]}]}]}.
void save_checkpoint(std::ostream& out, const GatParams& params, const GatOptions& options);
/// Rejects files whose dimensions differ from `expected` (when given).
GatParams load_checkpoint(std::istream& in, GatOptions* options = nullptr, const GatDims* expected = nullptr);

}  // namespace marvel
