#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include "marvel/graph.hpp"

namespace marvel {

/// Node chains for skip-gram training; chain_weight in (0, 1].
struct Corpus {
  std::vector<std::vector<NodeId>> chains;
  std::vector<double> weights;

  bool empty() const { return chains.empty(); }
  /// True if any chain steps over edge from -> to.
  bool uses_step(NodeId from, NodeId to) const;
};

/// One chain per (node, reachable destination) along the ExpectedCost shortest path with
/// Blocked edges excluded, plus one neighbor chain [v, n1, ...] per node with out-neighbors.
Corpus build_corpus(const UncertainGraph& graph, const BeliefState& belief, std::span<const NodeId> destinations);

/// Weight assigned to a chain of the given mean cost.
inline double chain_weight(double mu_total) { return 1.0 / (1.0 + mu_total); }

/// Uniform random-walk corpus (canonical Node2Vec-style sampling), kept for ablation comparisons.
Corpus random_walk_corpus(const UncertainGraph& graph, const BeliefState& belief, int walks_per_node,
                          int walk_length, std::uint64_t seed);

struct SkipGramConfig {
  int dim = 128;
  int window = 2;
  int epochs = 60;
  double lr = 0.05;
  std::uint64_t seed = 1;
};

/// Center vectors v_i (rows of `center`) and context vectors u_i (rows of `context`).
struct NodeEmbeddings {
  Eigen::MatrixXd center;
  Eigen::MatrixXd context;

  int dim() const { return static_cast<int>(center.cols()); }
  std::size_t num_nodes() const { return static_cast<std::size_t>(center.rows()); }
  bool operator==(const NodeEmbeddings& o) const { return center == o.center && context == o.context; }
};

/// P(. | w_c) over the whole vocabulary.
Eigen::VectorXd skipgram_softmax(const NodeEmbeddings& emb, NodeId center);
double skipgram_log_prob(const NodeEmbeddings& emb, NodeId center, NodeId context);
/// d log P(w_o | w_c) / d v_c = u_o - sum_j P(w_j | w_c) u_j
Eigen::VectorXd skipgram_center_gradient(const NodeEmbeddings& emb, NodeId center, NodeId context);

/// Weighted log-likelihood of the corpus: sum_chains w * sum_t sum_{0<|j|<=m} log P(w_{t+j} | w_t).
double corpus_log_likelihood(const NodeEmbeddings& emb, const Corpus& corpus, int window);
/// Mean weighted negative log-likelihood per (center, context) pair.
double corpus_loss(const NodeEmbeddings& emb, const Corpus& corpus, int window);
/// Exact gradient of corpus_log_likelihood with respect to both matrices.
void corpus_gradient(const NodeEmbeddings& emb, const Corpus& corpus, int window, Eigen::MatrixXd& d_center,
                     Eigen::MatrixXd& d_context);

/// Throws InputError on an empty corpus or invalid config. Deterministic per seed.
NodeEmbeddings train_skipgram(const Corpus& corpus, std::size_t num_nodes, const SkipGramConfig& config,
                              std::vector<double>* loss_per_epoch = nullptr);
/// Continues SGD from existing matrices for `epochs` epochs.
void fine_tune(NodeEmbeddings& emb, const Corpus& corpus, const SkipGramConfig& config, int epochs,
               std::vector<double>* loss_per_epoch = nullptr);

struct RefreshConfig {
  SkipGramConfig skipgram;
  int epochs = 10;
};

/// Rebuilds the corpus under `after` and warm-starts from `emb`. Returns `emb` unchanged
/// when no edge status differs between the two beliefs.
NodeEmbeddings refresh(const NodeEmbeddings& emb, const UncertainGraph& graph, const BeliefState& before,
                       const BeliefState& after, std::span<const NodeId> destinations, const RefreshConfig& config);

inline constexpr int kPositionalChannels = 5;

/// Per-agent input to feature assembly.
struct AgentView {
  NodeId node = kNoNode;
  NodeId destination = kNoNode;
  double budget = 1.0;
  double spent = 0.0;
  bool active = true;
};

/// |V| x (d + 5): [embedding | ego position | own destination | others' destinations |
/// remaining budget fraction | incident unknown-edge entropy].
struct FeatureMatrix {
  Eigen::MatrixXd values;
  int embedding_dim = 0;

  int ego_col() const { return embedding_dim; }
  int own_dest_col() const { return embedding_dim + 1; }
  int others_dest_col() const { return embedding_dim + 2; }
  int budget_col() const { return embedding_dim + 3; }
  int entropy_col() const { return embedding_dim + 4; }
  int width() const { return static_cast<int>(values.cols()); }
};

FeatureMatrix assemble_features(const NodeEmbeddings& emb, const UncertainGraph& graph,
                                std::span<const EdgeStatus> status, std::span<const AgentView> agents,
                                std::size_t ego);

/// Text format: header line "marvel-embeddings 1 <nodes> <dim>", then one line per node:
/// "<label> c_1 .. c_d | u_1 .. u_d".
void write_embeddings(std::ostream& out, const NodeEmbeddings& emb, const UncertainGraph& graph);
NodeEmbeddings read_embeddings(std::istream& in, const UncertainGraph& graph);

/// Belief-keyed store of refreshed embeddings. Thread-safe; results depend only on the belief,
/// never on lookup order.
class EmbeddingCache {
 public:
  EmbeddingCache(std::shared_ptr<const UncertainGraph> graph, std::vector<NodeId> destinations,
                 RefreshConfig config);

  /// Embeddings for the given edge statuses (trained lazily).
  std::shared_ptr<const NodeEmbeddings> get(std::span<const EdgeStatus> status);
  const NodeEmbeddings& base() const { return *base_; }
  const UncertainGraph& graph() const { return *graph_; }
  std::size_t size() const;
  const RefreshConfig& config() const { return config_; }
  std::span<const NodeId> destinations() const { return destinations_; }

 private:
  std::shared_ptr<const UncertainGraph> graph_;
  std::vector<NodeId> destinations_;
  RefreshConfig config_;
  BeliefState initial_;
  std::shared_ptr<const NodeEmbeddings> base_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const NodeEmbeddings>> cache_;
};

}  // namespace marvel
