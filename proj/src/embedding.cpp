#include "marvel/embedding.hpp"

#include <algorithm>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace marvel {

bool Corpus::uses_step(NodeId from, NodeId to) const {
  for (const auto& chain : chains)
    for (std::size_t i = 0; i + 1 < chain.size(); ++i)
      if (chain[i] == from && chain[i + 1] == to) return true;
  return false;
}

Corpus build_corpus(const UncertainGraph& graph, const BeliefState& belief, std::span<const NodeId> destinations) {
  if (destinations.empty()) throw InputError("corpus needs at least one destination");
  Corpus corpus;
  std::vector<NodeId> dests(destinations.begin(), destinations.end());
  std::sort(dests.begin(), dests.end());
  dests.erase(std::unique(dests.begin(), dests.end()), dests.end());
  for (NodeId d : dests) graph.check_node(d);

  const auto n = static_cast<NodeId>(graph.num_nodes());
  std::vector<ShortestPathTree> trees;
  trees.reserve(dests.size());
  for (NodeId d : dests) trees.push_back(shortest_path_tree(graph, belief.statuses(), d, UnknownMode::ExpectedCost));

  for (NodeId v = 0; v < n; ++v) {
    for (const auto& tree : trees) {
      if (v == tree.destination) continue;
      const auto path = path_from_tree(graph, tree, v);
      if (!path.reachable) continue;
      corpus.chains.push_back(path.node_seq);
      corpus.weights.push_back(chain_weight(path.mu_total));
    }
    std::vector<NodeId> chain{v};
    double mu = 0.0;
    for (EdgeId id : graph.out_edges(v)) {
      if (belief.status(id) == EdgeStatus::Blocked) continue;
      const auto& e = graph.edge(id);
      if (std::find(chain.begin(), chain.end(), e.to) != chain.end()) continue;
      chain.push_back(e.to);
      mu += e.mu;
    }
    if (chain.size() >= 2) {
      corpus.weights.push_back(chain_weight(mu / static_cast<double>(chain.size() - 1)));
      corpus.chains.push_back(std::move(chain));
    }
  }
  return corpus;
}

Corpus random_walk_corpus(const UncertainGraph& graph, const BeliefState& belief, int walks_per_node,
                          int walk_length, std::uint64_t seed) {
  Corpus corpus;
  Rng rng(seed);
  for (NodeId v = 0; v < static_cast<NodeId>(graph.num_nodes()); ++v) {
    for (int w = 0; w < walks_per_node; ++w) {
      std::vector<NodeId> walk{v};
      double mu = 0.0;
      NodeId cur = v;
      for (int s = 1; s < walk_length; ++s) {
        std::vector<EdgeId> options;
        for (EdgeId id : graph.out_edges(cur))
          if (belief.status(id) != EdgeStatus::Blocked) options.push_back(id);
        if (options.empty()) break;
        std::uniform_int_distribution<std::size_t> pick(0, options.size() - 1);
        const auto& e = graph.edge(options[pick(rng)]);
        mu += e.mu;
        cur = e.to;
        walk.push_back(cur);
      }
      if (walk.size() >= 2) {
        corpus.chains.push_back(std::move(walk));
        corpus.weights.push_back(chain_weight(mu));
      }
    }
  }
  return corpus;
}

Eigen::VectorXd skipgram_softmax(const NodeEmbeddings& emb, NodeId center) {
  Eigen::VectorXd scores = emb.context * emb.center.row(center).transpose();
  scores.array() -= scores.maxCoeff();
  scores = scores.array().exp();
  return scores / scores.sum();
}

double skipgram_log_prob(const NodeEmbeddings& emb, NodeId center, NodeId context) {
  const Eigen::VectorXd scores = emb.context * emb.center.row(center).transpose();
  const double mx = scores.maxCoeff();
  const double lse = mx + std::log((scores.array() - mx).exp().sum());
  return scores(context) - lse;
}

Eigen::VectorXd skipgram_center_gradient(const NodeEmbeddings& emb, NodeId center, NodeId context) {
  const Eigen::VectorXd p = skipgram_softmax(emb, center);
  return emb.context.row(context).transpose() - emb.context.transpose() * p;
}

namespace {

/// Context positions of chain[t] within the window.
template <typename F>
void for_each_window(const std::vector<NodeId>& chain, std::size_t t, int window, F&& f) {
  const auto lo = t >= static_cast<std::size_t>(window) ? t - static_cast<std::size_t>(window) : 0;
  const auto hi = std::min(chain.size() - 1, t + static_cast<std::size_t>(window));
  for (std::size_t j = lo; j <= hi; ++j)
    if (j != t) f(chain[j]);
}

void validate(const Corpus& corpus, std::size_t num_nodes) {
  if (corpus.empty()) throw InputError("skip-gram corpus is empty");
  if (corpus.weights.size() != corpus.chains.size()) throw InputError("corpus weights do not match chains");
  for (const auto& chain : corpus.chains) {
    if (chain.size() < 2) throw InputError("corpus chain shorter than 2");
    for (NodeId v : chain)
      if (v < 0 || static_cast<std::size_t>(v) >= num_nodes) throw InputError("corpus node out of range");
  }
}

void sgd_epoch(NodeEmbeddings& emb, const Corpus& corpus, int window, double lr, Rng& rng) {
  std::vector<std::size_t> order(corpus.chains.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n = static_cast<Eigen::Index>(emb.num_nodes());
  Eigen::VectorXd counts(n);
  for (std::size_t c : order) {
    const auto& chain = corpus.chains[c];
    const double w = corpus.weights[c];
    for (std::size_t t = 0; t < chain.size(); ++t) {
      counts.setZero();
      double total = 0.0;
      for_each_window(chain, t, window, [&](NodeId o) {
        counts(o) += 1.0;
        total += 1.0;
      });
      const NodeId center = chain[t];
      const Eigen::VectorXd p = skipgram_softmax(emb, center);
      const Eigen::VectorXd v = emb.center.row(center).transpose();
      const Eigen::VectorXd residual = counts - total * p;
      const Eigen::VectorXd grad_v = emb.context.transpose() * residual;
      emb.context.noalias() += (lr * w) * residual * v.transpose();
      emb.center.row(center) += (lr * w) * grad_v.transpose();
    }
  }
}

}  // namespace

double corpus_log_likelihood(const NodeEmbeddings& emb, const Corpus& corpus, int window) {
  double total = 0.0;
  for (std::size_t c = 0; c < corpus.chains.size(); ++c) {
    const auto& chain = corpus.chains[c];
    for (std::size_t t = 0; t < chain.size(); ++t)
      for_each_window(chain, t, window,
                      [&](NodeId o) { total += corpus.weights[c] * skipgram_log_prob(emb, chain[t], o); });
  }
  return total;
}

double corpus_loss(const NodeEmbeddings& emb, const Corpus& corpus, int window) {
  double pairs = 0.0;
  for (std::size_t c = 0; c < corpus.chains.size(); ++c)
    for (std::size_t t = 0; t < corpus.chains[c].size(); ++t)
      for_each_window(corpus.chains[c], t, window, [&](NodeId) { pairs += corpus.weights[c]; });
  return pairs > 0 ? -corpus_log_likelihood(emb, corpus, window) / pairs : 0.0;
}

void corpus_gradient(const NodeEmbeddings& emb, const Corpus& corpus, int window, Eigen::MatrixXd& d_center,
                     Eigen::MatrixXd& d_context) {
  d_center = Eigen::MatrixXd::Zero(emb.center.rows(), emb.center.cols());
  d_context = Eigen::MatrixXd::Zero(emb.context.rows(), emb.context.cols());
  const auto n = static_cast<Eigen::Index>(emb.num_nodes());
  Eigen::VectorXd counts(n);
  for (std::size_t c = 0; c < corpus.chains.size(); ++c) {
    const auto& chain = corpus.chains[c];
    const double w = corpus.weights[c];
    for (std::size_t t = 0; t < chain.size(); ++t) {
      counts.setZero();
      double total = 0.0;
      for_each_window(chain, t, window, [&](NodeId o) {
        counts(o) += 1.0;
        total += 1.0;
      });
      const NodeId center = chain[t];
      const Eigen::VectorXd p = skipgram_softmax(emb, center);
      const Eigen::VectorXd residual = counts - total * p;
      d_center.row(center) += w * (emb.context.transpose() * residual).transpose();
      d_context.noalias() += w * residual * emb.center.row(center);
    }
  }
}

void fine_tune(NodeEmbeddings& emb, const Corpus& corpus, const SkipGramConfig& config, int epochs,
               std::vector<double>* loss_per_epoch) {
  validate(corpus, emb.num_nodes());
  if (config.window < 1) throw InputError("skip-gram window must be >= 1");
  Rng rng(derive_seed(config.seed, 0x5e6, static_cast<std::uint64_t>(epochs)));
  for (int epoch = 0; epoch < epochs; ++epoch) {
    sgd_epoch(emb, corpus, config.window, config.lr, rng);
    if (loss_per_epoch) loss_per_epoch->push_back(corpus_loss(emb, corpus, config.window));
  }
}

NodeEmbeddings train_skipgram(const Corpus& corpus, std::size_t num_nodes, const SkipGramConfig& config,
                              std::vector<double>* loss_per_epoch) {
  if (config.dim < 1) throw InputError("embedding dimension must be >= 1");
  if (config.window < 1) throw InputError("skip-gram window must be >= 1");
  validate(corpus, num_nodes);
  Rng rng(config.seed);
  const double scale = 0.5 / std::sqrt(static_cast<double>(config.dim));
  std::uniform_real_distribution<double> init(-scale, scale);
  NodeEmbeddings emb;
  const auto n = static_cast<Eigen::Index>(num_nodes);
  emb.center.resize(n, config.dim);
  emb.context.resize(n, config.dim);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < config.dim; ++j) emb.center(i, j) = init(rng);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < config.dim; ++j) emb.context(i, j) = init(rng);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    sgd_epoch(emb, corpus, config.window, config.lr, rng);
    if (loss_per_epoch) loss_per_epoch->push_back(corpus_loss(emb, corpus, config.window));
  }
  return emb;
}

NodeEmbeddings refresh(const NodeEmbeddings& emb, const UncertainGraph& graph, const BeliefState& before,
                       const BeliefState& after, std::span<const NodeId> destinations, const RefreshConfig& config) {
  if (before.num_edges() != after.num_edges()) throw InputError("beliefs do not match");
  if (std::equal(before.statuses().begin(), before.statuses().end(), after.statuses().begin())) return emb;
  NodeEmbeddings next = emb;
  const auto corpus = build_corpus(graph, after, destinations);
  auto sg = config.skipgram;
  sg.seed = derive_seed(config.skipgram.seed, fnv1a64(after.key()));
  fine_tune(next, corpus, sg, config.epochs);
  return next;
}

FeatureMatrix assemble_features(const NodeEmbeddings& emb, const UncertainGraph& graph,
                                std::span<const EdgeStatus> status, std::span<const AgentView> agents,
                                std::size_t ego) {
  if (ego >= agents.size()) throw InputError("ego agent out of range");
  if (emb.num_nodes() != graph.num_nodes()) throw InputError("embeddings do not cover the graph");
  for (const auto& a : agents) {
    graph.check_node(a.node);
    graph.check_node(a.destination);
  }
  const auto n = static_cast<Eigen::Index>(graph.num_nodes());
  const int d = emb.dim();
  FeatureMatrix f;
  f.embedding_dim = d;
  f.values = Eigen::MatrixXd::Zero(n, d + kPositionalChannels);
  f.values.leftCols(d) = emb.center;
  const auto& me = agents[ego];
  f.values(me.node, f.ego_col()) = 1.0;
  f.values(me.destination, f.own_dest_col()) = 1.0;
  for (std::size_t i = 0; i < agents.size(); ++i)
    if (i != ego && agents[i].active) f.values(agents[i].destination, f.others_dest_col()) = 1.0;
  const double remaining = me.budget > 0 ? std::max(0.0, (me.budget - me.spent) / me.budget) : 0.0;
  f.values.col(f.budget_col()).setConstant(remaining);
  for (NodeId v = 0; v < static_cast<NodeId>(n); ++v)
    f.values(v, f.entropy_col()) = incident_unknown_entropy(graph, status, v);
  return f;
}

void write_embeddings(std::ostream& out, const NodeEmbeddings& emb, const UncertainGraph& graph) {
  if (emb.num_nodes() != graph.num_nodes()) throw InputError("embeddings do not cover the graph");
  out << "marvel-embeddings 1 " << emb.num_nodes() << ' ' << emb.dim() << '\n';
  out.precision(17);
  for (Eigen::Index i = 0; i < emb.center.rows(); ++i) {
    out << graph.label(static_cast<NodeId>(i));
    for (Eigen::Index j = 0; j < emb.center.cols(); ++j) out << ' ' << emb.center(i, j);
    out << " |";
    for (Eigen::Index j = 0; j < emb.context.cols(); ++j) out << ' ' << emb.context(i, j);
    out << '\n';
  }
}

NodeEmbeddings read_embeddings(std::istream& in, const UncertainGraph& graph) {
  std::string magic;
  int version = 0;
  std::size_t nodes = 0;
  int dim = 0;
  in >> magic >> version >> nodes >> dim;
  if (!in || magic != "marvel-embeddings" || version != 1) throw ParseError("embeddings", 1, "bad header");
  if (nodes != graph.num_nodes() || dim < 1) throw InputError("embedding file does not match graph");
  NodeEmbeddings emb;
  emb.center = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nodes), dim);
  emb.context = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nodes), dim);
  std::vector<char> seen(nodes, 0);
  std::string line;
  std::getline(in, line);
  for (std::size_t row = 0; row < nodes; ++row) {
    const int lineno = static_cast<int>(row) + 2;
    if (!std::getline(in, line)) throw ParseError("embeddings", lineno, "missing row");
    std::istringstream ls(line);
    int label = 0;
    if (!(ls >> label) || !graph.has_label(label)) throw ParseError("embeddings", lineno, "unknown node label");
    const NodeId v = graph.node_of(label);
    if (seen[static_cast<std::size_t>(v)]) throw ParseError("embeddings", lineno, "duplicate node");
    seen[static_cast<std::size_t>(v)] = 1;
    for (int j = 0; j < dim; ++j)
      if (!(ls >> emb.center(v, j))) throw ParseError("embeddings", lineno, "short center row");
    std::string bar;
    if (!(ls >> bar) || bar != "|") throw ParseError("embeddings", lineno, "missing separator");
    for (int j = 0; j < dim; ++j)
      if (!(ls >> emb.context(v, j))) throw ParseError("embeddings", lineno, "short context row");
  }
  return emb;
}

EmbeddingCache::EmbeddingCache(std::shared_ptr<const UncertainGraph> graph, std::vector<NodeId> destinations,
                               RefreshConfig config)
    : graph_(std::move(graph)), destinations_(std::move(destinations)), config_(config) {
  initial_ = BeliefState::initial(*graph_);
  const auto corpus = build_corpus(*graph_, initial_, destinations_);
  base_ = std::make_shared<const NodeEmbeddings>(train_skipgram(corpus, graph_->num_nodes(), config_.skipgram));
  cache_.emplace(initial_.key(), base_);
}

std::size_t EmbeddingCache::size() const {
  std::lock_guard lock(mutex_);
  return cache_.size();
}

std::shared_ptr<const NodeEmbeddings> EmbeddingCache::get(std::span<const EdgeStatus> status) {
  BeliefState belief = initial_;
  for (EdgeId id : graph_->uncertain_edges())
    if (status[static_cast<std::size_t>(id)] != EdgeStatus::Unknown)
      belief.set_status(id, status[static_cast<std::size_t>(id)]);
  const auto key = belief.key();
  {
    std::lock_guard lock(mutex_);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  }
  auto emb = std::make_shared<const NodeEmbeddings>(refresh(*base_, *graph_, initial_, belief, destinations_, config_));
  std::lock_guard lock(mutex_);
  return cache_.emplace(key, std::move(emb)).first->second;
}

}  // namespace marvel
