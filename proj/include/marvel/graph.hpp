#pragma once

#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "marvel/common.hpp"

namespace marvel {

struct EdgeAttr {
  EdgeId id = kNoEdge;
  NodeId from = kNoNode;
  NodeId to = kNoNode;
  double mu = 0.0;     // mean travel cost
  double sigma = 0.0;  // cost standard deviation
  double p_open = 1.0;
  bool certain = true;  // p_open == 1, never revealed
};

/// Directed network with per-edge cost distribution and traversal probability.
class UncertainGraph {
 public:
  UncertainGraph() = default;

  /// Adds a node with an external label (TNTP node number, figure label, ...).
  NodeId add_node(int label);
  /// Validates mu > 0, sigma >= 0, 0 < p_open <= 1.
  EdgeId add_edge(NodeId from, NodeId to, double mu, double sigma, double p_open = 1.0);
  /// Replace the uncertainty attributes of an existing edge (sidecar application).
  void set_uncertainty(EdgeId id, double sigma, double p_open);

  std::size_t num_nodes() const { return labels_.size(); }
  std::size_t num_edges() const { return edges_.size(); }

  const EdgeAttr& edge(EdgeId id) const { return edges_.at(static_cast<std::size_t>(id)); }
  std::span<const EdgeAttr> edges() const { return edges_; }
  std::span<const EdgeId> out_edges(NodeId node) const { return out_.at(static_cast<std::size_t>(node)); }
  std::span<const EdgeId> in_edges(NodeId node) const { return in_.at(static_cast<std::size_t>(node)); }
  std::span<const EdgeId> uncertain_edges() const { return uncertain_; }

  int label(NodeId node) const { return labels_.at(static_cast<std::size_t>(node)); }
  /// Throws InputError for an unknown label.
  NodeId node_of(int label) const;
  bool has_label(int label) const { return index_.contains(label); }
  void check_node(NodeId node) const;

  /// First edge from -> to, or kNoEdge.
  EdgeId find_edge(NodeId from, NodeId to) const;

  bool operator==(const UncertainGraph& other) const;

 private:
  void rebuild_uncertain();

  std::vector<int> labels_;
  std::unordered_map<int, NodeId> index_;
  std::vector<EdgeAttr> edges_;
  std::vector<std::vector<EdgeId>> out_;
  std::vector<std::vector<EdgeId>> in_;
  std::vector<EdgeId> uncertain_;
};

enum class EdgeStatus : unsigned char { Unknown, Open, Blocked };

enum class AgentStatus : unsigned char { Active, Arrived, FailedLate, FailedStuck };

struct AgentPosition {
  NodeId node = kNoNode;
  double spent = 0.0;
  AgentStatus status = AgentStatus::Active;
  bool arrived() const { return status == AgentStatus::Arrived; }
  bool active() const { return status == AgentStatus::Active; }
};

/// Team-shared knowledge: revelation status of every uncertain edge plus agent positions.
/// Certain edges report Open and cannot change.
class BeliefState {
 public:
  BeliefState() = default;
  static BeliefState initial(const UncertainGraph& graph);

  EdgeStatus status(EdgeId id) const { return status_.at(static_cast<std::size_t>(id)); }
  /// Only Unknown -> Open / Unknown -> Blocked on uncertain edges; anything else is an InvariantError.
  void set_status(EdgeId id, EdgeStatus s);
  bool is_uncertain(EdgeId id) const { return uncertain_.at(static_cast<std::size_t>(id)) != 0; }
  std::span<const EdgeStatus> statuses() const { return status_; }
  std::size_t unknown_count() const;
  std::size_t num_edges() const { return status_.size(); }

  /// Compact signature of the edge statuses (uncertain edges only, in id order).
  std::string key() const;

  std::vector<AgentPosition> agents;

 private:
  std::vector<EdgeStatus> status_;
  std::vector<unsigned char> uncertain_;
};

struct PathResult {
  std::vector<NodeId> node_seq;
  std::vector<EdgeId> edge_seq;
  double mu_total = 0.0;      // sum of edge means
  double var_total = 0.0;     // sum of edge variances
  double weight_total = 0.0;  // Dijkstra objective (mu, or mu/p_open on Unknown edges)
  bool reachable = false;
};

enum class UnknownMode { ExpectedCost, Exclude };

/// Edge weight under a belief; negative means excluded.
double edge_weight(const EdgeAttr& e, EdgeStatus s, UnknownMode mode);

/// Distances and next hops of every node towards one destination.
struct ShortestPathTree {
  NodeId destination = kNoNode;
  std::vector<double> dist;       // +inf when unreachable
  std::vector<EdgeId> next_edge;  // kNoEdge at destination / unreachable
};

ShortestPathTree shortest_path_tree(const UncertainGraph& graph, std::span<const EdgeStatus> status,
                                    NodeId dst, UnknownMode mode);

/// Follows the tree from src; reachable=false with empty sequences when no path exists.
PathResult path_from_tree(const UncertainGraph& graph, const ShortestPathTree& tree, NodeId src);

PathResult shortest_path_expected(const UncertainGraph& graph, const BeliefState& belief, NodeId src,
                                  NodeId dst, UnknownMode mode);
PathResult shortest_path_expected(const UncertainGraph& graph, std::span<const EdgeStatus> status,
                                  NodeId src, NodeId dst, UnknownMode mode);

/// Mean cost of the ExpectedCost shortest path under the all-unknown belief.
/// Throws UnreachableError if dst cannot be reached.
double least_expected_time(const UncertainGraph& graph, NodeId src, NodeId dst);

/// Bernoulli entropy in nats; zero at p in {0, 1}.
double binary_entropy(double p);

double graph_entropy(const UncertainGraph& graph, const BeliefState& belief);
double graph_entropy(const UncertainGraph& graph, std::span<const EdgeStatus> status);

/// graph_entropy(before) - graph_entropy(after); only Unknown -> revealed transitions allowed.
double entropy_delta(const UncertainGraph& graph, const BeliefState& before, const BeliefState& after);

/// Summed binary entropy of Unknown edges touching `node` (either endpoint).
double incident_unknown_entropy(const UncertainGraph& graph, std::span<const EdgeStatus> status, NodeId node);

using EdgeOracle = std::function<bool(const EdgeAttr&)>;

/// Reveals every Unknown edge leaving `node`: Open if oracle(edge) else Blocked.
BeliefState reveal_edges_at(const UncertainGraph& graph, const BeliefState& belief, NodeId node,
                            const EdgeOracle& oracle);

/// In-place variant; returns the revealed edge ids.
std::vector<EdgeId> reveal_in_place(const UncertainGraph& graph, BeliefState& belief, NodeId node,
                                    const EdgeOracle& oracle);

/// Unknown edges leaving `node` under `status`.
std::vector<EdgeId> unknown_out_edges(const UncertainGraph& graph, std::span<const EdgeStatus> status,
                                      NodeId node);

}  // namespace marvel
