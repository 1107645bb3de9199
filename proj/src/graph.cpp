#include "marvel/graph.hpp"

#include <algorithm>
#include <limits>
#include <queue>

namespace marvel {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

char status_char(EdgeStatus s) {
  switch (s) {
    case EdgeStatus::Unknown: return 'u';
    case EdgeStatus::Open: return 'o';
    case EdgeStatus::Blocked: return 'b';
  }
  return '?';
}

}  // namespace

NodeId UncertainGraph::add_node(int label) {
  if (index_.contains(label)) throw InputError("duplicate node label " + std::to_string(label));
  const auto id = static_cast<NodeId>(labels_.size());
  labels_.push_back(label);
  index_.emplace(label, id);
  out_.emplace_back();
  in_.emplace_back();
  return id;
}

void UncertainGraph::check_node(NodeId node) const {
  if (node < 0 || static_cast<std::size_t>(node) >= labels_.size())
    throw InputError("node index " + std::to_string(node) + " out of range");
}

NodeId UncertainGraph::node_of(int label) const {
  const auto it = index_.find(label);
  if (it == index_.end()) throw InputError("unknown node " + std::to_string(label));
  return it->second;
}

EdgeId UncertainGraph::add_edge(NodeId from, NodeId to, double mu, double sigma, double p_open) {
  check_node(from);
  check_node(to);
  if (!(mu > 0.0) || !std::isfinite(mu)) throw InputError("edge mean must be positive and finite");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw InputError("edge sigma must be non-negative");
  if (!(p_open > 0.0 && p_open <= 1.0)) throw InputError("edge p_open must lie in (0, 1]");
  EdgeAttr e;
  e.id = static_cast<EdgeId>(edges_.size());
  e.from = from;
  e.to = to;
  e.mu = mu;
  e.sigma = sigma;
  e.p_open = p_open;
  e.certain = p_open == 1.0;
  edges_.push_back(e);
  out_[static_cast<std::size_t>(from)].push_back(e.id);
  in_[static_cast<std::size_t>(to)].push_back(e.id);
  if (!e.certain) uncertain_.push_back(e.id);
  return e.id;
}

void UncertainGraph::set_uncertainty(EdgeId id, double sigma, double p_open) {
  if (id < 0 || static_cast<std::size_t>(id) >= edges_.size())
    throw InputError("unknown edge id " + std::to_string(id));
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw InputError("edge sigma must be non-negative");
  if (!(p_open > 0.0 && p_open <= 1.0)) throw InputError("edge p_open must lie in (0, 1]");
  auto& e = edges_[static_cast<std::size_t>(id)];
  e.sigma = sigma;
  e.p_open = p_open;
  e.certain = p_open == 1.0;
  rebuild_uncertain();
}

void UncertainGraph::rebuild_uncertain() {
  uncertain_.clear();
  for (const auto& e : edges_)
    if (!e.certain) uncertain_.push_back(e.id);
}

EdgeId UncertainGraph::find_edge(NodeId from, NodeId to) const {
  for (EdgeId id : out_edges(from))
    if (edge(id).to == to) return id;
  return kNoEdge;
}

bool UncertainGraph::operator==(const UncertainGraph& other) const {
  if (labels_ != other.labels_ || edges_.size() != other.edges_.size()) return false;
  for (std::size_t i = 0; i < edges_.size(); ++i) {
    const auto& a = edges_[i];
    const auto& b = other.edges_[i];
    if (a.from != b.from || a.to != b.to || a.mu != b.mu || a.sigma != b.sigma || a.p_open != b.p_open)
      return false;
  }
  return true;
}

BeliefState BeliefState::initial(const UncertainGraph& graph) {
  BeliefState b;
  b.status_.assign(graph.num_edges(), EdgeStatus::Open);
  b.uncertain_.assign(graph.num_edges(), 0);
  for (EdgeId id : graph.uncertain_edges()) {
    b.status_[static_cast<std::size_t>(id)] = EdgeStatus::Unknown;
    b.uncertain_[static_cast<std::size_t>(id)] = 1;
  }
  return b;
}

void BeliefState::set_status(EdgeId id, EdgeStatus s) {
  auto& cur = status_.at(static_cast<std::size_t>(id));
  if (cur == s) return;
  if (!is_uncertain(id)) throw InvariantError("certain edge " + std::to_string(id) + " cannot change status");
  if (cur != EdgeStatus::Unknown || s == EdgeStatus::Unknown)
    throw InvariantError("illegal status transition on edge " + std::to_string(id));
  cur = s;
}

std::size_t BeliefState::unknown_count() const {
  return static_cast<std::size_t>(std::count(status_.begin(), status_.end(), EdgeStatus::Unknown));
}

std::string BeliefState::key() const {
  std::string k;
  for (std::size_t i = 0; i < status_.size(); ++i)
    if (uncertain_[i]) k.push_back(status_char(status_[i]));
  return k;
}

double edge_weight(const EdgeAttr& e, EdgeStatus s, UnknownMode mode) {
  switch (s) {
    case EdgeStatus::Open: return e.mu;
    case EdgeStatus::Blocked: return -1.0;
    case EdgeStatus::Unknown: return mode == UnknownMode::ExpectedCost ? e.mu / e.p_open : -1.0;
  }
  return -1.0;
}

ShortestPathTree shortest_path_tree(const UncertainGraph& graph, std::span<const EdgeStatus> status,
                                    NodeId dst, UnknownMode mode) {
  graph.check_node(dst);
  if (status.size() != graph.num_edges()) throw InputError("belief does not match graph");
  ShortestPathTree tree;
  tree.destination = dst;
  tree.dist.assign(graph.num_nodes(), kInf);
  tree.next_edge.assign(graph.num_nodes(), kNoEdge);
  using Item = std::pair<double, NodeId>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  tree.dist[static_cast<std::size_t>(dst)] = 0.0;
  pq.emplace(0.0, dst);
  while (!pq.empty()) {
    const auto [d, u] = pq.top();
    pq.pop();
    if (d > tree.dist[static_cast<std::size_t>(u)]) continue;
    for (EdgeId id : graph.in_edges(u)) {
      const auto& e = graph.edge(id);
      const double w = edge_weight(e, status[static_cast<std::size_t>(id)], mode);
      if (w < 0.0) continue;
      const double nd = d + w;
      auto& dv = tree.dist[static_cast<std::size_t>(e.from)];
      if (nd < dv) {
        dv = nd;
        tree.next_edge[static_cast<std::size_t>(e.from)] = id;
        pq.emplace(nd, e.from);
      }
    }
  }
  return tree;
}

PathResult path_from_tree(const UncertainGraph& graph, const ShortestPathTree& tree, NodeId src) {
  graph.check_node(src);
  PathResult r;
  if (!std::isfinite(tree.dist[static_cast<std::size_t>(src)])) return r;
  r.reachable = true;
  r.weight_total = tree.dist[static_cast<std::size_t>(src)];
  NodeId cur = src;
  r.node_seq.push_back(cur);
  while (cur != tree.destination) {
    const EdgeId id = tree.next_edge[static_cast<std::size_t>(cur)];
    const auto& e = graph.edge(id);
    r.edge_seq.push_back(id);
    r.mu_total += e.mu;
    r.var_total += e.sigma * e.sigma;
    cur = e.to;
    r.node_seq.push_back(cur);
  }
  return r;
}

PathResult shortest_path_expected(const UncertainGraph& graph, std::span<const EdgeStatus> status,
                                  NodeId src, NodeId dst, UnknownMode mode) {
  graph.check_node(src);
  return path_from_tree(graph, shortest_path_tree(graph, status, dst, mode), src);
}

PathResult shortest_path_expected(const UncertainGraph& graph, const BeliefState& belief, NodeId src,
                                  NodeId dst, UnknownMode mode) {
  return shortest_path_expected(graph, belief.statuses(), src, dst, mode);
}

double least_expected_time(const UncertainGraph& graph, NodeId src, NodeId dst) {
  const auto belief = BeliefState::initial(graph);
  const auto path = shortest_path_expected(graph, belief, src, dst, UnknownMode::ExpectedCost);
  if (!path.reachable)
    throw UnreachableError("node " + std::to_string(graph.label(dst)) + " unreachable from " +
                           std::to_string(graph.label(src)));
  return path.mu_total;
}

double binary_entropy(double p) {
  if (p <= 0.0 || p >= 1.0) return 0.0;
  return -(p * std::log(p) + (1.0 - p) * std::log1p(-p));
}

double graph_entropy(const UncertainGraph& graph, std::span<const EdgeStatus> status) {
  double h = 0.0;
  for (EdgeId id : graph.uncertain_edges())
    if (status[static_cast<std::size_t>(id)] == EdgeStatus::Unknown) h += binary_entropy(graph.edge(id).p_open);
  return h;
}

double graph_entropy(const UncertainGraph& graph, const BeliefState& belief) {
  return graph_entropy(graph, belief.statuses());
}

double entropy_delta(const UncertainGraph& graph, const BeliefState& before, const BeliefState& after) {
  if (before.num_edges() != graph.num_edges() || after.num_edges() != graph.num_edges())
    throw InputError("belief does not match graph");
  double delta = 0.0;
  for (std::size_t i = 0; i < graph.num_edges(); ++i) {
    const auto b = before.statuses()[i];
    const auto a = after.statuses()[i];
    if (a == b) continue;
    if (b != EdgeStatus::Unknown || a == EdgeStatus::Unknown)
      throw InvariantError("inconsistent belief transition on edge " + std::to_string(i));
    delta += binary_entropy(graph.edges()[i].p_open);
  }
  return delta;
}

double incident_unknown_entropy(const UncertainGraph& graph, std::span<const EdgeStatus> status, NodeId node) {
  double h = 0.0;
  for (EdgeId id : graph.uncertain_edges()) {
    const auto& e = graph.edge(id);
    if (status[static_cast<std::size_t>(id)] == EdgeStatus::Unknown && (e.from == node || e.to == node))
      h += binary_entropy(e.p_open);
  }
  return h;
}

std::vector<EdgeId> unknown_out_edges(const UncertainGraph& graph, std::span<const EdgeStatus> status,
                                      NodeId node) {
  std::vector<EdgeId> out;
  for (EdgeId id : graph.out_edges(node))
    if (status[static_cast<std::size_t>(id)] == EdgeStatus::Unknown) out.push_back(id);
  return out;
}

std::vector<EdgeId> reveal_in_place(const UncertainGraph& graph, BeliefState& belief, NodeId node,
                                    const EdgeOracle& oracle) {
  graph.check_node(node);
  auto revealed = unknown_out_edges(graph, belief.statuses(), node);
  for (EdgeId id : revealed)
    belief.set_status(id, oracle(graph.edge(id)) ? EdgeStatus::Open : EdgeStatus::Blocked);
  return revealed;
}

BeliefState reveal_edges_at(const UncertainGraph& graph, const BeliefState& belief, NodeId node,
                            const EdgeOracle& oracle) {
  BeliefState next = belief;
  reveal_in_place(graph, next, node, oracle);
  return next;
}

}  // namespace marvel
