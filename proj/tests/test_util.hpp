#pragma once

#include <memory>
#include <tuple>
#include <vector>

#include "marvel/graph.hpp"
#include "marvel/sim.hpp"

namespace marvel::testing {

struct E {
  int from, to;
  double mu, sigma, p = 1.0;
};

/// Nodes labelled 0..n-1 so labels and ids agree.
inline UncertainGraph make_graph(int n, const std::vector<E>& edges) {
  UncertainGraph g;
  for (int i = 0; i < n; ++i) g.add_node(i);
  for (const auto& e : edges) g.add_edge(e.from, e.to, e.mu, e.sigma, e.p);
  return g;
}

/// Strongly connected random graph: a ring 0 -> 1 -> ... -> 0 plus random chords.
inline UncertainGraph random_graph(int n, int chords, double p_uncertain, Rng& rng) {
  std::uniform_real_distribution<double> mu(1.0, 10.0), u(0.0, 1.0), p(0.2, 0.95);
  std::uniform_int_distribution<int> pick(0, n - 1);
  UncertainGraph g;
  for (int i = 0; i < n; ++i) g.add_node(i);
  for (int i = 0; i < n; ++i) {
    const double m = mu(rng);
    g.add_edge(i, (i + 1) % n, m, 0.25 * m);
  }
  for (int c = 0; c < chords; ++c) {
    const int a = pick(rng), b = pick(rng);
    if (a == b || g.find_edge(a, b) != kNoEdge) continue;
    const double m = mu(rng);
    g.add_edge(a, b, m, 0.25 * m, u(rng) < p_uncertain ? p(rng) : 1.0);
  }
  return g;
}

inline ScenarioConfig scenario_for(std::shared_ptr<const UncertainGraph> g, std::vector<AgentSpec> agents,
                                   std::uint64_t seed = 1) {
  ScenarioConfig s;
  s.graph = std::move(g);
  s.agents = std::move(agents);
  s.seed = seed;
  return s;
}

}  // namespace marvel::testing
