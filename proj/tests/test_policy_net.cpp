#include <doctest.h>

#include <cmath>
#include <sstream>

#include "marvel/policy_net.hpp"
#include "test_util.hpp"

using namespace marvel;
using marvel::testing::make_graph;

namespace {

FeatureMatrix random_features(std::size_t n, int width, Rng& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  FeatureMatrix f;
  f.embedding_dim = width - kPositionalChannels;
  f.values.resize(static_cast<Eigen::Index>(n), width);
  for (Eigen::Index i = 0; i < f.values.size(); ++i) f.values.data()[i] = z(rng);
  return f;
}

// Straight dense evaluation: mask, LeakyReLU, masked softmax, ELU, concatenation.
Eigen::MatrixXd dense_forward(const GatParams& p, const Eigen::MatrixXd& x0, const Eigen::MatrixXi& adj, bool attention,
                              double slope) {
  const auto n = x0.rows();
  Eigen::MatrixXd x = x0;
  for (const auto& layer : p.layers) {
    Eigen::MatrixXd out(n, layer.output_dim());
    for (std::size_t k = 0; k < layer.heads.size(); ++k) {
      const auto& h = layer.heads[k];
      const Eigen::MatrixXd z = x * h.W.transpose();
      Eigen::MatrixXd att = Eigen::MatrixXd::Zero(n, n);
      for (Eigen::Index i = 0; i < n; ++i) {
        double sum = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) {
          if (!adj(i, j)) continue;
          double e = h.a.head(layer.out_dim).dot(z.row(i)) + h.a.tail(layer.out_dim).dot(z.row(j));
          e = e > 0 ? e : slope * e;
          att(i, j) = attention ? std::exp(e) : 1.0;
          sum += att(i, j);
        }
        att.row(i) /= sum;
      }
      const Eigen::MatrixXd agg = att * z;
      out.middleCols(static_cast<Eigen::Index>(k) * layer.out_dim, layer.out_dim) =
          agg.unaryExpr([](double v) { return v > 0 ? v : std::expm1(v); });
    }
    x = out;
  }
  return x;
}

Eigen::MatrixXi adjacency(const UncertainGraph& g, std::span<const EdgeStatus> st) {
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  Eigen::MatrixXi a = Eigen::MatrixXi::Identity(n, n);
  for (const auto& e : g.edges())
    if (st[static_cast<std::size_t>(e.id)] != EdgeStatus::Blocked) a(e.from, e.to) = 1;
  return a;
}

const GatDims kSmall{6 + kPositionalChannels, 3, 2, 2};

double logp(const GatParams& p, const FeatureMatrix& f, const UncertainGraph& g, std::span<const EdgeStatus> st,
            NodeId cur, std::size_t action, const GatOptions& opt) {
  const auto fw = gat_forward(p, f, build_neighborhoods(g, st), opt);
  return std::log(action_distribution(fw.reprs, g, st, cur).probs[action]);
}

}  // namespace

TEST_CASE("initialisation shapes and Glorot bound") {
  const auto p = init_params(kSmall, 1);
  REQUIRE(p.layers.size() == 2);
  CHECK(p.in_dim() == kSmall.in_dim);
  CHECK(p.layers[0].heads.size() == 2);
  CHECK(p.layers[1].in_dim == 6);
  CHECK(p.output_dim() == 6);
  const double s = std::sqrt(6.0 / (kSmall.in_dim + 3));
  CHECK(p.layers[0].heads[0].W.cwiseAbs().maxCoeff() <= s);
  CHECK(init_params(kSmall, 1).flatten() == p.flatten());
  CHECK(init_params(kSmall, 2).flatten() != p.flatten());
  CHECK(p.size() == p.flatten().size());
  CHECK_THROWS_AS(init_params(GatDims{0, 3, 2, 2}, 1), ConfigError);
}

TEST_CASE("forward pass equals a dense reference") {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const auto g = marvel::testing::random_graph(8, 12, 0.4, rng);
    auto b = BeliefState::initial(g);
    for (EdgeId id : g.uncertain_edges())
      if (rng() % 2) b.set_status(id, EdgeStatus::Blocked);
    const auto p = init_params(kSmall, 100 + static_cast<std::uint64_t>(trial));
    const auto f = random_features(g.num_nodes(), kSmall.in_dim, rng);
    for (bool att : {true, false}) {
      const auto fw = gat_forward(p, f, build_neighborhoods(g, b.statuses()), GatOptions{att, 0.2});
      const auto ref = dense_forward(p, f.values, adjacency(g, b.statuses()), att, 0.2);
      CHECK((fw.reprs - ref).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("log-policy gradient matches central finite differences") {
  Rng rng(8);
  const double h = 1e-6;
  int checked = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto g = marvel::testing::random_graph(7, 10, 0.3, rng);
    const auto belief = BeliefState::initial(g);
    const auto st = belief.statuses();
    auto p = init_params(kSmall, 200 + static_cast<std::uint64_t>(trial));
    const auto f = random_features(g.num_nodes(), kSmall.in_dim, rng);
    const NodeId cur = trial % 7;
    const GatOptions opt{trial % 4 != 3, 0.2};
    const auto fw = gat_forward(p, f, build_neighborhoods(g, st), opt);
    const auto dist = action_distribution(fw.reprs, g, st, cur);
    const std::size_t action = static_cast<std::size_t>(trial) % dist.size();
    const auto grad = gat_backward(p, fw.cache, dist, logprob_logit_grad(dist, action)).flatten();

    auto flat = p.flatten();
    std::vector<double> fd(flat.size());
    for (std::size_t i = 0; i < flat.size(); ++i) {
      const double x = flat[i];
      flat[i] = x + h;
      p.assign(flat);
      const double up = logp(p, f, g, st, cur, action, opt);
      flat[i] = x - h;
      p.assign(flat);
      const double dn = logp(p, f, g, st, cur, action, opt);
      flat[i] = x;
      fd[i] = (up - dn) / (2 * h);
    }
    p.assign(flat);
    double num = 0.0, gn = 0.0, fn = 0.0;
    for (std::size_t i = 0; i < fd.size(); ++i) {
      num += (grad[i] - fd[i]) * (grad[i] - fd[i]);
      gn += grad[i] * grad[i];
      fn += fd[i] * fd[i];
    }
    CHECK(std::sqrt(num) / std::max({std::sqrt(gn), std::sqrt(fn), 1e-12}) < 1e-4);
    ++checked;
  }
  CHECK(checked == 20);
}

TEST_CASE("cross-entropy gradient matches finite differences") {
  Rng rng(9);
  const auto g = marvel::testing::random_graph(6, 10, 0.0, rng);
  const auto belief = BeliefState::initial(g);
  const auto st = belief.statuses();
  auto p = init_params(kSmall, 5);
  const auto f = random_features(g.num_nodes(), kSmall.in_dim, rng);
  const NodeId cur = 2;
  auto ce = [&](const GatParams& q) {
    const auto fw = gat_forward(q, f, build_neighborhoods(g, st));
    const auto d = action_distribution(fw.reprs, g, st, cur);
    std::vector<double> target(d.size(), 0.1 / static_cast<double>(d.size()));
    target[0] += 0.9;
    return std::pair{cross_entropy(target, d.probs), target};
  };
  const auto fw = gat_forward(p, f, build_neighborhoods(g, st));
  const auto dist = action_distribution(fw.reprs, g, st, cur);
  const auto target = ce(p).second;
  const auto grad = gat_backward(p, fw.cache, dist, cross_entropy_logit_grad(dist, target)).flatten();
  auto flat = p.flatten();
  const double h = 1e-6;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const double x = flat[i];
    flat[i] = x + h;
    p.assign(flat);
    const double up = ce(p).first;
    flat[i] = x - h;
    p.assign(flat);
    const double dn = ce(p).first;
    flat[i] = x;
    const double fd = (up - dn) / (2 * h);
    num += (grad[i] - fd) * (grad[i] - fd);
    den += fd * fd;
  }
  CHECK(std::sqrt(num / den) < 1e-4);
}

TEST_CASE("logit gradients") {
  ActionDistribution d;
  d.edges = {4, 7, 9};
  d.probs = {0.2, 0.5, 0.3};
  const auto g = logprob_logit_grad(d, 1);
  CHECK(g[0] == doctest::Approx(-0.2));
  CHECK(g[1] == doctest::Approx(0.5));
  CHECK(g[0] + g[1] + g[2] == doctest::Approx(0.0));
  const std::vector<double> q{0.0, 1.0, 0.0};
  const auto c = cross_entropy_logit_grad(d, q);
  CHECK(c[1] == doctest::Approx(-0.5));
  CHECK(cross_entropy(q, d.probs) == doctest::Approx(-std::log(0.5)));
  CHECK_THROWS_AS(logprob_logit_grad(d, 3), InputError);
  CHECK(d.index_of(9) == 2);
  CHECK_THROWS_AS(d.index_of(5), InputError);
}

TEST_CASE("argmax breaks ties by lowest edge id") {
  ActionDistribution d;
  d.edges = {8, 3, 5};
  d.probs = {0.4, 0.4, 0.2};
  CHECK(d.argmax() == 1);
}

TEST_CASE("uniform attention weights are exactly 1 / |N_i|") {
  const auto g = make_graph(4, {{0, 1, 1, 0.1}, {0, 2, 1, 0.1}, {0, 3, 1, 0.1, 0.5}, {1, 0, 1, 0.1}, {2, 3, 1, 0.1}});
  Rng rng(1);
  const auto b = BeliefState::initial(g);
  const auto p = init_params(kSmall, 3);
  const auto fw = gat_forward(p, random_features(4, kSmall.in_dim, rng), build_neighborhoods(g, b.statuses()),
                              GatOptions{false, 0.2});
  for (const auto& layer : fw.cache.layers)
    for (const auto& head : layer.heads)
      for (std::size_t i = 0; i < 4; ++i)
        for (double a : head.alpha[i]) CHECK(a == 1.0 / static_cast<double>(fw.cache.neighborhoods.nodes[i].size()));
  CHECK(fw.cache.neighborhoods.nodes[0].size() == 4);
  CHECK(fw.cache.neighborhoods.nodes[3].size() == 1);
}

TEST_CASE("attention rows sum to one") {
  Rng rng(2);
  const auto g = marvel::testing::random_graph(9, 15, 0.3, rng);
  const auto p = init_params(kSmall, 4);
  const auto fw = gat_forward(p, random_features(9, kSmall.in_dim, rng), build_neighborhoods(g, BeliefState::initial(g).statuses()));
  for (const auto& layer : fw.cache.layers)
    for (const auto& head : layer.heads)
      for (const auto& row : head.alpha) {
        double s = 0.0;
        for (double a : row) s += a;
        CHECK(s == doctest::Approx(1.0));
      }
}

TEST_CASE("blocked edges leave neighborhoods and candidate sets") {
  const auto g = make_graph(3, {{0, 1, 1, 0.1, 0.5}, {0, 2, 1, 0.1}, {1, 0, 1, 0.1}, {2, 0, 1, 0.1}});
  auto b = BeliefState::initial(g);
  b.set_status(0, EdgeStatus::Blocked);
  const auto nb = build_neighborhoods(g, b.statuses());
  CHECK(nb.nodes[0] == std::vector<NodeId>{0, 2});
  Rng rng(3);
  const auto p = init_params(kSmall, 5);
  const auto fw = gat_forward(p, random_features(3, kSmall.in_dim, rng), nb);
  const auto d = action_distribution(fw.reprs, g, b.statuses(), 0);
  CHECK(d.edges == std::vector<EdgeId>{1});
  CHECK(d.probs[0] == doctest::Approx(1.0));
  // dead end
  const auto g2 = make_graph(2, {{0, 1, 1, 0.1, 0.5}, {1, 0, 1, 0.1}});
  auto b2 = BeliefState::initial(g2);
  b2.set_status(0, EdgeStatus::Blocked);
  const auto fw2 = gat_forward(p, random_features(2, kSmall.in_dim, rng), build_neighborhoods(g2, b2.statuses()));
  CHECK_THROWS_AS(action_distribution(fw2.reprs, g2, b2.statuses(), 0), DeadEndError);
}

TEST_CASE("permutation equivariance") {
  Rng rng(4);
  const auto g = marvel::testing::random_graph(7, 10, 0.0, rng);
  std::vector<NodeId> perm{3, 6, 0, 5, 1, 4, 2};  // new id of old node
  UncertainGraph pg;
  for (int i = 0; i < 7; ++i) pg.add_node(i);
  // add edges in the same order so out-edge orders match up to relabelling
  for (const auto& e : g.edges()) pg.add_edge(perm[static_cast<std::size_t>(e.from)], perm[static_cast<std::size_t>(e.to)], e.mu, e.sigma);
  const auto f = random_features(7, kSmall.in_dim, rng);
  FeatureMatrix pf = f;
  for (int i = 0; i < 7; ++i) pf.values.row(perm[static_cast<std::size_t>(i)]) = f.values.row(i);
  const auto p = init_params(kSmall, 6);
  const auto a = gat_forward(p, f, build_neighborhoods(g, BeliefState::initial(g).statuses()));
  const auto b = gat_forward(p, pf, build_neighborhoods(pg, BeliefState::initial(pg).statuses()));
  for (int i = 0; i < 7; ++i)
    CHECK((a.reprs.row(i) - b.reprs.row(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("a disconnected component does not influence the policy") {
  // component {0,1,2} and component {3,4}
  const auto g = make_graph(5, {{0, 1, 1, 0.1}, {1, 2, 1, 0.1}, {2, 0, 1, 0.1}, {0, 2, 1, 0.1}, {3, 4, 1, 0.1}, {4, 3, 1, 0.1}});
  const auto belief = BeliefState::initial(g);
  const auto st = belief.statuses();
  Rng rng(5);
  const auto p = init_params(kSmall, 7);
  auto f = random_features(5, kSmall.in_dim, rng);
  const auto fw = gat_forward(p, f, build_neighborhoods(g, st));
  const auto d = action_distribution(fw.reprs, g, st, 0);
  f.values.row(3).setConstant(5.0);
  f.values.row(4).setConstant(-3.0);
  const auto fw2 = gat_forward(p, f, build_neighborhoods(g, st));
  const auto d2 = action_distribution(fw2.reprs, g, st, 0);
  CHECK(d.probs == d2.probs);
  // and its representations carry no gradient into the decision
  const auto grad = gat_backward(p, fw.cache, d, logprob_logit_grad(d, 0));
  const auto grad2 = gat_backward(p, fw2.cache, d2, logprob_logit_grad(d2, 0));
  const auto a = grad.flatten(), b = grad2.flatten();
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
  CHECK(diff < 1e-14);
}

TEST_CASE("stale forward caches are rejected") {
  Rng rng(6);
  const auto g = marvel::testing::random_graph(5, 5, 0.0, rng);
  const auto belief = BeliefState::initial(g);
  const auto st = belief.statuses();
  auto p = init_params(kSmall, 8);
  const auto fw = gat_forward(p, random_features(5, kSmall.in_dim, rng), build_neighborhoods(g, st));
  const auto d = action_distribution(fw.reprs, g, st, 0);
  CHECK_NOTHROW(gat_backward(p, fw.cache, d, logprob_logit_grad(d, 0)));
  p.add_scaled(0.1, p);
  CHECK_THROWS_AS(gat_backward(p, fw.cache, d, logprob_logit_grad(d, 0)), InvariantError);
  const auto other = init_params(kSmall, 8);
  CHECK_THROWS_AS(gat_backward(other, fw.cache, d, logprob_logit_grad(d, 0)), InvariantError);
}

TEST_CASE("shape mismatches are configuration errors") {
  Rng rng(7);
  const auto g = marvel::testing::random_graph(5, 5, 0.0, rng);
  const auto p = init_params(kSmall, 9);
  CHECK_THROWS_AS(gat_forward(p, random_features(5, kSmall.in_dim + 1, rng), build_neighborhoods(g, BeliefState::initial(g).statuses())),
                  ConfigError);
}

TEST_CASE("checkpoint round trip") {
  const auto p = init_params(kSmall, 10);
  std::stringstream ss;
  save_checkpoint(ss, p, GatOptions{false, 0.2});
  GatOptions opt;
  const auto q = load_checkpoint(ss, &opt, &kSmall);
  CHECK(q.flatten() == p.flatten());
  CHECK_FALSE(opt.attention);
  std::stringstream again;
  save_checkpoint(again, p, GatOptions{true, 0.2});
  GatDims other = kSmall;
  other.heads = 3;
  CHECK_THROWS_AS(load_checkpoint(again, nullptr, &other), ConfigError);
  std::stringstream junk("{\"format\": \"something-else\"}");
  CHECK_THROWS_AS(load_checkpoint(junk), InputError);
}

TEST_CASE("parameter arithmetic") {
  auto p = init_params(kSmall, 11);
  const auto v0 = p.version;
  auto z = p.zeros_like();
  CHECK(z.squared_norm() == 0.0);
  CHECK(z.same_shape(p));
  z.add_scaled(2.0, p);
  CHECK(z.squared_norm() == doctest::Approx(4.0 * p.squared_norm()));
  p.scale(0.5);
  CHECK(p.version != v0);
  CHECK(p.all_finite());
  auto flat = p.flatten();
  flat[0] = std::nan("");
  p.assign(flat);
  CHECK_FALSE(p.all_finite());
}
