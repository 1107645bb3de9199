#include "marvel/policy_net.hpp"

#include <algorithm>
#include <istream>
#include <numeric>
#include <ostream>

#include "marvel/json.hpp"

namespace marvel {

namespace {

double elu(double x) { return x > 0.0 ? x : std::expm1(x); }
double elu_grad(double x) { return x > 0.0 ? 1.0 : std::exp(x); }

template <typename F>
void for_each_block(GatParams& p, F&& f) {
  for (auto& layer : p.layers)
    for (auto& head : layer.heads) {
      f(head.W.data(), static_cast<std::size_t>(head.W.size()));
      f(head.a.data(), static_cast<std::size_t>(head.a.size()));
    }
}

template <typename F>
void for_each_block(const GatParams& p, F&& f) {
  for (const auto& layer : p.layers)
    for (const auto& head : layer.heads) {
      f(head.W.data(), static_cast<std::size_t>(head.W.size()));
      f(head.a.data(), static_cast<std::size_t>(head.a.size()));
    }
}

}  // namespace

std::size_t GatParams::size() const {
  std::size_t n = 0;
  for_each_block(*this, [&](const double*, std::size_t len) { n += len; });
  return n;
}

GatParams GatParams::zeros_like() const {
  GatParams z = *this;
  for_each_block(z, [](double* d, std::size_t len) { std::fill(d, d + len, 0.0); });
  z.version = 0;
  return z;
}

bool GatParams::same_shape(const GatParams& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& a = layers[l];
    const auto& b = other.layers[l];
    if (a.in_dim != b.in_dim || a.out_dim != b.out_dim || a.heads.size() != b.heads.size()) return false;
  }
  return true;
}

void GatParams::add_scaled(double s, const GatParams& other) {
  if (!same_shape(other)) throw ConfigError("parameter shapes differ");
  for (std::size_t l = 0; l < layers.size(); ++l)
    for (std::size_t k = 0; k < layers[l].heads.size(); ++k) {
      layers[l].heads[k].W += s * other.layers[l].heads[k].W;
      layers[l].heads[k].a += s * other.layers[l].heads[k].a;
    }
  touch();
}

void GatParams::scale(double s) {
  for_each_block(*this, [&](double* d, std::size_t len) { std::transform(d, d + len, d, [&](double x) { return s * x; }); });
  touch();
}

std::vector<double> GatParams::flatten() const {
  std::vector<double> flat;
  flat.reserve(size());
  for_each_block(*this, [&](const double* d, std::size_t len) { flat.insert(flat.end(), d, d + len); });
  return flat;
}

void GatParams::assign(std::span<const double> flat) {
  if (flat.size() != size()) throw ConfigError("flat parameter vector has wrong length");
  std::size_t pos = 0;
  for_each_block(*this, [&](double* d, std::size_t len) {
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(pos), flat.begin() + static_cast<std::ptrdiff_t>(pos + len), d);
    pos += len;
  });
  touch();
}

bool GatParams::all_finite() const {
  bool ok = true;
  for_each_block(*this, [&](const double* d, std::size_t len) {
    ok = ok && std::all_of(d, d + len, [](double x) { return std::isfinite(x); });
  });
  return ok;
}

double GatParams::squared_norm() const {
  double s = 0.0;
  for_each_block(*this, [&](const double* d, std::size_t len) {
    for (std::size_t i = 0; i < len; ++i) s += d[i] * d[i];
  });
  return s;
}

GatParams init_params(const GatDims& dims, std::uint64_t seed) {
  if (dims.in_dim < 1 || dims.head_dim < 1 || dims.heads < 1 || dims.layers < 1)
    throw ConfigError("GAT dimensions must be positive");
  Rng rng(seed);
  GatParams p;
  int in = dims.in_dim;
  for (int l = 0; l < dims.layers; ++l) {
    GatLayer layer;
    layer.in_dim = in;
    layer.out_dim = dims.head_dim;
    const double sw = std::sqrt(6.0 / (in + dims.head_dim));
    const double sa = std::sqrt(6.0 / (2 * dims.head_dim + 1));
    for (int k = 0; k < dims.heads; ++k) {
      GatHead head;
      head.W.resize(dims.head_dim, in);
      head.a.resize(2 * dims.head_dim);
      std::uniform_real_distribution<double> uw(-sw, sw);
      std::uniform_real_distribution<double> ua(-sa, sa);
      for (Eigen::Index c = 0; c < head.W.cols(); ++c)
        for (Eigen::Index r = 0; r < head.W.rows(); ++r) head.W(r, c) = uw(rng);
      for (Eigen::Index i = 0; i < head.a.size(); ++i) head.a(i) = ua(rng);
      layer.heads.push_back(std::move(head));
    }
    in = layer.output_dim();
    p.layers.push_back(std::move(layer));
  }
  return p;
}

Neighborhoods build_neighborhoods(const UncertainGraph& graph, std::span<const EdgeStatus> status) {
  Neighborhoods nb;
  nb.nodes.resize(graph.num_nodes());
  for (NodeId v = 0; v < static_cast<NodeId>(graph.num_nodes()); ++v) {
    auto& list = nb.nodes[static_cast<std::size_t>(v)];
    list.push_back(v);
    for (EdgeId id : graph.out_edges(v)) {
      if (status[static_cast<std::size_t>(id)] == EdgeStatus::Blocked) continue;
      const NodeId to = graph.edge(id).to;
      if (std::find(list.begin(), list.end(), to) == list.end()) list.push_back(to);
    }
  }
  return nb;
}

ForwardResult gat_forward(const GatParams& params, const FeatureMatrix& features, const Neighborhoods& neighborhoods,
                          const GatOptions& options) {
  if (params.layers.empty()) throw ConfigError("GAT has no layers");
  if (features.width() != params.in_dim())
    throw ConfigError("feature width " + std::to_string(features.width()) + " does not match GAT input " +
                      std::to_string(params.in_dim()));
  const auto n = features.values.rows();
  if (static_cast<std::size_t>(n) != neighborhoods.nodes.size()) throw ConfigError("neighborhoods do not match features");

  ForwardResult result;
  auto& cache = result.cache;
  cache.neighborhoods = neighborhoods;
  cache.options = options;
  cache.params = &params;
  cache.params_version = params.version;

  Eigen::MatrixXd x = features.values;
  for (const auto& layer : params.layers) {
    if (x.cols() != layer.in_dim) throw ConfigError("GAT layer dimensions do not chain");
    LayerCache lc;
    lc.input = x;
    lc.output.resize(n, layer.output_dim());
    for (std::size_t k = 0; k < layer.heads.size(); ++k) {
      const auto& head = layer.heads[k];
      HeadCache hc;
      hc.z = x * head.W.transpose();
      const Eigen::VectorXd src = hc.z * head.a.head(layer.out_dim);
      const Eigen::VectorXd dst = hc.z * head.a.tail(layer.out_dim);
      hc.logit.resize(static_cast<std::size_t>(n));
      hc.alpha.resize(static_cast<std::size_t>(n));
      hc.agg = Eigen::MatrixXd::Zero(n, layer.out_dim);
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto& nbrs = neighborhoods.nodes[static_cast<std::size_t>(i)];
        auto& e = hc.logit[static_cast<std::size_t>(i)];
        auto& alpha = hc.alpha[static_cast<std::size_t>(i)];
        e.resize(nbrs.size());
        alpha.resize(nbrs.size());
        if (options.attention) {
          double mx = -std::numeric_limits<double>::infinity();
          for (std::size_t j = 0; j < nbrs.size(); ++j) {
            e[j] = src(i) + dst(nbrs[j]);
            const double l = e[j] > 0.0 ? e[j] : options.leaky_slope * e[j];
            alpha[j] = l;
            mx = std::max(mx, l);
          }
          double sum = 0.0;
          for (auto& a : alpha) sum += (a = std::exp(a - mx));
          for (auto& a : alpha) a /= sum;
        } else {
          for (std::size_t j = 0; j < nbrs.size(); ++j) {
            e[j] = src(i) + dst(nbrs[j]);
            alpha[j] = 1.0 / static_cast<double>(nbrs.size());
          }
        }
        for (std::size_t j = 0; j < nbrs.size(); ++j) hc.agg.row(i) += alpha[j] * hc.z.row(nbrs[j]);
      }
      lc.output.middleCols(static_cast<Eigen::Index>(k) * layer.out_dim, layer.out_dim) = hc.agg.unaryExpr(&elu);
      lc.heads.push_back(std::move(hc));
    }
    x = lc.output;
    cache.layers.push_back(std::move(lc));
  }
  result.reprs = std::move(x);
  return result;
}

std::size_t ActionDistribution::argmax() const {
  std::size_t best = 0;
  for (std::size_t i = 1; i < probs.size(); ++i)
    if (probs[i] > probs[best] || (probs[i] == probs[best] && edges[i] < edges[best])) best = i;
  return best;
}

std::size_t ActionDistribution::index_of(EdgeId edge) const {
  const auto it = std::find(edges.begin(), edges.end(), edge);
  if (it == edges.end()) throw InputError("edge " + std::to_string(edge) + " is not a candidate");
  return static_cast<std::size_t>(it - edges.begin());
}

std::size_t ActionDistribution::sample(Rng& rng) const {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double r = u(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (r < acc) return i;
  }
  return probs.size() - 1;
}

ActionDistribution action_distribution(const Eigen::MatrixXd& reprs, const UncertainGraph& graph,
                                       std::span<const EdgeStatus> status, NodeId current) {
  graph.check_node(current);
  ActionDistribution dist;
  dist.current = current;
  for (EdgeId id : graph.out_edges(current)) {
    if (status[static_cast<std::size_t>(id)] == EdgeStatus::Blocked) continue;
    const NodeId head = graph.edge(id).to;
    dist.edges.push_back(id);
    dist.heads.push_back(head);
    dist.logits.push_back(reprs.row(current).dot(reprs.row(head)));
  }
  if (dist.edges.empty()) throw DeadEndError("node " + std::to_string(graph.label(current)) + " has no usable out-edge");
  const double mx = *std::max_element(dist.logits.begin(), dist.logits.end());
  double sum = 0.0;
  dist.probs.resize(dist.logits.size());
  for (std::size_t i = 0; i < dist.logits.size(); ++i) sum += (dist.probs[i] = std::exp(dist.logits[i] - mx));
  for (auto& p : dist.probs) p /= sum;
  return dist;
}

std::vector<double> logprob_logit_grad(const ActionDistribution& dist, std::size_t action) {
  if (action >= dist.size()) throw InputError("action index out of range");
  std::vector<double> g(dist.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = (i == action ? 1.0 : 0.0) - dist.probs[i];
  return g;
}

std::vector<double> cross_entropy_logit_grad(const ActionDistribution& dist, std::span<const double> target) {
  if (target.size() != dist.size()) throw InputError("target distribution size mismatch");
  std::vector<double> g(dist.size());
  const double mass = std::accumulate(target.begin(), target.end(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = mass * dist.probs[i] - target[i];
  return g;
}

double cross_entropy(std::span<const double> target, std::span<const double> probs) {
  if (target.size() != probs.size()) throw InputError("distribution size mismatch");
  double h = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i)
    if (target[i] > 0.0) h -= target[i] * std::log(probs[i]);
  return h;
}

GatGradients gat_backward(const GatParams& params, const ForwardCache& cache, const ActionDistribution& dist,
                          std::span<const double> logit_grad) {
  if (cache.params != &params || cache.params_version != params.version || cache.layers.size() != params.layers.size())
    throw InvariantError("forward cache is stale for these parameters");
  if (logit_grad.size() != dist.size()) throw InputError("logit gradient size mismatch");

  GatGradients grads = params.zeros_like();
  const Eigen::MatrixXd& reprs = cache.layers.back().output;
  const auto n = reprs.rows();
  Eigen::MatrixXd d_out = Eigen::MatrixXd::Zero(n, reprs.cols());
  for (std::size_t c = 0; c < dist.size(); ++c) {
    const double g = logit_grad[c];
    if (g == 0.0) continue;
    d_out.row(dist.current) += g * reprs.row(dist.heads[c]);
    d_out.row(dist.heads[c]) += g * reprs.row(dist.current);
  }

  for (std::size_t li = params.layers.size(); li-- > 0;) {
    const auto& layer = params.layers[li];
    const auto& lc = cache.layers[li];
    auto& glayer = grads.layers[li];
    Eigen::MatrixXd d_in = Eigen::MatrixXd::Zero(n, layer.in_dim);
    for (std::size_t k = 0; k < layer.heads.size(); ++k) {
      const auto& head = layer.heads[k];
      const auto& hc = lc.heads[k];
      const Eigen::MatrixXd d_agg =
          d_out.middleCols(static_cast<Eigen::Index>(k) * layer.out_dim, layer.out_dim).cwiseProduct(hc.agg.unaryExpr(&elu_grad));
      Eigen::MatrixXd d_z = Eigen::MatrixXd::Zero(n, layer.out_dim);
      Eigen::VectorXd d_src = Eigen::VectorXd::Zero(n);
      Eigen::VectorXd d_dst = Eigen::VectorXd::Zero(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto& nbrs = cache.neighborhoods.nodes[static_cast<std::size_t>(i)];
        const auto& alpha = hc.alpha[static_cast<std::size_t>(i)];
        const auto& e = hc.logit[static_cast<std::size_t>(i)];
        std::vector<double> d_alpha(nbrs.size());
        double weighted = 0.0;
        for (std::size_t j = 0; j < nbrs.size(); ++j) {
          d_z.row(nbrs[j]) += alpha[j] * d_agg.row(i);
          d_alpha[j] = d_agg.row(i).dot(hc.z.row(nbrs[j]));
          weighted += alpha[j] * d_alpha[j];
        }
        if (!cache.options.attention) continue;
        for (std::size_t j = 0; j < nbrs.size(); ++j) {
          const double d_l = alpha[j] * (d_alpha[j] - weighted);
          const double d_e = d_l * (e[j] > 0.0 ? 1.0 : cache.options.leaky_slope);
          d_src(i) += d_e;
          d_dst(nbrs[j]) += d_e;
        }
      }
      auto& ghead = glayer.heads[k];
      if (cache.options.attention) {
        ghead.a.head(layer.out_dim) = hc.z.transpose() * d_src;
        ghead.a.tail(layer.out_dim) = hc.z.transpose() * d_dst;
        d_z.noalias() += d_src * head.a.head(layer.out_dim).transpose();
        d_z.noalias() += d_dst * head.a.tail(layer.out_dim).transpose();
      }
      ghead.W = d_z.transpose() * lc.input;
      d_in.noalias() += d_z * head.W;
    }
    d_out = std::move(d_in);
  }
  return grads;
}

void save_checkpoint(std::ostream& out, const GatParams& params, const GatOptions& options) {
  Json j;
  j["format"] = "marvel-gat";
  j["version"] = 1;
  j["attention"] = options.attention;
  j["leaky_slope"] = options.leaky_slope;
  j["dims"] = {{"in_dim", params.in_dim()},
               {"head_dim", params.layers.empty() ? 0 : params.layers.front().out_dim},
               {"heads", params.layers.empty() ? 0 : static_cast<int>(params.layers.front().heads.size())},
               {"layers", static_cast<int>(params.layers.size())}};
  Json layers = Json::array();
  for (const auto& layer : params.layers) {
    Json lj;
    lj["in_dim"] = layer.in_dim;
    lj["out_dim"] = layer.out_dim;
    Json heads = Json::array();
    for (const auto& head : layer.heads) {
      std::vector<double> w;
      w.reserve(static_cast<std::size_t>(head.W.size()));
      for (Eigen::Index r = 0; r < head.W.rows(); ++r)
        for (Eigen::Index c = 0; c < head.W.cols(); ++c) w.push_back(head.W(r, c));
      heads.push_back({{"W", w}, {"a", std::vector<double>(head.a.data(), head.a.data() + head.a.size())}});
    }
    lj["heads"] = std::move(heads);
    layers.push_back(std::move(lj));
  }
  j["layers"] = std::move(layers);
  out << j.dump() << '\n';
}

GatParams load_checkpoint(std::istream& in, GatOptions* options, const GatDims* expected) {
  Json j;
  try {
    in >> j;
  } catch (const Json::exception& e) {
    throw InputError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  if (j.value("format", "") != "marvel-gat" || j.value("version", 0) != 1)
    throw InputError("unsupported checkpoint format");
  const auto& dims = j.at("dims");
  if (expected) {
    if (dims.at("in_dim").get<int>() != expected->in_dim || dims.at("head_dim").get<int>() != expected->head_dim ||
        dims.at("heads").get<int>() != expected->heads || dims.at("layers").get<int>() != expected->layers)
      throw ConfigError("checkpoint dimensions do not match the configured network");
  }
  GatParams p;
  int in_dim = dims.at("in_dim").get<int>();
  for (const auto& lj : j.at("layers")) {
    GatLayer layer;
    layer.in_dim = lj.at("in_dim").get<int>();
    layer.out_dim = lj.at("out_dim").get<int>();
    if (layer.in_dim != in_dim) throw ConfigError("checkpoint layer dimensions do not chain");
    for (const auto& hj : lj.at("heads")) {
      const auto w = hj.at("W").get<std::vector<double>>();
      const auto a = hj.at("a").get<std::vector<double>>();
      if (w.size() != static_cast<std::size_t>(layer.out_dim * layer.in_dim) ||
          a.size() != static_cast<std::size_t>(2 * layer.out_dim))
        throw ConfigError("checkpoint head has wrong size");
      GatHead head;
      head.W.resize(layer.out_dim, layer.in_dim);
      for (int r = 0; r < layer.out_dim; ++r)
        for (int c = 0; c < layer.in_dim; ++c) head.W(r, c) = w[static_cast<std::size_t>(r * layer.in_dim + c)];
      head.a = Eigen::Map<const Eigen::VectorXd>(a.data(), static_cast<Eigen::Index>(a.size()));
      layer.heads.push_back(std::move(head));
    }
    in_dim = layer.output_dim();
    p.layers.push_back(std::move(layer));
  }
  if (options) {
    options->attention = j.value("attention", true);
    options->leaky_slope = j.value("leaky_slope", 0.2);
  }
  return p;
}

}  // namespace marvel
