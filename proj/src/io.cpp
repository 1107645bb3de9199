#include "marvel/io.hpp"

#include "marvel/eval.hpp"

#include <charconv>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

namespace marvel {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

double parse_number(const std::string& tok, const std::string& file, int line, const char* what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw ParseError(file, line, std::string("bad ") + what + " '" + tok + "'");
  }
}

int parse_int(const std::string& tok, const std::string& file, int line, const char* what) {
  int v = 0;
  const auto* end = tok.data() + tok.size();
  const auto r = std::from_chars(tok.data(), end, v);
  if (r.ec != std::errc() || r.ptr != end) throw ParseError(file, line, std::string("bad ") + what + " '" + tok + "'");
  return v;
}

struct LinkRow {
  int line;
  int init;
  int term;
  double fft;
};

}  // namespace

UncertainGraph parse_tntp(std::istream& in, const std::string& name) {
  std::string raw;
  int line_no = 0;
  bool metadata = true;
  bool saw_metadata_end = false;
  int declared_nodes = -1;
  int declared_links = -1;
  std::vector<LinkRow> rows;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim(raw);
    if (line.empty()) continue;
    if (metadata && line.front() == '<') {
      const auto close = line.find('>');
      if (close == std::string::npos) throw ParseError(name, line_no, "unterminated metadata tag");
      const std::string tag = line.substr(0, close + 1);
      const std::string value = trim(line.substr(close + 1));
      if (tag == "<END OF METADATA>") {
        metadata = false;
        saw_metadata_end = true;
      } else if (tag == "<NUMBER OF NODES>") {
        declared_nodes = parse_int(value, name, line_no, "node count");
      } else if (tag == "<NUMBER OF LINKS>") {
        declared_links = parse_int(value, name, line_no, "link count");
      }
      continue;
    }
    if (line.front() == '~') continue;
    metadata = false;
    if (line.back() == ';') line.pop_back();
    std::istringstream ss(line);
    std::vector<std::string> tok;
    for (std::string t; ss >> t;) tok.push_back(t);
    if (tok.size() < 5) throw ParseError(name, line_no, "link row needs at least 5 columns, got " + std::to_string(tok.size()));
    LinkRow r{line_no, parse_int(tok[0], name, line_no, "init node"), parse_int(tok[1], name, line_no, "term node"),
              parse_number(tok[4], name, line_no, "free-flow time")};
    if (!(r.fft > 0.0)) throw ParseError(name, line_no, "free-flow time must be positive");
    rows.push_back(r);
  }
  (void)saw_metadata_end;
  if (rows.empty()) throw ParseError(name, line_no, "no link rows");
  if (declared_links >= 0 && declared_links != static_cast<int>(rows.size()))
    throw ParseError(name, line_no,
                     "header declares " + std::to_string(declared_links) + " links, found " + std::to_string(rows.size()));

  UncertainGraph g;
  if (declared_nodes > 0) {
    for (int v = 1; v <= declared_nodes; ++v) g.add_node(v);
  } else {
    std::map<int, bool> labels;
    for (const auto& r : rows) labels[r.init] = labels[r.term] = true;
    for (const auto& [label, unused] : labels) g.add_node(label);
  }
  for (const auto& r : rows) {
    if (!g.has_label(r.init)) throw ParseError(name, r.line, "dangling node " + std::to_string(r.init));
    if (!g.has_label(r.term)) throw ParseError(name, r.line, "dangling node " + std::to_string(r.term));
    g.add_edge(g.node_of(r.init), g.node_of(r.term), r.fft, kDefaultSigmaRatio * r.fft, 1.0);
  }
  return g;
}

void apply_sidecar(UncertainGraph& graph, std::istream& in, const std::string& name) {
  std::string raw;
  int line_no = 0;
  bool header = false;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(trim(c));
    if (!header) {
      if (cells.size() != 3 || cells[0] != "edge_id" || cells[1] != "sigma" || cells[2] != "p_open")
        throw ParseError(name, line_no, "expected header 'edge_id,sigma,p_open'");
      header = true;
      continue;
    }
    if (cells.size() != 3) throw ParseError(name, line_no, "expected 3 columns");
    const int id = parse_int(cells[0], name, line_no, "edge id");
    const double sigma = parse_number(cells[1], name, line_no, "sigma");
    const double p = parse_number(cells[2], name, line_no, "p_open");
    if (id < 0 || static_cast<std::size_t>(id) >= graph.num_edges())
      throw ParseError(name, line_no, "edge id " + std::to_string(id) + " out of range");
    if (!(sigma >= 0.0)) throw ParseError(name, line_no, "sigma must be >= 0");
    if (!(p > 0.0 && p <= 1.0)) throw ParseError(name, line_no, "p_open must lie in (0, 1]");
    graph.set_uncertainty(id, sigma, p);
  }
  if (!header) throw ParseError(name, line_no, "empty sidecar");
}

UncertainGraph load_tntp(const std::filesystem::path& network, const std::optional<std::filesystem::path>& sidecar) {
  std::ifstream in(network);
  if (!in) throw InputError("cannot open network file " + network.string());
  auto g = parse_tntp(in, network.string());
  if (sidecar) {
    std::ifstream sc(*sidecar);
    if (!sc) throw InputError("cannot open sidecar file " + sidecar->string());
    apply_sidecar(g, sc, sidecar->string());
  }
  return g;
}

void write_tntp(std::ostream& out, const UncertainGraph& graph) {
  bool contiguous = true;
  for (std::size_t v = 0; v < graph.num_nodes(); ++v) contiguous = contiguous && graph.label(static_cast<NodeId>(v)) == static_cast<int>(v) + 1;
  out << "<NUMBER OF ZONES> " << graph.num_nodes() << '\n';
  if (contiguous) out << "<NUMBER OF NODES> " << graph.num_nodes() << '\n';
  out << "<FIRST THRU NODE> 1\n";
  out << "<NUMBER OF LINKS> " << graph.num_edges() << '\n';
  out << "<END OF METADATA>\n\n\n";
  out << "~\tinit_node\tterm_node\tcapacity\tlength\tfree_flow_time\tb\tpower\tspeed\ttoll\tlink_type\t;\n";
  for (const auto& e : graph.edges()) {
    out << '\t' << graph.label(e.from) << '\t' << graph.label(e.to) << "\t0\t" << fmt_double(e.mu) << '\t'
        << fmt_double(e.mu) << "\t0.15\t4\t0\t0\t1\t;\n";
  }
}

void write_sidecar(std::ostream& out, const UncertainGraph& graph) {
  out << "edge_id,sigma,p_open\n";
  for (const auto& e : graph.edges()) {
    if (e.sigma == kDefaultSigmaRatio * e.mu && e.p_open == 1.0) continue;
    out << e.id << ',' << fmt_double(e.sigma) << ',' << fmt_double(e.p_open) << '\n';
  }
}

void save_tntp(const UncertainGraph& graph, const std::filesystem::path& network, const std::filesystem::path& sidecar) {
  std::ofstream n(network);
  if (!n) throw InputError("cannot write " + network.string());
  write_tntp(n, graph);
  std::ofstream s(sidecar);
  if (!s) throw InputError("cannot write " + sidecar.string());
  write_sidecar(s, graph);
}

UncertainGraph make_figure1() {
  UncertainGraph g;
  for (int v = 1; v <= 14; ++v) g.add_node(v);
  const struct {
    int a, b;
    double mu;
  } pairs[] = {{1, 2, 4},  {2, 3, 4},  {3, 14, 2}, {14, 13, 2}, {4, 8, 2},   {3, 5, 3},   {5, 6, 3},
               {6, 7, 3},  {7, 8, 3},  {9, 10, 2}, {10, 11, 3}, {11, 12, 3}, {10, 13, 2}, {13, 11, 2}};
  for (const auto& p : pairs) {
    g.add_edge(g.node_of(p.a), g.node_of(p.b), p.mu, kDefaultSigmaRatio * p.mu);
    g.add_edge(g.node_of(p.b), g.node_of(p.a), p.mu, kDefaultSigmaRatio * p.mu);
  }
  g.add_edge(g.node_of(13), g.node_of(4), 2.0, 0.5, 0.5);
  return g;
}

ScenarioConfig figure1_scenario(double weight_a, double weight_b, std::uint64_t seed) {
  ScenarioConfig s;
  auto g = std::make_shared<const UncertainGraph>(make_figure1());
  s.graph = g;
  s.agents = {AgentSpec{0, g->node_of(9), g->node_of(12), 9.5, weight_a},
              AgentSpec{1, g->node_of(1), g->node_of(8), 19.5, weight_b}};
  s.seed = seed;
  s.validate();
  return s;
}

ScenarioConfig parse_scenario(const Json& j, const std::filesystem::path& base_dir) {
  try {
    ScenarioConfig s;
    const std::string net = j.value("network", std::string("builtin:figure1"));
    auto resolve = [&](const std::string& p) {
      std::filesystem::path path(p);
      return path.is_absolute() ? path : base_dir / path;
    };
    if (net == "builtin:figure1") {
      s.graph = std::make_shared<const UncertainGraph>(make_figure1());
    } else {
      std::optional<std::filesystem::path> sidecar;
      if (j.contains("sidecar") && !j.at("sidecar").is_null()) sidecar = resolve(j.at("sidecar").get<std::string>());
      s.graph = std::make_shared<const UncertainGraph>(load_tntp(resolve(net), sidecar));
    }
    s.seed = j.value("seed", std::uint64_t{1});
    s.truncate = j.value("truncate", true);
    s.max_steps_per_agent = j.value("max_steps_per_agent", 0);
    if (j.contains("od_pairs")) {
      if (j.contains("agents")) throw InputError("scenario gives both agents and od_pairs");
      const auto& od = j.at("od_pairs");
      const auto pairs = random_od_pairs(*s.graph, od.value("count", std::size_t{10}), od.value("seed", std::uint64_t{7}));
      auto t = team_scenario(s.graph, pairs, od.value("budget_multiplier", 1.0), od.value("low_priority_multiplier", 1.2),
                             s.seed);
      t.truncate = s.truncate;
      t.max_steps_per_agent = s.max_steps_per_agent;
      return t;
    }
    int idx = 0;
    for (const auto& a : j.at("agents")) {
      AgentSpec spec;
      spec.id = a.value("id", idx++);
      spec.origin = s.graph->node_of(a.at("origin").get<int>());
      spec.destination = s.graph->node_of(a.at("destination").get<int>());
      spec.weight = a.at("weight").get<double>();
      if (a.contains("budget"))
        spec.budget = a.at("budget").get<double>();
      else
        spec.budget = a.value("budget_multiplier", 1.0) * least_expected_time(*s.graph, spec.origin, spec.destination);
      s.agents.push_back(spec);
    }
    s.validate();
    return s;
  } catch (const Json::exception& e) {
    throw InputError(std::string("invalid scenario: ") + e.what());
  }
}

ScenarioConfig load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open scenario file " + path.string());
  Json j;
  try {
    in >> j;
  } catch (const Json::exception& e) {
    throw InputError("scenario " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_scenario(j, path.parent_path());
}

Json scenario_to_json(const ScenarioConfig& scenario, const std::string& network_ref) {
  Json agents = Json::array();
  for (const auto& a : scenario.agents)
    agents.push_back({{"id", a.id},
                      {"origin", scenario.graph->label(a.origin)},
                      {"destination", scenario.graph->label(a.destination)},
                      {"budget", a.budget},
                      {"weight", a.weight}});
  return Json{{"network", network_ref}, {"seed", scenario.seed}, {"truncate", scenario.truncate}, {"agents", agents}};
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const Json& config) { return hash_hex(fnv1a64(config.dump())); }

TrainConfig parse_train_config(const Json& j, TrainConfig c) {
  try {
    c.lr = j.value("lr", c.lr);
    c.lr_decay = j.value("lr_decay", c.lr_decay);
    c.decay_every = j.value("decay_every", c.decay_every);
    c.epochs = j.value("epochs", c.epochs);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.heads = j.value("heads", c.heads);
    c.head_dim = j.value("head_dim", c.head_dim);
    c.layers = j.value("layers", c.layers);
    c.beta = j.value("beta", c.beta);
    c.entropy = j.value("entropy", c.entropy);
    c.attention = j.value("attention", c.attention);
    c.expert_loss = j.value("expert_loss", c.expert_loss);
    c.kappa = j.value("kappa", c.kappa);
    c.seed = j.value("seed", c.seed);
    c.expert.smoothing = j.value("expert_smoothing", c.expert.smoothing);
    if (j.contains("expert_mode")) {
      const auto mode = j.at("expert_mode").get<std::string>();
      if (mode == "auto")
        c.expert.mode = ExpertConfig::Mode::Auto;
      else if (mode == "expectimax")
        c.expert.mode = ExpertConfig::Mode::Expectimax;
      else if (mode == "heuristic")
        c.expert.mode = ExpertConfig::Mode::HeuristicDijkstra;
      else
        throw ConfigError("unknown expert_mode '" + mode + "'");
    }
    c.refresh.skipgram.dim = c.embed_dim;
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("invalid train config: ") + e.what());
  }
  c.validate();
  return c;
}

Json train_config_to_json(const TrainConfig& c) {
  const char* mode = c.expert.mode == ExpertConfig::Mode::Auto ? "auto"
                     : c.expert.mode == ExpertConfig::Mode::Expectimax ? "expectimax"
                                                               : "heuristic";
  return Json{{"lr", c.lr},         {"lr_decay", c.lr_decay},     {"decay_every", c.decay_every},
              {"epochs", c.epochs}, {"embed_dim", c.embed_dim},   {"heads", c.heads},
              {"head_dim", c.head_dim}, {"layers", c.layers},     {"beta", c.beta},
              {"entropy", c.entropy},   {"attention", c.attention}, {"expert_loss", c.expert_loss},
              {"kappa", c.kappa},   {"seed", c.seed},             {"expert_smoothing", c.expert.smoothing},
              {"expert_mode", mode}};
}

Json RunManifest::to_json() const {
  return Json{{"command", command}, {"config_hash", config_hash}, {"seeds", seeds},
              {"version", version}, {"timestamp", timestamp},     {"outputs", outputs}};
}

RunManifest make_manifest(const std::string& command, const Json& config, std::vector<std::uint64_t> seeds) {
  RunManifest m;
  m.command = command;
  m.config_hash = marvel::config_hash(config);
  m.seeds = std::move(seeds);
  m.version = kVersion;
  const std::time_t now = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  m.timestamp = buf;
  return m;
}

}  // namespace marvel
