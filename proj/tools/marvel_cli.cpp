#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "marvel/eval.hpp"
#include "marvel/io.hpp"
#include "marvel/trainer.hpp"

namespace fs = std::filesystem;
using namespace marvel;

namespace {

struct Globals {
  std::uint64_t seed = 1;
  std::string config;
  std::string out_dir = ".";
  int trials = 10000;
  int threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
};

struct Loaded {
  ScenarioConfig scenario;
  Json raw;  // config file contents, or the built-in scenario
};

Loaded load_config(const Globals& g) {
  Loaded l;
  if (g.config.empty()) {
    l.scenario = figure1_scenario(0.3, 0.7);
    l.raw = scenario_to_json(l.scenario, "builtin:figure1");
    return l;
  }
  std::ifstream in(g.config);
  if (!in) throw InputError("cannot open config " + g.config);
  try {
    in >> l.raw;
  } catch (const Json::exception& e) {
    throw InputError("config " + g.config + " is not valid JSON: " + e.what());
  }
  l.scenario = parse_scenario(l.raw, fs::path(g.config).parent_path());
  return l;
}

TrainConfig train_config(const Loaded& l, const Globals& g) {
  TrainConfig c = l.raw.contains("train") ? parse_train_config(l.raw.at("train")) : TrainConfig{};
  c.seed = g.seed;
  return c;
}

fs::path out_path(const Globals& g, const std::string& name) {
  fs::create_directories(g.out_dir);
  return fs::path(g.out_dir) / name;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw InputError("cannot write " + p.string());
  return out;
}

void write_manifest(const Globals& g, const std::string& command, const Json& config, std::vector<std::uint64_t> seeds,
                    std::vector<std::string> outputs) {
  auto m = make_manifest(command, config, std::move(seeds));
  m.outputs = std::move(outputs);
  auto out = open_out(out_path(g, command + "_manifest.json"));
  out << m.to_json().dump(2) << '\n';
}

struct LoadedModel {
  std::shared_ptr<const GatModel> model;
  GatOptions options;
};

LoadedModel load_model(const std::string& path, const ScenarioConfig& scenario) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open checkpoint " + path);
  LoadedModel m;
  auto params = load_checkpoint(in, &m.options);
  TrainConfig tc;
  tc.embed_dim = params.in_dim() - kPositionalChannels;
  if (tc.embed_dim < 1) throw InputError("checkpoint input width too small");
  m.model = std::make_shared<const GatModel>(std::move(params), m.options, make_embedding_cache(scenario, tc));
  return m;
}

std::shared_ptr<Policy> make_policy(const std::string& name, const std::string& checkpoint,
                                    const ScenarioConfig& scenario, bool sample) {
  if (name == "let") return let_baseline_policy(scenario.graph);
  if (name == "expert") return std::make_shared<ExpertPolicy>(scenario, ExpertConfig{});
  if (name == "gat") {
    if (checkpoint.empty()) throw ConfigError("--policy gat needs --checkpoint");
    return std::make_shared<GatPolicy>(load_model(checkpoint, scenario).model, !sample);
  }
  throw ConfigError("unknown policy '" + name + "'");
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      v.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw ConfigError("bad number '" + tok + "' in list");
    }
  }
  if (v.empty()) throw ConfigError("empty list");
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-agent reliable navigation on uncertain networks"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "master seed");
  app.add_option("--config", g.config, "scenario JSON (default: built-in illustrative network, weights 0.3/0.7)");
  app.add_option("--out-dir", g.out_dir, "output directory");
  app.add_option("--trials", g.trials, "Monte-Carlo trials")->check(CLI::PositiveNumber);
  app.add_option("--threads", g.threads, "evaluation threads")->check(CLI::PositiveNumber);

  auto* fig = app.add_subcommand("make-figure1", "write the built-in 14-node illustrative network");
  double weight_a = 0.3;
  fig->add_option("--weight-a", weight_a, "weight of robot A (B gets 1 - weight)")->check(CLI::Range(0.0, 1.0));

  auto* embed = app.add_subcommand("embed", "build and export node embeddings");
  int embed_dim = 128;
  embed->add_option("--dim", embed_dim, "embedding dimension")->check(CLI::PositiveNumber);

  auto* train_cmd = app.add_subcommand("train", "train the attention policy");
  int epochs = -1;
  bool no_attention = false, no_entropy = false, no_ce = false;
  train_cmd->add_option("--epochs", epochs, "training epochs (overrides config)");
  train_cmd->add_flag("--no-attention", no_attention, "uniform neighbour weights");
  train_cmd->add_flag("--no-entropy", no_entropy, "drop the entropy term");
  train_cmd->add_flag("--no-cross-entropy", no_ce, "drop the expert loss");

  auto* eval = app.add_subcommand("eval", "Monte-Carlo on-time evaluation");
  std::string policy_name = "let", checkpoint, multipliers = "0.95,1.0,1.05";
  bool battery = false;
  double low_mult = 1.2;
  for (auto* sub : {eval, app.add_subcommand("simulate", "run one seeded episode and dump its trajectory")}) {
    sub->add_option("--policy", policy_name, "let | expert | gat")->check(CLI::IsMember({"let", "expert", "gat"}));
    sub->add_option("--checkpoint", checkpoint, "GAT checkpoint (for --policy gat)");
  }
  auto* simulate = app.get_subcommand("simulate");
  eval->add_flag("--battery", battery, "evaluate under each budget multiplier");
  eval->add_option("--multipliers", multipliers, "comma-separated budget multipliers");
  eval->add_option("--low-multiplier", low_mult, "budget multiplier of low-priority agents");
  bool sample = false;
  simulate->add_flag("--sample", sample, "sample GAT actions instead of taking the argmax");

  auto* ablate = app.add_subcommand("ablate", "train and evaluate the four ablation variants");
  ablate->add_option("--epochs", epochs, "training epochs per variant");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*fig) {
      const auto sc = figure1_scenario(weight_a, 1.0 - weight_a, g.seed);
      save_tntp(*sc.graph, out_path(g, "figure1_net.tntp"), out_path(g, "figure1_uncertainty.csv"));
      Json j = scenario_to_json(sc, "figure1_net.tntp");
      j["sidecar"] = "figure1_uncertainty.csv";
      open_out(out_path(g, "figure1_scenario.json")) << j.dump(2) << '\n';
      std::size_t uncertain = 0;
      for (const auto& e : sc.graph->edges()) uncertain += !e.certain;
      std::cout << "nodes " << sc.graph->num_nodes() << " edges " << sc.graph->num_edges() << " uncertain " << uncertain
                << '\n';
      write_manifest(g, "make-figure1", j, {g.seed},
                     {"figure1_net.tntp", "figure1_uncertainty.csv", "figure1_scenario.json"});
      return 0;
    }

    const auto loaded = load_config(g);
    const auto& sc = loaded.scenario;

    if (*embed) {
      TrainConfig tc = train_config(loaded, g);
      tc.embed_dim = embed_dim;
      auto cache = make_embedding_cache(sc, tc);
      auto out = open_out(out_path(g, "embeddings.txt"));
      write_embeddings(out, cache->base(), *sc.graph);
      write_manifest(g, "embed", loaded.raw, {g.seed}, {"embeddings.txt"});
      return 0;
    }

    if (*train_cmd) {
      TrainConfig tc = train_config(loaded, g);
      if (epochs >= 0) tc.epochs = epochs;
      if (no_attention) tc.attention = false;
      if (no_entropy) tc.entropy = false;
      if (no_ce) tc.expert_loss = false;
      tc.validate();
      const auto result = train(sc, tc, nullptr, [](const EpochLog& l, const GatParams&) {
        if (l.epoch % 100 == 0)
          std::cerr << "epoch " << l.epoch << " objective " << l.objective << " agreement " << l.expert_agreement << '\n';
      });
      {
        auto out = open_out(out_path(g, "checkpoint.json"));
        save_checkpoint(out, result.params, GatOptions{tc.attention, 0.2});
      }
      {
        auto out = open_out(out_path(g, "train_log.csv"));
        write_train_log_csv(out, result.log);
      }
      if (result.converged_epoch)
        std::cout << "converged at epoch " << *result.converged_epoch << '\n';
      else
        std::cout << "not convergent\n";
      Json cfg = loaded.raw;
      cfg["train"] = train_config_to_json(tc);
      write_manifest(g, "train", cfg, {tc.seed}, {"checkpoint.json", "train_log.csv"});
      return 0;
    }

    if (*eval) {
      Json cfg = loaded.raw;
      cfg["policy"] = policy_name;
      cfg["trials"] = g.trials;
      if (battery) {
        const auto mults = parse_list(multipliers);
        std::vector<OdPair> od;
        for (const auto& a : sc.agents) od.push_back(OdPair{a.origin, a.destination, a.weight});
        PolicyFactory factory = [&](const ScenarioConfig& s) { return make_policy(policy_name, checkpoint, s, false); };
        const auto report = budget_battery(factory, sc.graph, od, mults, g.trials, g.seed, g.threads, low_mult);
        for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
        auto out = open_out(out_path(g, "battery.csv"));
        write_battery_csv(out, std::span(&report, 1));
        write_battery_csv(std::cout, std::span(&report, 1));
        cfg["multipliers"] = mults;
        write_manifest(g, "eval", cfg, {g.seed}, {"battery.csv"});
        return 0;
      }
      const auto policy = make_policy(policy_name, checkpoint, sc, false);
      const auto report = monte_carlo_sota(*policy, sc, g.trials, g.seed, g.threads);
      {
        auto out = open_out(out_path(g, "report.csv"));
        write_report_csv(out, sc, report);
      }
      Json rj = report_to_json(sc, report);
      rj["config_hash"] = config_hash(cfg);
      open_out(out_path(g, "report.json")) << rj.dump(2) << '\n';
      write_report_csv(std::cout, sc, report);
      write_manifest(g, "eval", cfg, {g.seed}, {"report.csv", "report.json"});
      return 0;
    }

    if (*simulate) {
      const auto policy = make_policy(policy_name, checkpoint, sc, sample);
      const auto outcome = run_episode(*policy, sc, g.seed);
      auto out = open_out(out_path(g, "trajectory.jsonl"));
      write_trajectory_jsonl(out, *sc.graph, outcome);
      for (std::size_t i = 0; i < outcome.agents.size(); ++i) {
        const auto& a = outcome.agents[i];
        std::cout << "agent " << i << ' ' << to_string(a.status) << " spent " << a.spent << " path";
        for (NodeId v : a.path) std::cout << ' ' << sc.graph->label(v);
        std::cout << '\n';
      }
      Json cfg = loaded.raw;
      cfg["policy"] = policy_name;
      write_manifest(g, "simulate", cfg, {g.seed}, {"trajectory.jsonl"});
      return 0;
    }

    if (*ablate) {
      TrainConfig tc = train_config(loaded, g);
      if (epochs >= 0) tc.epochs = epochs;
      tc.validate();
      const auto rows = ablation_battery(sc, tc, g.trials, g.seed, g.threads);
      std::vector<std::string> outputs{"ablation.csv"};
      for (const auto& r : rows) {
        auto out = open_out(out_path(g, "checkpoint_" + r.name + ".json"));
        save_checkpoint(out, r.params, GatOptions{r.config.attention, 0.2});
        outputs.push_back("checkpoint_" + r.name + ".json");
      }
      {
        auto out = open_out(out_path(g, "ablation.csv"));
        write_ablation_csv(out, rows);
      }
      write_ablation_csv(std::cout, rows);
      Json cfg = loaded.raw;
      cfg["train"] = train_config_to_json(tc);
      cfg["trials"] = g.trials;
      write_manifest(g, "ablate", cfg, {g.seed}, outputs);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << '\n';
    return 3;
  } catch (const InvariantError& e) {
    std::cerr << "internal invariant violated: " << e.what() << '\n';
    return 3;
  } catch (const Error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
