#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "marvel/graph.hpp"
#include "marvel/json.hpp"
#include "marvel/sim.hpp"
#include "marvel/trainer.hpp"

namespace marvel {

inline constexpr double kDefaultSigmaRatio = 0.25;

/// Bar-Gera TNTP network: metadata block terminated by <END OF METADATA>, then one row per link
/// "init term capacity length fft b power speed toll type ;". mu = fft, sigma = 0.25 mu, p_open = 1.
UncertainGraph parse_tntp(std::istream& in, const std::string& name = "<tntp>");
/// Sidecar CSV with header "edge_id,sigma,p_open"; edge ids are 0-based link rows in file order.
void apply_sidecar(UncertainGraph& graph, std::istream& in, const std::string& name = "<sidecar>");

UncertainGraph load_tntp(const std::filesystem::path& network, const std::optional<std::filesystem::path>& sidecar);

/// Writes a network that parse_tntp reads back to an equal graph (together with the sidecar).
void write_tntp(std::ostream& out, const UncertainGraph& graph);
/// Rows for every edge whose sigma differs from 0.25 mu or whose p_open < 1.
void write_sidecar(std::ostream& out, const UncertainGraph& graph);
void save_tntp(const UncertainGraph& graph, const std::filesystem::path& network, const std::filesystem::path& sidecar);

/// Node i is labelled i (1..14); one uncertain one-way edge 13 -> 4.
UncertainGraph make_figure1();
/// Robot A 9 -> 12 (T = 9.5), Robot B 1 -> 8 (T = 19.5).
ScenarioConfig figure1_scenario(double weight_a, double weight_b, std::uint64_t seed = 1);

/// Scenario file (JSON):
/// {"network": "builtin:figure1" | "<path>.tntp", "sidecar": "<path>.csv", "seed": 1, "truncate": true,
///  "agents": [{"origin": 9, "destination": 12, "budget": 9.5 | "budget_multiplier": 1.0, "weight": 0.3}]}
/// Node fields are external labels; relative paths resolve against the file's directory.
/// budget_multiplier scales the least expected time. Instead of "agents", "od_pairs":
/// {"count": 10, "seed": 7, "budget_multiplier": 1.0, "low_priority_multiplier": 1.2} draws a random team.
ScenarioConfig parse_scenario(const Json& j, const std::filesystem::path& base_dir);
ScenarioConfig load_scenario(const std::filesystem::path& path);
Json scenario_to_json(const ScenarioConfig& scenario, const std::string& network_ref);

/// Overrides on top of `base` from a JSON object; unknown keys are ignored. Throws ConfigError.
TrainConfig parse_train_config(const Json& j, TrainConfig base = {});
Json train_config_to_json(const TrainConfig& config);

struct RunManifest {
  std::string command;
  std::string config_hash;  // hex fnv1a64 of the canonical config dump
  std::vector<std::uint64_t> seeds;
  std::string version;
  std::string timestamp;
  std::vector<std::string> outputs;

  Json to_json() const;
};

std::string hash_hex(std::uint64_t h);
std::string config_hash(const Json& config);
RunManifest make_manifest(const std::string& command, const Json& config, std::vector<std::uint64_t> seeds);

inline constexpr const char* kVersion = "1.0.0";

}  // namespace marvel
