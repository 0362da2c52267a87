#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "pmim/data.hpp"
#include "pmim/model.hpp"
#include "pmim/pretrain.hpp"
#include "pmim/probe.hpp"

namespace pmim {

struct AnalysisConfig {
  std::string layer = "last";  // "last" or a layer index
  std::string head = "mean";   // "mean" or a head index
};

struct RunConfig {
  SynthConfig data;
  ModelConfig model;
  Recipe recipe;
  FeatureSpec probe_spec;
  ProbeConfig probe_train;
  std::string probe_task = "image";  // or "patch"
  AnalysisConfig analysis;
  nlohmann::json canonical;  // normalized document the hash covers
  std::string hash;
};

// Strict parsing: unknown keys anywhere are configuration errors.
RunConfig parse_run_config(const nlohmann::json& doc);

// Reads a JSON file, applies --set style overrides (path.key=value, value
// parsed as JSON when possible), then parses strictly.
RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides);
nlohmann::json read_config_file(const std::string& path);
void apply_override(nlohmann::json& doc, const std::string& assignment);

std::string config_hash(const nlohmann::json& canonical);

nlohmann::json model_to_json(const ModelConfig& m, bool include_derived);
ModelConfig model_from_json(const nlohmann::json& j);
nlohmann::json recipe_to_json(const Recipe& r);
Recipe recipe_from_json(const nlohmann::json& j);
nlohmann::json synth_to_json(const SynthConfig& s);
SynthConfig synth_from_json(const nlohmann::json& j);

}  // namespace pmim
