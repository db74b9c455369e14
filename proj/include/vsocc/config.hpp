#pragma once

#include <string>

#include "vsocc/pipeline.hpp"

namespace vsocc {

// Everything an experiment needs, grouped the way the config file is:
// [model], [train], [scene], [loss].
struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  SceneConfig scene;
  LossConfig loss;
};

ExperimentConfig default_config();

// Parses the TOML subset used by config files: [section] headers, key = value
// lines, # comments, integers, floats, booleans, quoted strings, and
// single-line (optionally nested) arrays. Unknown keys or sections, type
// mismatches, duplicate keys, and constraint violations all raise ConfigError
// with the offending key or line named. The result is validated.
ExperimentConfig config_from_text(const std::string& text);
ExperimentConfig config_from_file(const std::string& path);

// Canonical serialization: fixed key order, shortest round-trip float form.
// config_from_text(config_to_text(c)) reproduces c exactly.
std::string config_to_text(const ExperimentConfig& cfg);

// Cross-field constraint checks (also run by config_from_text).
void validate_config(const ExperimentConfig& cfg);

}  // namespace vsocc
