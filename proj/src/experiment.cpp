// Copyright 2026 The unmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "unmerge/experiment.hpp"

#include "unmerge/error.hpp"

namespace unmerge {

namespace {

template <typename T>
void read_section(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    // Merge the given keys over the current defaults.
    nlohmann::json merged = out;
    merged.update(j.at(key));
    out = merged.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string(key) + ": " + e.what());
  }
}

template <typename T>
void validate_section(const char* key, const T& section) {
  try {
    section.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(key) + "." + e.what());
  }
}

}  // namespace

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig cfg;
  cfg.model = ModelConfig{};
  cfg.data = DataGenConfig{};

  // Model 1: ga/gd/gk = 0.4/0.4/0.2, batch 1, accumulation 4, 5 epochs.
  cfg.train_1 = UnlearnConfig{};
  cfg.train_1.alpha = 0.4;
  cfg.train_1.beta_gdr = 0.4;
  cfg.train_1.gamma = 0.2;
  cfg.train_1.batch_size = 1;

  // Model 2: ga/gd/gk = 0.3/0.3/0.4, batch 2, accumulation 4, 5 epochs.
  cfg.train_2 = cfg.train_1;
  cfg.train_2.alpha = 0.3;
  cfg.train_2.beta_gdr = 0.3;
  cfg.train_2.gamma = 0.4;
  cfg.train_2.batch_size = 2;

  cfg.merge.method = MergeMethod::ties;
  cfg.merge.density = 0.8;
  return cfg;
}

void ExperimentConfig::validate() const {
  validate_section("model", model);
  validate_section("data", data);
  validate_section("vanilla", vanilla);
  validate_section("train_1", train_1);
  validate_section("train_2", train_2);
  validate_section("merge", merge);
  validate_section("eval", eval);
  if (model.vocab_size != data.vocab_size) {
    throw ConfigError("model.vocab_size must equal data.vocab_size");
  }
}

void ExperimentConfig::override_seed(std::uint64_t seed) {
  model.seed = seed;
  data.seed = seed;
  vanilla.seed = seed;
  train_1.seed = seed;
  train_2.seed = seed;
  merge.seed = seed;
}

void to_json(nlohmann::json& j, const ExperimentConfig& cfg) {
  j = {{"model", cfg.model},       {"data", cfg.data},   {"vanilla", cfg.vanilla}, {"train_1", cfg.train_1},
       {"train_2", cfg.train_2},   {"merge", cfg.merge}, {"eval", cfg.eval},       {"out_dir", cfg.out_dir}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& cfg) {
  cfg = ExperimentConfig::defaults();
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  read_section(j, "model", cfg.model);
  read_section(j, "data", cfg.data);
  read_section(j, "vanilla", cfg.vanilla);
  read_section(j, "train_1", cfg.train_1);
  read_section(j, "train_2", cfg.train_2);
  read_section(j, "merge", cfg.merge);
  read_section(j, "eval", cfg.eval);
  if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();
}

ExperimentConfig load_experiment_config(const std::optional<std::filesystem::path>& path) {
  if (!path) return ExperimentConfig::defaults();
  const auto text = read_text_file(*path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path->string() + ": " + e.what());
  }
  return j.get<ExperimentConfig>();
}

}  // namespace unmerge
