// Copyright 2026 The unmerge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "unmerge/datagen.hpp"
#include "unmerge/eval.hpp"
#include "unmerge/merge.hpp"
#include "unmerge/toymodel.hpp"
#include "unmerge/trainer.hpp"

namespace unmerge {

// Everything one end-to-end run needs. Defaults reproduce the local
// experiment at toy scale: the two unlearning configs keep the published
// coefficient ratios, batch sizes, accumulation and epoch count.
struct ExperimentConfig {
  ModelConfig model;
  DataGenConfig data;
  VanillaConfig vanilla;
  UnlearnConfig train_1;
  UnlearnConfig train_2;
  MergeConfig merge;
  EvalOptions eval;
  std::string out_dir = "run";

  static ExperimentConfig defaults();

  // Throws ConfigError naming the first invalid field.
  void validate() const;

  // Replaces every seed (data, model, vanilla, both trainings, merge).
  void override_seed(std::uint64_t seed);
};

void to_json(nlohmann::json& j, const ExperimentConfig& cfg);
void from_json(const nlohmann::json& j, ExperimentConfig& cfg);

// Missing keys fall back to defaults(); an absent path yields defaults().
ExperimentConfig load_experiment_config(const std::optional<std::filesystem::path>& path);

}  // namespace unmerge
