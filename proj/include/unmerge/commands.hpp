// Copyright 2026 The unmerge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "unmerge/experiment.hpp"
#include "unmerge/toymodel.hpp"

namespace unmerge {

namespace fs = std::filesystem;

// Options shared by every command: an optional JSON experiment config and an
// optional seed that replaces every seed in it.
struct CommonOptions {
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;

  [[nodiscard]] ExperimentConfig load() const;
};

// A base checkpoint is stored as <name>.nps next to a <name>.json sidecar
// holding its ModelConfig.
fs::path base_sidecar_path(const fs::path& base);
void save_base(const ToyLM& model, const fs::path& base);
ToyLM load_base(const fs::path& base);

// Base model plus an optional adapter checkpoint.
ToyLM load_model(const fs::path& base, const std::optional<fs::path>& adapters);

struct GenDataOptions {
  CommonOptions common;
  fs::path out;
};
void cmd_gen_data(const GenDataOptions& opts, std::ostream& log);

struct TrainOptions {
  CommonOptions common;
  fs::path data;
  fs::path out_dir;
  int which = 1;
  // Defaults to <out_dir>/base.nps; built from the config when missing.
  std::optional<fs::path> base;
};
void cmd_train(const TrainOptions& opts, std::ostream& log);

struct MergeOptions {
  CommonOptions common;
  fs::path base;
  std::vector<fs::path> adapters;
  fs::path out;
  std::optional<std::string> method;
  std::optional<double> density;
  std::optional<double> drop_rate;
};
void cmd_merge(const MergeOptions& opts, std::ostream& log);

struct EvalCmdOptions {
  CommonOptions common;
  fs::path base;
  std::optional<fs::path> adapters;
  fs::path data;
  fs::path out;
  std::string name = "model";
};
void cmd_eval(const EvalCmdOptions& opts, std::ostream& log);

struct AblateDensityOptions {
  CommonOptions common;
  fs::path base;
  std::vector<fs::path> adapters;
  fs::path data;
  fs::path out;
  std::vector<double> densities = {0.6, 0.8, 1.0};
};
void cmd_ablate_density(const AblateDensityOptions& opts, std::ostream& log);

struct CompareMergesOptions {
  CommonOptions common;
  fs::path base;
  std::vector<fs::path> adapters;
  fs::path data;
  fs::path out;
  std::vector<std::string> methods = {"all"};
};
void cmd_compare_merges(const CompareMergesOptions& opts, std::ostream& log);

struct AnalyzeOptions {
  CommonOptions common;
  fs::path snapshots_dir;
  fs::path base;
  fs::path data;
  fs::path out_dir;
  // Overrides the detected inflection step.
  std::optional<int> inflection_step;
};
void cmd_analyze(const AnalyzeOptions& opts, std::ostream& log);

// Snapshot file name for a training step: snap_000120.nps
std::string snapshot_file_name(int step);
std::vector<Snapshot> load_snapshots(const fs::path& dir);

}  // namespace unmerge
