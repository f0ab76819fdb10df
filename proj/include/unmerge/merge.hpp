// Copyright 2026 The unmerge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "unmerge/tensor_store.hpp"

namespace unmerge {

// Per-parameter delta (tuned - base). Same names and shapes as the base set.
struct TaskVector {
  NamedParamSet deltas;

  bool operator==(const TaskVector&) const = default;
};

// Values in {-1, 0, +1}, same layout as the task vectors it was elected from.
struct SignVector {
  NamedParamSet signs;
};

enum class MergeMethod { linear, ties, dare_linear, dare_ties, magnitude_prune };

std::string_view to_string(MergeMethod method);
std::optional<MergeMethod> parse_merge_method(std::string_view name);
// All methods in the order of the merge comparison table.
std::span<const MergeMethod> all_merge_methods();

struct MergeConfig {
  MergeMethod method = MergeMethod::ties;
  double density = 0.8;    // trim / magnitude-prune keep fraction, (0, 1]
  double drop_rate = 0.0;  // DARE drop probability, [0, 1)
  std::vector<double> weights;  // linear coefficients; empty means equal
  std::uint64_t seed = 0;

  // Throws ConfigError naming the offending field.
  void validate() const;
};

void to_json(nlohmann::json& j, const MergeConfig& cfg);
void from_json(const nlohmann::json& j, MergeConfig& cfg);

TaskVector task_vector(const NamedParamSet& base, const NamedParamSet& tuned);
NamedParamSet apply_task_vector(const NamedParamSet& base, const TaskVector& tv);

// Keeps the ceil(density * n) largest-magnitude entries of each tensor; ties at
// the cutoff go to the lower flat index.
TaskVector trim(const TaskVector& tv, double density);

// Sign of the coordinate-wise sum; an exact zero sum elects 0.
SignVector elect(std::span<const TaskVector> tvs);

// Mean of the nonzero values agreeing with the elected sign.
TaskVector disjoint_merge(std::span<const TaskVector> tvs, const SignVector& signs);

// Drops each coordinate with probability drop_rate and rescales survivors by
// 1 / (1 - drop_rate). Coordinates consume the stream in name-sorted flat order.
TaskVector dare_transform(const TaskVector& tv, double drop_rate, std::uint64_t seed);

NamedParamSet merge(const NamedParamSet& base, std::span<const TaskVector> tvs, const MergeConfig& cfg);

}  // namespace unmerge
