// Copyright 2026 The unmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "unmerge/merge.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "unmerge/error.hpp"
#include "unmerge/rng.hpp"

namespace unmerge {

namespace {

constexpr std::array kMethods = {MergeMethod::linear, MergeMethod::dare_linear, MergeMethod::dare_ties,
                                 MergeMethod::magnitude_prune, MergeMethod::ties};

void check_density(double density) {
  if (!(density > 0.0 && density <= 1.0)) {
    throw ConfigError("density must be in (0, 1], got " + std::to_string(density));
  }
}

void check_drop_rate(double drop_rate) {
  if (!(drop_rate >= 0.0 && drop_rate < 1.0)) {
    throw ConfigError("drop_rate must be in [0, 1), got " + std::to_string(drop_rate));
  }
}

void check_same(std::span<const TaskVector> tvs, const char* context) {
  if (tvs.empty()) throw InputError(std::string(context) + ": no task vectors");
  for (std::size_t i = 1; i < tvs.size(); ++i) require_same_structure(tvs[0].deltas, tvs[i].deltas, context);
}

std::vector<std::span<const float>> slices(std::span<const TaskVector> tvs, const std::string& name) {
  std::vector<std::span<const float>> out;
  out.reserve(tvs.size());
  for (const auto& tv : tvs) out.push_back(tv.deltas.at(name).data());
  return out;
}

// Linear combination sum_i w_i * tv_i / sum_i w_i, accumulated in double.
TaskVector weighted_mean(std::span<const TaskVector> tvs, std::span<const double> weights) {
  check_same(tvs, "linear merge");
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  TaskVector out;
  for (const auto& [name, first] : tvs[0].deltas) {
    const auto src = slices(tvs, name);
    std::vector<float> data(first.numel());
    for (std::size_t i = 0; i < data.size(); ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k < src.size(); ++k) acc += weights[k] * src[k][i];
      data[i] = static_cast<float>(acc / total);
    }
    out.deltas.insert(name, Tensor(first.shape(), std::move(data)));
  }
  return out;
}

TaskVector ties_core(std::span<const TaskVector> tvs) { return disjoint_merge(tvs, elect(tvs)); }

}  // namespace

std::string_view to_string(MergeMethod method) {
  switch (method) {
    case MergeMethod::linear: return "linear";
    case MergeMethod::ties: return "ties";
    case MergeMethod::dare_linear: return "dare-linear";
    case MergeMethod::dare_ties: return "dare-ties";
    case MergeMethod::magnitude_prune: return "magnitude-prune";
  }
  return "?";
}

std::optional<MergeMethod> parse_merge_method(std::string_view name) {
  for (auto m : kMethods) {
    if (to_string(m) == name) return m;
  }
  return std::nullopt;
}

std::span<const MergeMethod> all_merge_methods() { return kMethods; }

void MergeConfig::validate() const {
  check_density(density);
  check_drop_rate(drop_rate);
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("weights must be finite and nonnegative");
  }
  if (!weights.empty() && (method == MergeMethod::linear || method == MergeMethod::dare_linear)) {
    if (!(std::accumulate(weights.begin(), weights.end(), 0.0) > 0.0)) {
      throw ConfigError("weights must have a positive sum");
    }
  }
}

void to_json(nlohmann::json& j, const MergeConfig& cfg) {
  j = {{"method", std::string(to_string(cfg.method))},
       {"density", cfg.density},
       {"drop_rate", cfg.drop_rate},
       {"weights", cfg.weights},
       {"seed", cfg.seed}};
}

void from_json(const nlohmann::json& j, MergeConfig& cfg) {
  cfg = MergeConfig{};
  if (j.contains("method")) {
    const auto name = j.at("method").get<std::string>();
    auto m = parse_merge_method(name);
    if (!m) throw ConfigError("method: unknown merge method '" + name + "'");
    cfg.method = *m;
  }
  if (j.contains("density")) cfg.density = j.at("density").get<double>();
  if (j.contains("drop_rate")) cfg.drop_rate = j.at("drop_rate").get<double>();
  if (j.contains("weights")) cfg.weights = j.at("weights").get<std::vector<double>>();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
}

TaskVector task_vector(const NamedParamSet& base, const NamedParamSet& tuned) {
  require_same_structure(base, tuned, "task_vector");
  TaskVector out;
  for (const auto& [name, b] : base) {
    const auto& t = tuned.at(name);
    std::vector<float> data(b.numel());
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = t[i] - b[i];
    out.deltas.insert(name, Tensor(b.shape(), std::move(data)));
  }
  return out;
}

NamedParamSet apply_task_vector(const NamedParamSet& base, const TaskVector& tv) {
  require_same_structure(base, tv.deltas, "apply_task_vector");
  NamedParamSet out;
  for (const auto& [name, b] : base) {
    const auto& d = tv.deltas.at(name);
    std::vector<float> data(b.numel());
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = b[i] + d[i];
    out.insert(name, Tensor(b.shape(), std::move(data)));
  }
  return out;
}

TaskVector trim(const TaskVector& tv, double density) {
  check_density(density);
  TaskVector out;
  std::vector<std::size_t> order;
  for (const auto& [name, t] : tv.deltas) {
    const std::size_t n = t.numel();
    const auto keep =
        std::min(n, static_cast<std::size_t>(std::ceil(density * static_cast<double>(n) - 1e-9)));
    order.resize(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Stable sort on |value| descending keeps lower indices first among ties.
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return std::fabs(t[a]) > std::fabs(t[b]); });
    std::vector<float> data(n, 0.0f);
    for (std::size_t k = 0; k < keep; ++k) data[order[k]] = t[order[k]];
    out.deltas.insert(name, Tensor(t.shape(), std::move(data)));
  }
  return out;
}

SignVector elect(std::span<const TaskVector> tvs) {
  check_same(tvs, "elect");
  SignVector out;
  for (const auto& [name, first] : tvs[0].deltas) {
    const auto src = slices(tvs, name);
    std::vector<float> data(first.numel());
    for (std::size_t i = 0; i < data.size(); ++i) {
      double sum = 0.0;
      for (const auto& v : src) sum += v[i];
      data[i] = sum > 0.0 ? 1.0f : (sum < 0.0 ? -1.0f : 0.0f);
    }
    out.signs.insert(name, Tensor(first.shape(), std::move(data)));
  }
  return out;
}

TaskVector disjoint_merge(std::span<const TaskVector> tvs, const SignVector& signs) {
  check_same(tvs, "disjoint_merge");
  require_same_structure(tvs[0].deltas, signs.signs, "disjoint_merge");
  TaskVector out;
  for (const auto& [name, s] : signs.signs) {
    const auto src = slices(tvs, name);
    std::vector<float> data(s.numel(), 0.0f);
    for (std::size_t i = 0; i < data.size(); ++i) {
      const float sign = s[i];
      if (sign == 0.0f) continue;
      double sum = 0.0;
      int count = 0;
      for (const auto& values : src) {
        const float v = values[i];
        if (v != 0.0f && (v > 0.0f) == (sign > 0.0f)) {
          sum += v;
          ++count;
        }
      }
      if (count > 0) data[i] = static_cast<float>(sum / count);
    }
    out.deltas.insert(name, Tensor(s.shape(), std::move(data)));
  }
  return out;
}

TaskVector dare_transform(const TaskVector& tv, double drop_rate, std::uint64_t seed) {
  check_drop_rate(drop_rate);
  if (drop_rate == 0.0) return tv;
  Rng rng(seed);
  const double scale = 1.0 / (1.0 - drop_rate);
  TaskVector out;
  for (const auto& [name, t] : tv.deltas) {
    std::vector<float> data(t.numel());
    for (std::size_t i = 0; i < data.size(); ++i) {
      const bool drop = rng.uniform01() < drop_rate;
      data[i] = drop ? 0.0f : static_cast<float>(t[i] * scale);
    }
    out.deltas.insert(name, Tensor(t.shape(), std::move(data)));
  }
  return out;
}

NamedParamSet merge(const NamedParamSet& base, std::span<const TaskVector> tvs, const MergeConfig& cfg) {
  cfg.validate();
  check_same(tvs, "merge");
  require_same_structure(base, tvs[0].deltas, "merge");

  std::vector<double> weights = cfg.weights;
  if (weights.empty()) weights.assign(tvs.size(), 1.0);
  const bool weighted = cfg.method == MergeMethod::linear || cfg.method == MergeMethod::dare_linear;
  if (weighted && weights.size() != tvs.size()) {
    throw ConfigError("weights: expected " + std::to_string(tvs.size()) + " entries, got " +
                      std::to_string(weights.size()));
  }

  auto dare_all = [&] {
    std::vector<TaskVector> out;
    out.reserve(tvs.size());
    for (std::size_t i = 0; i < tvs.size(); ++i) out.push_back(dare_transform(tvs[i], cfg.drop_rate, cfg.seed ^ i));
    return out;
  };
  auto trim_all = [&] {
    std::vector<TaskVector> out;
    out.reserve(tvs.size());
    for (const auto& tv : tvs) out.push_back(trim(tv, cfg.density));
    return out;
  };

  TaskVector merged;
  switch (cfg.method) {
    case MergeMethod::linear:
      merged = weighted_mean(tvs, weights);
      break;
    case MergeMethod::ties:
      merged = ties_core(trim_all());
      break;
    case MergeMethod::dare_linear:
      merged = weighted_mean(dare_all(), weights);
      break;
    case MergeMethod::dare_ties:
      merged = ties_core(dare_all());
      break;
    case MergeMethod::magnitude_prune: {
      const std::vector<double> equal(tvs.size(), 1.0);
      merged = weighted_mean(trim_all(), equal);
      break;
    }
  }
  return apply_task_vector(base, merged);
}

}  // namespace unmerge
