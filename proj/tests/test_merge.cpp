// Copyright 2026 The unmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>

#include <doctest.h>

#include "test_util.hpp"
#include "ties_oracle.hpp"
#include "unmerge/error.hpp"
#include "unmerge/merge.hpp"

using namespace unmerge;
using unmerge::testing::one;

namespace {

std::vector<float> values(const NamedParamSet& p, const std::string& name = "w") {
  const auto d = p.at(name).data();
  return {d.begin(), d.end()};
}

TaskVector tv_of(std::vector<float> v) { return {one("w", std::move(v))}; }

NamedParamSet zeros(std::size_t n) { return one("w", std::vector<float>(n, 0.0f)); }

}  // namespace

TEST_CASE("task vector examples") {
  CHECK(values(task_vector(one("w", {1, 1}), one("w", {3, 0})).deltas) == std::vector<float>{2, -1});
  CHECK(values(task_vector(one("w", {4, 5}), one("w", {4, 5})).deltas) == std::vector<float>{0, 0});

  NamedParamSet tuned = one("w", {1});
  tuned.insert("w2", Tensor::vector({1}));
  CHECK_THROWS_AS(task_vector(one("w", {1}), tuned), StructuralError);
  CHECK_THROWS_AS(task_vector(one("w", {1}), one("w", {1, 2})), StructuralError);
}

TEST_CASE("apply task vector examples") {
  CHECK(values(apply_task_vector(one("w", {1}), tv_of({0.5f}))) == std::vector<float>{1.5f});
  CHECK(apply_task_vector(one("w", {1, 2}), tv_of({0, 0})) == one("w", {1, 2}));
  CHECK_THROWS_AS(apply_task_vector(one("w", {1, 2}), tv_of({0})), StructuralError);
}

TEST_CASE("property: apply inverts task_vector") {
  Rng rng(11);
  // Bit-exact whenever the f32 difference is exact, e.g. on a dyadic grid.
  for (int t = 0; t < 200; ++t) {
    std::vector<float> a(7), b(7);
    for (auto& x : a) x = static_cast<float>(static_cast<int>(rng.below(64)) - 32) / 8.0f;
    for (auto& x : b) x = static_cast<float>(static_cast<int>(rng.below(64)) - 32) / 8.0f;
    CHECK(apply_task_vector(one("w", a), task_vector(one("w", a), one("w", b))) == one("w", b));
  }
  // Otherwise the f32 rounding of the difference bounds the error.
  for (int t = 0; t < 200; ++t) {
    const auto a = unmerge::testing::random_floats(rng, 7, -3, 3);
    const auto b = unmerge::testing::random_floats(rng, 7, -3, 3);
    const auto back = values(apply_task_vector(one("w", a), task_vector(one("w", a), one("w", b))));
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double scale = std::max(std::fabs(a[i]), std::fabs(b[i]));
      CHECK(std::fabs(back[i] - b[i]) <= 0x1.0p-22 * scale);
    }
  }
}

TEST_CASE("trim examples") {
  CHECK(values(trim(tv_of({0.5f, -0.2f, 0.0f, 0.3f}), 0.5).deltas) == std::vector<float>{0.5f, 0, 0, 0.3f});
  CHECK(values(trim(tv_of({1, -1}), 0.5).deltas) == std::vector<float>{1, 0});
  CHECK(trim(tv_of({0.1f, -7, 3}), 1.0) == tv_of({0.1f, -7, 3}));
  CHECK_THROWS_AS(trim(tv_of({1}), 0.0), ConfigError);
  CHECK_THROWS_AS(trim(tv_of({1}), 1.5), ConfigError);
}

TEST_CASE("trim is per tensor") {
  NamedParamSet p;
  p.insert("a", Tensor::vector({10, 20}));
  p.insert("b", Tensor::vector({0.1f, 0.2f}));
  const auto t = trim({p}, 0.5);
  CHECK(values(t.deltas, "a") == std::vector<float>{0, 20});
  CHECK(values(t.deltas, "b") == std::vector<float>{0, 0.2f});
}

TEST_CASE("elect examples") {
  const std::vector<TaskVector> tvs = {tv_of({0.5f, 0, 0, 0.3f}), tv_of({0.4f, 0, -0.6f, 0})};
  CHECK(values(elect(tvs).signs) == std::vector<float>{1, 0, -1, 1});
  const std::vector<TaskVector> single = {tv_of({-2, 0, 3})};
  CHECK(values(elect(single).signs) == std::vector<float>{-1, 0, 1});
  const std::vector<TaskVector> cancel = {tv_of({1}), tv_of({-1})};
  CHECK(values(elect(cancel).signs) == std::vector<float>{0});
  const std::vector<TaskVector> bad = {tv_of({1}), tv_of({1, 2})};
  CHECK_THROWS_AS(elect(bad), StructuralError);
}

TEST_CASE("disjoint merge examples") {
  const std::vector<TaskVector> tvs = {tv_of({0.5f, 0, 0, 0.3f}), tv_of({0.4f, 0, -0.6f, 0})};
  const auto out = values(disjoint_merge(tvs, {one("w", {1, 0, -1, 1})}).deltas);
  CHECK(out[0] == doctest::Approx(0.45).epsilon(1e-6));
  CHECK(out[1] == 0.0f);
  CHECK(out[2] == -0.6f);
  CHECK(out[3] == 0.3f);

  const std::vector<TaskVector> single = {tv_of({0.25f, -1.5f, 0})};
  CHECK(disjoint_merge(single, elect(single)) == single[0]);

  const std::vector<TaskVector> zero = {tv_of({0, 0}), tv_of({0, 0})};
  CHECK(values(disjoint_merge(zero, elect(zero)).deltas) == std::vector<float>{0, 0});
}

TEST_CASE("dare transform examples") {
  const auto tv = tv_of({0.3f, -1, 2, 0});
  CHECK(dare_transform(tv, 0.0, 1) == tv);
  CHECK(dare_transform(tv, 0.0, 999) == tv);
  CHECK_THROWS_AS(dare_transform(tv, 1.0, 1), ConfigError);
  CHECK_THROWS_AS(dare_transform(tv, -0.1, 1), ConfigError);

  const auto ones = tv_of(std::vector<float>(10000, 1.0f));
  const auto dropped = dare_transform(ones, 0.5, 1234);
  const auto v = values(dropped.deltas);
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / 10000.0;
  CHECK(mean >= 0.9);
  CHECK(mean <= 1.1);
  for (float x : v) CHECK((x == 0.0f || x == 2.0f));
  CHECK(dare_transform(ones, 0.5, 1234) == dropped);
  CHECK(dare_transform(ones, 0.5, 1235) != dropped);
}

TEST_CASE("property: dare preserves the expectation per coordinate") {
  // 1000 seeds at p = 0.1: the standard error of each mean is about 1%, so the
  // 5% bound sits near five standard errors.
  const auto ones = tv_of(std::vector<float>(16, 1.0f));
  std::vector<double> sums(16, 0.0);
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto v = values(dare_transform(ones, 0.1, seed).deltas);
    for (std::size_t i = 0; i < v.size(); ++i) sums[i] += v[i];
  }
  for (double s : sums) CHECK(std::fabs(s / 1000.0 - 1.0) < 0.05);
}

TEST_CASE("merge examples") {
  const auto base = zeros(4);
  SUBCASE("two identical vectors with ties at density 1") {
    const std::vector<TaskVector> tvs = {tv_of({0.5f, -0.2f, 0, 0.3f}), tv_of({0.5f, -0.2f, 0, 0.3f})};
    MergeConfig cfg;
    cfg.density = 1.0;
    CHECK(merge(one("w", {1, 1, 1, 1}), tvs, cfg) == apply_task_vector(one("w", {1, 1, 1, 1}), tvs[0]));
  }
  SUBCASE("dare-linear with no drops equals linear") {
    const std::vector<TaskVector> tvs = {tv_of({0.5f, -0.2f, 0, 0.3f}), tv_of({0.4f, 0.1f, -0.6f, 0.3f})};
    MergeConfig lin;
    lin.method = MergeMethod::linear;
    MergeConfig dare = lin;
    dare.method = MergeMethod::dare_linear;
    dare.seed = 77;
    CHECK(merge(base, tvs, dare) == merge(base, tvs, lin));
  }
  SUBCASE("composed TIES example") {
    const std::vector<TaskVector> tvs = {tv_of({0.5f, -0.2f, 0, 0.3f}), tv_of({0.4f, 0.1f, -0.6f, 0.3f})};
    MergeConfig cfg;
    cfg.density = 0.5;
    const auto out = values(merge(base, tvs, cfg));
    CHECK(out[0] == doctest::Approx(0.45).epsilon(1e-6));
    CHECK(out[1] == 0.0f);
    CHECK(out[2] == -0.6f);
    CHECK(out[3] == 0.3f);
  }
  SUBCASE("weighted linear") {
    const std::vector<TaskVector> tvs = {tv_of({1, 0}), tv_of({0, 1})};
    MergeConfig cfg;
    cfg.method = MergeMethod::linear;
    cfg.weights = {3, 1};
    CHECK(values(merge(zeros(2), tvs, cfg)) == std::vector<float>{0.75f, 0.25f});
    cfg.weights = {1};
    CHECK_THROWS_AS(merge(zeros(2), tvs, cfg), ConfigError);
  }
  SUBCASE("magnitude prune is trim then plain mean") {
    const std::vector<TaskVector> tvs = {tv_of({4, -1}), tv_of({-2, 3})};
    MergeConfig cfg;
    cfg.method = MergeMethod::magnitude_prune;
    cfg.density = 0.5;
    CHECK(values(merge(zeros(2), tvs, cfg)) == std::vector<float>{2.0f, 1.5f});
  }
}

TEST_CASE("property: merging k copies equals applying one") {
  Rng rng(3);
  for (auto method : all_merge_methods()) {
    for (int k = 1; k <= 4; ++k) {
      const auto tv = tv_of(unmerge::testing::random_floats(rng, 9));
      const auto base = one("w", unmerge::testing::random_floats(rng, 9));
      const std::vector<TaskVector> tvs(static_cast<std::size_t>(k), tv);
      MergeConfig cfg;
      cfg.method = method;
      cfg.density = 1.0;
      cfg.drop_rate = 0.0;
      CAPTURE(to_string(method));
      CHECK(merge(base, tvs, cfg) == apply_task_vector(base, tv));
    }
  }
}

TEST_CASE("property: trim keeps exactly ceil(density n) entries and never grows one") {
  Rng rng(17);
  for (int t = 0; t < 300; ++t) {
    const std::size_t n = 1 + rng.below(20);
    std::vector<float> v = unmerge::testing::random_floats(rng, n);
    for (auto& x : v) {
      if (x == 0.0f) x = 0.5f;
    }
    const double density = 0.05 + 0.95 * rng.uniform01();
    const auto out = values(trim(tv_of(v), density).deltas);
    const auto nonzero = std::count_if(out.begin(), out.end(), [](float x) { return x != 0.0f; });
    CHECK(static_cast<std::size_t>(nonzero) == static_cast<std::size_t>(std::ceil(density * static_cast<double>(n) - 1e-9)));
    for (std::size_t i = 0; i < n; ++i) CHECK(std::fabs(out[i]) <= std::fabs(v[i]));
  }
}

TEST_CASE("property: disjoint merge output follows the elected sign") {
  Rng rng(23);
  for (int t = 0; t < 200; ++t) {
    std::vector<TaskVector> tvs;
    for (int k = 0; k < 3; ++k) tvs.push_back(trim(tv_of(unmerge::testing::random_floats(rng, 6)), 0.5));
    const auto signs = values(elect(tvs).signs);
    const auto out = values(disjoint_merge(tvs, {one("w", signs)}).deltas);
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (out[i] != 0.0f) CHECK((out[i] > 0 ? 1.0f : -1.0f) == signs[i]);
    }
  }
}

TEST_CASE("staged TIES agrees with a brute-force reference") {
  Rng rng(99);
  // Values on a coarse grid so magnitude ties, zeros and cancellations occur.
  const float grid[] = {-1.0f, -0.5f, -0.25f, 0.0f, 0.25f, 0.5f, 1.0f, 0.75f, -0.75f};
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 1 + rng.below(8);
    const std::size_t k = 1 + rng.below(3);
    const int quarters = 1 + static_cast<int>(rng.below(4));
    std::vector<std::vector<float>> raw;
    std::vector<TaskVector> tvs;
    for (std::size_t m = 0; m < k; ++m) {
      std::vector<float> v(n);
      for (auto& x : v) x = rng.below(2) ? grid[rng.below(9)] : static_cast<float>(rng.uniform(-1, 1));
      raw.push_back(v);
      tvs.push_back(tv_of(v));
    }
    MergeConfig cfg;
    cfg.density = quarters / 4.0;
    CAPTURE(t);
    CHECK(values(merge(zeros(n), tvs, cfg)) == unmerge::testing::ties_oracle(raw, quarters));
  }
}

TEST_CASE("merge config validation and names") {
  MergeConfig cfg;
  cfg.density = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.density = 0.8;
  cfg.drop_rate = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.drop_rate = 0.0;
  cfg.method = MergeMethod::linear;
  cfg.weights = {0, 0};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.weights = {-1, 2};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  std::vector<std::string> names;
  for (auto m : all_merge_methods()) names.emplace_back(to_string(m));
  CHECK(names == std::vector<std::string>{"linear", "dare-linear", "dare-ties", "magnitude-prune", "ties"});
  for (const auto& n : names) CHECK(to_string(*parse_merge_method(n)) == n);
  CHECK_FALSE(parse_merge_method("average").has_value());
}

TEST_CASE("merge config JSON") {
  MergeConfig cfg;
  cfg.method = MergeMethod::dare_ties;
  cfg.drop_rate = 0.3;
  cfg.weights = {1, 2};
  cfg.seed = 5;
  const nlohmann::json j = cfg;
  CHECK(j["method"] == "dare-ties");
  CHECK(j["density"] == 0.8);
  const auto back = j.get<MergeConfig>();
  CHECK(back.method == cfg.method);
  CHECK(back.drop_rate == cfg.drop_rate);
  CHECK(back.weights == cfg.weights);
  CHECK(back.seed == cfg.seed);
  CHECK_THROWS(nlohmann::json({{"method", "mean"}}).get<MergeConfig>());
}

TEST_CASE("empty or mismatched task vector lists are rejected") {
  MergeConfig cfg;
  CHECK_THROWS_AS(merge(zeros(2), std::span<const TaskVector>{}, cfg), InputError);
  const std::vector<TaskVector> tvs = {tv_of({1, 2}), tv_of({1, 2, 3})};
  CHECK_THROWS_AS(merge(zeros(2), tvs, cfg), StructuralError);
}
