// Copyright 2026 The unmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "test_util.hpp"
#include "unmerge/error.hpp"
#include "unmerge/experiment.hpp"

using namespace unmerge;
using unmerge::testing::scratch_dir;

namespace {

std::string config_error(const ExperimentConfig& cfg) {
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("defaults follow the published training configurations") {
  const auto cfg = ExperimentConfig::defaults();
  CHECK_NOTHROW(cfg.validate());

  CHECK(cfg.train_1.alpha == 0.4);
  CHECK(cfg.train_1.beta_gdr == 0.4);
  CHECK(cfg.train_1.gamma == 0.2);
  CHECK(cfg.train_1.batch_size == 1);
  CHECK(cfg.train_2.alpha == 0.3);
  CHECK(cfg.train_2.beta_gdr == 0.3);
  CHECK(cfg.train_2.gamma == 0.4);
  CHECK(cfg.train_2.batch_size == 2);
  for (const auto* t : {&cfg.train_1, &cfg.train_2}) {
    CHECK(t->grad_accum == 4);
    CHECK(t->epochs == 5);
  }
  CHECK(cfg.model.lora_rank == 32);
  CHECK(cfg.model.lora_alpha == 32.0);

  CHECK(cfg.merge.method == MergeMethod::ties);
  CHECK(cfg.merge.density == 0.8);
  CHECK(cfg.eval.k_fraction == 0.2);
  CHECK(cfg.data.forget_count == 200);
  CHECK(cfg.data.general_count == 50);
}

TEST_CASE("JSON round trip and partial configs") {
  auto cfg = ExperimentConfig::defaults();
  cfg.train_2.lr = 0.25;
  cfg.merge.density = 0.6;
  cfg.out_dir = "elsewhere";
  const nlohmann::json j = cfg;
  const auto back = j.get<ExperimentConfig>();
  CHECK(nlohmann::json(back) == j);

  // Missing keys keep their defaults, also inside a section.
  const auto partial = nlohmann::json::parse(R"({"train_1": {"lr": 0.3}, "merge": {"density": 1.0}})")
                           .get<ExperimentConfig>();
  CHECK(partial.train_1.lr == 0.3);
  CHECK(partial.train_1.alpha == 0.4);
  CHECK(partial.merge.density == 1.0);
  CHECK(partial.merge.method == MergeMethod::ties);
  CHECK(nlohmann::json(partial.train_2) == nlohmann::json(ExperimentConfig::defaults().train_2));
}

TEST_CASE("validation names the offending section") {
  auto cfg = ExperimentConfig::defaults();
  cfg.train_2.alpha = cfg.train_2.beta_gdr = cfg.train_2.gamma = 0;
  CHECK(config_error(cfg).rfind("train_2.", 0) == 0);

  cfg = ExperimentConfig::defaults();
  cfg.merge.density = 0.0;
  CHECK(config_error(cfg).rfind("merge.", 0) == 0);

  cfg = ExperimentConfig::defaults();
  cfg.model.lora_rank = 1000;
  CHECK(config_error(cfg).rfind("model.", 0) == 0);

  cfg = ExperimentConfig::defaults();
  cfg.eval.max_len = 0;
  CHECK(config_error(cfg).rfind("eval.", 0) == 0);

  cfg = ExperimentConfig::defaults();
  cfg.data.vocab_size = 80;
  CHECK(config_error(cfg).find("vocab_size") != std::string::npos);
}

TEST_CASE("seed override reaches every seeded component") {
  auto cfg = ExperimentConfig::defaults();
  cfg.override_seed(99);
  CHECK(cfg.model.seed == 99);
  CHECK(cfg.data.seed == 99);
  CHECK(cfg.vanilla.seed == 99);
  CHECK(cfg.train_1.seed == 99);
  CHECK(cfg.train_2.seed == 99);
  CHECK(cfg.merge.seed == 99);
}

TEST_CASE("loading from a file") {
  const auto dir = scratch_dir("exp_load");
  CHECK(nlohmann::json(load_experiment_config(std::nullopt)) == nlohmann::json(ExperimentConfig::defaults()));

  write_text_file(dir / "c.json", R"({"data": {"seed": 5}, "out_dir": "x"})");
  const auto cfg = load_experiment_config(dir / "c.json");
  CHECK(cfg.data.seed == 5);
  CHECK(cfg.out_dir == "x");

  write_text_file(dir / "bad.json", "{oops");
  try {
    (void)load_experiment_config(dir / "bad.json");
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("bad.json") != std::string::npos);
  }

  write_text_file(dir / "wrongtype.json", R"({"train_1": {"lr": "fast"}})");
  try {
    (void)load_experiment_config(dir / "wrongtype.json");
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).rfind("train_1", 0) == 0);
  }

  write_text_file(dir / "array.json", "[1]");
  CHECK_THROWS_AS((void)load_experiment_config(dir / "array.json"), ConfigError);
  CHECK_THROWS_AS((void)load_experiment_config(dir / "absent.json"), IoError);
}
