// Copyright 2026 The unmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include <sstream>

#include <doctest.h>

#include "test_util.hpp"
#include "unmerge/analysis.hpp"
#include "unmerge/commands.hpp"
#include "unmerge/error.hpp"

using namespace unmerge;
using unmerge::testing::scratch_dir;

namespace {

// gen-data plus both trainings in a shared scratch directory, run once.
struct Pipeline {
  fs::path dir;
  fs::path config;
  fs::path data;
  fs::path base;
  fs::path a1;
  fs::path a2;

  CommonOptions common() const { return {config, std::nullopt}; }
};

const Pipeline& pipeline() {
  static const Pipeline p = [] {
    Pipeline p;
    p.dir = scratch_dir("cmd_pipeline");
    p.config = unmerge::testing::write_small_config(p.dir);
    p.data = p.dir / "data.jsonl";
    std::ostringstream log;
    cmd_gen_data({p.common(), p.data}, log);
    cmd_train({p.common(), p.data, p.dir / "run", 1, std::nullopt}, log);
    cmd_train({p.common(), p.data, p.dir / "run", 2, std::nullopt}, log);
    p.base = p.dir / "run" / "base.nps";
    p.a1 = p.dir / "run" / "adapters_1.nps";
    p.a2 = p.dir / "run" / "adapters_2.nps";
    return p;
  }();
  return p;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

}  // namespace

TEST_CASE("gen-data writes all four splits and reports counts") {
  const auto dir = scratch_dir("cmd_gen");
  const auto cfg = unmerge::testing::write_small_config(dir);
  std::ostringstream log;
  cmd_gen_data({{cfg, std::nullopt}, dir / "a.jsonl"}, log);
  CHECK(log.str().find("forget: 20\nretain: 20\nholdout: 20\ngeneral: 5\n") != std::string::npos);
  CHECK(read_jsonl(dir / "a.jsonl").size() == 65);

  cmd_gen_data({{cfg, std::nullopt}, dir / "b.jsonl"}, log);
  CHECK(read_text_file(dir / "a.jsonl") == read_text_file(dir / "b.jsonl"));

  cmd_gen_data({{cfg, 1234}, dir / "c.jsonl"}, log);
  CHECK(read_text_file(dir / "a.jsonl") != read_text_file(dir / "c.jsonl"));
}

TEST_CASE("gen-data rejects an invalid vocabulary size by name") {
  const auto dir = scratch_dir("cmd_gen_bad");
  write_text_file(dir / "bad.json", R"({"data": {"vocab_size": 8}, "model": {"vocab_size": 8}})");
  std::ostringstream log;
  try {
    cmd_gen_data({{dir / "bad.json", std::nullopt}, dir / "out.jsonl"}, log);
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("vocab_size") != std::string::npos);
  }
  CHECK_FALSE(fs::exists(dir / "out.jsonl"));
}

TEST_CASE("train writes adapters, trace and snapshots and leaves the base alone") {
  const auto& p = pipeline();
  const auto run = p.dir / "run";
  for (const char* f : {"base.nps", "base.json", "adapters_1.nps", "trace_1.csv", "adapters_2.nps", "trace_2.csv"})
    CHECK(fs::exists(run / f));
  CHECK(read_text_file(run / "trace_1.csv").rfind("step,epoch,loss_total,loss_npo,loss_gdr,loss_klr\n", 0) == 0);

  const auto snaps = load_snapshots(run / "snapshots_1");
  REQUIRE(snaps.size() >= 3);
  CHECK(snaps.front().step == 0);
  CHECK(snaps.back().adapters == load_checkpoint(p.a1));
  CHECK(fs::exists(run / "snapshots_1" / snapshot_file_name(0)));
  CHECK(snapshot_file_name(120) == "snap_000120.nps");

  // A rerun of model 1 into a fresh directory sharing the base reproduces it.
  const auto base_bytes = read_text_file(p.base);
  const auto rerun = p.dir / "rerun";
  std::ostringstream log;
  cmd_train({p.common(), p.data, rerun, 1, p.base}, log);
  CHECK(read_text_file(p.base) == base_bytes);
  CHECK_FALSE(fs::exists(rerun / "base.nps"));
  CHECK(read_text_file(rerun / "adapters_1.nps") == read_text_file(p.a1));
  CHECK(read_text_file(rerun / "trace_1.csv") == read_text_file(run / "trace_1.csv"));
  CHECK(load_checkpoint(p.a1) != load_checkpoint(p.a2));
}

TEST_CASE("train rejects an unknown model index") {
  const auto& p = pipeline();
  std::ostringstream log;
  CHECK_THROWS_AS(cmd_train({p.common(), p.data, p.dir / "bad", 3, p.base}, log), UsageError);
  CHECK_THROWS_AS(cmd_train({p.common(), p.data, p.dir / "bad", 0, p.base}, log), UsageError);
}

TEST_CASE("base checkpoints carry their model config") {
  const auto& p = pipeline();
  CHECK(base_sidecar_path(p.base) == p.dir / "run" / "base.json");
  const auto base = load_base(p.base);
  CHECK(base.config().hidden_dim == 32);
  CHECK(base.adapter_form() == AdapterForm::none);
  const auto with = load_model(p.base, p.a1);
  CHECK(with.adapter_form() == AdapterForm::low_rank);
}

TEST_CASE("merge of both adapters and of a single adapter") {
  const auto& p = pipeline();
  const auto out = p.dir / "merged.nps";
  std::ostringstream log;
  cmd_merge({p.common(), p.base, {p.a1, p.a2}, out, std::nullopt, std::nullopt, std::nullopt}, log);
  const auto merged = load_checkpoint(out);
  CHECK(merged.names() == std::vector<std::string>{"dW1", "dW2"});

  const auto cfg = load_base(p.base).config();
  cmd_merge({p.common(), p.base, {p.a1}, p.dir / "single.nps", "ties", 1.0, std::nullopt}, log);
  CHECK(load_checkpoint(p.dir / "single.nps") == materialize_delta(cfg, load_checkpoint(p.a1)));

  cmd_merge({p.common(), p.base, {p.a1, p.a2}, p.dir / "merged_again.nps", std::nullopt, std::nullopt, std::nullopt},
            log);
  CHECK(read_text_file(out) == read_text_file(p.dir / "merged_again.nps"));
}

TEST_CASE("merge rejects unknown methods and lists the valid ones") {
  const auto& p = pipeline();
  std::ostringstream log;
  try {
    cmd_merge({p.common(), p.base, {p.a1, p.a2}, p.dir / "x.nps", "average", std::nullopt, std::nullopt}, log);
    FAIL("expected a usage error");
  } catch (const UsageError& e) {
    const std::string msg = e.what();
    for (const char* m : {"linear", "ties", "dare-linear", "dare-ties", "magnitude-prune"})
      CHECK(msg.find(m) != std::string::npos);
  }
  CHECK_THROWS_AS(
      cmd_merge({p.common(), p.base, {p.a1, p.a2}, p.dir / "x.nps", "ties", 0.0, std::nullopt}, log), ConfigError);
}

TEST_CASE("eval writes a report and prints the table row") {
  const auto& p = pipeline();
  std::ostringstream log;
  cmd_eval({p.common(), p.base, p.a1, p.data, p.dir / "eval_1.json", "model_1"}, log);
  const auto report = nlohmann::json::parse(read_text_file(p.dir / "eval_1.json"));
  CHECK(report.contains("aggregate"));
  CHECK(report.at("mia_score").get<double>() ==
        doctest::Approx(1.0 - 2.0 * std::fabs(report.at("mia_auc").get<double>() - 0.5)));
  const auto out = lines(log.str());
  REQUIRE(out.size() >= 2);
  CHECK(out[0] == report_table_header());
  CHECK(out[1].rfind("model_1", 0) == 0);

  // Without adapters the vanilla base is evaluated.
  cmd_eval({p.common(), p.base, std::nullopt, p.data, p.dir / "eval_base.json", "vanilla"}, log);
  const auto base_report = nlohmann::json::parse(read_text_file(p.dir / "eval_base.json"));
  const auto records = read_jsonl(p.data);
  const auto base = load_base(p.base);
  const auto direct = evaluate(base, base, records, ExperimentConfig::defaults().eval);
  CHECK(base_report.dump() == report_to_json(direct).dump());
}

TEST_CASE("eval without a holdout split is a data error") {
  const auto& p = pipeline();
  auto records = read_jsonl(p.data);
  std::erase_if(records, [](const Record& r) { return r.split == Split::holdout; });
  write_jsonl(records, p.dir / "no_holdout.jsonl");
  std::ostringstream log;
  CHECK_THROWS_AS(cmd_eval({p.common(), p.base, p.a1, p.dir / "no_holdout.jsonl", p.dir / "e.json", "m"}, log),
                  DataError);
}

TEST_CASE("ablate-density writes one row per density") {
  const auto& p = pipeline();
  std::ostringstream log;
  cmd_ablate_density({p.common(), p.base, {p.a1, p.a2}, p.data, p.dir / "density.csv", {0.6, 0.8, 1.0}}, log);
  const auto csv = lines(read_text_file(p.dir / "density.csv"));
  REQUIRE(csv.size() == 4);
  CHECK(csv[0] == "density,aggregate");
  CHECK(csv[1].rfind("0.6,", 0) == 0);
  CHECK(csv[2].rfind("0.8,", 0) == 0);
  CHECK(csv[3].rfind("1,", 0) == 0);

  cmd_ablate_density({p.common(), p.base, {p.a1, p.a2}, p.data, p.dir / "density2.csv", {0.6, 0.8, 1.0}}, log);
  CHECK(read_text_file(p.dir / "density.csv") == read_text_file(p.dir / "density2.csv"));

  // An invalid density fails before anything is written.
  CHECK_THROWS_AS(
      cmd_ablate_density({p.common(), p.base, {p.a1, p.a2}, p.data, p.dir / "density0.csv", {0.8, 0.0}}, log),
      ConfigError);
  CHECK_FALSE(fs::exists(p.dir / "density0.csv"));
}

TEST_CASE("compare-merges covers every method or a chosen subset") {
  const auto& p = pipeline();
  std::ostringstream log;
  cmd_compare_merges({p.common(), p.base, {p.a1, p.a2}, p.data, p.dir / "methods.csv", {"all"}}, log);
  const auto csv = lines(read_text_file(p.dir / "methods.csv"));
  REQUIRE(csv.size() == 6);
  CHECK(csv[0] == "method,aggregate");
  std::vector<std::string> names;
  for (std::size_t i = 1; i < csv.size(); ++i) names.push_back(csv[i].substr(0, csv[i].find(',')));
  std::sort(names.begin(), names.end());
  CHECK(names == std::vector<std::string>{"dare-linear", "dare-ties", "linear", "magnitude-prune", "ties"});

  cmd_compare_merges({p.common(), p.base, {p.a1, p.a2}, p.data, p.dir / "two.csv", {"ties", "linear"}}, log);
  const auto two = lines(read_text_file(p.dir / "two.csv"));
  REQUIRE(two.size() == 3);
  CHECK(two[1].rfind("ties,", 0) == 0);
  CHECK(two[2].rfind("linear,", 0) == 0);

  CHECK_THROWS_AS(
      cmd_compare_merges({p.common(), p.base, {p.a1, p.a2}, p.data, p.dir / "bad.csv", {"ties", "mean"}}, log),
      UsageError);
}

TEST_CASE("analyze writes the trajectory and a consistent angle report") {
  const auto& p = pipeline();
  std::ostringstream log;
  const auto out = p.dir / "analysis";
  cmd_analyze({p.common(), p.dir / "run" / "snapshots_1", p.base, p.data, out, 2}, log);
  CHECK(read_text_file(out / "trajectory.csv").rfind("step,split,regurgitation,knowledge\n", 0) == 0);
  const auto angles = nlohmann::json::parse(read_text_file(out / "angles.json"));
  CHECK(angles.at("inflection_step") == 2);
  for (const char* key : {"theta_init_vs_late", "theta_init_vs_total", "theta_late_vs_total"}) {
    const double a = angles.at(key).get<double>();
    CHECK(a >= 0.0);
    CHECK(a <= 180.0);
  }
  CHECK(angles.at("law_of_cosines_residual").get<double>() < 1e-6);
}

TEST_CASE("analyze needs at least three snapshots") {
  const auto& p = pipeline();
  const auto dir = p.dir / "two_snaps";
  fs::create_directories(dir);
  const auto snaps = load_snapshots(p.dir / "run" / "snapshots_1");
  for (int i = 0; i < 2; ++i) save_checkpoint(snaps[i].adapters, dir / snapshot_file_name(snaps[i].step));
  std::ostringstream log;
  CHECK_THROWS_AS(cmd_analyze({p.common(), dir, p.base, p.data, p.dir / "a2", std::nullopt}, log), InputError);
}
