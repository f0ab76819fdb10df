// Copyright 2026 The unmerge Authors
// SPDX-License-Identifier: Apache-2.0

// unmerge: command-line driver for the unlearn-then-merge pipeline.

#include <iostream>

#include <CLI11.hpp>

#include "unmerge/commands.hpp"
#include "unmerge/error.hpp"

namespace {

using namespace unmerge;

void add_common(CLI::App* cmd, CommonOptions& common) {
  cmd->add_option("--config", common.config, "experiment config (JSON); defaults when omitted")->check(CLI::ExistingFile);
  cmd->add_option("--seed", common.seed, "replace every seed in the config");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unlearning by merging complementary low-rank adapters on a toy language model"};
  app.require_subcommand(1);

  GenDataOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate the synthetic forget/retain/holdout/general corpus");
  add_common(gen_cmd, gen.common);
  gen_cmd->add_option("--out", gen.out, "output JSONL path")->required();

  TrainOptions tr;
  auto* train_cmd = app.add_subcommand("train", "train one unlearned model (base is built on first use)");
  add_common(train_cmd, tr.common);
  train_cmd->add_option("--data", tr.data, "dataset JSONL")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", tr.out_dir, "output directory")->required();
  train_cmd->add_option("--which", tr.which, "1 or 2: which training config to use")->required();
  train_cmd->add_option("--base", tr.base, "base checkpoint (default <out>/base.nps)");

  MergeOptions mg;
  auto* merge_cmd = app.add_subcommand("merge", "merge adapter checkpoints");
  add_common(merge_cmd, mg.common);
  merge_cmd->add_option("--base", mg.base, "base checkpoint")->required()->check(CLI::ExistingFile);
  merge_cmd->add_option("--adapters", mg.adapters, "adapter checkpoints")->required()->check(CLI::ExistingFile);
  merge_cmd->add_option("--out", mg.out, "merged adapter checkpoint")->required();
  merge_cmd->add_option("--method", mg.method, "linear, ties, dare-linear, dare-ties or magnitude-prune");
  merge_cmd->add_option("--density", mg.density, "keep fraction for trimming");
  merge_cmd->add_option("--drop-rate", mg.drop_rate, "DARE drop probability");

  EvalCmdOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a model and write a JSON report");
  add_common(eval_cmd, ev.common);
  eval_cmd->add_option("--base", ev.base, "base checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--adapters", ev.adapters, "adapter checkpoint; omit to evaluate the base")
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", ev.data, "dataset JSONL")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--out", ev.out, "report JSON path")->required();
  eval_cmd->add_option("--name", ev.name, "row label for the printed table");

  AblateDensityOptions ab;
  auto* ablate_cmd = app.add_subcommand("ablate-density", "TIES merge and evaluate at several densities");
  add_common(ablate_cmd, ab.common);
  ablate_cmd->add_option("--base", ab.base, "base checkpoint")->required()->check(CLI::ExistingFile);
  ablate_cmd->add_option("--adapters", ab.adapters, "adapter checkpoints")->required()->check(CLI::ExistingFile);
  ablate_cmd->add_option("--data", ab.data, "dataset JSONL")->required()->check(CLI::ExistingFile);
  ablate_cmd->add_option("--out", ab.out, "output CSV")->required();
  ablate_cmd->add_option("--densities", ab.densities, "comma-separated densities")->delimiter(',');

  CompareMergesOptions cm;
  auto* compare_cmd = app.add_subcommand("compare-merges", "merge and evaluate with several methods");
  add_common(compare_cmd, cm.common);
  compare_cmd->add_option("--base", cm.base, "base checkpoint")->required()->check(CLI::ExistingFile);
  compare_cmd->add_option("--adapters", cm.adapters, "adapter checkpoints")->required()->check(CLI::ExistingFile);
  compare_cmd->add_option("--data", cm.data, "dataset JSONL")->required()->check(CLI::ExistingFile);
  compare_cmd->add_option("--out", cm.out, "output CSV")->required();
  compare_cmd->add_option("--methods", cm.methods, "'all' or a comma-separated list")->delimiter(',');

  AnalyzeOptions an;
  auto* analyze_cmd = app.add_subcommand("analyze", "trajectory and angle analysis of training snapshots");
  add_common(analyze_cmd, an.common);
  analyze_cmd->add_option("--snapshots-dir", an.snapshots_dir, "directory of snap_<step>.nps files")
      ->required()
      ->check(CLI::ExistingDirectory);
  analyze_cmd->add_option("--base", an.base, "base checkpoint")->required()->check(CLI::ExistingFile);
  analyze_cmd->add_option("--data", an.data, "dataset JSONL")->required()->check(CLI::ExistingFile);
  analyze_cmd->add_option("--out", an.out_dir, "output directory")->required();
  analyze_cmd->add_option("--inflection-step", an.inflection_step, "use this step instead of the detected one");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen_cmd) cmd_gen_data(gen, std::cout);
    if (*train_cmd) cmd_train(tr, std::cout);
    if (*merge_cmd) cmd_merge(mg, std::cout);
    if (*eval_cmd) cmd_eval(ev, std::cout);
    if (*ablate_cmd) cmd_ablate_density(ab, std::cout);
    if (*compare_cmd) cmd_compare_merges(cm, std::cout);
    if (*analyze_cmd) cmd_analyze(an, std::cout);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
