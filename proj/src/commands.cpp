// Copyright 2026 The unmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "unmerge/commands.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>

#include "unmerge/analysis.hpp"
#include "unmerge/error.hpp"

namespace unmerge {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::string valid_methods() {
  std::string out;
  for (auto m : all_merge_methods()) {
    if (!out.empty()) out += ", ";
    out += to_string(m);
  }
  return out;
}

MergeMethod method_or_usage_error(const std::string& name) {
  const auto m = parse_merge_method(name);
  if (!m) throw UsageError("unknown merge method '" + name + "'; valid methods: " + valid_methods());
  return *m;
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

std::vector<Record> non_holdout(std::span<const Record> data) {
  std::vector<Record> out;
  for (const auto& r : data) {
    if (r.split != Split::holdout) out.push_back(r);
  }
  return out;
}

std::vector<TaskVector> load_task_vectors(const ModelConfig& cfg, const std::vector<fs::path>& paths) {
  if (paths.empty()) throw UsageError("at least one adapter checkpoint is required");
  std::vector<TaskVector> tvs;
  for (const auto& p : paths) tvs.push_back({materialize_delta(cfg, load_checkpoint(p))});
  return tvs;
}

NamedParamSet zeros_like(const NamedParamSet& params) {
  NamedParamSet out;
  for (const auto& [name, t] : params) out.insert(name, Tensor::zeros(t.shape()));
  return out;
}

// Merge the deltas onto a zero base and evaluate base + merged delta.
EvalReport merged_report(const ToyLM& base, std::span<const TaskVector> tvs, const MergeConfig& mc,
                         std::span<const Record> data, const EvalOptions& eval) {
  const auto merged = merge(zeros_like(tvs[0].deltas), tvs, mc);
  return evaluate(base.with_adapters(merged), base, data, eval);
}

}  // namespace

ExperimentConfig CommonOptions::load() const {
  auto cfg = load_experiment_config(config);
  if (seed) cfg.override_seed(*seed);
  cfg.validate();
  return cfg;
}

fs::path base_sidecar_path(const fs::path& base) {
  auto p = base;
  p.replace_extension(".json");
  return p;
}

void save_base(const ToyLM& model, const fs::path& base) {
  ensure_parent(base);
  save_checkpoint(model.base(), base);
  write_text_file(base_sidecar_path(base), nlohmann::json(model.config()).dump(2) + "\n");
}

ToyLM load_base(const fs::path& base) {
  const auto sidecar = base_sidecar_path(base);
  ModelConfig cfg;
  try {
    cfg = nlohmann::json::parse(read_text_file(sidecar)).get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(sidecar.string() + ": " + e.what());
  }
  cfg.validate();
  return ToyLM(cfg, load_checkpoint(base));
}

ToyLM load_model(const fs::path& base, const std::optional<fs::path>& adapters) {
  ToyLM model = load_base(base);
  if (adapters) return model.with_adapters(load_checkpoint(*adapters));
  return model;
}

void cmd_gen_data(const GenDataOptions& opts, std::ostream& log) {
  const auto cfg = opts.common.load();
  const auto records = generate(cfg.data);
  ensure_parent(opts.out);
  write_jsonl(records, opts.out);
  for (auto split : kAllSplits) {
    log << to_string(split) << ": " << select_split(records, split).size() << "\n";
  }
  log << "wrote " << opts.out.string() << "\n";
}

void cmd_train(const TrainOptions& opts, std::ostream& log) {
  if (opts.which != 1 && opts.which != 2) throw UsageError("--which must be 1 or 2");
  const auto cfg = opts.common.load();
  const auto data = read_jsonl(opts.data);
  fs::create_directories(opts.out_dir);

  const fs::path base_path = opts.base.value_or(opts.out_dir / "base.nps");
  ToyLM base = [&] {
    if (fs::exists(base_path)) return load_base(base_path);
    const auto seen = non_holdout(data);
    ToyLM vanilla = train_vanilla(init_model(cfg.model), seen, cfg.vanilla);
    save_base(vanilla, base_path);
    log << "wrote " << base_path.string() << "\n";
    return vanilla;
  }();

  const auto& tc = opts.which == 1 ? cfg.train_1 : cfg.train_2;
  const auto result = train(base, data, tc);
  const std::string n = std::to_string(opts.which);

  save_checkpoint(result.model.adapters(), opts.out_dir / ("adapters_" + n + ".nps"));
  write_text_file(opts.out_dir / ("trace_" + n + ".csv"), result.trace.to_csv());
  const fs::path snap_dir = opts.out_dir / ("snapshots_" + n);
  fs::create_directories(snap_dir);
  for (const auto& s : result.trace.snapshots) save_checkpoint(s.adapters, snap_dir / snapshot_file_name(s.step));

  const auto& last = result.trace.rows.back();
  log << "model " << n << ": " << last.step << " steps, final loss " << fmt(last.loss_total) << "\n";
  log << "wrote " << (opts.out_dir / ("adapters_" + n + ".nps")).string() << "\n";
}

void cmd_merge(const MergeOptions& opts, std::ostream& log) {
  auto cfg = opts.common.load();
  if (opts.method) cfg.merge.method = method_or_usage_error(*opts.method);
  if (opts.density) cfg.merge.density = *opts.density;
  if (opts.drop_rate) cfg.merge.drop_rate = *opts.drop_rate;
  cfg.merge.validate();

  const ToyLM base = load_base(opts.base);
  const auto tvs = load_task_vectors(base.config(), opts.adapters);
  const auto merged = merge(zeros_like(tvs[0].deltas), tvs, cfg.merge);
  ensure_parent(opts.out);
  save_checkpoint(merged, opts.out);
  log << "merged " << tvs.size() << " adapters with " << to_string(cfg.merge.method) << " (density "
      << fmt(cfg.merge.density) << ")\n";
  log << "wrote " << opts.out.string() << "\n";
}

void cmd_eval(const EvalCmdOptions& opts, std::ostream& log) {
  const auto cfg = opts.common.load();
  const ToyLM model = load_model(opts.base, opts.adapters);
  const auto data = read_jsonl(opts.data);
  const auto report = evaluate(model, model.without_adapters(), data, cfg.eval);
  ensure_parent(opts.out);
  write_text_file(opts.out, report_to_json(report).dump(2) + "\n");
  log << report_table_header() << "\n" << report_table_row(opts.name, report) << "\n";
}

void cmd_ablate_density(const AblateDensityOptions& opts, std::ostream& log) {
  auto cfg = opts.common.load();
  if (opts.densities.empty()) throw UsageError("--densities needs at least one value");
  for (double d : opts.densities) {
    MergeConfig probe = cfg.merge;
    probe.density = d;
    probe.validate();
  }
  const ToyLM base = load_base(opts.base);
  const auto tvs = load_task_vectors(base.config(), opts.adapters);
  const auto data = read_jsonl(opts.data);

  std::string csv = "density,aggregate\n";
  for (double d : opts.densities) {
    MergeConfig mc = cfg.merge;
    mc.density = d;
    const auto report = merged_report(base, tvs, mc, data, cfg.eval);
    csv += fmt(d) + "," + fmt(report.aggregate) + "\n";
    log << "density " << fmt(d) << ": aggregate " << fmt(report.aggregate) << "\n";
  }
  ensure_parent(opts.out);
  write_text_file(opts.out, csv);
}

void cmd_compare_merges(const CompareMergesOptions& opts, std::ostream& log) {
  auto cfg = opts.common.load();
  std::vector<MergeMethod> methods;
  for (const auto& name : opts.methods) {
    if (name == "all") {
      methods.insert(methods.end(), all_merge_methods().begin(), all_merge_methods().end());
    } else {
      methods.push_back(method_or_usage_error(name));
    }
  }
  if (methods.empty()) throw UsageError("--methods needs at least one value");

  const ToyLM base = load_base(opts.base);
  const auto tvs = load_task_vectors(base.config(), opts.adapters);
  const auto data = read_jsonl(opts.data);

  std::string csv = "method,aggregate\n";
  for (auto m : methods) {
    MergeConfig mc = cfg.merge;
    mc.method = m;
    // Without an explicit drop rate, DARE keeps the same fraction TIES does.
    const bool dare = m == MergeMethod::dare_linear || m == MergeMethod::dare_ties;
    if (dare && mc.drop_rate == 0.0) mc.drop_rate = 1.0 - mc.density;
    const auto report = merged_report(base, tvs, mc, data, cfg.eval);
    csv += std::string(to_string(m)) + "," + fmt(report.aggregate) + "\n";
    log << report_table_row(std::string(to_string(m)), report) << "\n";
  }
  ensure_parent(opts.out);
  write_text_file(opts.out, csv);
}

std::string snapshot_file_name(int step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "snap_%06d.nps", step);
  return buf;
}

std::vector<Snapshot> load_snapshots(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<Snapshot> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (!name.starts_with("snap_") || entry.path().extension() != ".nps") continue;
    const auto digits = name.substr(5, name.size() - 5 - 4);
    int step = 0;
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), step);
    if (ec != std::errc() || ptr != digits.data() + digits.size()) {
      throw InputError("cannot read a step number from " + name);
    }
    out.push_back({step, load_checkpoint(entry.path())});
  }
  std::sort(out.begin(), out.end(), [](const Snapshot& a, const Snapshot& b) { return a.step < b.step; });
  return out;
}

void cmd_analyze(const AnalyzeOptions& opts, std::ostream& log) {
  const auto cfg = opts.common.load();
  const auto snapshots = load_snapshots(opts.snapshots_dir);
  if (snapshots.size() < 3) {
    throw InputError("analyze needs at least 3 snapshots, found " + std::to_string(snapshots.size()));
  }
  const ToyLM base = load_base(opts.base);
  const auto data = read_jsonl(opts.data);

  const auto rows = trajectory_eval(snapshots, base, data, cfg.eval.max_len);
  fs::create_directories(opts.out_dir);
  write_text_file(opts.out_dir / "trajectory.csv", trajectory_csv(rows));
  log << "wrote " << (opts.out_dir / "trajectory.csv").string() << "\n";

  const auto series = retain_knowledge_series(rows);
  const int step = opts.inflection_step.value_or(detect_inflection(series));
  const auto it = std::find_if(snapshots.begin(), snapshots.end(), [&](const Snapshot& s) { return s.step == step; });
  if (it == snapshots.end()) throw InputError("no snapshot at inflection step " + std::to_string(step));
  if (it == snapshots.begin() || it + 1 == snapshots.end()) {
    throw InputError("inflection step " + std::to_string(step) +
                     " is the first or last snapshot; pass --inflection-step to choose an interior one");
  }

  const auto report = angle_report(snapshots.front(), *it, snapshots.back());
  auto j = angle_report_to_json(report);
  j["law_of_cosines_residual"] = law_of_cosines_residual(report);
  write_text_file(opts.out_dir / "angles.json", j.dump(2) + "\n");
  log << "inflection at step " << report.inflection_step << "\n"
      << "theta(init, late) = " << fmt(report.theta_init_vs_late) << " deg\n"
      << "theta(init, total) = " << fmt(report.theta_init_vs_total) << " deg\n"
      << "theta(late, total) = " << fmt(report.theta_late_vs_total) << " deg\n"
      << "wrote " << (opts.out_dir / "angles.json").string() << "\n";
}

}  // namespace unmerge
