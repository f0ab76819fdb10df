// Copyright 2026 The unmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "unmerge/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "unmerge/error.hpp"
#include "unmerge/eval.hpp"

namespace unmerge {

namespace {

double dot(const Tensor& u, const Tensor& v) {
  double s = 0.0;
  for (std::size_t i = 0; i < u.numel(); ++i) s += static_cast<double>(u[i]) * static_cast<double>(v[i]);
  return s;
}

double dot(std::span<const double> u, std::span<const double> v) {
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
  return s;
}

// Difference of f32 parameters taken in double, so start->final equals
// start->mid plus mid->final up to double rounding.
std::vector<double> delta_double(const NamedParamSet& a, const NamedParamSet& b) {
  require_same_structure(a, b, "angle_report");
  std::vector<double> out;
  out.reserve(a.total_numel());
  for (const auto& [name, ta] : a) {
    const auto& tb = b.at(name);
    for (std::size_t i = 0; i < ta.numel(); ++i) out.push_back(static_cast<double>(tb[i]) - static_cast<double>(ta[i]));
  }
  return out;
}

double angle_degrees(std::span<const double> u, std::span<const double> v) {
  const double uu = dot(u, u);
  const double vv = dot(v, v);
  if (uu == 0.0 || vv == 0.0) throw InputError("angle_between: zero vector has no direction");
  // sqrt(uu * vv) rather than sqrt(uu) * sqrt(vv): for v = +-u it equals |dot|
  // exactly, so parallel vectors give exactly 0 or 180 degrees.
  const double c = std::clamp(dot(u, v) / std::sqrt(uu * vv), -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

Tensor param_delta(const NamedParamSet& snap_a, const NamedParamSet& snap_b) {
  require_same_structure(snap_a, snap_b, "param_delta");
  std::vector<float> out;
  out.reserve(snap_a.total_numel());
  for (const auto& [name, a] : snap_a) {
    const auto& b = snap_b.at(name);
    for (std::size_t i = 0; i < a.numel(); ++i) out.push_back(b[i] - a[i]);
  }
  return Tensor::vector(std::move(out));
}

double l2_norm(const Tensor& v) { return std::sqrt(dot(v, v)); }

double angle_between(const Tensor& u, const Tensor& v) {
  if (u.numel() != v.numel()) throw InputError("angle_between: length mismatch");
  const std::vector<double> du(u.data().begin(), u.data().end());
  const std::vector<double> dv(v.data().begin(), v.data().end());
  return angle_degrees(du, dv);
}

int detect_inflection(std::span<const std::pair<int, double>> series) {
  if (series.size() < 3) throw InputError("detect_inflection: need at least 3 evaluated snapshots");
  const std::size_t n = series.size();
  std::size_t best = 0;
  double best_value = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i == 0 ? 0 : i - 1;
    const std::size_t hi = std::min(n - 1, i + 1);
    double sum = 0.0;
    for (std::size_t k = lo; k <= hi; ++k) sum += series[k].second;
    const double smoothed = sum / static_cast<double>(hi - lo + 1);
    if (i == 0 || smoothed < best_value) {
      best = i;
      best_value = smoothed;
    }
  }
  return series[best].first;
}

std::vector<TrajectoryRow> trajectory_eval(std::span<const Snapshot> snapshots, const ToyLM& base,
                                           std::span<const Record> data, int max_len) {
  if (snapshots.empty()) throw InputError("trajectory_eval: no snapshots");
  const auto forget = select_split(data, Split::forget);
  const auto retain = select_split(data, Split::retain);
  if (forget.empty() || retain.empty()) throw DataError("trajectory_eval: data needs forget and retain records");

  std::vector<const Snapshot*> ordered;
  for (const auto& s : snapshots) ordered.push_back(&s);
  std::stable_sort(ordered.begin(), ordered.end(), [](const Snapshot* a, const Snapshot* b) { return a->step < b->step; });

  std::vector<TrajectoryRow> rows;
  for (const auto* snap : ordered) {
    const ToyLM model = base.with_adapters(snap->adapters);
    for (auto split : {Split::forget, Split::retain}) {
      const auto& records = split == Split::forget ? forget : retain;
      rows.push_back({snap->step, split, regurgitation_score(model, records, max_len),
                      knowledge_score(model, records, max_len)});
    }
  }
  return rows;
}

std::string trajectory_csv(std::span<const TrajectoryRow> rows) {
  std::string out = "step,split,regurgitation,knowledge\n";
  for (const auto& r : rows) {
    out += std::to_string(r.step) + "," + std::string(to_string(r.split)) + "," + fmt_double(r.regurgitation) + "," +
           fmt_double(r.knowledge) + "\n";
  }
  return out;
}

std::vector<std::pair<int, double>> retain_knowledge_series(std::span<const TrajectoryRow> rows) {
  std::vector<std::pair<int, double>> out;
  for (const auto& r : rows) {
    if (r.split == Split::retain) out.emplace_back(r.step, r.knowledge);
  }
  return out;
}

AngleReport angle_report(const Snapshot& initial, const Snapshot& inflection, const Snapshot& final_snapshot) {
  if (!(initial.step < inflection.step && inflection.step < final_snapshot.step)) {
    throw InputError("angle_report: inflection step must lie strictly between the first and last snapshot");
  }
  const auto init = delta_double(initial.adapters, inflection.adapters);
  const auto late = delta_double(inflection.adapters, final_snapshot.adapters);
  const auto total = delta_double(initial.adapters, final_snapshot.adapters);

  AngleReport r;
  r.theta_init_vs_late = angle_degrees(init, late);
  r.theta_init_vs_total = angle_degrees(init, total);
  r.theta_late_vs_total = angle_degrees(late, total);
  r.inflection_step = inflection.step;
  r.initial_step = initial.step;
  r.final_step = final_snapshot.step;
  r.norm_init = std::sqrt(dot(init, init));
  r.norm_late = std::sqrt(dot(late, late));
  r.norm_total = std::sqrt(dot(total, total));
  return r;
}

nlohmann::json angle_report_to_json(const AngleReport& r) {
  return {{"theta_init_vs_late", r.theta_init_vs_late},
          {"theta_init_vs_total", r.theta_init_vs_total},
          {"theta_late_vs_total", r.theta_late_vs_total},
          {"inflection_step", r.inflection_step},
          {"initial_step", r.initial_step},
          {"final_step", r.final_step},
          {"norm_init", r.norm_init},
          {"norm_late", r.norm_late},
          {"norm_total", r.norm_total}};
}

double law_of_cosines_residual(const AngleReport& r) {
  const double c = std::cos(r.theta_init_vs_late * std::numbers::pi / 180.0);
  const double predicted = r.norm_init * r.norm_init + r.norm_late * r.norm_late + 2.0 * r.norm_init * r.norm_late * c;
  const double actual = r.norm_total * r.norm_total;
  return std::fabs(predicted - actual) / std::max(actual, predicted);
}

}  // namespace unmerge
