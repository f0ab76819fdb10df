// Copyright 2026 The unmerge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "unmerge/datagen.hpp"
#include "unmerge/tensor_store.hpp"
#include "unmerge/toymodel.hpp"
#include "unmerge/trainer.hpp"

namespace unmerge {

// flatten(b - a)
Tensor param_delta(const NamedParamSet& snap_a, const NamedParamSet& snap_b);

// Angle in degrees, arccos of the clamped cosine similarity. Dot products are
// accumulated in double.
double angle_between(const Tensor& u, const Tensor& v);

double l2_norm(const Tensor& v);

// Step whose 3-point moving average (2 points at the ends) of the retain
// knowledge score is smallest; the earliest on ties.
int detect_inflection(std::span<const std::pair<int, double>> series);

struct TrajectoryRow {
  int step = 0;
  Split split = Split::forget;
  double regurgitation = 0.0;
  double knowledge = 0.0;
};

// Evaluates every snapshot on the forget and retain splits.
std::vector<TrajectoryRow> trajectory_eval(std::span<const Snapshot> snapshots, const ToyLM& base,
                                           std::span<const Record> data, int max_len);

// step,split,regurgitation,knowledge
std::string trajectory_csv(std::span<const TrajectoryRow> rows);

// Retain knowledge series (step, score) extracted from trajectory rows.
std::vector<std::pair<int, double>> retain_knowledge_series(std::span<const TrajectoryRow> rows);

// Angles among the parameter change vectors start->inflection (init),
// inflection->final (late) and start->final (total).
struct AngleReport {
  double theta_init_vs_late = 0.0;
  double theta_init_vs_total = 0.0;
  double theta_late_vs_total = 0.0;
  int inflection_step = 0;
  int initial_step = 0;
  int final_step = 0;
  double norm_init = 0.0;
  double norm_late = 0.0;
  double norm_total = 0.0;
};

AngleReport angle_report(const Snapshot& initial, const Snapshot& inflection, const Snapshot& final_snapshot);

nlohmann::json angle_report_to_json(const AngleReport& report);

// Relative error of |total|^2 = |init|^2 + |late|^2 + 2 |init| |late| cos(theta_init_vs_late).
double law_of_cosines_residual(const AngleReport& report);

}  // namespace unmerge
