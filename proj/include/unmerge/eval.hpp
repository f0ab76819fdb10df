// Copyright 2026 The unmerge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "unmerge/datagen.hpp"
#include "unmerge/toymodel.hpp"

namespace unmerge {

// LCS-based F1 between candidate and reference token sequences.
double rouge_l(std::span<const Token> candidate, std::span<const Token> reference);

// Mean ROUGE-L of greedy completions against reference completions, with a
// trailing end token removed from both.
double regurgitation_score(const ToyLM& model, std::span<const Record> records, int max_len);

// Fraction of greedy completions containing qa_answer as a contiguous run.
double knowledge_score(const ToyLM& model, std::span<const Record> records, int max_len);

// Mean of the ceil(k_fraction * n) smallest token log-probabilities.
double min_k_score(std::span<const double> per_token_logprobs, double k_fraction);

// Mann-Whitney AUC: P(member > nonmember) + 0.5 P(tie).
double mia_auc(std::span<const double> member_scores, std::span<const double> nonmember_scores);

// 1 - 2 |auc - 0.5|
double mia_score(double auc);

// Harmonic mean; 0 when any component is 0.
double task_aggregate(std::span<const double> components);

double aggregate(double task_agg, double mia, double general_acc);

// True when the decode has at least 5 tokens and one token fills more than
// 80% of the positions.
bool is_collapsed(std::span<const Token> decode);
double collapse_rate(const ToyLM& model, std::span<const Record> records, int max_len);

struct EvalOptions {
  double k_fraction = 0.2;
  int max_len = 10;

  void validate() const;
};

void to_json(nlohmann::json& j, const EvalOptions& o);
void from_json(const nlohmann::json& j, EvalOptions& o);

struct TaskScores {
  Split split = Split::forget;
  int task = 1;
  int count = 0;
  double regurgitation = 0.0;
  double knowledge = 0.0;

  bool operator==(const TaskScores&) const = default;
};

struct EvalReport {
  std::vector<TaskScores> per_task;  // forget and retain, ordered by split then task
  double forget_regurgitation = 0.0;
  double forget_knowledge = 0.0;
  double retain_regurgitation = 0.0;
  double retain_knowledge = 0.0;
  double mia_auc = 0.5;
  double mia_score = 1.0;
  double general_accuracy = 0.0;
  double general_accuracy_reference = 0.0;  // same probe on the reference model
  double task_aggregate = 0.0;
  double aggregate = 0.0;
  double collapse_rate = 0.0;

  bool operator==(const EvalReport&) const = default;
};

// Components entering the task aggregate: for every task, retain regurgitation
// and knowledge as-is and forget regurgitation and knowledge inverted (1 - x).
std::vector<double> task_aggregate_components(std::span<const TaskScores> per_task);

EvalReport evaluate(const ToyLM& model, const ToyLM& ref, std::span<const Record> data, const EvalOptions& options);

nlohmann::json report_to_json(const EvalReport& report);

// Fixed-order table: Model | Aggregate | Task Aggregate | MIA Score/MIA AUC | General Avg.
std::string report_table_header();
std::string report_table_row(const std::string& name, const EvalReport& report);

}  // namespace unmerge
