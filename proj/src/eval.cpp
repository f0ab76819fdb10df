// Copyright 2026 The unmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "unmerge/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "unmerge/error.hpp"

namespace unmerge {

namespace {

void require_records(std::span<const Record> records, const char* what) {
  if (records.empty()) throw InputError(std::string(what) + ": no records");
}

bool contains_run(std::span<const Token> haystack, std::span<const Token> needle) {
  if (needle.empty()) return true;
  return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) != haystack.end();
}

// The end marker is not content, so it is dropped before ROUGE scoring.
std::span<const Token> without_end(std::span<const Token> tokens, Token end) {
  if (!tokens.empty() && tokens.back() == end) tokens = tokens.first(tokens.size() - 1);
  return tokens;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

double rouge_l(std::span<const Token> candidate, std::span<const Token> reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  const std::size_t m = candidate.size();
  const std::size_t n = reference.size();
  std::vector<std::size_t> prev(n + 1, 0), cur(n + 1, 0);
  for (std::size_t i = 1; i <= m; ++i) {
    for (std::size_t j = 1; j <= n; ++j) {
      cur[j] = candidate[i - 1] == reference[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  const auto lcs = static_cast<double>(prev[n]);
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(m);
  const double r = lcs / static_cast<double>(n);
  return 2.0 * p * r / (p + r);
}

double regurgitation_score(const ToyLM& model, std::span<const Record> records, int max_len) {
  require_records(records, "regurgitation_score");
  double sum = 0.0;
  const Token end = model.config().end_token();
  for (const auto& r : records) {
    const auto decode = greedy_decode(model, r.prompt, max_len);
    sum += rouge_l(without_end(decode, end), without_end(r.completion, end));
  }
  return sum / static_cast<double>(records.size());
}

double knowledge_score(const ToyLM& model, std::span<const Record> records, int max_len) {
  require_records(records, "knowledge_score");
  std::size_t hits = 0;
  for (const auto& r : records) {
    if (contains_run(greedy_decode(model, r.prompt, max_len), r.qa_answer)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

double min_k_score(std::span<const double> per_token_logprobs, double k_fraction) {
  if (per_token_logprobs.empty()) throw InputError("min_k_score: empty log-probability list");
  if (!(k_fraction > 0.0 && k_fraction <= 1.0)) throw InputError("min_k_score: k_fraction must be in (0, 1]");
  std::vector<double> sorted(per_token_logprobs.begin(), per_token_logprobs.end());
  std::sort(sorted.begin(), sorted.end());
  const auto n = sorted.size();
  // The small epsilon keeps products like 0.6 * 5 from rounding up a whole token.
  auto k = static_cast<std::size_t>(std::ceil(k_fraction * static_cast<double>(n) - 1e-9));
  k = std::clamp<std::size_t>(k, 1, n);
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) sum += sorted[i];
  return sum / static_cast<double>(k);
}

double mia_auc(std::span<const double> member_scores, std::span<const double> nonmember_scores) {
  if (member_scores.empty() || nonmember_scores.empty()) throw InputError("mia_auc: empty score list");
  // Rank-sum form of the Mann-Whitney statistic with midranks for ties.
  struct Item {
    double score;
    bool member;
  };
  std::vector<Item> items;
  items.reserve(member_scores.size() + nonmember_scores.size());
  for (double s : member_scores) items.push_back({s, true});
  for (double s : nonmember_scores) items.push_back({s, false});
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score < b.score; });

  double member_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < items.size()) {
    std::size_t j = i;
    while (j < items.size() && items[j].score == items[i].score) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (items[k].member) member_rank_sum += midrank;
    }
    i = j;
  }
  const auto nm = static_cast<double>(member_scores.size());
  const auto nn = static_cast<double>(nonmember_scores.size());
  const double u = member_rank_sum - nm * (nm + 1.0) / 2.0;
  return u / (nm * nn);
}

double mia_score(double auc) {
  if (!(auc >= 0.0 && auc <= 1.0)) throw InputError("mia_score: auc must be in [0, 1]");
  return 1.0 - 2.0 * std::fabs(auc - 0.5);
}

double task_aggregate(std::span<const double> components) {
  if (components.empty()) return 0.0;
  double inv = 0.0;
  for (double c : components) {
    if (c <= 0.0) return 0.0;
    inv += 1.0 / c;
  }
  return static_cast<double>(components.size()) / inv;
}

double aggregate(double task_agg, double mia, double general_acc) { return (task_agg + mia + general_acc) / 3.0; }

bool is_collapsed(std::span<const Token> decode) {
  if (decode.size() < 5) return false;
  std::map<Token, std::size_t> counts;
  std::size_t best = 0;
  for (Token t : decode) best = std::max(best, ++counts[t]);
  return static_cast<double>(best) > 0.8 * static_cast<double>(decode.size());
}

double collapse_rate(const ToyLM& model, std::span<const Record> records, int max_len) {
  require_records(records, "collapse_rate");
  std::size_t collapsed = 0;
  for (const auto& r : records) {
    if (is_collapsed(greedy_decode(model, r.prompt, max_len))) ++collapsed;
  }
  return static_cast<double>(collapsed) / static_cast<double>(records.size());
}

void EvalOptions::validate() const {
  if (!(k_fraction > 0.0 && k_fraction <= 1.0)) throw ConfigError("k_fraction must be in (0, 1]");
  if (max_len < 1) throw ConfigError("max_len must be positive");
}

void to_json(nlohmann::json& j, const EvalOptions& o) { j = {{"k_fraction", o.k_fraction}, {"max_len", o.max_len}}; }

void from_json(const nlohmann::json& j, EvalOptions& o) {
  o = EvalOptions{};
  if (j.contains("k_fraction")) o.k_fraction = j.at("k_fraction").get<double>();
  if (j.contains("max_len")) o.max_len = j.at("max_len").get<int>();
}

std::vector<double> task_aggregate_components(std::span<const TaskScores> per_task) {
  std::vector<double> out;
  for (const auto& t : per_task) {
    if (t.split == Split::forget) {
      out.push_back(1.0 - t.regurgitation);
      out.push_back(1.0 - t.knowledge);
    } else {
      out.push_back(t.regurgitation);
      out.push_back(t.knowledge);
    }
  }
  return out;
}

EvalReport evaluate(const ToyLM& model, const ToyLM& ref, std::span<const Record> data, const EvalOptions& options) {
  options.validate();
  std::map<Split, std::vector<Record>> by_split;
  for (auto s : kAllSplits) {
    by_split[s] = select_split(data, s);
    if (by_split[s].empty()) throw DataError("evaluate: data has no " + std::string(to_string(s)) + " records");
  }

  EvalReport report;
  const Token end = model.config().end_token();
  for (auto split : {Split::forget, Split::retain}) {
    const auto& records = by_split[split];
    std::vector<double> regs, knows;
    for (int task = 1; task <= 3; ++task) {
      std::vector<double> task_reg, task_know;
      for (const auto& r : records) {
        if (r.task != task) continue;
        const auto decode = greedy_decode(model, r.prompt, options.max_len);
        task_reg.push_back(rouge_l(without_end(decode, end), without_end(r.completion, end)));
        task_know.push_back(contains_run(decode, r.qa_answer) ? 1.0 : 0.0);
      }
      if (task_reg.empty()) continue;
      report.per_task.push_back(
          {split, task, static_cast<int>(task_reg.size()), mean_of(task_reg), mean_of(task_know)});
      regs.insert(regs.end(), task_reg.begin(), task_reg.end());
      knows.insert(knows.end(), task_know.begin(), task_know.end());
    }
    if (split == Split::forget) {
      report.forget_regurgitation = mean_of(regs);
      report.forget_knowledge = mean_of(knows);
    } else {
      report.retain_regurgitation = mean_of(regs);
      report.retain_knowledge = mean_of(knows);
    }
  }

  auto membership = [&](const std::vector<Record>& records) {
    std::vector<double> scores;
    scores.reserve(records.size());
    for (const auto& r : records) {
      scores.push_back(min_k_score(sequence_log_prob(model, r.prompt, r.completion).per_token, options.k_fraction));
    }
    return scores;
  };
  report.mia_auc = mia_auc(membership(by_split[Split::forget]), membership(by_split[Split::holdout]));
  report.mia_score = mia_score(report.mia_auc);

  report.general_accuracy = knowledge_score(model, by_split[Split::general], options.max_len);
  report.general_accuracy_reference = knowledge_score(ref, by_split[Split::general], options.max_len);
  report.collapse_rate = collapse_rate(model, by_split[Split::forget], options.max_len);

  const auto components = task_aggregate_components(report.per_task);
  report.task_aggregate = task_aggregate(components);
  report.aggregate = aggregate(report.task_aggregate, report.mia_score, report.general_accuracy);
  return report;
}

nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json per_task = nlohmann::json::array();
  for (const auto& t : r.per_task) {
    per_task.push_back({{"split", std::string(to_string(t.split))},
                        {"task", t.task},
                        {"count", t.count},
                        {"regurgitation_score", t.regurgitation},
                        {"knowledge_score", t.knowledge}});
  }
  return {{"per_task", per_task},
          {"forget", {{"regurgitation_score", r.forget_regurgitation}, {"knowledge_score", r.forget_knowledge}}},
          {"retain", {{"regurgitation_score", r.retain_regurgitation}, {"knowledge_score", r.retain_knowledge}}},
          {"mia_auc", r.mia_auc},
          {"mia_score", r.mia_score},
          {"general_accuracy", r.general_accuracy},
          {"general_accuracy_reference", r.general_accuracy_reference},
          {"task_aggregate", r.task_aggregate},
          {"aggregate", r.aggregate},
          {"collapse_rate", r.collapse_rate}};
}

std::string report_table_header() {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-16s | %-9s | %-14s | %-17s | %-12s", "Model", "Aggregate", "Task Aggregate",
                "MIA Score/MIA AUC", "General Avg.");
  return buf;
}

std::string report_table_row(const std::string& name, const EvalReport& r) {
  char mia[40];
  std::snprintf(mia, sizeof(mia), "%.3f / %.3f", r.mia_score, r.mia_auc);
  char buf[200];
  std::snprintf(buf, sizeof(buf), "%-16s | %-9.3f | %-14.3f | %-17s | %-12.3f", name.c_str(), r.aggregate,
                r.task_aggregate, mia, r.general_accuracy);
  return buf;
}

}  // namespace unmerge
