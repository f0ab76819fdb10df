// Copyright 2026 The unmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "unmerge/datagen.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include "unmerge/error.hpp"
#include "unmerge/rng.hpp"

namespace unmerge {

namespace {

const std::set<std::string> kRecordKeys = {"id", "split", "task", "prompt", "completion", "qa_answer"};

bool contains_run(std::span<const Token> haystack, std::span<const Token> needle) {
  if (needle.empty()) return true;
  return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) != haystack.end();
}

std::string record_id(Split split, int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s-%04d", std::string(to_string(split)).c_str(), index);
  return buf;
}

struct Entity {
  int first;
  int second;
};

// Entities of one diagonal class c are the pairs (a, (a + c) mod N); every
// name token appears exactly once in each position, so a split built from
// whole diagonals has uniform name marginals.
std::vector<Entity> diagonal(int c, int n) {
  std::vector<Entity> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int a = 0; a < n; ++a) out.push_back({a, (a + c) % n});
  return out;
}

int diagonals_needed(int count, int n) { return (count + n - 1) / n; }

}  // namespace

std::string_view to_string(Split split) {
  switch (split) {
    case Split::forget: return "forget";
    case Split::retain: return "retain";
    case Split::holdout: return "holdout";
    case Split::general: return "general";
  }
  return "?";
}

std::optional<Split> parse_split(std::string_view name) {
  for (auto s : kAllSplits) {
    if (to_string(s) == name) return s;
  }
  return std::nullopt;
}

void validate_record(const Record& r) {
  if (r.task < 1 || r.task > 3) throw DataError("record " + r.id + ": task must be 1, 2 or 3");
  if (r.completion.empty()) throw DataError("record " + r.id + ": empty completion");
  for (const auto* seq : {&r.prompt, &r.completion, &r.qa_answer}) {
    for (Token t : *seq) {
      if (t < 0) throw DataError("record " + r.id + ": negative token id");
    }
  }
  if (!contains_run(r.completion, r.qa_answer)) {
    throw DataError("record " + r.id + ": qa_answer is not a contiguous part of completion");
  }
}

int value_length(int task) {
  switch (task) {
    case 1: return 4;
    case 2: return 3;
    default: return 5;
  }
}

TokenLayout TokenLayout::for_config(const DataGenConfig& cfg) {
  TokenLayout l;
  l.digit_begin = 1;
  l.template_begin = l.digit_begin + kDigits;
  l.general_begin = l.template_begin + kWordsPerTemplate * cfg.template_count;
  l.name_begin = l.general_begin + kWordsPerTemplate * kGeneralTemplates;
  l.name_count = cfg.entity_pool_size;
  l.end_token = cfg.vocab_size - 1;
  return l;
}

int DataGenConfig::count(Split split) const {
  switch (split) {
    case Split::forget: return forget_count;
    case Split::retain: return retain_count;
    case Split::holdout: return holdout_count;
    case Split::general: return general_count;
  }
  return 0;
}

void DataGenConfig::validate() const {
  if (vocab_size < 16) throw ConfigError("vocab_size must be at least 16, got " + std::to_string(vocab_size));
  for (auto s : kAllSplits) {
    if (count(s) < 1) throw ConfigError(std::string(to_string(s)) + "_count must be at least 1");
  }
  if (template_count < 1) throw ConfigError("template_count must be at least 1");
  if (entity_pool_size < 2) throw ConfigError("entity_pool_size must be at least 2");
  const auto layout = TokenLayout::for_config(*this);
  if (layout.name_begin + layout.name_count > layout.end_token) {
    throw ConfigError("vocab_size " + std::to_string(vocab_size) + " too small for the template alphabet (needs " +
                      std::to_string(layout.name_begin + layout.name_count + 1) + ")");
  }
  int diagonals = 0;
  for (auto s : kAllSplits) diagonals += diagonals_needed(count(s), entity_pool_size);
  if (diagonals > entity_pool_size) {
    throw ConfigError("entity_pool_size " + std::to_string(entity_pool_size) +
                      " too small for disjoint entity pools of the configured split sizes");
  }
}

void to_json(nlohmann::json& j, const DataGenConfig& cfg) {
  j = {{"seed", cfg.seed},
       {"vocab_size", cfg.vocab_size},
       {"forget_count", cfg.forget_count},
       {"retain_count", cfg.retain_count},
       {"holdout_count", cfg.holdout_count},
       {"general_count", cfg.general_count},
       {"template_count", cfg.template_count},
       {"entity_pool_size", cfg.entity_pool_size}};
}

void from_json(const nlohmann::json& j, DataGenConfig& cfg) {
  cfg = DataGenConfig{};
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("vocab_size")) cfg.vocab_size = j.at("vocab_size").get<int>();
  if (j.contains("forget_count")) cfg.forget_count = j.at("forget_count").get<int>();
  if (j.contains("retain_count")) cfg.retain_count = j.at("retain_count").get<int>();
  if (j.contains("holdout_count")) cfg.holdout_count = j.at("holdout_count").get<int>();
  if (j.contains("general_count")) cfg.general_count = j.at("general_count").get<int>();
  if (j.contains("template_count")) cfg.template_count = j.at("template_count").get<int>();
  if (j.contains("entity_pool_size")) cfg.entity_pool_size = j.at("entity_pool_size").get<int>();
}

std::vector<Record> generate(const DataGenConfig& cfg) {
  cfg.validate();
  const auto layout = TokenLayout::for_config(cfg);
  const int n = cfg.entity_pool_size;

  Rng rng(cfg.seed);
  std::vector<int> diagonal_order(static_cast<std::size_t>(n));
  std::iota(diagonal_order.begin(), diagonal_order.end(), 0);
  rng.shuffle(std::span(diagonal_order));

  std::vector<Record> out;
  std::size_t next_diagonal = 0;
  for (auto split : kAllSplits) {
    const int count = cfg.count(split);
    Rng split_rng(cfg.seed ^ (0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(split) + 1)));

    std::vector<Entity> entities;
    for (int k = 0; k < diagonals_needed(count, n); ++k) {
      auto diag = diagonal(diagonal_order[next_diagonal++], n);
      entities.insert(entities.end(), diag.begin(), diag.end());
    }
    // Whole diagonals first, then a shuffled subset of the last one.
    const auto full = static_cast<std::size_t>(count / n) * static_cast<std::size_t>(n);
    split_rng.shuffle(std::span(entities).subspan(full));
    entities.resize(static_cast<std::size_t>(count));
    split_rng.shuffle(std::span(entities));

    const bool general = split == Split::general;
    const int family = general ? TokenLayout::kGeneralTemplates : cfg.template_count;
    const int family_begin = general ? layout.general_begin : layout.template_begin;

    std::vector<int> lengths(static_cast<std::size_t>(count));
    int total_digits = 0;
    for (int i = 0; i < count; ++i) {
      const int task = (i % family) % 3 + 1;
      lengths[static_cast<std::size_t>(i)] = value_length(task);
      total_digits += value_length(task);
    }
    // Digits come from a balanced pool (each digit equally often) so value
    // marginals match across splits.
    std::vector<int> digits(static_cast<std::size_t>(total_digits));
    for (int i = 0; i < total_digits; ++i) digits[static_cast<std::size_t>(i)] = i % TokenLayout::kDigits;
    split_rng.shuffle(std::span(digits));

    std::size_t digit_pos = 0;
    for (int i = 0; i < count; ++i) {
      const int tmpl = i % family;
      const int words = family_begin + TokenLayout::kWordsPerTemplate * tmpl;
      const auto& e = entities[static_cast<std::size_t>(i)];

      Record r;
      r.id = record_id(split, i);
      r.split = split;
      r.task = tmpl % 3 + 1;
      r.prompt = {words, words + 1, layout.name_begin + e.first, layout.name_begin + e.second};
      for (int k = 0; k < lengths[static_cast<std::size_t>(i)]; ++k) {
        r.qa_answer.push_back(layout.digit_begin + digits[digit_pos++]);
      }
      r.completion.push_back(words + 2);
      r.completion.insert(r.completion.end(), r.qa_answer.begin(), r.qa_answer.end());
      r.completion.push_back(layout.end_token);
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::vector<Record> select_split(std::span<const Record> records, Split split) {
  std::vector<Record> out;
  for (const auto& r : records) {
    if (r.split == split) out.push_back(r);
  }
  return out;
}

std::string to_jsonl(std::span<const Record> records) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::json j = {{"id", r.id},
                        {"split", std::string(to_string(r.split))},
                        {"task", r.task},
                        {"prompt", r.prompt},
                        {"completion", r.completion},
                        {"qa_answer", r.qa_answer}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<Record> parse_jsonl(std::string_view text) {
  std::vector<Record> out;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    try {
      const auto j = nlohmann::json::parse(line);
      if (!j.is_object()) throw DataError(where + "not a JSON object");
      for (const auto& key : kRecordKeys) {
        if (!j.contains(key)) throw DataError(where + "missing field '" + key + "'");
      }
      for (const auto& [key, _] : j.items()) {
        if (kRecordKeys.count(key) == 0) throw DataError(where + "unexpected field '" + key + "'");
      }
      Record r;
      r.id = j.at("id").get<std::string>();
      const auto split_name = j.at("split").get<std::string>();
      const auto split = parse_split(split_name);
      if (!split) throw DataError(where + "unknown split '" + split_name + "'");
      r.split = *split;
      r.task = j.at("task").get<int>();
      r.prompt = j.at("prompt").get<TokenIds>();
      r.completion = j.at("completion").get<TokenIds>();
      r.qa_answer = j.at("qa_answer").get<TokenIds>();
      try {
        validate_record(r);
      } catch (const DataError& e) {
        throw DataError(where + e.what());
      }
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + e.what());
    }
  }
  return out;
}

void write_jsonl(std::span<const Record> records, const std::filesystem::path& path) {
  write_text_file(path, to_jsonl(records));
}

std::vector<Record> read_jsonl(const std::filesystem::path& path) {
  try {
    return parse_jsonl(read_text_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace unmerge
