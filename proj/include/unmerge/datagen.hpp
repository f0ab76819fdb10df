// Copyright 2026 The unmerge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "unmerge/toymodel.hpp"

namespace unmerge {

enum class Split { forget, retain, holdout, general };

inline constexpr std::array kAllSplits = {Split::forget, Split::retain, Split::holdout, Split::general};

std::string_view to_string(Split split);
std::optional<Split> parse_split(std::string_view name);

struct Record {
  std::string id;
  Split split = Split::forget;
  int task = 1;  // 1, 2 or 3
  TokenIds prompt;
  TokenIds completion;
  TokenIds qa_answer;  // contiguous run inside completion

  bool operator==(const Record&) const = default;
};

// Throws DataError when a record breaks its invariants.
void validate_record(const Record& record);

struct DataGenConfig {
  std::uint64_t seed = 42;
  int vocab_size = 64;
  int forget_count = 200;
  int retain_count = 200;
  int holdout_count = 200;
  int general_count = 50;
  int template_count = 4;     // shared templates of the forget/retain/holdout family
  int entity_pool_size = 34;  // size of the name-token alphabet

  void validate() const;
  [[nodiscard]] int count(Split split) const;

  bool operator==(const DataGenConfig&) const = default;
};

void to_json(nlohmann::json& j, const DataGenConfig& cfg);
void from_json(const nlohmann::json& j, DataGenConfig& cfg);

// Token layout used by the generator. Value digits, template words and name
// tokens occupy disjoint id ranges; 0 is padding and vocab_size - 1 ends a
// completion.
struct TokenLayout {
  static constexpr int kDigits = 10;
  static constexpr int kGeneralTemplates = 2;
  static constexpr int kWordsPerTemplate = 3;  // two prompt words + relation word

  int digit_begin = 1;
  int template_begin = 0;
  int general_begin = 0;
  int name_begin = 0;
  int name_count = 0;
  int end_token = 0;

  static TokenLayout for_config(const DataGenConfig& cfg);
};

// Length of the value field per task.
int value_length(int task);

// Records are template instantiations:
//   prompt     = [word_a, word_b, name_1, name_2]
//   completion = [relation, value..., end]
// where value is the qa_answer. Forget, retain and holdout share templates and
// draw names from disjoint entity pools with matched token marginals; general
// uses its own template family.
std::vector<Record> generate(const DataGenConfig& cfg);

std::vector<Record> select_split(std::span<const Record> records, Split split);

std::string to_jsonl(std::span<const Record> records);
std::vector<Record> parse_jsonl(std::string_view text);
void write_jsonl(std::span<const Record> records, const std::filesystem::path& path);
std::vector<Record> read_jsonl(const std::filesystem::path& path);

}  // namespace unmerge
