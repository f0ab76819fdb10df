// Copyright 2026 The unmerge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace unmerge {

using Shape = std::vector<std::int64_t>;

// Number of elements implied by a shape; throws on negative dims.
std::size_t shape_numel(const Shape& shape);

// Dense row-major f32 tensor. Construction checks that the data length
// matches the shape and that every value is finite.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<float> data);

  static Tensor zeros(Shape shape);
  static Tensor vector(std::vector<float> data);

  [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
  [[nodiscard]] std::span<const float> data() const noexcept { return data_; }
  [[nodiscard]] std::size_t numel() const noexcept { return data_.size(); }
  [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }

  float operator[](std::size_t i) const { return data_[i]; }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

// Name -> tensor map with sorted, unique names. Iteration order is the
// lexicographic byte order of the names.
class NamedParamSet {
 public:
  using Map = std::map<std::string, Tensor>;

  NamedParamSet() = default;

  // Throws InputError when the name is already present.
  void insert(std::string name, Tensor tensor);
  // Inserts or replaces.
  void set(std::string name, Tensor tensor);

  [[nodiscard]] bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  [[nodiscard]] const Tensor& at(const std::string& name) const;
  [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
  [[nodiscard]] bool empty() const noexcept { return entries_.empty(); }
  [[nodiscard]] std::size_t total_numel() const;
  [[nodiscard]] std::vector<std::string> names() const;

  [[nodiscard]] Map::const_iterator begin() const noexcept { return entries_.begin(); }
  [[nodiscard]] Map::const_iterator end() const noexcept { return entries_.end(); }

  bool operator==(const NamedParamSet&) const = default;

 private:
  Map entries_;
};

// Throws StructuralError unless both sets have identical names and shapes.
void require_same_structure(const NamedParamSet& a, const NamedParamSet& b, const char* context);

// Concatenation of all tensor data in name order.
Tensor flatten(const NamedParamSet& params);

// Checkpoint layout (.nps):
//   u64 little-endian header length N
//   N bytes of JSON: {"name": {"shape": [...], "offset": o, "nbytes": b}, ...}
//   raw little-endian f32 payload; offsets are relative to the end of the
//   header, contiguous and in name order.
std::vector<std::uint8_t> encode_checkpoint(const NamedParamSet& params);
NamedParamSet decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const NamedParamSet& params, const std::filesystem::path& path);
NamedParamSet load_checkpoint(const std::filesystem::path& path);

// Whole-file helpers shared by the other writers.
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace unmerge
