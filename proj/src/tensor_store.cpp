// Copyright 2026 The unmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "unmerge/tensor_store.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "unmerge/error.hpp"

namespace unmerge {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw InputError("tensor shape has negative dimension " + std::to_string(d));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  const auto expected = shape_numel(shape_);
  if (data_.size() != expected) {
    throw InputError("tensor data length " + std::to_string(data_.size()) + " does not match shape product " +
                     std::to_string(expected));
  }
  for (float v : data_) {
    if (!std::isfinite(v)) throw InputError("tensor contains a non-finite value");
  }
}

Tensor Tensor::zeros(Shape shape) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<float>(n, 0.0f));
}

Tensor Tensor::vector(std::vector<float> data) {
  const auto n = static_cast<std::int64_t>(data.size());
  return Tensor({n}, std::move(data));
}

void NamedParamSet::insert(std::string name, Tensor tensor) {
  if (entries_.count(name) != 0) throw InputError("duplicate parameter name '" + name + "'");
  entries_.emplace(std::move(name), std::move(tensor));
}

void NamedParamSet::set(std::string name, Tensor tensor) { entries_.insert_or_assign(std::move(name), std::move(tensor)); }

const Tensor& NamedParamSet::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw StructuralError("missing parameter '" + name + "'");
  return it->second;
}

std::size_t NamedParamSet::total_numel() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.numel();
  return n;
}

std::vector<std::string> NamedParamSet::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

void require_same_structure(const NamedParamSet& a, const NamedParamSet& b, const char* context) {
  if (a.size() != b.size()) {
    throw StructuralError(std::string(context) + ": parameter sets have " + std::to_string(a.size()) + " and " +
                          std::to_string(b.size()) + " entries");
  }
  auto ib = b.begin();
  for (const auto& [name, ta] : a) {
    if (ib->first != name) {
      throw StructuralError(std::string(context) + ": parameter '" + name + "' has no counterpart (found '" +
                            ib->first + "')");
    }
    if (ib->second.shape() != ta.shape()) {
      throw StructuralError(std::string(context) + ": shape mismatch for '" + name + "'");
    }
    ++ib;
  }
}

Tensor flatten(const NamedParamSet& params) {
  std::vector<float> out;
  out.reserve(params.total_numel());
  for (const auto& [_, t] : params) out.insert(out.end(), t.data().begin(), t.data().end());
  return Tensor::vector(std::move(out));
}

namespace {

void put_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64_le(std::span<const std::uint8_t> in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[i]) << (8 * i);
  return v;
}

void put_f32_le(std::vector<std::uint8_t>& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

float get_f32_le(const std::uint8_t* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

CheckpointError malformed(const std::string& what) {
  return CheckpointError(CheckpointError::Kind::malformed_header, "malformed checkpoint header: " + what);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const NamedParamSet& params) {
  nlohmann::json header = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : params) {
    const std::uint64_t nbytes = 4 * t.numel();
    header[name] = {{"shape", t.shape()}, {"offset", offset}, {"nbytes", nbytes}};
    offset += nbytes;
  }
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(8 + text.size() + offset);
  put_u64_le(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& [_, t] : params) {
    for (float v : t.data()) put_f32_le(out, v);
  }
  return out;
}

NamedParamSet decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) {
    throw CheckpointError(CheckpointError::Kind::truncated, "checkpoint shorter than its 8-byte length prefix");
  }
  const std::uint64_t header_len = get_u64_le(bytes.first(8));
  if (header_len > bytes.size() - 8) {
    throw CheckpointError(CheckpointError::Kind::truncated, "checkpoint header extends past end of file");
  }
  const auto header_bytes = bytes.subspan(8, header_len);
  const auto payload = bytes.subspan(8 + header_len);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_bytes.begin(), header_bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw malformed(e.what());
  }
  if (!header.is_object()) throw malformed("top level is not an object");

  NamedParamSet out;
  std::uint64_t expected_offset = 0;
  // nlohmann::json objects iterate in sorted key order, matching NamedParamSet.
  for (const auto& [name, entry] : header.items()) {
    if (!entry.is_object() || !entry.contains("shape") || !entry.contains("offset") || !entry.contains("nbytes")) {
      throw malformed("entry '" + name + "' lacks shape/offset/nbytes");
    }
    Shape shape;
    std::uint64_t offset = 0;
    std::uint64_t nbytes = 0;
    try {
      shape = entry.at("shape").get<Shape>();
      offset = entry.at("offset").get<std::uint64_t>();
      nbytes = entry.at("nbytes").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw malformed("entry '" + name + "': " + e.what());
    }
    std::size_t numel = 0;
    try {
      numel = shape_numel(shape);
    } catch (const InputError& e) {
      throw CheckpointError(CheckpointError::Kind::inconsistent, "entry '" + name + "': " + e.what());
    }
    if (nbytes != 4 * static_cast<std::uint64_t>(numel)) {
      throw CheckpointError(CheckpointError::Kind::inconsistent,
                            "entry '" + name + "': nbytes " + std::to_string(nbytes) + " != 4 * product(shape) = " +
                                std::to_string(4 * numel));
    }
    if (offset != expected_offset) {
      throw CheckpointError(CheckpointError::Kind::inconsistent,
                            "entry '" + name + "': offset " + std::to_string(offset) + " is not contiguous (expected " +
                                std::to_string(expected_offset) + ")");
    }
    if (offset + nbytes > payload.size()) {
      throw CheckpointError(CheckpointError::Kind::truncated, "payload of '" + name + "' extends past end of file");
    }
    std::vector<float> data(numel);
    const std::uint8_t* p = payload.data() + offset;
    for (std::size_t i = 0; i < numel; ++i) data[i] = get_f32_le(p + 4 * i);
    try {
      out.insert(name, Tensor(std::move(shape), std::move(data)));
    } catch (const InputError& e) {
      throw CheckpointError(CheckpointError::Kind::inconsistent, "entry '" + name + "': " + e.what());
    }
    expected_offset += nbytes;
  }
  if (expected_offset != payload.size()) {
    throw CheckpointError(CheckpointError::Kind::inconsistent,
                          "payload has " + std::to_string(payload.size() - expected_offset) + " trailing bytes");
  }
  return out;
}

void save_checkpoint(const NamedParamSet& params, const std::filesystem::path& path) {
  write_file(path, encode_checkpoint(params));
}

NamedParamSet load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    throw CheckpointError(e.kind(), path.string() + ": " + e.what());
  }
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::string read_text_file(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

}  // namespace unmerge
