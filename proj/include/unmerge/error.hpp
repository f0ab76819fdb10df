// Copyright 2026 The unmerge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace unmerge {

// All library failures derive from Error so callers (the CLI) can map them to
// a nonzero exit code with one catch.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration value; the message names the offending field.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Name-set or shape mismatch between parameter sets.
class StructuralError : public Error {
 public:
  using Error::Error;
};

// Bad argument to a pure function (empty list, out-of-range token, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

// Dataset-level problem: missing split, invalid record, unparsable line.
class DataError : public Error {
 public:
  using Error::Error;
};

// Bad command-line usage (unknown choice, missing selector).
class UsageError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  enum class Kind { malformed_header, truncated, inconsistent };

  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  [[nodiscard]] Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace unmerge
