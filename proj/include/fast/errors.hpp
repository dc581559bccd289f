// Copyright 2026 The fastaudio Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fast {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor extents (shape mismatch, bad broadcast, bad stride).
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A configuration record violates one of its invariants.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. backward on a non-scalar or an empty metric batch.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary input. Carries the byte offset and the field being read.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset, std::string field = {})
      : Error(what + " (field '" + field + "' at byte offset " + std::to_string(offset) + ")"),
        offset_(offset),
        field_(std::move(field)) {}

  std::size_t offset() const noexcept { return offset_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::size_t offset_;
  std::string field_;
};

class UnsupportedFormatError : public Error {
 public:
  using Error::Error;
};

/// Audio clip shorter than one analysis window.
class TooShortError : public Error {
 public:
  using Error::Error;
};

/// Raised by the test oracles (non-finite objective, no convergence).
class OracleError : public Error {
 public:
  using Error::Error;
};

}  // namespace fast
