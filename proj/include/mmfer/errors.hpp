/*
 * Copyright (c) 2026 The mmfer Authors
 *
 * Licensed under the Apache License, Version 2.0;
 * You may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an 'AS IS' BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <stdexcept>
#include <string>

namespace mmfer {

// Broad failure category; the CLI maps each category onto an exit code.
enum class ErrorCategory {
  kInternal,  // programming / contract violations
  kConfig,    // bad configuration or parameters supplied by the user
  kData,      // malformed or inconsistent input files
  kNumeric,   // NaN, divergence, failed gradient check
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

// Incompatible tensor shapes.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what)
      : Error(ErrorCategory::kInternal, "shape error: " + what) {}
};

// Out-of-range scalar parameter (dropout p, dilation, stride, ...).
class ParameterError : public Error {
 public:
  explicit ParameterError(const std::string& what)
      : Error(ErrorCategory::kConfig, "parameter error: " + what) {}
};

class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what)
      : Error(ErrorCategory::kInternal, "contract error: " + what) {}
};

class EmptySequenceError : public Error {
 public:
  explicit EmptySequenceError(const std::string& what)
      : Error(ErrorCategory::kData, "empty sequence: " + what) {}
};

class DegenerateVectorError : public Error {
 public:
  explicit DegenerateVectorError(const std::string& what)
      : Error(ErrorCategory::kNumeric, "degenerate vector: " + what) {}
};

class LabelError : public Error {
 public:
  explicit LabelError(const std::string& what)
      : Error(ErrorCategory::kData, "label error: " + what) {}
};

class MissingClassError : public Error {
 public:
  explicit MissingClassError(const std::string& what)
      : Error(ErrorCategory::kData, "missing class: " + what) {}
};

enum class FormatErrorKind { kBadMagic, kVersionMismatch, kTruncated, kUnsupportedDtype, kBadHeader, kIo };

class FormatError : public Error {
 public:
  FormatError(FormatErrorKind kind, const std::string& what)
      : Error(ErrorCategory::kData, "format error: " + what), kind_(kind) {}
  FormatErrorKind kind() const noexcept { return kind_; }

 private:
  FormatErrorKind kind_;
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorCategory::kData, "data error: " + what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorCategory::kConfig, "config error: " + what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorCategory::kNumeric, "numeric error: " + what) {}
};

}  // namespace mmfer
