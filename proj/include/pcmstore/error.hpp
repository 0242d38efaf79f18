// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pcmstore {

enum class ErrorKind {
  EmptyTable,
  NonMonotoneMean,
  InvalidTable,
  DomainError,
  RangeError,
  InvalidRedundancy,
  InvalidConfig,
  InvalidMapping,
  MissingSensitivity,
  ConfigMismatch,
  EmptyPartition,
  ShapeMismatch,
  EmptyDataset,
  InvalidCount,
  EmptyTaskList,
  EmptyWeightSet,
  ConfigError,
  IoError,
};

std::string_view to_string(ErrorKind kind);

/// Single exception type for the library; `kind()` identifies the failure.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace pcmstore
