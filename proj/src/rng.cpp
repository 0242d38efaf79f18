// SPDX-License-Identifier: Apache-2.0
#include "pcmstore/rng.hpp"

#include "pcmstore/error.hpp"

namespace pcmstore {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::EmptyTable: return "EmptyTable";
    case ErrorKind::NonMonotoneMean: return "NonMonotoneMean";
    case ErrorKind::InvalidTable: return "InvalidTable";
    case ErrorKind::DomainError: return "DomainError";
    case ErrorKind::RangeError: return "RangeError";
    case ErrorKind::InvalidRedundancy: return "InvalidRedundancy";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::InvalidMapping: return "InvalidMapping";
    case ErrorKind::MissingSensitivity: return "MissingSensitivity";
    case ErrorKind::ConfigMismatch: return "ConfigMismatch";
    case ErrorKind::EmptyPartition: return "EmptyPartition";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::InvalidCount: return "InvalidCount";
    case ErrorKind::EmptyTaskList: return "EmptyTaskList";
    case ErrorKind::EmptyWeightSet: return "EmptyWeightSet";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& what)
    : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

Rng::Rng(std::uint64_t seed) : engine_(mix_seed(seed, 0)) {}

double Rng::normal() { return normal_(engine_); }

double Rng::uniform() { return uniform_(engine_); }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform_(engine_); }

std::size_t Rng::index(std::size_t n) {
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(engine_);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace pcmstore
