// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pcmstore/channel.hpp"
#include "pcmstore/rng.hpp"

namespace pcmstore {

struct WeightTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;
  /// Optional zero mask (1 = pruned, stored as an exact zero, no cells spent).
  std::vector<std::uint8_t> zero_mask;

  bool masked(std::size_t i) const { return !zero_mask.empty() && zero_mask[i] != 0; }
};

/// Which protection strategies are enabled and their constants.
struct CodingConfig {
  bool sign_protection = false;
  bool adaptive_mapping = false;
  bool adaptive_redundancy = false;
  bool sensitivity_redundancy = false;
  Interval target{-1.0, 1.0};
  double q_large = 0.9995;
  double q_sens = 0.0002;
  int r_small = 1;
  int r_large = 16;
  int r_sens = 50;

  /// Checks the invariants; if `channel` is given, also that the target
  /// interval lies inside its invertible output range.
  void validate(const ChannelModel* channel = nullptr) const;
  int side_bits() const;
  bool needs_threshold() const { return adaptive_mapping || adaptive_redundancy; }
};

/// Short label such as "SP+AM+AR"; "none" when nothing is enabled.
std::string strategy_label(const CodingConfig& config);
/// Sets the four strategy flags from a label produced by strategy_label.
void apply_strategy_label(CodingConfig& config, const std::string& label);

/// Affine map t = alpha * m - beta from a magnitude (or signed) domain onto
/// the target interval.
struct GroupMapping {
  double alpha = 1.0;
  double beta = 0.0;

  double forward(double m) const { return alpha * m - beta; }
  double inverse(double t) const { return (t + beta) / alpha; }
};

struct MappingParams {
  GroupMapping small;  // also the only group when adaptive mapping is off
  GroupMapping large;
  double tau = 0.0;  // |v| > tau puts a weight in the large group
  bool two_groups = false;
};

MappingParams fit_mapping(const WeightTensor& weights, const CodingConfig& config);

enum class Group : std::uint8_t { Small = 0, Large = 1 };

struct EncodedWeights {
  std::vector<double> target;  // per weight, inside config.target
  std::vector<int> cells;      // replication count, 0 for masked weights
  std::vector<std::uint8_t> sign_bit;         // 1 = negative; empty unless SP
  std::vector<std::uint8_t> group_bit;        // 1 = large; empty unless AM
  std::vector<std::uint8_t> sensitivity_bit;  // 1 = top q_sens; empty unless Sens
  std::vector<std::uint8_t> zero_mask;
  std::vector<Group> group;  // magnitude group (needed for AR even without AM)
  MappingParams mapping;
  CodingConfig config;
  std::string name;
  std::vector<std::size_t> shape;

  std::size_t size() const { return target.size(); }
  std::size_t side_bits_per_weight() const;
};

/// `sens` must be given iff config.sensitivity_redundancy; its values are
/// aligned with `weights.values`.
EncodedWeights encode(const WeightTensor& weights, const CodingConfig& config,
                      const MappingParams& mapping,
                      std::optional<std::span<const double>> sensitivity = std::nullopt);

struct Readback {
  std::vector<double> level;  // averaged read per weight (0 for masked)
};

/// Writes h(t) into `cells[i]` simulated cells per weight and averages the
/// reads. Side bits are digital and pass through unchanged.
Readback store(const EncodedWeights& encoded, const ChannelModel& channel, Rng& rng);

WeightTensor decode(const Readback& readback, const EncodedWeights& encoded);

struct PartitionCounts {
  std::uint64_t n_small = 0;
  std::uint64_t n_large = 0;
  std::uint64_t n_sens_small = 0;  // sensitivity top-ups drawn from each group
  std::uint64_t n_sens_large = 0;
};

struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

struct CostReport {
  Rational r_avg;           // sparsity-driven average before sensitivity top-ups
  Rational sens_top_up;     // extra cells per weight from sensitivity bits
  Rational analog_cells;    // r_avg + sens_top_up
  int side_bits_per_weight = 0;
  double side_cells_per_weight = 0.0;  // side bits at 2 bits/cell
  double total_cells_per_weight = 0.0;
  PartitionCounts counts;
};

CostReport storage_cost(const CodingConfig& config, const PartitionCounts& counts);
/// Partition counts of an encoded tensor (masked weights excluded).
PartitionCounts partition_counts(const EncodedWeights& encoded);

}  // namespace pcmstore
