// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <vector>

#include "pcmstore/rng.hpp"

namespace pcmstore {

struct Interval {
  double lo = -1.0;
  double hi = 1.0;

  bool contains(double x) const { return x >= lo && x <= hi; }
  double width() const { return hi - lo; }
  bool operator==(const Interval&) const = default;
};

struct MeasurementRow {
  double write_level;
  double read_value;
};

using MeasurementTable = std::vector<MeasurementRow>;

/// Reads a `write_level,read_value` CSV (header required).
MeasurementTable load_measurements_csv(const std::filesystem::path& path);

/**
 * Conditional Gaussian model of an analog cell: a write level x produces a
 * read value drawn from Normal(mean(x), stddev(x)). Both functions are
 * piecewise linear between the tabulated levels.
 *
 * The mean is strictly increasing on `invertible_input_range()`, which is
 * what makes `invert_mean` well defined. Immutable after construction.
 */
class ChannelModel {
 public:
  ChannelModel(std::vector<double> levels, std::vector<double> mean_at_level,
               std::vector<double> std_at_level, Interval invertible_input);

  double mean(double x) const;
  double stddev(double x) const;
  /// Slopes of the interpolants at x (right-continuous at knots).
  double mean_slope(double x) const;
  double stddev_slope(double x) const;

  /// One read of a cell written at level x.
  double sample(double x, Rng& rng) const;
  /// Average of r independent reads; std shrinks as stddev(x)/sqrt(r).
  double read_avg(double x, int r, Rng& rng) const;
  /// Write level h(y) with mean(h(y)) == y; throws RangeError off range.
  double invert_mean(double y) const;

  Interval input_range() const { return {levels_.front(), levels_.back()}; }
  Interval invertible_input_range() const { return invertible_input_; }
  Interval invertible_output_range() const { return invertible_output_; }

  const std::vector<double>& levels() const { return levels_; }
  const std::vector<double>& mean_at_level() const { return mean_; }
  const std::vector<double>& std_at_level() const { return std_; }

 private:
  std::size_t segment(double x) const;

  std::vector<double> levels_;
  std::vector<double> mean_;
  std::vector<double> std_;
  Interval invertible_input_;
  Interval invertible_output_;
  std::size_t inv_first_ = 0;
  std::size_t inv_last_ = 0;
};

ChannelModel build_from_measurements(const MeasurementTable& table);

enum class MeanShape { Identity, Tanh };

/// Parametric stand-in for device measurements. The defaults give
/// mean(x) = tanh(1.5x)/tanh(1.5) and stddev(x) = 0.03 + 0.05(1+x)/2.
struct SyntheticChannelParams {
  MeanShape mean_shape = MeanShape::Tanh;
  double gain = 1.5;
  double sigma0 = 0.03;
  double sigma1 = 0.05;
  Interval input_range{-1.0, 1.0};
  int grid_levels = 256;
};

ChannelModel build_synthetic(const SyntheticChannelParams& params);

/// Noiseless identity channel; handy as a reference in tests and tools.
ChannelModel identity_channel();

}  // namespace pcmstore
