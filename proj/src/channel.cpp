// SPDX-License-Identifier: Apache-2.0
#include "pcmstore/channel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <fmt/core.h>

#include "pcmstore/error.hpp"

namespace pcmstore {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

double parse_double(const std::string& field, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(trim(field), &used);
    if (used != trim(field).size() || !std::isfinite(v)) throw std::invalid_argument(field);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorKind::InvalidTable, fmt::format("line {}: bad number '{}'", line, field));
  }
}

}  // namespace

MeasurementTable load_measurements_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, fmt::format("cannot open '{}'", path.string()));

  std::string line;
  if (!std::getline(in, line) || trim(line) != "write_level,read_value") {
    throw Error(ErrorKind::InvalidTable,
                fmt::format("'{}': expected header 'write_level,read_value'", path.string()));
  }

  MeasurementTable table;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos) {
      throw Error(ErrorKind::InvalidTable, fmt::format("line {}: expected two fields", line_no));
    }
    table.push_back({parse_double(line.substr(0, comma), line_no),
                     parse_double(line.substr(comma + 1), line_no)});
  }
  return table;
}

ChannelModel::ChannelModel(std::vector<double> levels, std::vector<double> mean_at_level,
                           std::vector<double> std_at_level, Interval invertible_input)
    : levels_(std::move(levels)), mean_(std::move(mean_at_level)), std_(std::move(std_at_level)) {
  const std::size_t n = levels_.size();
  if (n < 2 || mean_.size() != n || std_.size() != n) {
    throw Error(ErrorKind::InvalidTable, "channel needs >= 2 levels with one mean and std each");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(levels_[i]) || !std::isfinite(mean_[i]) || !std::isfinite(std_[i])) {
      throw Error(ErrorKind::InvalidTable, "non-finite channel table entry");
    }
    if (std_[i] < 0.0) throw Error(ErrorKind::InvalidTable, "negative standard deviation");
    if (i > 0 && levels_[i] <= levels_[i - 1]) {
      throw Error(ErrorKind::InvalidTable, "levels must be strictly increasing");
    }
  }

  const auto first = std::lower_bound(levels_.begin(), levels_.end(), invertible_input.lo);
  const auto last = std::upper_bound(levels_.begin(), levels_.end(), invertible_input.hi);
  if (first == levels_.end() || last == levels_.begin() || std::distance(first, last) < 2) {
    throw Error(ErrorKind::NonMonotoneMean, "invertible range must span at least two levels");
  }
  inv_first_ = static_cast<std::size_t>(first - levels_.begin());
  inv_last_ = static_cast<std::size_t>(last - levels_.begin()) - 1;
  for (std::size_t i = inv_first_; i < inv_last_; ++i) {
    if (!(mean_[i + 1] > mean_[i])) {
      throw Error(ErrorKind::NonMonotoneMean,
                  fmt::format("mean not increasing between levels {} and {}", levels_[i],
                              levels_[i + 1]));
    }
  }
  invertible_input_ = {levels_[inv_first_], levels_[inv_last_]};
  invertible_output_ = {mean_[inv_first_], mean_[inv_last_]};
}

std::size_t ChannelModel::segment(double x) const {
  const auto it = std::upper_bound(levels_.begin(), levels_.end(), x);
  const auto i = static_cast<std::size_t>(std::max<std::ptrdiff_t>(it - levels_.begin() - 1, 0));
  return std::min(i, levels_.size() - 2);
}

double ChannelModel::mean(double x) const {
  const std::size_t i = segment(x);
  const double u = (x - levels_[i]) / (levels_[i + 1] - levels_[i]);
  return mean_[i] + u * (mean_[i + 1] - mean_[i]);
}

double ChannelModel::stddev(double x) const {
  const std::size_t i = segment(x);
  const double u = (x - levels_[i]) / (levels_[i + 1] - levels_[i]);
  return std_[i] + u * (std_[i + 1] - std_[i]);
}

double ChannelModel::mean_slope(double x) const {
  const std::size_t i = segment(x);
  return (mean_[i + 1] - mean_[i]) / (levels_[i + 1] - levels_[i]);
}

double ChannelModel::stddev_slope(double x) const {
  const std::size_t i = segment(x);
  return (std_[i + 1] - std_[i]) / (levels_[i + 1] - levels_[i]);
}

double ChannelModel::sample(double x, Rng& rng) const {
  if (!input_range().contains(x)) {
    throw Error(ErrorKind::DomainError, fmt::format("write level {} outside [{}, {}]", x,
                                                    levels_.front(), levels_.back()));
  }
  return mean(x) + stddev(x) * rng.normal();
}

double ChannelModel::read_avg(double x, int r, Rng& rng) const {
  if (r < 1) throw Error(ErrorKind::InvalidRedundancy, fmt::format("r = {}", r));
  if (!input_range().contains(x)) {
    throw Error(ErrorKind::DomainError, fmt::format("write level {} outside [{}, {}]", x,
                                                    levels_.front(), levels_.back()));
  }
  // Sum the unit-variance parts separately so a noiseless cell reads back
  // exactly mean(x) for any r.
  double acc = 0.0;
  for (int k = 0; k < r; ++k) acc += rng.normal();
  return mean(x) + stddev(x) * (acc / r);
}

double ChannelModel::invert_mean(double y) const {
  if (!invertible_output_.contains(y)) {
    throw Error(ErrorKind::RangeError,
                fmt::format("target {} outside invertible output range [{}, {}]", y,
                            invertible_output_.lo, invertible_output_.hi));
  }
  const auto begin = mean_.begin() + static_cast<std::ptrdiff_t>(inv_first_);
  const auto end = mean_.begin() + static_cast<std::ptrdiff_t>(inv_last_) + 1;
  auto it = std::upper_bound(begin, end, y);
  if (it == end) return levels_[inv_last_];
  const auto i = static_cast<std::size_t>(std::max(it - mean_.begin() - 1,
                                                   static_cast<std::ptrdiff_t>(inv_first_)));
  const double u = (y - mean_[i]) / (mean_[i + 1] - mean_[i]);
  return levels_[i] + u * (levels_[i + 1] - levels_[i]);
}

ChannelModel build_from_measurements(const MeasurementTable& table) {
  if (table.empty()) throw Error(ErrorKind::EmptyTable, "no measurements");

  std::map<double, std::vector<double>> by_level;
  for (const auto& row : table) {
    if (!(row.write_level >= -1.0 && row.write_level <= 1.0)) {
      throw Error(ErrorKind::InvalidTable,
                  fmt::format("write level {} outside [-1, 1]", row.write_level));
    }
    by_level[row.write_level].push_back(row.read_value);
  }
  if (by_level.size() < 2) {
    throw Error(ErrorKind::EmptyTable, "need at least two distinct write levels");
  }

  std::vector<double> levels, means, stds;
  for (const auto& [level, reads] : by_level) {
    if (reads.size() < 2) {
      throw Error(ErrorKind::InvalidTable, fmt::format("level {} has fewer than 2 samples", level));
    }
    double sum = 0.0;
    for (double v : reads) sum += v;
    const double m = sum / static_cast<double>(reads.size());
    double ss = 0.0;
    for (double v : reads) ss += (v - m) * (v - m);
    levels.push_back(level);
    means.push_back(m);
    stds.push_back(std::sqrt(ss / static_cast<double>(reads.size())));
  }

  // Longest contiguous run of strictly increasing means; first one wins ties.
  std::size_t best_start = 0, best_len = 1, start = 0;
  for (std::size_t i = 1; i < means.size(); ++i) {
    if (!(means[i] > means[i - 1])) start = i;
    if (i - start + 1 > best_len) {
      best_len = i - start + 1;
      best_start = start;
    }
  }
  if (best_len < 2) throw Error(ErrorKind::NonMonotoneMean, "no increasing run of levels");

  const Interval invertible{levels[best_start], levels[best_start + best_len - 1]};
  return ChannelModel(std::move(levels), std::move(means), std::move(stds), invertible);
}

ChannelModel build_synthetic(const SyntheticChannelParams& params) {
  if (params.grid_levels < 2) throw Error(ErrorKind::InvalidConfig, "grid_levels must be >= 2");
  if (params.sigma0 < 0.0 || params.sigma1 < 0.0) {
    throw Error(ErrorKind::InvalidConfig, "sigma0 and sigma1 must be >= 0");
  }
  const Interval range = params.input_range;
  if (!(range.lo < range.hi) || range.lo < -1.0 || range.hi > 1.0) {
    throw Error(ErrorKind::InvalidConfig, "input_range must be a non-empty subset of [-1, 1]");
  }
  if (params.mean_shape == MeanShape::Tanh && !(params.gain > 0.0)) {
    throw Error(ErrorKind::NonMonotoneMean, "tanh gain must be positive");
  }

  const auto n = static_cast<std::size_t>(params.grid_levels);
  std::vector<double> levels(n), means(n), stds(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = i + 1 == n ? range.hi
                                : range.lo + range.width() * static_cast<double>(i) /
                                                 static_cast<double>(n - 1);
    levels[i] = x;
    means[i] = params.mean_shape == MeanShape::Identity
                   ? x
                   : std::tanh(params.gain * x) / std::tanh(params.gain);
    stds[i] = params.sigma0 + params.sigma1 * (1.0 + x) / 2.0;
  }
  return ChannelModel(std::move(levels), std::move(means), std::move(stds), range);
}

ChannelModel identity_channel() {
  return ChannelModel({-1.0, 1.0}, {-1.0, 1.0}, {0.0, 0.0}, {-1.0, 1.0});
}

}  // namespace pcmstore
