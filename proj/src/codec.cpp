// SPDX-License-Identifier: Apache-2.0
#include "pcmstore/codec.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/core.h>

#include "pcmstore/error.hpp"

namespace pcmstore {

namespace {

GroupMapping fit_affine(double d_lo, double d_hi, const Interval& target) {
  if (!(d_hi > d_lo)) d_hi = d_lo + std::max(std::abs(d_lo), 1e-12);
  GroupMapping g;
  g.alpha = target.width() / (d_hi - d_lo);
  g.beta = g.alpha * d_lo - target.lo;
  return g;
}

Rational make_rational(std::int64_t num, std::int64_t den) {
  const std::int64_t g = std::gcd(num, den);
  return g == 0 ? Rational{0, 1} : Rational{num / g, den / g};
}

Rational add(const Rational& a, const Rational& b) {
  return make_rational(a.num * b.den + b.num * a.den, a.den * b.den);
}

}  // namespace

void CodingConfig::validate(const ChannelModel* channel) const {
  if (!(target.lo < target.hi)) {
    throw Error(ErrorKind::InvalidConfig, "target interval must satisfy lo < hi");
  }
  if (!(q_large > 0.0 && q_large < 1.0)) {
    throw Error(ErrorKind::InvalidConfig, "q_large must lie in (0, 1)");
  }
  if (!(q_sens > 0.0 && q_sens < 1.0)) {
    throw Error(ErrorKind::InvalidConfig, "q_sens must lie in (0, 1)");
  }
  if (r_small < 1 || r_large < r_small || r_sens < r_large) {
    throw Error(ErrorKind::InvalidRedundancy,
                fmt::format("need r_sens >= r_large >= r_small >= 1, got {}, {}, {}", r_sens,
                            r_large, r_small));
  }
  if (channel != nullptr) {
    const Interval out = channel->invertible_output_range();
    if (target.lo < out.lo || target.hi > out.hi) {
      throw Error(ErrorKind::InvalidConfig,
                  fmt::format("target [{}, {}] not inside invertible output range [{}, {}]",
                              target.lo, target.hi, out.lo, out.hi));
    }
  }
}

int CodingConfig::side_bits() const {
  return int{sign_protection} + int{adaptive_mapping} + int{sensitivity_redundancy};
}

std::string strategy_label(const CodingConfig& config) {
  std::string label;
  auto append = [&](bool on, const char* tag) {
    if (!on) return;
    if (!label.empty()) label += '+';
    label += tag;
  };
  append(config.sign_protection, "SP");
  append(config.adaptive_mapping, "AM");
  append(config.adaptive_redundancy, "AR");
  append(config.sensitivity_redundancy, "Sens");
  return label.empty() ? "none" : label;
}

void apply_strategy_label(CodingConfig& config, const std::string& label) {
  config.sign_protection = config.adaptive_mapping = false;
  config.adaptive_redundancy = config.sensitivity_redundancy = false;
  if (label == "none") return;
  std::size_t pos = 0;
  while (pos <= label.size()) {
    const std::size_t next = std::min(label.find('+', pos), label.size());
    const std::string tag = label.substr(pos, next - pos);
    if (tag == "SP") config.sign_protection = true;
    else if (tag == "AM") config.adaptive_mapping = true;
    else if (tag == "AR") config.adaptive_redundancy = true;
    else if (tag == "Sens") config.sensitivity_redundancy = true;
    else throw Error(ErrorKind::InvalidConfig, fmt::format("unknown strategy tag '{}'", tag));
    pos = next + 1;
  }
}

std::size_t EncodedWeights::side_bits_per_weight() const {
  return static_cast<std::size_t>(!sign_bit.empty()) + static_cast<std::size_t>(!group_bit.empty()) +
         static_cast<std::size_t>(!sensitivity_bit.empty());
}

MappingParams fit_mapping(const WeightTensor& weights, const CodingConfig& config) {
  std::vector<double> magnitudes;
  double lo = 0.0, hi = 0.0, max_abs = 0.0;
  bool first = true;
  for (std::size_t i = 0; i < weights.values.size(); ++i) {
    if (weights.masked(i)) continue;
    const double v = weights.values[i];
    if (!std::isfinite(v)) throw Error(ErrorKind::InvalidMapping, "non-finite weight");
    lo = first ? v : std::min(lo, v);
    hi = first ? v : std::max(hi, v);
    first = false;
    magnitudes.push_back(std::abs(v));
    max_abs = std::max(max_abs, std::abs(v));
  }
  if (magnitudes.empty() || max_abs <= 1e-12) {
    throw Error(ErrorKind::InvalidMapping, fmt::format("'{}': all weights are zero", weights.name));
  }
  if (!config.sign_protection && !(hi > lo)) {
    throw Error(ErrorKind::InvalidMapping, fmt::format("'{}': constant weights", weights.name));
  }

  MappingParams mp;
  if (config.needs_threshold()) {
    std::sort(magnitudes.begin(), magnitudes.end());
    const auto n = magnitudes.size();
    const auto rank = static_cast<std::size_t>(std::ceil(config.q_large * static_cast<double>(n)));
    mp.tau = magnitudes[std::clamp<std::size_t>(rank, 1, n) - 1];
  } else {
    mp.tau = max_abs;
  }

  if (config.sign_protection) {
    if (config.adaptive_mapping) {
      mp.two_groups = true;
      mp.small = fit_affine(0.0, mp.tau, config.target);
      mp.large = fit_affine(mp.tau, max_abs, config.target);
    } else {
      mp.small = fit_affine(0.0, max_abs, config.target);
      mp.large = mp.small;
    }
  } else {
    if (config.adaptive_mapping) {
      // Without sign protection the small group still spans both signs.
      mp.two_groups = true;
      mp.small = fit_affine(std::max(lo, -mp.tau), std::min(hi, mp.tau), config.target);
      mp.large = fit_affine(lo, hi, config.target);
    } else {
      mp.small = fit_affine(lo, hi, config.target);
      mp.large = mp.small;
    }
  }
  return mp;
}

EncodedWeights encode(const WeightTensor& weights, const CodingConfig& config,
                      const MappingParams& mapping,
                      std::optional<std::span<const double>> sensitivity) {
  config.validate();
  const std::size_t n = weights.values.size();
  if (!weights.zero_mask.empty() && weights.zero_mask.size() != n) {
    throw Error(ErrorKind::ShapeMismatch, "zero mask size differs from weight count");
  }
  if (config.sensitivity_redundancy && !sensitivity) {
    throw Error(ErrorKind::MissingSensitivity, "sensitivity redundancy requires a sensitivity map");
  }
  if (sensitivity && sensitivity->size() != n) {
    throw Error(ErrorKind::ShapeMismatch, "sensitivity map size differs from weight count");
  }
  if (!(mapping.small.alpha > 0.0) || !(mapping.large.alpha > 0.0) ||
      !std::isfinite(mapping.small.alpha) || !std::isfinite(mapping.large.alpha)) {
    throw Error(ErrorKind::InvalidMapping, "mapping scale factors must be positive and finite");
  }
  if (mapping.two_groups != config.adaptive_mapping) {
    throw Error(ErrorKind::InvalidMapping, "mapping was fitted under a different adaptive-mapping flag");
  }

  EncodedWeights enc;
  enc.name = weights.name;
  enc.shape = weights.shape;
  enc.config = config;
  enc.mapping = mapping;
  enc.target.assign(n, 0.0);
  enc.cells.assign(n, 0);
  enc.group.assign(n, Group::Small);
  enc.zero_mask = weights.zero_mask;
  if (config.sign_protection) enc.sign_bit.assign(n, 0);
  if (config.adaptive_mapping) enc.group_bit.assign(n, 0);
  if (config.sensitivity_redundancy) enc.sensitivity_bit.assign(n, 0);

  for (std::size_t i = 0; i < n; ++i) {
    if (weights.masked(i)) continue;
    const double v = weights.values[i];
    if (!std::isfinite(v)) throw Error(ErrorKind::InvalidMapping, "non-finite weight");
    const bool large = config.needs_threshold() && std::abs(v) > mapping.tau;
    enc.group[i] = large ? Group::Large : Group::Small;
    const GroupMapping& g = (config.adaptive_mapping && large) ? mapping.large : mapping.small;
    const double m = config.sign_protection ? std::abs(v) : v;
    enc.target[i] = std::clamp(g.forward(m), config.target.lo, config.target.hi);
    enc.cells[i] = (config.adaptive_redundancy && large) ? config.r_large : config.r_small;
    if (config.sign_protection) enc.sign_bit[i] = v < 0.0 ? 1 : 0;
    if (config.adaptive_mapping) enc.group_bit[i] = large ? 1 : 0;
  }

  if (config.sensitivity_redundancy) {
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < n; ++i) {
      if (!weights.masked(i)) order.push_back(i);
    }
    const auto top = std::min(
        order.size(),
        static_cast<std::size_t>(std::ceil(config.q_sens * static_cast<double>(order.size()))));
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return (*sensitivity)[a] > (*sensitivity)[b];
    });
    for (std::size_t k = 0; k < top; ++k) {
      const std::size_t i = order[k];
      enc.sensitivity_bit[i] = 1;
      enc.cells[i] = std::max(enc.cells[i], config.r_sens);
    }
  }
  return enc;
}

Readback store(const EncodedWeights& encoded, const ChannelModel& channel, Rng& rng) {
  const Interval out = channel.invertible_output_range();
  Readback rb;
  rb.level.assign(encoded.size(), 0.0);
  for (std::size_t i = 0; i < encoded.size(); ++i) {
    if (encoded.cells[i] == 0) continue;
    const double t = encoded.target[i];
    if (!out.contains(t)) {
      throw Error(ErrorKind::RangeError,
                  fmt::format("target level {} outside invertible range [{}, {}]", t, out.lo, out.hi));
    }
    rb.level[i] = channel.read_avg(channel.invert_mean(t), encoded.cells[i], rng);
  }
  return rb;
}

WeightTensor decode(const Readback& readback, const EncodedWeights& encoded) {
  const std::size_t n = encoded.size();
  const CodingConfig& cfg = encoded.config;
  if (readback.level.size() != n || encoded.cells.size() != n ||
      (cfg.sign_protection && encoded.sign_bit.size() != n) ||
      (cfg.adaptive_mapping && encoded.group_bit.size() != n) ||
      (!encoded.zero_mask.empty() && encoded.zero_mask.size() != n)) {
    throw Error(ErrorKind::ConfigMismatch, "readback does not match the encoded layout");
  }

  WeightTensor out;
  out.name = encoded.name;
  out.shape = encoded.shape;
  out.zero_mask = encoded.zero_mask;
  out.values.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!encoded.zero_mask.empty() && encoded.zero_mask[i] != 0) continue;
    const double t = std::clamp(readback.level[i], cfg.target.lo, cfg.target.hi);
    const bool large = cfg.adaptive_mapping && encoded.group_bit[i] != 0;
    const double m = (large ? encoded.mapping.large : encoded.mapping.small).inverse(t);
    out.values[i] = (cfg.sign_protection && encoded.sign_bit[i] != 0) ? -m : m;
  }
  return out;
}

CostReport storage_cost(const CodingConfig& config, const PartitionCounts& counts) {
  const std::uint64_t total = counts.n_small + counts.n_large;
  if (total == 0) throw Error(ErrorKind::EmptyPartition, "no stored weights");
  if (counts.n_sens_small > counts.n_small || counts.n_sens_large > counts.n_large) {
    throw Error(ErrorKind::InvalidCount, "sensitivity counts exceed group sizes");
  }
  const auto den = static_cast<std::int64_t>(total);
  const std::int64_t r_small = config.r_small;
  const std::int64_t r_large = config.adaptive_redundancy ? config.r_large : config.r_small;

  CostReport rep;
  rep.counts = counts;
  rep.r_avg = make_rational(r_small * static_cast<std::int64_t>(counts.n_small) +
                                r_large * static_cast<std::int64_t>(counts.n_large),
                            den);
  if (config.sensitivity_redundancy) {
    const std::int64_t extra_small = std::max<std::int64_t>(0, config.r_sens - r_small);
    const std::int64_t extra_large = std::max<std::int64_t>(0, config.r_sens - r_large);
    rep.sens_top_up = make_rational(extra_small * static_cast<std::int64_t>(counts.n_sens_small) +
                                        extra_large * static_cast<std::int64_t>(counts.n_sens_large),
                                    den);
  }
  rep.analog_cells = add(rep.r_avg, rep.sens_top_up);
  rep.side_bits_per_weight = config.side_bits();
  rep.side_cells_per_weight = rep.side_bits_per_weight / 2.0;
  rep.total_cells_per_weight = rep.analog_cells.value() + rep.side_cells_per_weight;
  return rep;
}

PartitionCounts partition_counts(const EncodedWeights& encoded) {
  PartitionCounts c;
  for (std::size_t i = 0; i < encoded.size(); ++i) {
    if (encoded.cells[i] == 0) continue;
    const bool large = encoded.group[i] == Group::Large;
    const bool sens = !encoded.sensitivity_bit.empty() && encoded.sensitivity_bit[i] != 0;
    (large ? c.n_large : c.n_small) += 1;
    if (sens) (large ? c.n_sens_large : c.n_sens_small) += 1;
  }
  return c;
}

}  // namespace pcmstore
