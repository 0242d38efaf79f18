// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

namespace pcmstore {

/// Seeded generator owned by one task. Never shared between threads.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  double normal();
  double uniform();  // [0, 1)
  double uniform(double lo, double hi);
  std::uint64_t next() { return engine_(); }
  std::size_t index(std::size_t n);  // uniform in [0, n)

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// splitmix64 finalizer; used to derive independent child seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace pcmstore
