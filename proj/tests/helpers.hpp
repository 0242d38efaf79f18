// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "pcmstore/error.hpp"

namespace testutil {

inline double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Sample standard deviation.
inline double stddev(const std::vector<double>& v) {
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

// Coefficient of determination of the least-squares line y ~ a + b x.
inline double r_squared(const std::vector<double>& x, const std::vector<double>& y) {
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy * sxy / (sxx * syy);
}

// Kind of the pcmstore::Error thrown by fn; fails the test if none is thrown.
template <typename Fn>
pcmstore::ErrorKind kind_of(Fn&& fn) {
  try {
    fn();
  } catch (const pcmstore::Error& e) {
    return e.kind();
  }
  FAIL("expected a pcmstore::Error");
  return pcmstore::ErrorKind::IoError;
}

}  // namespace testutil
