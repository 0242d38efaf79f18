// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "pcmstore/tinynn.hpp"

namespace pcmstore {

/// Per-parameter mean squared log-likelihood gradient (the diagonal of the
/// empirical Fisher), in the model's flat parameter order.
struct SensitivityMap {
  std::vector<double> s;
  std::size_t samples = 0;
};

/// s_j = (1/N) sum_i (d log p_w(y_i | x_i) / d w_j)^2, one pass over the data.
SensitivityMap compute_sensitivity(const Model& model, const Dataset& data);

/// sum_j s_j * delta_j^2.
double kl_quadratic(const SensitivityMap& sens, std::span<const double> delta);

/// Mean over inputs of KL(p_a(.|x) || p_b(.|x)).
double empirical_kl(const Model& a, const Model& b, const Eigen::MatrixXd& inputs);

}  // namespace pcmstore
