// SPDX-License-Identifier: Apache-2.0
#include "pcmstore/sensitivity.hpp"

#include <algorithm>
#include <cmath>

#include "pcmstore/error.hpp"

namespace pcmstore {

SensitivityMap compute_sensitivity(const Model& model, const Dataset& data) {
  if (data.size() == 0) throw Error(ErrorKind::EmptyDataset, "sensitivity needs at least one sample");
  SensitivityMap map;
  map.s.assign(model.num_parameters(), 0.0);
  map.samples = data.size();
  // The single-sample cross-entropy gradient is -d log p(y|x)/dw; its square
  // is what we accumulate.
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t idx[] = {i};
    const LossGrad lg = loss_and_grad(model, data.subset(idx), CrossEntropyLoss{});
    for (std::size_t j = 0; j < map.s.size(); ++j) map.s[j] += lg.grad[j] * lg.grad[j];
  }
  for (double& v : map.s) v /= static_cast<double>(data.size());
  return map;
}

double kl_quadratic(const SensitivityMap& sens, std::span<const double> delta) {
  if (delta.size() != sens.s.size()) {
    throw Error(ErrorKind::ShapeMismatch, "perturbation and sensitivity sizes differ");
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < delta.size(); ++j) sum += sens.s[j] * delta[j] * delta[j];
  return sum;
}

double empirical_kl(const Model& a, const Model& b, const Eigen::MatrixXd& inputs) {
  if (inputs.cols() == 0) throw Error(ErrorKind::EmptyDataset, "no inputs");
  if (a.num_classes() != b.num_classes() || a.input_dim() != b.input_dim()) {
    throw Error(ErrorKind::ShapeMismatch, "models disagree on input or output dimension");
  }
  const Eigen::MatrixXd p = a.probabilities(inputs);
  const Eigen::MatrixXd q = b.probabilities(inputs);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < p.cols(); ++i) {
    for (Eigen::Index k = 0; k < p.rows(); ++k) {
      const double pk = p(k, i);
      if (pk <= 0.0) continue;
      sum += pk * (std::log(std::max(pk, 1e-12)) - std::log(std::max(q(k, i), 1e-12)));
    }
  }
  return sum / static_cast<double>(p.cols());
}

}  // namespace pcmstore
