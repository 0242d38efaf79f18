// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "oracles.hpp"
#include "pcmstore/endtoend.hpp"
#include "pcmstore/tinynn.hpp"

using namespace pcmstore;
using testutil::kind_of;

namespace {

Dataset noise_data(int features, int classes, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  d.x.resize(features, static_cast<Eigen::Index>(n));
  d.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int f = 0; f < features; ++f) d.x(f, static_cast<Eigen::Index>(i)) = rng.normal();
    d.y[i] = static_cast<int>(rng.index(static_cast<std::size_t>(classes)));
  }
  return d;
}

// Two well-separated Gaussian blobs, labels by blob.
Dataset separable(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  d.x.resize(2, static_cast<Eigen::Index>(n));
  d.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % 2);
    const double m = c ? 2.0 : -2.0;
    d.x(0, static_cast<Eigen::Index>(i)) = m + 0.3 * rng.normal();
    d.x(1, static_cast<Eigen::Index>(i)) = m + 0.3 * rng.normal();
    d.y[i] = c;
  }
  return d;
}

Model random_mlp(std::vector<int> sizes, std::uint64_t seed) {
  Rng rng(seed);
  Model m = Model::mlp(sizes, rng);
  // Non-zero biases so every term of the gradient is exercised.
  for (auto& layer : m.layers()) {
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = 0.1 * rng.normal();
  }
  return m;
}

}  // namespace

TEST_SUITE("tinynn") {

TEST_CASE("zero weights give uniform probabilities") {
  for (int k : {2, 3, 5}) {
    std::vector<int> sizes = {4, 6, k};
    Rng rng(1);
    Model m = Model::mlp(sizes, rng);
    std::vector<double> zeros(m.num_parameters(), 0.0);
    m.set_parameters(zeros);
    const Eigen::VectorXd p = forward(m, Eigen::VectorXd::Random(4));
    for (Eigen::Index i = 0; i < k; ++i) CHECK(p(i) == doctest::Approx(1.0 / k));
  }
}

TEST_CASE("probabilities are a distribution") {
  const Model m = random_mlp({3, 8, 8, 4}, 2);
  const Dataset d = noise_data(3, 4, 200, 3);
  for (double t : {1.0, 1.5, 4.0}) {
    const Eigen::MatrixXd p = m.probabilities(d.x, t);
    for (Eigen::Index i = 0; i < p.cols(); ++i) {
      CHECK(std::abs(p.col(i).sum() - 1.0) < 1e-9);
      CHECK(p.col(i).minCoeff() >= 0.0);
    }
  }
}

TEST_CASE("temperature one is the plain softmax") {
  Eigen::MatrixXd z(3, 2);
  z << 1.0, -2.0, 0.5, 0.0, -1.0, 3.0;
  const Eigen::MatrixXd p = softmax(z, 1.0);
  for (Eigen::Index c = 0; c < 2; ++c) {
    const double denom = std::exp(z(0, c)) + std::exp(z(1, c)) + std::exp(z(2, c));
    for (Eigen::Index r = 0; r < 3; ++r) CHECK(p(r, c) == doctest::Approx(std::exp(z(r, c)) / denom));
  }
  const Eigen::MatrixXd pt = softmax(z, 2.0);
  CHECK(pt(0, 0) == doctest::Approx(softmax(z / 2.0, 1.0)(0, 0)));
}

TEST_CASE("hand-set logistic model") {
  Model m = Model::logistic_regression();
  CHECK(m.num_parameters() == 3);
  m.set_parameters(std::vector<double>{1.0, 0.0, 0.0});
  Eigen::VectorXd x(2);
  x << 0.0, 7.0;
  const Eigen::VectorXd p = forward(m, x);
  CHECK(p(0) == doctest::Approx(0.5));
  CHECK(p(1) == doctest::Approx(0.5));
  x << 2.0, 0.0;
  CHECK(forward(m, x)(1) == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))));
}

TEST_CASE("forward checks the input size") {
  const Model m = random_mlp({2, 4, 2}, 1);
  CHECK(kind_of([&] { forward(m, Eigen::VectorXd::Zero(3)); }) == ErrorKind::ShapeMismatch);
}

TEST_CASE("analytic gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Model m = random_mlp({3, 5, 4, 3}, seed);
    const Model teacher = random_mlp({3, 6, 3}, seed + 50);
    const Dataset batch = noise_data(3, 3, 16, seed + 100);
    Rng rng(seed + 200);
    const auto noise = sample_weight_noise(m, 0.05, rng);
    const std::vector<double> none(m.num_parameters(), 0.0);
    CHECK(oracle::max_gradient_error(m, batch, CrossEntropyLoss{}, none) < 1e-4);
    CHECK(oracle::max_gradient_error(m, batch, RobustLoss{0.5, 0.05}, noise) < 1e-4);
    CHECK(oracle::max_gradient_error(m, batch, DistillLoss{&teacher, 1.5, 0.5, 0.05}, noise) < 1e-4);
    CHECK(oracle::max_gradient_error(m, batch, DistillLoss{&teacher, 3.0, 1.0, 0.0}, none) < 1e-4);
  }
  // Logistic head.
  Model lr = Model::logistic_regression();
  lr.set_parameters(std::vector<double>{0.3, -0.7, 0.2});
  const Dataset d = noise_data(2, 2, 32, 7);
  CHECK(oracle::max_gradient_error(lr, d, CrossEntropyLoss{}, {0.0, 0.0, 0.0}) < 1e-4);
}

TEST_CASE("robust loss reduces to cross-entropy") {
  const Model m = random_mlp({2, 6, 2}, 4);
  const Dataset d = noise_data(2, 2, 50, 5);
  Rng rng(6);
  const auto noise = sample_weight_noise(m, 0.1, rng);
  const std::vector<double> none(m.num_parameters(), 0.0);
  const LossGrad ce = loss_and_grad(m, d, CrossEntropyLoss{}, none);
  const LossGrad lambda0 = loss_and_grad(m, d, RobustLoss{0.0, 0.1}, noise);
  const LossGrad sigma0 = loss_and_grad(m, d, RobustLoss{0.5, 0.0}, none);
  CHECK(std::abs(lambda0.loss - ce.loss) < 1e-12);
  CHECK(std::abs(sigma0.loss - ce.loss) < 1e-12);
  for (std::size_t j = 0; j < ce.grad.size(); ++j) {
    CHECK(std::abs(lambda0.grad[j] - ce.grad[j]) < 1e-12);
    CHECK(std::abs(sigma0.grad[j] - ce.grad[j]) < 1e-12);
  }
  CHECK(std::abs(cross_entropy(m, d) - ce.loss) < 1e-12);
}

TEST_CASE("distillation term vanishes when student equals teacher") {
  const Model m = random_mlp({2, 6, 3}, 8);
  const Dataset d = noise_data(2, 3, 40, 9);
  const std::vector<double> none(m.num_parameters(), 0.0);
  const LossGrad kd = loss_and_grad(m, d, DistillLoss{&m, 1.5, 1.0, 0.0}, none);
  CHECK(std::abs(kd.loss) < 1e-12);
  for (double g : kd.grad) CHECK(std::abs(g) < 1e-12);
  // With lambda = 0 it is plain cross-entropy on the student.
  const LossGrad ce = loss_and_grad(m, d, CrossEntropyLoss{}, none);
  const LossGrad kd0 = loss_and_grad(m, d, DistillLoss{&m, 1.0, 0.0, 0.0}, none);
  CHECK(std::abs(kd0.loss - ce.loss) < 1e-12);
}

TEST_CASE("distillation needs matching shapes") {
  const Model teacher = random_mlp({2, 4, 3}, 1);
  const Dataset d = noise_data(2, 2, 10, 2);
  TrainConfig cfg;
  cfg.epochs = 1;
  const std::vector<int> sizes = {2, 4, 2};
  CHECK(kind_of([&] { distill(teacher, sizes, d, cfg); }) == ErrorKind::ShapeMismatch);
}

TEST_CASE("naive training lowers the loss on separable data") {
  const Dataset d = separable(400, 1);
  const Model init = random_mlp({2, 8, 2}, 2);
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.learning_rate = 0.01;
  const TrainResult r = train_with(init, d, cfg, CrossEntropyLoss{});
  CHECK(cross_entropy(r.model, d) < cross_entropy(init, d));
  CHECK(evaluate(r.model, d) > 0.99);
}

TEST_CASE("easy mixture logistic regression reaches the Bayes rate") {
  // The optimal rule's accuracy is Phi(|mu1 - mu2| / 2) under identity covariance.
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const MixtureTask task = generate_task(TaskKind::Easy, 5000, seed);
    const double bayes = oracle::phi((task.mu1 - task.mu2).norm() / 2.0);
    const Model m = train(Model::logistic_regression(), task.train, classifier_train_config(seed));
    // Held-out set has 500 points; allow three binomial standard errors.
    const double se = std::sqrt(bayes * (1.0 - bayes) / 500.0);
    CHECK(evaluate(m, task.held_out) > bayes - 3.0 * se - 0.01);
  }
}

TEST_CASE("training is deterministic") {
  const Dataset d = separable(300, 3);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.lambda = 0.5;
  cfg.noise_std = 0.05;
  const Model init = random_mlp({2, 8, 2}, 4);
  const auto a = train(init, d, cfg).parameters();
  const auto b = train(init, d, cfg).parameters();
  CHECK(a == b);
}

TEST_CASE("prune keeps exactly the largest weights") {
  Rng rng(5);
  std::vector<int> sizes = {10, 10};
  Model m = Model::mlp(sizes, rng);
  REQUIRE(m.num_weights() == 100);
  std::vector<double> p = m.parameters();
  std::vector<double> mags;
  for (std::size_t i = 0; i < 100; ++i) mags.push_back(std::abs(p[i]));
  std::vector<double> sorted = mags;
  std::sort(sorted.begin(), sorted.end());
  const Model pr = prune(m, 0.9);
  const auto q = pr.parameters();
  const auto mask = pr.parameter_mask();
  int zeros = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    if (mask[i]) {
      ++zeros;
      CHECK(q[i] == 0.0);
      CHECK(mags[i] <= sorted[89]);
    } else {
      CHECK(mags[i] >= sorted[90]);
    }
  }
  CHECK(zeros == 90);
  for (std::size_t i = 100; i < q.size(); ++i) CHECK(mask[i] == 0);
}

TEST_CASE("prune breaks ties by index order") {
  Model m({Layer{Eigen::MatrixXd::Constant(2, 5, 0.5), Eigen::VectorXd::Zero(2), Activation::Identity, {}}},
          Head::Softmax);
  const Model pr = prune(m, 0.3);
  const auto mask = pr.parameter_mask();
  // Row-major layout: the first three entries are masked.
  CHECK(std::vector<std::uint8_t>(mask.begin(), mask.begin() + 10) ==
        std::vector<std::uint8_t>{1, 1, 1, 0, 0, 0, 0, 0, 0, 0});
}

TEST_CASE("prune extremes") {
  const Model m = random_mlp({2, 8, 2}, 6);
  const Model all = prune(m, 1.0);
  for (const auto& layer : all.layers()) CHECK(layer.weight.cwiseAbs().maxCoeff() == 0.0);
  CHECK(prune(m, 0.0).parameters() == m.parameters());
  CHECK(kind_of([&] { prune(m, 1.5); }) == ErrorKind::InvalidConfig);
}

TEST_CASE("the mask persists through training") {
  const Dataset d = separable(300, 7);
  const Model pr = prune(random_mlp({2, 16, 2}, 8), 0.7);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.lambda = 0.5;
  cfg.noise_std = 0.1;
  const Model t = train(pr, d, cfg);
  const auto mask = pr.parameter_mask();
  const auto p = t.parameters();
  CHECK(t.parameter_mask() == mask);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (mask[i]) CHECK(p[i] == 0.0);
  }
  TrainConfig dc = cfg;
  const std::vector<int> sizes = {2, 4, 2};
  const Model s = distill(t, sizes, d, dc);
  CHECK(s.num_parameters() == 2 * 4 + 4 + 4 * 2 + 2);
}

TEST_CASE("weight noise skips pruned parameters") {
  const Model pr = prune(random_mlp({2, 16, 2}, 9), 0.5);
  Rng rng(1);
  const auto noise = sample_weight_noise(pr, 1.0, rng);
  const auto mask = pr.parameter_mask();
  for (std::size_t i = 0; i < noise.size(); ++i) {
    if (mask[i]) CHECK(noise[i] == 0.0);
  }
}

TEST_CASE("evaluate") {
  Model m = Model::logistic_regression();
  m.set_parameters(std::vector<double>{1.0, 1.0, 0.0});
  const Dataset d = separable(100, 10);
  CHECK(evaluate(m, d) == 1.0);
  CHECK(kind_of([&] { evaluate(m, Dataset{Eigen::MatrixXd(2, 0), {}}); }) == ErrorKind::EmptyDataset);

  // Random labels: accuracy of any fixed model is Binomial(n, 1/k) / n.
  const int k = 4;
  const std::size_t n = 4000;
  const Dataset r = noise_data(3, k, n, 11);
  const double acc = evaluate(random_mlp({3, 8, k}, 12), r);
  const double sd = std::sqrt(0.25 * 0.75 / n);
  CHECK(std::abs(acc - 0.25) < 3.0 * sd);
}

TEST_CASE("train config validation") {
  TrainConfig c;
  c.lambda = 1.5;
  CHECK(kind_of([&] { c.validate(); }) == ErrorKind::InvalidConfig);
  c = {};
  c.temperature = 0.5;
  CHECK(kind_of([&] { c.validate(); }) == ErrorKind::InvalidConfig);
  c = {};
  CHECK(kind_of([&] { train(random_mlp({2, 2}, 1), Dataset{Eigen::MatrixXd(2, 0), {}}, c); }) ==
        ErrorKind::EmptyDataset);
}

}  // TEST_SUITE
