// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "helpers.hpp"
#include "pcmstore/harness.hpp"
#include "pcmstore/sensitivity.hpp"

using namespace pcmstore;
using testutil::kind_of;

namespace {

Dataset logistic_data(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  d.x.resize(2, static_cast<Eigen::Index>(n));
  d.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    d.x(0, static_cast<Eigen::Index>(i)) = rng.normal();
    d.x(1, static_cast<Eigen::Index>(i)) = rng.normal();
    d.y[i] = rng.uniform() < 0.5 ? 1 : 0;
  }
  return d;
}

Model bernoulli_head(double p1) {
  // Logit of class 1 equals its bias; the input weight is zero.
  Model m = Model::logistic_regression(1);
  m.set_parameters(std::vector<double>{0.0, std::log(p1 / (1.0 - p1))});
  return m;
}

}  // namespace

TEST_SUITE("sensitivity") {

TEST_CASE("logistic regression matches the analytic score") {
  Model m = Model::logistic_regression();
  const std::vector<double> w = {0.7, -1.2, 0.3};
  m.set_parameters(w);
  const Dataset d = logistic_data(300, 1);
  const SensitivityMap s = compute_sensitivity(m, d);
  REQUIRE(s.s.size() == 3);
  CHECK(s.samples == 300);
  std::array<double, 3> ref{};
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double x0 = d.x(0, static_cast<Eigen::Index>(i)), x1 = d.x(1, static_cast<Eigen::Index>(i));
    const double p = 1.0 / (1.0 + std::exp(-(w[0] * x0 + w[1] * x1 + w[2])));
    const double r = (d.y[i] == 1 ? 1.0 : 0.0) - p;
    ref[0] += r * r * x0 * x0;
    ref[1] += r * r * x1 * x1;
    ref[2] += r * r;
  }
  for (std::size_t j = 0; j < 3; ++j) CHECK(s.s[j] == doctest::Approx(ref[j] / 300.0).epsilon(1e-10));
}

TEST_CASE("a weight on an always-zero feature has zero sensitivity") {
  Dataset d = logistic_data(100, 2);
  d.x.row(1).setZero();
  Model m = Model::logistic_regression();
  m.set_parameters(std::vector<double>{0.5, 0.5, -0.1});
  const SensitivityMap s = compute_sensitivity(m, d);
  CHECK(s.s[1] == 0.0);
  CHECK(s.s[0] > 0.0);
}

TEST_CASE("sensitivities are non-negative and deterministic") {
  Rng rng(3);
  const std::vector<int> sizes = {2, 8, 8, 3};
  const Model m = Model::mlp(sizes, rng);
  Dataset d = logistic_data(50, 4);
  for (auto& y : d.y) y = static_cast<int>(rng.index(3));
  const SensitivityMap a = compute_sensitivity(m, d);
  const SensitivityMap b = compute_sensitivity(m, d);
  CHECK(a.s == b.s);
  for (double v : a.s) CHECK(v >= 0.0);
  CHECK(kind_of([&] { compute_sensitivity(m, Dataset{Eigen::MatrixXd(2, 0), {}}); }) == ErrorKind::EmptyDataset);
}

TEST_CASE("quadratic estimate") {
  SensitivityMap s{{4.0, 1.0, 2.0}, 1};
  CHECK(kl_quadratic(s, std::vector<double>{0.0, 0.0, 0.0}) == 0.0);
  CHECK(kl_quadratic(s, std::vector<double>{0.01, 0.0, 0.0}) == doctest::Approx(4e-4));
  CHECK(kl_quadratic(s, std::vector<double>{0.1, 0.2, 0.3}) == doctest::Approx(0.04 + 0.04 + 0.18));
  CHECK(kind_of([&] { kl_quadratic(s, std::vector<double>{0.0}); }) == ErrorKind::ShapeMismatch);
}

TEST_CASE("quadratic estimate ignores coordinate order") {
  Rng rng(5);
  std::vector<double> s(20), delta(20);
  for (std::size_t j = 0; j < 20; ++j) {
    s[j] = rng.uniform();
    delta[j] = rng.normal();
  }
  std::vector<std::size_t> perm(20);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  std::vector<double> s2(20), d2(20);
  for (std::size_t j = 0; j < 20; ++j) {
    s2[j] = s[perm[j]];
    d2[j] = delta[perm[j]];
  }
  CHECK(kl_quadratic({s, 1}, delta) == doctest::Approx(kl_quadratic({s2, 1}, d2)).epsilon(1e-14));
}

TEST_CASE("empirical KL of two Bernoulli heads") {
  const Eigen::MatrixXd x = Eigen::MatrixXd::Zero(1, 1);
  const double expected = 0.8 * std::log(0.8 / 0.6) + 0.2 * std::log(0.2 / 0.4);
  CHECK(empirical_kl(bernoulli_head(0.8), bernoulli_head(0.6), x) == doctest::Approx(expected));
  CHECK(expected == doctest::Approx(0.0915).epsilon(1e-3));
  CHECK(empirical_kl(bernoulli_head(0.8), bernoulli_head(0.8), x) == 0.0);
}

TEST_CASE("empirical KL errors and Gibbs inequality") {
  Rng rng(6);
  const std::vector<int> a_sizes = {2, 6, 3}, b_sizes = {2, 5, 3}, c_sizes = {2, 5, 2};
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(2, 40);
  for (int k = 0; k < 20; ++k) {
    const Model a = Model::mlp(a_sizes, rng), b = Model::mlp(b_sizes, rng);
    CHECK(empirical_kl(a, b, x) >= 0.0);
  }
  const Model a = Model::mlp(a_sizes, rng), c = Model::mlp(c_sizes, rng);
  CHECK(kind_of([&] { empirical_kl(a, c, x); }) == ErrorKind::ShapeMismatch);
  CHECK(kind_of([&] { empirical_kl(a, a, Eigen::MatrixXd(2, 0)); }) == ErrorKind::EmptyDataset);
}

TEST_CASE("per-coordinate KL curvature is proportional to the sensitivity") {
  const DeskTask task = generate_desk_task({}, 1);
  Rng rng(101);
  const std::vector<int> sizes = {2, 32, 32, 2};
  TrainConfig cfg;
  cfg.epochs = 60;
  const Model m = train(Model::mlp(sizes, rng), task.train, cfg);
  const SensitivityMap s = compute_sensitivity(m, task.train);
  const auto base = m.parameters();
  std::vector<double> sj, curvature;
  const double step = 1e-3;
  for (int k = 0; k < 50; ++k) {
    const std::size_t j = rng.index(base.size());
    auto moved = base;
    moved[j] += step;
    Model p = m;
    p.set_parameters(moved);
    sj.push_back(s.s[j]);
    curvature.push_back(empirical_kl(m, p, task.train.x) / (step * step));
  }
  CHECK(testutil::r_squared(sj, curvature) > 0.9);
}

}  // TEST_SUITE
