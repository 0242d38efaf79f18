// SPDX-License-Identifier: Apache-2.0
#include "pcmstore/endtoend.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/core.h>

#include "pcmstore/error.hpp"

namespace pcmstore {

namespace {

// Parameter slots of the autoencoder.
constexpr std::size_t kEnc1 = 0;   // 3 weights
constexpr std::size_t kEncB1 = 3;
constexpr std::size_t kEncA2 = 4;
constexpr std::size_t kEncC2 = 5;
constexpr std::size_t kDecA3 = 6;
constexpr std::size_t kDecC3 = 7;
constexpr std::size_t kDec4 = 8;   // 3 weights
constexpr std::size_t kDecB4 = 11; // 3 biases

double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct PairRef {
  std::size_t classifier;
  std::size_t sample;
};

}  // namespace

MixtureTask generate_task(TaskKind kind, std::size_t n_points, std::uint64_t seed) {
  if (n_points < 2) throw Error(ErrorKind::InvalidCount, fmt::format("n_points = {}", n_points));
  Rng rng(seed);
  MixtureTask task;
  task.kind = kind;
  task.seed = seed;
  for (int i = 0; i < 2; ++i) {
    if (kind == TaskKind::Easy) {
      task.mu1(i) = rng.uniform(-1.0, 0.0);
      task.mu2(i) = rng.uniform(0.0, 1.0);
    } else {
      task.mu1(i) = rng.uniform(-1.0, 1.0);
      task.mu2(i) = rng.uniform(-1.0, 1.0);
    }
  }

  const std::size_t n1 = n_points / 2;
  Dataset all;
  all.x.resize(2, static_cast<Eigen::Index>(n_points));
  all.y.resize(n_points);
  for (std::size_t k = 0; k < n_points; ++k) {
    const Eigen::Vector2d& mu = k < n1 ? task.mu1 : task.mu2;
    const double a = rng.normal();
    const double b = rng.normal();
    all.x(0, static_cast<Eigen::Index>(k)) = mu(0) + a;
    all.x(1, static_cast<Eigen::Index>(k)) = mu(1) + b;
    all.y[k] = k < n1 ? 0 : 1;
  }

  std::vector<std::size_t> order(n_points);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  const std::size_t n_held = std::max<std::size_t>(1, n_points / 10);
  const auto split = static_cast<std::ptrdiff_t>(n_points - n_held);
  task.train = all.subset(std::vector<std::size_t>(order.begin(), order.begin() + split));
  task.held_out = all.subset(std::vector<std::size_t>(order.begin() + split, order.end()));
  return task;
}

double bayes_accuracy(const MixtureTask& task) {
  const double d = (task.mu2 - task.mu1).norm();
  return 0.5 * std::erfc(-d / (2.0 * std::sqrt(2.0)));
}

TrainConfig classifier_train_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.optimizer = Optimizer::SgdMomentum;
  cfg.momentum = 0.0;
  cfg.learning_rate = 0.1;
  cfg.weight_decay = 5e-4;
  cfg.batch_size = 128;
  cfg.epochs = 100;
  cfg.patience = 10;
  cfg.validation_fraction = 0.1;
  cfg.seed = seed;
  return cfg;
}

Model classifier_model(const ClassifierWeights& w) {
  Model m = Model::logistic_regression(2);
  m.set_parameters(w);
  return m;
}

ClassifierWeights classifier_weights(const Model& model) {
  const auto p = model.parameters();
  if (p.size() != 3) throw Error(ErrorKind::ShapeMismatch, "not a 3-parameter logistic regression");
  return {p[0], p[1], p[2]};
}

WeightSet train_classifier_set(const std::vector<MixtureTask>& tasks) {
  if (tasks.empty()) throw Error(ErrorKind::EmptyTaskList, "no tasks");
  WeightSet set;
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    const Model m = train(Model::logistic_regression(2), tasks[k].train,
                          classifier_train_config(mix_seed(tasks[k].seed, 1)));
    set.weights.push_back(classifier_weights(m));
    set.task_ids.push_back(k);
    set.held_out_accuracy.push_back(evaluate(m, tasks[k].held_out));
  }
  return set;
}

AutoEncoder::AutoEncoder(const WeightSet& set, NoiseMode noise, std::uint64_t seed)
    : noise_(std::move(noise)) {
  if (set.weights.empty()) throw Error(ErrorKind::EmptyWeightSet, "no classifier weights");
  if (!(noise_.target.lo < noise_.target.hi)) {
    throw Error(ErrorKind::InvalidConfig, "latent target interval must satisfy lo < hi");
  }
  if (noise_.kind == LatentNoise::Channel) {
    if (!noise_.channel) throw Error(ErrorKind::InvalidConfig, "channel noise needs a channel model");
    if (noise_.cells < 1) throw Error(ErrorKind::InvalidRedundancy, "cells must be >= 1");
    const Interval out = noise_.channel->invertible_output_range();
    if (noise_.target.lo < out.lo || noise_.target.hi > out.hi) {
      throw Error(ErrorKind::InvalidConfig, "latent target interval outside invertible range");
    }
  }
  if (noise_.kind == LatentNoise::Gaussian && !(noise_.gaussian_std >= 0.0)) {
    throw Error(ErrorKind::InvalidConfig, "gaussian_std must be >= 0");
  }

  const auto n = static_cast<double>(set.weights.size());
  for (std::size_t k = 0; k < 3; ++k) {
    double sum = 0.0, ss = 0.0;
    for (const auto& w : set.weights) sum += w[k];
    mean_[k] = sum / n;
    for (const auto& w : set.weights) ss += (w[k] - mean_[k]) * (w[k] - mean_[k]);
    const double sd = std::sqrt(ss / n);
    scale_[k] = sd > 1e-12 ? sd : 1.0;
  }

  // Positive biases keep both scalar relus active at the start.
  Rng rng(seed);
  for (std::size_t k = 0; k < 3; ++k) params_[kEnc1 + k] = rng.uniform(-0.5, 0.5);
  params_[kEncB1] = 1.0;
  params_[kEncA2] = 1.0;
  params_[kEncC2] = 0.0;
  params_[kDecA3] = 1.0;
  params_[kDecC3] = 0.5;
  for (std::size_t k = 0; k < 3; ++k) params_[kDec4 + k] = rng.uniform(-0.5, 0.5);
  for (std::size_t k = 0; k < 3; ++k) params_[kDecB4 + k] = 0.0;
}

void AutoEncoder::set_latent_range(double lo, double hi) {
  if (!(hi - lo > 1e-9)) {
    const double mid = 0.5 * (lo + hi);
    lo = mid - 0.5;
    hi = mid + 0.5;
  }
  z_lo_ = lo;
  z_hi_ = hi;
}

double AutoEncoder::encode(const ClassifierWeights& w) const {
  double u = params_[kEncB1];
  for (std::size_t k = 0; k < 3; ++k) u += params_[kEnc1 + k] * (w[k] - mean_[k]) / scale_[k];
  return params_[kEncA2] * std::max(u, 0.0) + params_[kEncC2];
}

ClassifierWeights AutoEncoder::decode(double z) const {
  const double g = std::max(params_[kDecA3] * z + params_[kDecC3], 0.0);
  ClassifierWeights out;
  for (std::size_t k = 0; k < 3; ++k) {
    out[k] = mean_[k] + scale_[k] * (params_[kDec4 + k] * g + params_[kDecB4 + k]);
  }
  return out;
}

double AutoEncoder::write_level(double z) const {
  const double alpha = noise_.target.width() / (z_hi_ - z_lo_);
  return std::clamp(noise_.target.lo + alpha * (z - z_lo_), noise_.target.lo, noise_.target.hi);
}

double AutoEncoder::transmit(double z, Rng& rng) const {
  const double t = write_level(z);
  double read = t;
  switch (noise_.kind) {
    case LatentNoise::None: break;
    case LatentNoise::Gaussian: read = t + noise_.gaussian_std * rng.normal(); break;
    case LatentNoise::Channel:
      read = noise_.channel->read_avg(noise_.channel->invert_mean(t), noise_.cells, rng);
      break;
  }
  const double alpha = noise_.target.width() / (z_hi_ - z_lo_);
  return z_lo_ + (read - noise_.target.lo) / alpha;
}

ClassifierWeights AutoEncoder::reconstruct(const ClassifierWeights& w, Rng& rng) const {
  return decode(transmit(encode(w), rng));
}

double AutoEncoder::pair_loss(const ClassifierWeights& w, const Eigen::Vector2d& x, double xi,
                              std::array<double, kNumParams>* grad) const {
  const auto& p = params_;
  std::array<double, 3> s{};
  double u = p[kEncB1];
  for (std::size_t k = 0; k < 3; ++k) {
    s[k] = (w[k] - mean_[k]) / scale_[k];
    u += p[kEnc1 + k] * s[k];
  }
  const double h = std::max(u, 0.0);
  const double z = p[kEncA2] * h + p[kEncC2];

  const double alpha = noise_.target.width() / (z_hi_ - z_lo_);
  const double t_raw = noise_.target.lo + alpha * (z - z_lo_);
  const bool clipped = t_raw < noise_.target.lo || t_raw > noise_.target.hi;
  const double t = std::clamp(t_raw, noise_.target.lo, noise_.target.hi);

  // Reparameterised read: t + sd(t) * xi, sd(t) = sigma(h(t)) / sqrt(r) for the channel.
  double read = t, dread_dt = 1.0;
  if (noise_.kind == LatentNoise::Gaussian) {
    read = t + noise_.gaussian_std * xi;
  } else if (noise_.kind == LatentNoise::Channel) {
    const ChannelModel& ch = *noise_.channel;
    const double level = ch.invert_mean(t);
    const double root_r = std::sqrt(static_cast<double>(noise_.cells));
    read = t + ch.stddev(level) / root_r * xi;
    dread_dt = 1.0 + xi / root_r * ch.stddev_slope(level) / ch.mean_slope(level);
  }
  const double z_read = z_lo_ + (read - noise_.target.lo) / alpha;

  const double v = p[kDecA3] * z_read + p[kDecC3];
  const double g = std::max(v, 0.0);
  ClassifierWeights w_hat;
  for (std::size_t k = 0; k < 3; ++k) {
    w_hat[k] = mean_[k] + scale_[k] * (p[kDec4 + k] * g + p[kDecB4 + k]);
  }

  const std::array<double, 3> xt{x(0), x(1), 1.0};
  double zp = 0.0, zq = 0.0;
  for (std::size_t k = 0; k < 3; ++k) {
    zp += w[k] * xt[k];
    zq += w_hat[k] * xt[k];
  }
  const double pp = sigmoid(zp);
  const double qq = sigmoid(zq);
  // log sigma(z) = -softplus(-z), log(1 - sigma(z)) = -softplus(z)
  const double kl = pp * (softplus(-zq) - softplus(-zp)) + (1.0 - pp) * (softplus(zq) - softplus(zp));
  double rec = 0.0;
  for (std::size_t k = 0; k < 3; ++k) rec += (w_hat[k] - w[k]) * (w_hat[k] - w[k]);

  if (grad != nullptr) {
    auto& gr = *grad;
    double dg = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      const double dw_hat = (qq - pp) * xt[k] + 2.0 * (w_hat[k] - w[k]);
      const double d_out = dw_hat * scale_[k];
      gr[kDec4 + k] += d_out * g;
      gr[kDecB4 + k] += d_out;
      dg += d_out * p[kDec4 + k];
    }
    const double dv = v > 0.0 ? dg : 0.0;
    gr[kDecA3] += dv * z_read;
    gr[kDecC3] += dv;
    const double dz_read = dv * p[kDecA3];
    const double dt = clipped ? 0.0 : dz_read / alpha * dread_dt;
    const double dz = dt * alpha;
    gr[kEncA2] += dz * h;
    gr[kEncC2] += dz;
    const double du = u > 0.0 ? dz * p[kEncA2] : 0.0;
    for (std::size_t k = 0; k < 3; ++k) gr[kEnc1 + k] += du * s[k];
    gr[kEncB1] += du;
  }
  return kl + rec;
}

namespace {

void refresh_latent_range(AutoEncoder& ae, const WeightSet& set) {
  double lo = ae.encode(set.weights.front()), hi = lo;
  for (const auto& w : set.weights) {
    const double z = ae.encode(w);
    lo = std::min(lo, z);
    hi = std::max(hi, z);
  }
  ae.set_latent_range(lo, hi);
}

}  // namespace

AutoEncoderTraining train_autoencoder(const WeightSet& set, const NoiseMode& noise,
                                      const std::vector<MixtureTask>& tasks,
                                      const AutoEncoderConfig& config) {
  if (set.weights.empty()) throw Error(ErrorKind::EmptyWeightSet, "no classifier weights");
  if (config.epochs < 1 || config.batch_size < 1 || !(config.learning_rate > 0.0)) {
    throw Error(ErrorKind::InvalidConfig, "autoencoder epochs, batch size and lr must be positive");
  }
  for (std::size_t id : set.task_ids) {
    if (id >= tasks.size()) throw Error(ErrorKind::ShapeMismatch, "weight set refers to a missing task");
  }

  AutoEncoderTraining out{AutoEncoder(set, noise, mix_seed(config.seed, 7)), {}, 0.0, 0};
  AutoEncoder& ae = out.ae;
  refresh_latent_range(ae, set);

  std::vector<PairRef> pairs, val_pairs;
  for (std::size_t j = 0; j < set.size(); ++j) {
    const MixtureTask& task = tasks[set.task_ids[j]];
    for (std::size_t i = 0; i < task.train.size(); ++i) pairs.push_back({j, i});
    const std::size_t nv = std::min<std::size_t>(task.held_out.size(),
                                                 static_cast<std::size_t>(std::max(config.validation_points, 0)));
    for (std::size_t i = 0; i < nv; ++i) val_pairs.push_back({j, i});
  }
  if (pairs.empty()) throw Error(ErrorKind::EmptyDataset, "tasks carry no training points");

  auto point = [&](const PairRef& pr, bool held) {
    const MixtureTask& task = tasks[set.task_ids[pr.classifier]];
    const Dataset& d = held ? task.held_out : task.train;
    return Eigen::Vector2d(d.x(0, static_cast<Eigen::Index>(pr.sample)),
                           d.x(1, static_cast<Eigen::Index>(pr.sample)));
  };
  auto objective = [&](const std::vector<PairRef>& ps, bool held, std::uint64_t noise_seed) {
    Rng nr(noise_seed);
    double sum = 0.0;
    for (const auto& pr : ps) sum += ae.pair_loss(set.weights[pr.classifier], point(pr, held), nr.normal(), nullptr);
    return sum / static_cast<double>(ps.size());
  };

  out.initial_objective = objective(pairs, false, mix_seed(config.seed, 11));
  const bool validate = !val_pairs.empty();
  double best_val = validate ? objective(val_pairs, true, mix_seed(config.seed, 13)) : 0.0;
  AutoEncoder best = ae;

  Rng rng(mix_seed(config.seed, 3));
  std::array<double, AutoEncoder::kNumParams> m1{}, m2{};
  const double b1 = 0.9, b2 = 0.999;
  long step = 0;
  const auto batch = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(pairs.begin(), pairs.end(), rng.engine());
    double epoch_sum = 0.0;
    for (std::size_t start = 0; start < pairs.size(); start += batch) {
      const std::size_t len = std::min(batch, pairs.size() - start);
      std::array<double, AutoEncoder::kNumParams> grad{};
      for (std::size_t k = start; k < start + len; ++k) {
        epoch_sum += ae.pair_loss(set.weights[pairs[k].classifier], point(pairs[k], false), rng.normal(), &grad);
      }
      ++step;
      auto& p = ae.params();
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double g = grad[i] / static_cast<double>(len);
        m1[i] = b1 * m1[i] + (1.0 - b1) * g;
        m2[i] = b2 * m2[i] + (1.0 - b2) * g * g;
        const double mh = m1[i] / (1.0 - std::pow(b1, static_cast<double>(step)));
        const double vh = m2[i] / (1.0 - std::pow(b2, static_cast<double>(step)));
        p[i] -= config.learning_rate * mh / (std::sqrt(vh) + 1e-8);
      }
      refresh_latent_range(ae, set);
    }
    out.epoch_objective.push_back(epoch_sum / static_cast<double>(pairs.size()));

    if (validate) {
      const double v = objective(val_pairs, true, mix_seed(config.seed, 13));
      if (v < best_val) {
        best_val = v;
        best = ae;
        out.best_epoch = epoch;
      }
    } else {
      best = ae;
      out.best_epoch = epoch;
    }
  }
  out.ae = best;
  return out;
}

AeEvaluation evaluate_ae(const AutoEncoder& ae, const WeightSet& set,
                         const std::vector<MixtureTask>& tasks, int trials, std::uint64_t seed) {
  if (trials < 1) throw Error(ErrorKind::InvalidCount, "trials must be >= 1");
  if (set.weights.empty()) throw Error(ErrorKind::EmptyWeightSet, "no classifier weights");
  AeEvaluation ev;
  double acc_sum = 0.0, agree_sum = 0.0;
  for (std::size_t j = 0; j < set.size(); ++j) {
    const std::size_t id = set.task_ids[j];
    if (id >= tasks.size()) throw Error(ErrorKind::ShapeMismatch, "weight set refers to a missing task");
    const Dataset& held = tasks[id].held_out;
    const Model original = classifier_model(set.weights[j]);
    const Eigen::MatrixXd z_orig = original.logits(held.x);
    for (int trial = 0; trial < trials; ++trial) {
      Rng rng(mix_seed(seed, j * 1000003ULL + static_cast<std::uint64_t>(trial)));
      const Model rebuilt = classifier_model(ae.reconstruct(set.weights[j], rng));
      const Eigen::MatrixXd z_new = rebuilt.logits(held.x);
      std::size_t agree = 0;
      for (Eigen::Index i = 0; i < z_new.cols(); ++i) {
        if ((z_new(1, i) > 0.0) == (z_orig(1, i) > 0.0)) ++agree;
      }
      const double acc = evaluate(rebuilt, held);
      const double agreement = static_cast<double>(agree) / static_cast<double>(held.size());
      ev.rows.push_back({id, trial, acc, agreement});
      acc_sum += acc;
      agree_sum += agreement;
    }
  }
  const auto n = static_cast<double>(ev.rows.size());
  ev.mean_accuracy = acc_sum / n;
  ev.mean_agreement = agree_sum / n;
  return ev;
}

}  // namespace pcmstore
