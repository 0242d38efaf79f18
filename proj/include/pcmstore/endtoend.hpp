// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "pcmstore/channel.hpp"
#include "pcmstore/tinynn.hpp"

namespace pcmstore {

enum class TaskKind { Easy, Hard };

/// Two-component 2-D Gaussian mixture with identity covariance. Component 1
/// is labelled 0 and component 2 labelled 1.
struct MixtureTask {
  TaskKind kind = TaskKind::Easy;
  Eigen::Vector2d mu1 = Eigen::Vector2d::Zero();
  Eigen::Vector2d mu2 = Eigen::Vector2d::Zero();
  Dataset train;     // classifier training data (early stopping splits it further)
  Dataset held_out;  // last 10% of the shuffled samples
  std::uint64_t seed = 0;
};

MixtureTask generate_task(TaskKind kind, std::size_t n_points, std::uint64_t seed);

/// Accuracy of the Bayes-optimal rule for the task: Phi(|mu2 - mu1| / 2).
double bayes_accuracy(const MixtureTask& task);

using ClassifierWeights = std::array<double, 3>;  // w1, w2, bias

struct WeightSet {
  std::vector<ClassifierWeights> weights;
  std::vector<std::size_t> task_ids;
  std::vector<double> held_out_accuracy;

  std::size_t size() const { return weights.size(); }
};

/// Hyperparameters for the per-task logistic regressions: plain SGD,
/// lr 0.1, weight decay 5e-4, batch 128, early stopping.
TrainConfig classifier_train_config(std::uint64_t seed);

WeightSet train_classifier_set(const std::vector<MixtureTask>& tasks);

Model classifier_model(const ClassifierWeights& w);
ClassifierWeights classifier_weights(const Model& model);

enum class LatentNoise { None, Gaussian, Channel };

struct NoiseMode {
  LatentNoise kind = LatentNoise::None;
  double gaussian_std = 0.05;
  std::shared_ptr<const ChannelModel> channel;
  Interval target{-1.0, 1.0};
  int cells = 1;
};

struct AutoEncoderConfig {
  int epochs = 10;
  int batch_size = 100;
  double learning_rate = 1e-3;
  int validation_points = 200;  // per task, drawn from the held-out split
  std::uint64_t seed = 1;
};

/// Linear 3->1 + relu, linear 1->1 | latent noise | linear 1->1 + relu,
/// linear 1->3. Weights are standardised per component before encoding.
class AutoEncoder {
 public:
  static constexpr std::size_t kNumParams = 14;

  AutoEncoder() = default;
  AutoEncoder(const WeightSet& set, NoiseMode noise, std::uint64_t seed);

  double encode(const ClassifierWeights& w) const;
  ClassifierWeights decode(double z) const;
  /// Maps a latent into the write interval and back after the noisy read.
  double transmit(double z, Rng& rng) const;
  ClassifierWeights reconstruct(const ClassifierWeights& w, Rng& rng) const;

  /// Squeezed write level of a latent, clipped into the target interval.
  double write_level(double z) const;

  const NoiseMode& noise() const { return noise_; }
  std::array<double, kNumParams>& params() { return params_; }
  const std::array<double, kNumParams>& params() const { return params_; }
  double latent_lo() const { return z_lo_; }
  double latent_hi() const { return z_hi_; }
  void set_latent_range(double lo, double hi);

  /// Loss and gradient of one (classifier, input) pair with a given
  /// standard-normal noise draw `xi`.
  double pair_loss(const ClassifierWeights& w, const Eigen::Vector2d& x, double xi,
                   std::array<double, kNumParams>* grad) const;

 private:
  std::array<double, kNumParams> params_{};
  std::array<double, 3> mean_{};
  std::array<double, 3> scale_{1.0, 1.0, 1.0};
  double z_lo_ = 0.0;
  double z_hi_ = 1.0;
  NoiseMode noise_;
};

struct AutoEncoderTraining {
  AutoEncoder ae;
  std::vector<double> epoch_objective;  // mean training objective per epoch
  double initial_objective = 0.0;       // before the first update
  int best_epoch = 0;
};

AutoEncoderTraining train_autoencoder(const WeightSet& set, const NoiseMode& noise,
                                      const std::vector<MixtureTask>& tasks,
                                      const AutoEncoderConfig& config = {});

struct AeTrialRow {
  std::size_t task_id;
  int trial;
  double accuracy;
  double agreement;  // fraction of held-out points where the reconstructed
                     // classifier predicts like the original one
};

struct AeEvaluation {
  double mean_accuracy = 0.0;
  double mean_agreement = 0.0;
  std::vector<AeTrialRow> rows;
};

AeEvaluation evaluate_ae(const AutoEncoder& ae, const WeightSet& set,
                         const std::vector<MixtureTask>& tasks, int trials, std::uint64_t seed);

}  // namespace pcmstore
