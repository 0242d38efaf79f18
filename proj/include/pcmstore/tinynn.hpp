// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "pcmstore/rng.hpp"

namespace pcmstore {

/// Samples stored column-wise: x is (features x n).
struct Dataset {
  Eigen::MatrixXd x;
  std::vector<int> y;

  std::size_t size() const { return y.size(); }
  int num_features() const { return static_cast<int>(x.rows()); }
  Dataset subset(std::span<const std::size_t> indices) const;
};

enum class Activation { Relu, Identity };

/// Softmax over the last layer's outputs, or a 2-class head whose last
/// layer has a single output z and class logits (0, z).
enum class Head { Softmax, BinaryLogistic };

struct Layer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;
  Activation activation = Activation::Identity;
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> pruned;  // same shape as weight

  std::size_t num_parameters() const {
    return static_cast<std::size_t>(weight.size() + bias.size());
  }
};

/// Dense feed-forward classifier. Flat parameter order is, per layer, the
/// weight matrix row-major followed by the bias.
class Model {
 public:
  Model() = default;
  Model(std::vector<Layer> layers, Head head);

  /// sizes = {inputs, hidden..., classes}; hidden layers use relu.
  static Model mlp(std::span<const int> sizes, Rng& rng, Head head = Head::Softmax);
  /// Zero-initialised 2-class logistic regression with 3 parameters.
  static Model logistic_regression(int inputs = 2);

  int input_dim() const;
  int num_classes() const;
  Head head() const { return head_; }
  std::size_t num_parameters() const;
  std::size_t num_weights() const;  // excludes biases

  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

  std::vector<double> parameters() const;
  void set_parameters(std::span<const double> flat);
  /// 1 where a parameter is pruned; biases are never pruned.
  std::vector<std::uint8_t> parameter_mask() const;
  /// Parameter offset of each layer in the flat layout.
  std::vector<std::size_t> layer_offsets() const;
  void apply_mask();

  /// Class logits, (classes x n).
  Eigen::MatrixXd logits(const Eigen::MatrixXd& x) const;
  /// Softmax of logits / temperature, (classes x n).
  Eigen::MatrixXd probabilities(const Eigen::MatrixXd& x, double temperature = 1.0) const;

 private:
  std::vector<Layer> layers_;
  Head head_ = Head::Softmax;
};

/// Column-wise softmax of z / temperature.
Eigen::MatrixXd softmax(const Eigen::MatrixXd& z, double temperature = 1.0);

/// Class probabilities for one input vector.
Eigen::VectorXd forward(const Model& model, const Eigen::VectorXd& x);

struct CrossEntropyLoss {};

/// CE + lambda * KL(p_w || p_{w+delta}).
struct RobustLoss {
  double lambda = 0.5;
  double noise_std = 0.0;
};

/// (1 - lambda) * CE(noisy student) + lambda * KL(teacher_T || noisy student_T).
struct DistillLoss {
  const Model* teacher = nullptr;
  double temperature = 1.5;
  double lambda = 0.5;
  double noise_std = 0.0;
};

using LossSpec = std::variant<CrossEntropyLoss, RobustLoss, DistillLoss>;

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

/// Batch-mean loss and its analytic gradient. `weight_noise` is the
/// perturbation delta used by the noisy terms (empty means zero).
LossGrad loss_and_grad(const Model& model, const Dataset& batch, const LossSpec& spec,
                       std::span<const double> weight_noise = {});

/// Gaussian perturbation with the given std on every unpruned parameter.
std::vector<double> sample_weight_noise(const Model& model, double stddev, Rng& rng);

enum class Optimizer { SgdMomentum, Adam };

struct TrainConfig {
  Optimizer optimizer = Optimizer::Adam;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0;
  int epochs = 100;
  int batch_size = 100;
  double lambda = 0.0;
  double noise_std = 0.0;
  double temperature = 1.5;
  int patience = 10;
  double validation_fraction = 0.1;
  std::uint64_t seed = 1;

  void validate() const;
};

struct TrainResult {
  Model model;
  int epochs_run = 0;
  int best_epoch = 0;
  double best_validation_accuracy = 0.0;
  std::vector<double> epoch_train_loss;  // mean loss of each epoch
};

/// Mini-batch training of `spec` with early stopping on held-out accuracy.
TrainResult train_with(Model model, const Dataset& data, const TrainConfig& config,
                       const LossSpec& spec);

/// Cross-entropy (lambda == 0 or noise_std == 0) or robust training.
Model train(Model model, const Dataset& data, const TrainConfig& config);

/// Trains a fresh student of the given layer sizes against `teacher`.
Model distill(const Model& teacher, std::span<const int> student_sizes, const Dataset& data,
              const TrainConfig& config);

/// Zeroes and masks the floor(sparsity * d) smallest-magnitude weights.
Model prune(Model model, double sparsity);

double evaluate(const Model& model, const Dataset& data);

/// Mean cross-entropy of the model on a dataset.
double cross_entropy(const Model& model, const Dataset& data);

}  // namespace pcmstore
