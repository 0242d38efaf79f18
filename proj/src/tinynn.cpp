// SPDX-License-Identifier: Apache-2.0
#include "pcmstore/tinynn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/core.h>

#include "pcmstore/error.hpp"

namespace pcmstore {

namespace {

struct Tape {
  std::vector<Eigen::MatrixXd> inputs;
  std::vector<Eigen::MatrixXd> pre;
  Eigen::MatrixXd logits;
};

Tape run(const Model& model, const Eigen::MatrixXd& x) {
  Tape tape;
  Eigen::MatrixXd a = x;
  for (const Layer& layer : model.layers()) {
    tape.inputs.push_back(a);
    Eigen::MatrixXd z = layer.weight * a;
    z.colwise() += layer.bias;
    a = layer.activation == Activation::Relu ? Eigen::MatrixXd(z.cwiseMax(0.0)) : z;
    tape.pre.push_back(std::move(z));
  }
  if (model.head() == Head::BinaryLogistic) {
    tape.logits.setZero(2, a.cols());
    tape.logits.row(1) = a.row(0);
  } else {
    tape.logits = std::move(a);
  }
  return tape;
}

// Accumulates d(loss)/d(params) into grad given d(loss)/d(logits).
void backward(const Model& model, const Tape& tape, const Eigen::MatrixXd& dlogits,
              std::vector<double>& grad) {
  Eigen::MatrixXd da = model.head() == Head::BinaryLogistic ? Eigen::MatrixXd(dlogits.row(1))
                                                            : dlogits;
  const auto offsets = model.layer_offsets();
  for (std::size_t l = model.layers().size(); l-- > 0;) {
    const Layer& layer = model.layers()[l];
    Eigen::MatrixXd dz = da;
    if (layer.activation == Activation::Relu) {
      dz = dz.cwiseProduct((tape.pre[l].array() > 0.0).cast<double>().matrix());
    }
    const Eigen::MatrixXd dw = dz * tape.inputs[l].transpose();
    const Eigen::VectorXd db = dz.rowwise().sum();
    std::size_t k = offsets[l];
    for (Eigen::Index r = 0; r < dw.rows(); ++r) {
      for (Eigen::Index c = 0; c < dw.cols(); ++c) grad[k++] += dw(r, c);
    }
    for (Eigen::Index r = 0; r < db.size(); ++r) grad[k++] += db(r);
    if (l > 0) da = layer.weight.transpose() * dz;
  }
}

Eigen::MatrixXd log_softmax(const Eigen::MatrixXd& z, double temperature) {
  Eigen::MatrixXd out = z / temperature;
  for (Eigen::Index c = 0; c < out.cols(); ++c) {
    const double mx = out.col(c).maxCoeff();
    const double lse = mx + std::log((out.col(c).array() - mx).exp().sum());
    out.col(c).array() -= lse;
  }
  return out;
}

Eigen::MatrixXd one_hot(const std::vector<int>& y, Eigen::Index classes) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(classes, static_cast<Eigen::Index>(y.size()));
  for (std::size_t i = 0; i < y.size(); ++i) out(y[i], static_cast<Eigen::Index>(i)) = 1.0;
  return out;
}

void check_batch(const Model& model, const Dataset& batch) {
  if (batch.size() == 0) throw Error(ErrorKind::EmptyDataset, "empty batch");
  if (batch.x.rows() != model.input_dim() || static_cast<std::size_t>(batch.x.cols()) != batch.size()) {
    throw Error(ErrorKind::ShapeMismatch,
                fmt::format("batch has {} features, model expects {}", batch.x.rows(), model.input_dim()));
  }
  for (int label : batch.y) {
    if (label < 0 || label >= model.num_classes()) {
      throw Error(ErrorKind::ShapeMismatch, fmt::format("label {} out of range", label));
    }
  }
}

Model perturbed(const Model& model, std::span<const double> noise) {
  if (noise.empty()) return model;
  if (noise.size() != model.num_parameters()) {
    throw Error(ErrorKind::ShapeMismatch, "weight noise size differs from parameter count");
  }
  Model out = model;
  auto p = out.parameters();
  for (std::size_t i = 0; i < p.size(); ++i) p[i] += noise[i];
  out.set_parameters(p);
  return out;
}

}  // namespace

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.x.resize(x.rows(), static_cast<Eigen::Index>(indices.size()));
  out.y.resize(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    out.x.col(static_cast<Eigen::Index>(k)) = x.col(static_cast<Eigen::Index>(indices[k]));
    out.y[k] = y[indices[k]];
  }
  return out;
}

Model::Model(std::vector<Layer> layers, Head head) : layers_(std::move(layers)), head_(head) {
  if (layers_.empty()) throw Error(ErrorKind::ShapeMismatch, "model needs at least one layer");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Layer& layer = layers_[l];
    if (layer.bias.size() != layer.weight.rows()) {
      throw Error(ErrorKind::ShapeMismatch, fmt::format("layer {}: bias size mismatch", l));
    }
    if (l > 0 && layer.weight.cols() != layers_[l - 1].weight.rows()) {
      throw Error(ErrorKind::ShapeMismatch, fmt::format("layer {}: input size mismatch", l));
    }
    if (layer.pruned.size() == 0) {
      layer.pruned.setZero(layer.weight.rows(), layer.weight.cols());
    } else if (layer.pruned.rows() != layer.weight.rows() || layer.pruned.cols() != layer.weight.cols()) {
      throw Error(ErrorKind::ShapeMismatch, fmt::format("layer {}: mask shape mismatch", l));
    }
  }
  if (head_ == Head::BinaryLogistic && layers_.back().weight.rows() != 1) {
    throw Error(ErrorKind::ShapeMismatch, "binary logistic head needs a single output");
  }
  apply_mask();
}

Model Model::mlp(std::span<const int> sizes, Rng& rng, Head head) {
  if (sizes.size() < 2) throw Error(ErrorKind::ShapeMismatch, "need at least input and output sizes");
  std::vector<Layer> layers;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const bool last = l + 2 == sizes.size();
    const int in = sizes[l];
    const int out = (last && head == Head::BinaryLogistic) ? 1 : sizes[l + 1];
    if (in < 1 || out < 1) throw Error(ErrorKind::ShapeMismatch, "layer sizes must be positive");
    Layer layer;
    // He-uniform for relu layers, Glorot-uniform for the output layer.
    const double limit = last ? std::sqrt(6.0 / (in + out)) : std::sqrt(6.0 / in);
    layer.weight.resize(out, in);
    for (int r = 0; r < out; ++r) {
      for (int c = 0; c < in; ++c) layer.weight(r, c) = rng.uniform(-limit, limit);
    }
    layer.bias = Eigen::VectorXd::Zero(out);
    layer.activation = last ? Activation::Identity : Activation::Relu;
    layers.push_back(std::move(layer));
  }
  return Model(std::move(layers), head);
}

Model Model::logistic_regression(int inputs) {
  Layer layer;
  layer.weight = Eigen::MatrixXd::Zero(1, inputs);
  layer.bias = Eigen::VectorXd::Zero(1);
  return Model({std::move(layer)}, Head::BinaryLogistic);
}

int Model::input_dim() const { return static_cast<int>(layers_.front().weight.cols()); }

int Model::num_classes() const {
  return head_ == Head::BinaryLogistic ? 2 : static_cast<int>(layers_.back().weight.rows());
}

std::size_t Model::num_parameters() const {
  std::size_t n = 0;
  for (const Layer& layer : layers_) n += layer.num_parameters();
  return n;
}

std::size_t Model::num_weights() const {
  std::size_t n = 0;
  for (const Layer& layer : layers_) n += static_cast<std::size_t>(layer.weight.size());
  return n;
}

std::vector<double> Model::parameters() const {
  std::vector<double> flat;
  flat.reserve(num_parameters());
  for (const Layer& layer : layers_) {
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) flat.push_back(layer.weight(r, c));
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) flat.push_back(layer.bias(r));
  }
  return flat;
}

void Model::set_parameters(std::span<const double> flat) {
  if (flat.size() != num_parameters()) {
    throw Error(ErrorKind::ShapeMismatch,
                fmt::format("got {} parameters, model has {}", flat.size(), num_parameters()));
  }
  std::size_t k = 0;
  for (Layer& layer : layers_) {
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = flat[k++];
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias(r) = flat[k++];
  }
}

std::vector<std::uint8_t> Model::parameter_mask() const {
  std::vector<std::uint8_t> mask;
  mask.reserve(num_parameters());
  for (const Layer& layer : layers_) {
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) mask.push_back(layer.pruned(r, c));
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) mask.push_back(0);
  }
  return mask;
}

std::vector<std::size_t> Model::layer_offsets() const {
  std::vector<std::size_t> offsets;
  std::size_t k = 0;
  for (const Layer& layer : layers_) {
    offsets.push_back(k);
    k += layer.num_parameters();
  }
  return offsets;
}

void Model::apply_mask() {
  for (Layer& layer : layers_) {
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        if (layer.pruned(r, c) != 0) layer.weight(r, c) = 0.0;
      }
    }
  }
}

Eigen::MatrixXd Model::logits(const Eigen::MatrixXd& x) const {
  if (x.rows() != input_dim()) {
    throw Error(ErrorKind::ShapeMismatch,
                fmt::format("input has {} features, model expects {}", x.rows(), input_dim()));
  }
  return run(*this, x).logits;
}

Eigen::MatrixXd Model::probabilities(const Eigen::MatrixXd& x, double temperature) const {
  return softmax(logits(x), temperature);
}

Eigen::MatrixXd softmax(const Eigen::MatrixXd& z, double temperature) {
  return log_softmax(z, temperature).array().exp().matrix();
}

Eigen::VectorXd forward(const Model& model, const Eigen::VectorXd& x) {
  return model.probabilities(x).col(0);
}

LossGrad loss_and_grad(const Model& model, const Dataset& batch, const LossSpec& spec,
                       std::span<const double> weight_noise) {
  check_batch(model, batch);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const Eigen::MatrixXd y = one_hot(batch.y, model.num_classes());
  LossGrad out;
  out.grad.assign(model.num_parameters(), 0.0);

  auto ce_of = [&](const Eigen::MatrixXd& logp) {
    return -(logp.array() * y.array()).sum() * inv_b;
  };

  if (std::holds_alternative<CrossEntropyLoss>(spec)) {
    const Tape tape = run(model, batch.x);
    const Eigen::MatrixXd logp = log_softmax(tape.logits, 1.0);
    out.loss = ce_of(logp);
    backward(model, tape, (logp.array().exp().matrix() - y) * inv_b, out.grad);
  } else if (const auto* robust = std::get_if<RobustLoss>(&spec)) {
    const Model noisy = perturbed(model, weight_noise);
    const Tape clean_tape = run(model, batch.x);
    const Tape noisy_tape = run(noisy, batch.x);
    const Eigen::MatrixXd logp = log_softmax(clean_tape.logits, 1.0);
    const Eigen::MatrixXd logq = log_softmax(noisy_tape.logits, 1.0);
    const Eigen::MatrixXd p = logp.array().exp().matrix();
    const Eigen::MatrixXd q = logq.array().exp().matrix();
    const Eigen::MatrixXd ratio = logp - logq;
    const Eigen::RowVectorXd kl = (p.array() * ratio.array()).colwise().sum();
    out.loss = ce_of(logp) + robust->lambda * kl.sum() * inv_b;

    // d KL / d clean logits = p * (log p - log q - KL); d KL / d noisy logits = q - p.
    Eigen::MatrixXd centered = ratio;
    centered.rowwise() -= kl;
    const Eigen::MatrixXd d_clean =
        (p - y) * inv_b + robust->lambda * inv_b * p.cwiseProduct(centered);
    backward(model, clean_tape, d_clean, out.grad);
    backward(noisy, noisy_tape, robust->lambda * inv_b * (q - p), out.grad);
  } else {
    const auto& d = std::get<DistillLoss>(spec);
    if (d.teacher == nullptr) throw Error(ErrorKind::ShapeMismatch, "distillation needs a teacher");
    if (d.teacher->num_classes() != model.num_classes() || d.teacher->input_dim() != model.input_dim()) {
      throw Error(ErrorKind::ShapeMismatch, "teacher and student shapes differ");
    }
    const double t = d.temperature;
    const Model noisy = perturbed(model, weight_noise);
    const Tape tape = run(noisy, batch.x);
    const Eigen::MatrixXd logq = log_softmax(tape.logits, 1.0);
    const Eigen::MatrixXd logq_t = log_softmax(tape.logits, t);
    const Eigen::MatrixXd logp_t = log_softmax(d.teacher->logits(batch.x), t);
    const Eigen::MatrixXd p_t = logp_t.array().exp().matrix();
    const double kl = (p_t.array() * (logp_t - logq_t).array()).sum() * inv_b;
    out.loss = (1.0 - d.lambda) * ce_of(logq) + d.lambda * kl;

    const Eigen::MatrixXd dz = (1.0 - d.lambda) * inv_b * (logq.array().exp().matrix() - y) +
                               d.lambda * inv_b / t * (logq_t.array().exp().matrix() - p_t);
    backward(noisy, tape, dz, out.grad);
  }
  return out;
}

std::vector<double> sample_weight_noise(const Model& model, double stddev, Rng& rng) {
  const auto mask = model.parameter_mask();
  std::vector<double> noise(mask.size(), 0.0);
  for (std::size_t i = 0; i < noise.size(); ++i) {
    const double z = rng.normal();
    if (mask[i] == 0) noise[i] = stddev * z;
  }
  return noise;
}

void TrainConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error(ErrorKind::InvalidConfig, "lambda must lie in [0, 1]");
  if (!(temperature >= 1.0)) throw Error(ErrorKind::InvalidConfig, "temperature must be >= 1");
  if (!(noise_std >= 0.0)) throw Error(ErrorKind::InvalidConfig, "noise_std must be >= 0");
  if (!(learning_rate > 0.0)) throw Error(ErrorKind::InvalidConfig, "learning_rate must be > 0");
  if (epochs < 1 || batch_size < 1) throw Error(ErrorKind::InvalidConfig, "epochs and batch_size must be >= 1");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw Error(ErrorKind::InvalidConfig, "validation_fraction must lie in [0, 1)");
  }
  if (patience < 1) throw Error(ErrorKind::InvalidConfig, "patience must be >= 1");
}

TrainResult train_with(Model model, const Dataset& data, const TrainConfig& config,
                       const LossSpec& spec) {
  config.validate();
  if (data.size() == 0) throw Error(ErrorKind::EmptyDataset, "training set is empty");
  check_batch(model, data);

  Rng rng(config.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  std::size_t n_val = 0;
  if (config.validation_fraction > 0.0 && data.size() >= 2) {
    n_val = std::max<std::size_t>(
        1, static_cast<std::size_t>(config.validation_fraction * static_cast<double>(data.size())));
  }
  std::vector<std::size_t> train_idx(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_val));
  const std::vector<std::size_t> val_idx(order.end() - static_cast<std::ptrdiff_t>(n_val), order.end());
  const Dataset val = data.subset(val_idx);

  double noise_std = 0.0;
  if (const auto* r = std::get_if<RobustLoss>(&spec)) noise_std = r->noise_std;
  if (const auto* d = std::get_if<DistillLoss>(&spec)) noise_std = d->noise_std;

  const auto mask = model.parameter_mask();
  std::vector<double> params = model.parameters();
  std::vector<double> m1(params.size(), 0.0), m2(params.size(), 0.0);
  long step = 0;

  TrainResult result;
  result.model = model;
  double best_acc = -1.0, best_loss = 0.0;
  int since_best = 0;
  const auto batch = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), rng.engine());
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < train_idx.size(); start += batch) {
      const std::size_t len = std::min(batch, train_idx.size() - start);
      const Dataset mb = data.subset(std::span(train_idx).subspan(start, len));
      std::vector<double> noise;
      if (noise_std > 0.0) noise = sample_weight_noise(model, noise_std, rng);
      LossGrad lg = loss_and_grad(model, mb, spec, noise);
      epoch_loss += lg.loss * static_cast<double>(len);

      ++step;
      for (std::size_t i = 0; i < params.size(); ++i) {
        if (mask[i] != 0) continue;
        const double g = lg.grad[i] + config.weight_decay * params[i];
        if (config.optimizer == Optimizer::Adam) {
          m1[i] = config.beta1 * m1[i] + (1.0 - config.beta1) * g;
          m2[i] = config.beta2 * m2[i] + (1.0 - config.beta2) * g * g;
          const double mh = m1[i] / (1.0 - std::pow(config.beta1, static_cast<double>(step)));
          const double vh = m2[i] / (1.0 - std::pow(config.beta2, static_cast<double>(step)));
          params[i] -= config.learning_rate * mh / (std::sqrt(vh) + 1e-8);
        } else {
          m1[i] = config.momentum * m1[i] + g;
          params[i] -= config.learning_rate * m1[i];
        }
      }
      model.set_parameters(params);
      model.apply_mask();
    }
    result.epoch_train_loss.push_back(epoch_loss / static_cast<double>(train_idx.size()));
    result.epochs_run = epoch;

    if (n_val == 0) {
      result.model = model;
      result.best_epoch = epoch;
      continue;
    }
    const double acc = evaluate(model, val);
    const double loss = cross_entropy(model, val);
    if (acc > best_acc || (acc == best_acc && loss < best_loss)) {
      best_acc = acc;
      best_loss = loss;
      since_best = 0;
      result.model = model;
      result.best_epoch = epoch;
      result.best_validation_accuracy = acc;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  return result;
}

Model train(Model model, const Dataset& data, const TrainConfig& config) {
  if (config.lambda > 0.0 && config.noise_std > 0.0) {
    return train_with(std::move(model), data, config, RobustLoss{config.lambda, config.noise_std}).model;
  }
  return train_with(std::move(model), data, config, CrossEntropyLoss{}).model;
}

Model distill(const Model& teacher, std::span<const int> student_sizes, const Dataset& data,
              const TrainConfig& config) {
  Rng init(mix_seed(config.seed, 0x5757));
  Model student = Model::mlp(student_sizes, init, teacher.head());
  if (student.num_classes() != teacher.num_classes() || student.input_dim() != teacher.input_dim()) {
    throw Error(ErrorKind::ShapeMismatch, "student and teacher shapes differ");
  }
  const DistillLoss spec{&teacher, config.temperature, config.lambda, config.noise_std};
  return train_with(std::move(student), data, config, spec).model;
}

Model prune(Model model, double sparsity) {
  if (!(sparsity >= 0.0 && sparsity <= 1.0)) {
    throw Error(ErrorKind::InvalidConfig, "sparsity must lie in [0, 1]");
  }
  struct Entry {
    double magnitude;
    std::size_t layer;
    Eigen::Index row, col;
  };
  std::vector<Entry> entries;
  for (std::size_t l = 0; l < model.layers().size(); ++l) {
    const Layer& layer = model.layers()[l];
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        entries.push_back({std::abs(layer.weight(r, c)), l, r, c});
      }
    }
  }
  std::stable_sort(entries.begin(), entries.end(),
                   [](const Entry& a, const Entry& b) { return a.magnitude < b.magnitude; });
  const auto k = static_cast<std::size_t>(std::floor(sparsity * static_cast<double>(entries.size())));
  for (std::size_t i = 0; i < k; ++i) {
    model.layers()[entries[i].layer].pruned(entries[i].row, entries[i].col) = 1;
  }
  model.apply_mask();
  return model;
}

double evaluate(const Model& model, const Dataset& data) {
  if (data.size() == 0) throw Error(ErrorKind::EmptyDataset, "evaluation set is empty");
  const Eigen::MatrixXd z = model.logits(data.x);
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < z.cols(); ++i) {
    Eigen::Index best = 0;
    z.col(i).maxCoeff(&best);
    if (best == data.y[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

double cross_entropy(const Model& model, const Dataset& data) {
  check_batch(model, data);
  const Eigen::MatrixXd logp = log_softmax(model.logits(data.x), 1.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) sum -= logp(data.y[i], static_cast<Eigen::Index>(i));
  return sum / static_cast<double>(data.size());
}

}  // namespace pcmstore
