#pragma once

// Backpropagation baseline and model comparison on the synthetic tasks.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "neural_sheaf/dataset.hpp"
#include "neural_sheaf/errors.hpp"
#include "neural_sheaf/losses.hpp"
#include "neural_sheaf/network.hpp"
#include "neural_sheaf/training.hpp"

namespace neural_sheaf {

struct SgdConfig {
  double lr = 0.01;
  std::size_t epochs = 10000;
  LossKind loss = LossKind::squared();
  std::uint64_t seed = 0;
  std::size_t record_every = 100;
  double divergence_limit = 1e12;

  void validate() const {
    if (!(lr >= 0.0)) throw ConfigError("learning rate must be nonnegative");
    if (record_every == 0) throw ConfigError("record_every must be at least 1");
    loss.validate();
  }
};

/// Mean over samples of the per-sample loss: ||y_hat - y||^2 for the squared
/// loss, f(y_hat - y) for the other discrepancy losses, cross-entropy otherwise.
template <typename Scalar>
Scalar sgd_objective(const NetworkSpec<Scalar>& spec, const MatrixX<Scalar>& X, const MatrixX<Scalar>& Y,
                     const LossKind& loss) {
  check_loss_activation(loss, spec.output_activation);
  const MatrixX<Scalar> pred = predict(spec, X);
  const Scalar m = static_cast<Scalar>(X.cols());
  switch (loss.type) {
    case LossType::squared: return (pred - Y).squaredNorm() / m;
    case LossType::cross_entropy: return cross_entropy(spec.output_activation, pred, Y) / m;
    default: return loss_potential(pred - Y, loss) / m;
  }
}

template <typename Scalar>
struct Gradients {
  std::vector<MatrixX<Scalar>> dW;
  std::vector<VectorX<Scalar>> db;
};

/// Reverse-mode gradient of sgd_objective.
template <typename Scalar>
Gradients<Scalar> backprop(const NetworkSpec<Scalar>& spec, const MatrixX<Scalar>& X, const MatrixX<Scalar>& Y,
                           const LossKind& loss) {
  check_loss_activation(loss, spec.output_activation);
  if (Y.rows() != spec.output_dim() || Y.cols() != X.cols()) throw DimensionError("targets do not match the network");
  const ForwardTrace<Scalar> t = forward_pass(spec, X);
  const Scalar m = static_cast<Scalar>(X.cols());
  const int k = spec.hidden_layers();
  const MatrixX<Scalar> d = t.y_hat - Y;
  MatrixX<Scalar> delta;
  switch (loss.type) {
    case LossType::cross_entropy:
      delta = d / m;
      break;
    case LossType::squared:
      delta = activation_jacobian_transpose_apply(spec.output_activation, t.pre(k + 1), MatrixX<Scalar>(Scalar(2) * d / m));
      break;
    default:
      delta = activation_jacobian_transpose_apply(spec.output_activation, t.pre(k + 1),
                                                  MatrixX<Scalar>(loss_gradient(d, loss) / m));
      break;
  }
  Gradients<Scalar> g;
  g.dW.resize(static_cast<std::size_t>(k + 1));
  g.db.resize(static_cast<std::size_t>(k + 1));
  for (int l = k + 1; l >= 1; --l) {
    const MatrixX<Scalar>& prev = l == 1 ? X : t.post(l - 1);
    g.dW[static_cast<std::size_t>(l - 1)] = delta * prev.transpose();
    g.db[static_cast<std::size_t>(l - 1)] = delta.rowwise().sum();
    if (l > 1) delta = apply_mask(t.pattern.layer(l - 1), MatrixX<Scalar>(spec.weight(l).transpose() * delta));
  }
  return g;
}

template <typename Scalar>
struct SgdResult {
  NetworkSpec<Scalar> spec;
  TrainHistory history;
};

/// Full-batch gradient descent with a fixed learning rate.
template <typename Scalar>
SgdResult<Scalar> sgd_train_from(const NetworkSpec<Scalar>& initial, const Dataset& train_set,
                                 const Dataset& test_set, const SgdConfig& config) {
  config.validate();
  if (train_set.size() < 1) throw InvalidInputError("training set is empty");
  const MatrixX<Scalar> X = train_set.X.cast<Scalar>();
  const MatrixX<Scalar> Y = train_set.Y.cast<Scalar>();
  const bool classify = train_set.classification();
  const Scalar lr = static_cast<Scalar>(config.lr);
  SgdResult<Scalar> out{initial, {}};
  auto& spec = out.spec;
  auto record = [&](std::size_t epoch) {
    auto& h = out.history;
    h.steps.push_back(epoch);
    const TaskMetrics tr = evaluate_task(spec, train_set.X, train_set.Y, classify);
    h.train_loss.push_back(tr.loss);
    h.train_accuracy.push_back(tr.accuracy);
    if (test_set.size() > 0) {
      const TaskMetrics te = evaluate_task(spec, test_set.X, test_set.Y, classify);
      h.test_loss.push_back(te.loss);
      h.test_accuracy.push_back(te.accuracy);
    } else {
      h.test_loss.push_back(std::nan(""));
      h.test_accuracy.push_back(std::nan(""));
    }
    std::vector<double> norms;
    for (int l = 1; l <= spec.hidden_layers() + 1; ++l) norms.push_back(static_cast<double>(spec.weight(l).norm()));
    h.weight_norms.push_back(std::move(norms));
  };
  record(0);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const Gradients<Scalar> g = backprop(spec, X, Y, config.loss);
    for (std::size_t l = 0; l < g.dW.size(); ++l) {
      spec.weights[l] -= lr * g.dW[l];
      spec.biases[l] -= lr * g.db[l];
      detail::check_finite_state(spec.weights[l], epoch + 1, config.divergence_limit);
      detail::check_finite_state(MatrixX<Scalar>(spec.biases[l]), epoch + 1, config.divergence_limit);
    }
    if ((epoch + 1) % config.record_every == 0 || epoch + 1 == config.epochs) record(epoch + 1);
  }
  return out;
}

template <typename Scalar = double>
SgdResult<Scalar> sgd_train(const std::vector<Eigen::Index>& layer_dims, OutputActivation phi,
                            const Dataset& train_set, const Dataset& test_set, const SgdConfig& config) {
  std::mt19937_64 rng(config.seed);
  return sgd_train_from(he_initialized<Scalar>(layer_dims, phi, rng), train_set, test_set, config);
}

struct ComparisonReport {
  double loss_a = 0;
  double loss_b = 0;
  double ratio = 0;  ///< loss_a / loss_b
  double accuracy_a = 0;
  double accuracy_b = 0;
  bool classification = false;
};

/// Task loss of two models on the same held-out data.
template <typename Scalar>
ComparisonReport compare(const NetworkSpec<Scalar>& model_a, const NetworkSpec<Scalar>& model_b, const Dataset& data) {
  if (data.size() < 1) throw InvalidInputError("comparison needs a nonempty dataset");
  if (model_a.input_dim() != model_b.input_dim() || model_a.output_dim() != model_b.output_dim()) {
    throw DimensionError("models have different input or output dimensions");
  }
  const TaskMetrics a = evaluate_task(model_a, data);
  const TaskMetrics b = evaluate_task(model_b, data);
  ComparisonReport r;
  r.loss_a = a.loss;
  r.loss_b = b.loss;
  r.ratio = a.loss / b.loss;
  r.accuracy_a = a.accuracy;
  r.accuracy_b = b.accuracy;
  r.classification = data.classification();
  return r;
}

}  // namespace neural_sheaf
