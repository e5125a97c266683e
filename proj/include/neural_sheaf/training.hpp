#pragma once

// Joint dynamics of the free cochain and the trainable restriction maps.
//
// The output vertex is hard-pinned to the targets, one column per sample.
// Each Euler step updates the cochain and the weights from the same state:
//   d omega/dt = -alpha (grad_omega V + lambda (omega - omega_0))
//   dW/dt      = -beta (W-bar a-bar - z) a^T - beta mu (W - W_0),
//   db/dt      = -beta sum_m (W-bar a-bar - z)_m - beta mu (b - b_0).

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "neural_sheaf/dataset.hpp"
#include "neural_sheaf/diffusion.hpp"
#include "neural_sheaf/errors.hpp"
#include "neural_sheaf/losses.hpp"
#include "neural_sheaf/network.hpp"
#include "neural_sheaf/operators.hpp"
#include "neural_sheaf/sheaf.hpp"

namespace neural_sheaf {

enum class AnchorMode { zero, initial };

struct TrainConfig {
  double alpha = 1.0;
  std::optional<double> beta;  ///< defaults to 1/n_train
  double dt = 0.005;
  std::size_t steps = 100000;
  LossKind loss = LossKind::squared();
  double lambda = 0.0;
  double mu = 0.0;
  AnchorMode anchors = AnchorMode::zero;
  InitMode init_mode = InitMode::random;
  std::uint64_t seed = 0;
  std::size_t record_every = 1000;
  double divergence_limit = 1e12;

  void validate() const {
    if (!(alpha > 0.0)) throw ConfigError("alpha must be positive");
    if (beta && !(*beta >= 0.0)) throw ConfigError("beta must be nonnegative");
    if (!(dt > 0.0)) throw ConfigError("dt must be positive");
    if (!(lambda >= 0.0) || !(mu >= 0.0)) throw ConfigError("regularization strengths must be nonnegative");
    if (record_every == 0) throw ConfigError("record_every must be at least 1");
    if (init_mode == InitMode::zeros) throw ConfigError("training initializes from random or forward_pass");
    loss.validate();
  }
};

inline double default_beta(Eigen::Index n_train) {
  if (n_train < 1) throw InvalidInputError("n_train must be at least 1");
  return 1.0 / static_cast<double>(n_train);
}

/// beta B_omega ||delta_0 omega_0|| / (alpha lambda_eff).
inline double stagnation_bound(double beta, double b_omega, double initial_disagreement, double alpha,
                               double lambda_eff) {
  if (!(lambda_eff > 0.0)) throw DomainError("effective spectral gap must be positive");
  if (!(alpha > 0.0)) throw DomainError("alpha must be positive");
  if (!(beta >= 0.0) || !(b_omega >= 0.0) || !(initial_disagreement >= 0.0)) {
    throw DomainError("bound inputs must be nonnegative");
  }
  return beta * b_omega * initial_disagreement / (alpha * lambda_eff);
}

/// The sheaf with v_y hard-pinned; the pinned rows hold per-column targets.
template <typename Scalar>
NeuralSheaf<Scalar> training_sheaf(const NetworkSpec<Scalar>& spec) {
  std::vector<Eigen::Index> all(static_cast<std::size_t>(spec.output_dim()));
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<Eigen::Index>(i);
  auto pin = PinSpec<Scalar>::hard_pin(PinSite::output, spec.hidden_layers() + 1, std::move(all),
                                       VectorX<Scalar>::Zero(spec.output_dim()));
  return NeuralSheaf<Scalar>(spec, {pin});
}

template <typename Scalar>
struct LayerUpdate {
  MatrixX<Scalar> dW;
  VectorX<Scalar> db;
};

/// Restriction-map velocities from the weight-edge residuals, summed over columns.
template <typename Scalar>
std::vector<LayerUpdate<Scalar>> weight_velocity(const NeuralSheaf<Scalar>& sheaf, const Cochain<Scalar>& x,
                                                 Scalar beta) {
  detail::check_cochain(sheaf, x.values);
  const auto& spec = sheaf.network();
  const MatrixX<Scalar>& v = x.values;
  std::vector<LayerUpdate<Scalar>> out;
  for (int l = 1; l <= spec.hidden_layers() + 1; ++l) {
    const Eigen::Index base = sheaf.activation_offset(l - 1);
    const auto a = v.middleRows(base, spec.dim(l - 1));
    const auto ones = v.middleRows(base + spec.dim(l - 1), spec.dim(l));
    MatrixX<Scalar> residual = spec.weight(l) * a + spec.bias(l).asDiagonal() * ones;
    residual -= v.middleRows(sheaf.pre_offset(l), spec.dim(l));
    LayerUpdate<Scalar> u;
    u.dW = -beta * residual * a.transpose();
    u.db = -beta * residual.cwiseProduct(ones).rowwise().sum();
    out.push_back(std::move(u));
  }
  return out;
}

/// Free velocity of a batch cochain; every column uses its own ReLU mask.
template <typename Scalar>
MatrixX<Scalar> batch_free_velocity(const NeuralSheaf<Scalar>& sheaf, const Cochain<Scalar>& bx, Scalar alpha,
                                    const LossKind& loss = LossKind::squared()) {
  return free_velocity(sheaf, bx, alpha, loss);
}

template <typename Scalar>
struct TrainState {
  NeuralSheaf<Scalar> sheaf;
  Cochain<Scalar> cochain;
  MatrixX<Scalar> cochain_anchor;
  NetworkSpec<Scalar> weight_anchor;
  FlowEvaluation<Scalar> workspace{};
};

/// State for inputs X and targets Y: cochain from the configured init mode,
/// output rows set to Y, anchors zero or equal to the initial values.
template <typename Scalar>
TrainState<Scalar> make_train_state(const NetworkSpec<Scalar>& spec, const MatrixX<Scalar>& X,
                                    const MatrixX<Scalar>& Y, const TrainConfig& config) {
  if (Y.rows() != spec.output_dim() || Y.cols() != X.cols()) throw DimensionError("targets do not match the network");
  if (config.loss.type == LossType::cross_entropy || spec.output_activation != OutputActivation::identity) {
    check_loss_activation(config.loss, spec.output_activation);
  }
  NeuralSheaf<Scalar> sheaf = training_sheaf(spec);
  Cochain<Scalar> c;
  if (config.init_mode == InitMode::forward) {
    c = embed_trace(sheaf, X, forward_pass(spec, X));
  } else {
    std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    c = random_cochain(sheaf, X, rng);
  }
  c.values.middleRows(sheaf.output_offset(), spec.output_dim()) = Y;

  MatrixX<Scalar> anchor = MatrixX<Scalar>::Zero(c.values.rows(), c.values.cols());
  NetworkSpec<Scalar> weight_anchor = spec;
  if (config.anchors == AnchorMode::initial) {
    anchor = c.values;
  } else {
    for (auto& w : weight_anchor.weights) w.setZero();
    for (auto& b : weight_anchor.biases) b.setZero();
  }
  return TrainState<Scalar>{std::move(sheaf), std::move(c), std::move(anchor), std::move(weight_anchor), {}};
}

/// One simultaneous Euler step of the joint dynamics.
template <typename Scalar>
void joint_step(TrainState<Scalar>& state, const TrainConfig& config, Scalar beta, std::size_t step = 0) {
  const Scalar alpha = static_cast<Scalar>(config.alpha);
  const Scalar dt = static_cast<Scalar>(config.dt);
  const Scalar lambda = static_cast<Scalar>(config.lambda);
  const Scalar mu = static_cast<Scalar>(config.mu);
  auto& sheaf = state.sheaf;
  MatrixX<Scalar>& v = state.cochain.values;

  evaluate_flow(sheaf, v, current_pattern(sheaf, v), config.loss, false, state.workspace);
  MatrixX<Scalar>& gradient = state.workspace.gradient;
  if (lambda != Scalar(0)) {
    for (auto idx : sheaf.free_indices()) gradient.row(idx) += lambda * (v.row(idx) - state.cochain_anchor.row(idx));
  }
  std::vector<LayerUpdate<Scalar>> updates = weight_velocity(sheaf, state.cochain, beta);

  v.noalias() -= (dt * alpha) * gradient;
  auto& spec = sheaf.network();
  for (int l = 1; l <= spec.hidden_layers() + 1; ++l) {
    auto& u = updates[static_cast<std::size_t>(l - 1)];
    if (mu != Scalar(0)) {
      u.dW -= beta * mu * (spec.weight(l) - state.weight_anchor.weight(l));
      u.db -= beta * mu * (spec.bias(l) - state.weight_anchor.bias(l));
    }
    spec.weights[static_cast<std::size_t>(l - 1)] += dt * u.dW;
    spec.biases[static_cast<std::size_t>(l - 1)] += dt * u.db;
  }
  detail::check_finite_state(v, step + 1, config.divergence_limit);
  for (const auto& w : spec.weights) detail::check_finite_state(w, step + 1, config.divergence_limit);
  for (const auto& b : spec.biases) detail::check_finite_state(MatrixX<Scalar>(b), step + 1, config.divergence_limit);
}

struct TrainHistory {
  std::vector<std::size_t> steps;
  std::vector<double> train_loss;
  std::vector<double> test_loss;
  std::vector<double> train_accuracy;
  std::vector<double> test_accuracy;
  std::vector<double> discord_total;
  std::vector<std::vector<double>> discord_per_edge;
  std::vector<std::vector<double>> weight_norms;
  std::vector<std::string> edge_names;

  std::size_t size() const { return steps.size(); }
};

template <typename Scalar>
struct TrainResult {
  NetworkSpec<Scalar> spec;
  TrainHistory history;
  Cochain<Scalar> final_cochain;
  NeuralSheaf<Scalar> sheaf;  ///< training sheaf with the final weights
};

/// Full-batch joint training starting from `initial`. The test set may be empty.
template <typename Scalar>
TrainResult<Scalar> train_from(const NetworkSpec<Scalar>& initial, const Dataset& train_set, const Dataset& test_set,
                               const TrainConfig& config) {
  config.validate();
  if (train_set.size() < 1) throw InvalidInputError("training set is empty");
  const MatrixX<Scalar> X = train_set.X.cast<Scalar>();
  const MatrixX<Scalar> Y = train_set.Y.cast<Scalar>();
  TrainState<Scalar> state = make_train_state(initial, X, Y, config);
  const Scalar beta = static_cast<Scalar>(config.beta.value_or(default_beta(train_set.size())));
  const bool classify = train_set.classification();

  TrainHistory history;
  for (const Edge& e : state.sheaf.edges()) history.edge_names.push_back(e.name);
  auto record = [&](std::size_t step) {
    const auto& spec = state.sheaf.network();
    history.steps.push_back(step);
    const TaskMetrics tr = evaluate_task(spec, train_set.X, train_set.Y, classify);
    history.train_loss.push_back(tr.loss);
    history.train_accuracy.push_back(tr.accuracy);
    if (test_set.size() > 0) {
      const TaskMetrics te = evaluate_task(spec, test_set.X, test_set.Y, classify);
      history.test_loss.push_back(te.loss);
      history.test_accuracy.push_back(te.accuracy);
    } else {
      history.test_loss.push_back(std::nan(""));
      history.test_accuracy.push_back(std::nan(""));
    }
    const DiscordBreakdown<Scalar> d = total_discord(state.sheaf, state.cochain);
    history.discord_total.push_back(static_cast<double>(d.total));
    std::vector<double> per_edge;
    for (const Scalar s : d.per_edge) per_edge.push_back(static_cast<double>(s));
    history.discord_per_edge.push_back(std::move(per_edge));
    std::vector<double> norms;
    for (int l = 1; l <= spec.hidden_layers() + 1; ++l) norms.push_back(static_cast<double>(spec.weight(l).norm()));
    history.weight_norms.push_back(std::move(norms));
  };

  record(0);
  for (std::size_t step = 0; step < config.steps; ++step) {
    joint_step(state, config, beta, step);
    if ((step + 1) % config.record_every == 0 || step + 1 == config.steps) record(step + 1);
  }
  NetworkSpec<Scalar> final_spec = state.sheaf.network();
  return TrainResult<Scalar>{std::move(final_spec), std::move(history), std::move(state.cochain),
                             std::move(state.sheaf)};
}

/// He-initialized architecture `layer_dims` trained on `train_set`.
template <typename Scalar = double>
TrainResult<Scalar> train(const std::vector<Eigen::Index>& layer_dims, OutputActivation phi, const Dataset& train_set,
                          const Dataset& test_set, const TrainConfig& config) {
  std::mt19937_64 rng(config.seed);
  return train_from(he_initialized<Scalar>(layer_dims, phi, rng), train_set, test_set, config);
}

}  // namespace neural_sheaf
