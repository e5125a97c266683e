#pragma once

// Edge potentials for the output edge. Discrepancy losses depend on the
// prediction error d = phi(z) - y only; cross-entropy is paired with a
// softmax or sigmoid output, where J^T grad L collapses to phi(z) - y.

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <utility>

#include "neural_sheaf/errors.hpp"
#include "neural_sheaf/network.hpp"

namespace neural_sheaf {

enum class LossType { squared, l1, pnorm, huber, cross_entropy };

struct LossKind {
  LossType type = LossType::squared;
  double p = 2.0;    ///< exponent for pnorm
  double tau = 1.0;  ///< threshold for huber

  static LossKind squared() { return {}; }
  static LossKind l1() { return {LossType::l1, 2.0, 1.0}; }
  static LossKind pnorm(double p) { return {LossType::pnorm, p, 1.0}; }
  static LossKind huber(double tau) { return {LossType::huber, 2.0, tau}; }
  static LossKind cross_entropy() { return {LossType::cross_entropy, 2.0, 1.0}; }

  void validate() const {
    if (type == LossType::pnorm && !(p > 1.0)) throw ConfigError("p-norm loss needs p > 1");
    if (type == LossType::huber && !(tau > 0.0)) throw ConfigError("huber loss needs tau > 0");
  }

  std::string name() const {
    switch (type) {
      case LossType::squared: return "squared";
      case LossType::l1: return "l1";
      case LossType::pnorm: return "pnorm";
      case LossType::huber: return "huber";
      case LossType::cross_entropy: return "cross_entropy";
    }
    return "squared";
  }
};

inline LossKind parse_loss(const std::string& name, double p = 3.0, double tau = 1.0) {
  if (name == "squared" || name == "mse") return LossKind::squared();
  if (name == "l1") return LossKind::l1();
  if (name == "pnorm") return LossKind::pnorm(p);
  if (name == "huber") return LossKind::huber(tau);
  if (name == "cross_entropy" || name == "ce") return LossKind::cross_entropy();
  throw ConfigError("unknown loss '" + name + "'");
}

inline void check_loss_activation(const LossKind& loss, OutputActivation phi) {
  loss.validate();
  if (loss.type == LossType::cross_entropy && phi != OutputActivation::softmax && phi != OutputActivation::sigmoid) {
    throw ConfigError("cross-entropy requires a softmax or sigmoid output");
  }
}

/// Componentwise gradient of a discrepancy potential; sign(0) = 0 for L1.
template <typename Derived>
MatrixX<typename Derived::Scalar> loss_gradient(const Eigen::MatrixBase<Derived>& d, const LossKind& kind) {
  using Scalar = typename Derived::Scalar;
  using std::abs;
  using std::pow;
  kind.validate();
  switch (kind.type) {
    case LossType::squared:
      return d;
    case LossType::l1:
      return d.unaryExpr([](Scalar v) { return v > Scalar(0) ? Scalar(1) : (v < Scalar(0) ? Scalar(-1) : Scalar(0)); });
    case LossType::pnorm: {
      const Scalar p = static_cast<Scalar>(kind.p);
      return d.unaryExpr([p](Scalar v) { return v == Scalar(0) ? Scalar(0) : pow(abs(v), p - Scalar(2)) * v; });
    }
    case LossType::huber: {
      const Scalar tau = static_cast<Scalar>(kind.tau);
      return d.unaryExpr([tau](Scalar v) { return v > tau ? tau : (v < -tau ? -tau : v); });
    }
    case LossType::cross_entropy:
      throw ConfigError("cross-entropy is not a discrepancy potential; use output_force");
  }
  throw ConfigError("unknown loss");
}

/// f(d) summed over all entries.
template <typename Derived>
typename Derived::Scalar loss_potential(const Eigen::MatrixBase<Derived>& d, const LossKind& kind) {
  using Scalar = typename Derived::Scalar;
  using std::abs;
  using std::pow;
  kind.validate();
  switch (kind.type) {
    case LossType::squared:
      return Scalar(0.5) * d.squaredNorm();
    case LossType::l1:
      return d.cwiseAbs().sum();
    case LossType::pnorm: {
      const Scalar p = static_cast<Scalar>(kind.p);
      return d.unaryExpr([p](Scalar v) { return pow(abs(v), p); }).sum() / p;
    }
    case LossType::huber: {
      const Scalar tau = static_cast<Scalar>(kind.tau);
      return d.unaryExpr([tau](Scalar v) {
                return abs(v) <= tau ? Scalar(0.5) * v * v : tau * (abs(v) - Scalar(0.5) * tau);
              })
          .sum();
    }
    case LossType::cross_entropy:
      throw ConfigError("cross-entropy is not a discrepancy potential");
  }
  throw ConfigError("unknown loss");
}

/// Cross-entropy summed over columns: categorical for softmax, binary for sigmoid.
template <typename Scalar>
Scalar cross_entropy(OutputActivation phi, const MatrixX<Scalar>& probabilities, const MatrixX<Scalar>& targets) {
  using std::log;
  const Scalar eps = Scalar(1e-300);
  Scalar total = 0;
  for (Eigen::Index m = 0; m < probabilities.cols(); ++m) {
    for (Eigen::Index i = 0; i < probabilities.rows(); ++i) {
      const Scalar s = probabilities(i, m);
      const Scalar y = targets(i, m);
      if (phi == OutputActivation::sigmoid) {
        total -= y * log(std::max(s, eps)) + (Scalar(1) - y) * log(std::max(Scalar(1) - s, eps));
      } else {
        total -= y * log(std::max(s, eps));
      }
    }
  }
  return total;
}

/// Output-edge force on z^(k+1): J_phi(z)^T grad f(phi(z) - y), or phi(z) - y
/// for cross-entropy.
template <typename Scalar>
MatrixX<Scalar> output_force(const MatrixX<Scalar>& z, const MatrixX<Scalar>& y, OutputActivation phi,
                             const LossKind& loss) {
  check_loss_activation(loss, phi);
  const MatrixX<Scalar> prediction = activate(phi, z);
  const MatrixX<Scalar> d = prediction - y;
  if (loss.type == LossType::cross_entropy) return d;
  return activation_jacobian_transpose_apply(phi, z, loss_gradient(d, loss));
}

/// Velocity of z^(k+1) with the output vertex held at target y:
/// -alpha [ (z - W-bar a-bar) + output force ].
template <typename Scalar>
MatrixX<Scalar> output_training_velocity(const MatrixX<Scalar>& z, const MatrixX<Scalar>& upstream,
                                         const MatrixX<Scalar>& y, OutputActivation phi, const LossKind& loss,
                                         Scalar alpha) {
  return -alpha * ((z - upstream) + output_force(z, y, phi, loss));
}

/// Output-pair velocities for a free output vertex under the squared output
/// potential: (dz, dy_hat).
template <typename Scalar>
std::pair<MatrixX<Scalar>, MatrixX<Scalar>> output_velocity(const MatrixX<Scalar>& z, const MatrixX<Scalar>& upstream,
                                                            const MatrixX<Scalar>& y_hat, OutputActivation phi,
                                                            Scalar alpha) {
  if (phi == OutputActivation::identity) throw ConfigError("identity output is handled by the linear output edge");
  const MatrixX<Scalar> gap = activate(phi, z) - y_hat;
  MatrixX<Scalar> dz = -alpha * ((z - upstream) + activation_jacobian_transpose_apply(phi, z, gap));
  MatrixX<Scalar> dy = alpha * gap;
  return {std::move(dz), std::move(dy)};
}

}  // namespace neural_sheaf
