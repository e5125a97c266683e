#pragma once

// Feedforward ReLU networks: parameters, output activations and the plain
// forward pass. Every quantity that varies per sample is stored as a matrix
// with one column per sample, so a single input is simply a one-column batch.

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "neural_sheaf/errors.hpp"

namespace neural_sheaf {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Per-coordinate ReLU selection, one column per sample.
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

enum class OutputActivation { identity, sigmoid, tanh, softmax };

inline std::string_view to_string(OutputActivation phi) {
  switch (phi) {
    case OutputActivation::identity: return "identity";
    case OutputActivation::sigmoid: return "sigmoid";
    case OutputActivation::tanh: return "tanh";
    case OutputActivation::softmax: return "softmax";
  }
  return "identity";
}

inline OutputActivation parse_output_activation(std::string_view name) {
  if (name == "identity") return OutputActivation::identity;
  if (name == "sigmoid") return OutputActivation::sigmoid;
  if (name == "tanh") return OutputActivation::tanh;
  if (name == "softmax") return OutputActivation::softmax;
  throw ConfigError("unknown output activation '" + std::string(name) + "'");
}

/// Layer sizes [n0, n1, ..., n_{k+1}], weights W^(l) (n_l x n_{l-1}) and biases
/// b^(l) for l = 1..k+1. Index l-1 of `weights`/`biases` holds layer l.
template <typename Scalar>
struct NetworkSpec {
  std::vector<Eigen::Index> layer_dims;
  std::vector<MatrixX<Scalar>> weights;
  std::vector<VectorX<Scalar>> biases;
  OutputActivation output_activation = OutputActivation::identity;

  /// Number of hidden layers k.
  int hidden_layers() const { return static_cast<int>(layer_dims.size()) - 2; }
  Eigen::Index input_dim() const { return layer_dims.front(); }
  Eigen::Index output_dim() const { return layer_dims.back(); }
  /// n_l for l = 0..k+1.
  Eigen::Index dim(int layer) const { return layer_dims.at(static_cast<std::size_t>(layer)); }
  const MatrixX<Scalar>& weight(int layer) const { return weights.at(static_cast<std::size_t>(layer - 1)); }
  const VectorX<Scalar>& bias(int layer) const { return biases.at(static_cast<std::size_t>(layer - 1)); }

  void validate() const {
    if (layer_dims.size() < 3) throw DimensionError("network needs at least one hidden layer (k >= 1)");
    for (auto n : layer_dims) {
      if (n <= 0) throw DimensionError("layer dimensions must be positive");
    }
    const std::size_t layers = layer_dims.size() - 1;
    if (weights.size() != layers || biases.size() != layers) {
      throw DimensionError("expected " + std::to_string(layers) + " weight matrices and bias vectors");
    }
    for (std::size_t l = 0; l < layers; ++l) {
      if (weights[l].rows() != layer_dims[l + 1] || weights[l].cols() != layer_dims[l]) {
        throw DimensionError("weight " + std::to_string(l + 1) + " has shape " + std::to_string(weights[l].rows()) +
                             "x" + std::to_string(weights[l].cols()));
      }
      if (biases[l].size() != layer_dims[l + 1]) {
        throw DimensionError("bias " + std::to_string(l + 1) + " has length " + std::to_string(biases[l].size()));
      }
      if (!weights[l].allFinite() || !biases[l].allFinite()) {
        throw InvalidInputError("layer " + std::to_string(l + 1) + " has non-finite parameters");
      }
    }
  }

  template <typename Other>
  NetworkSpec<Other> cast() const {
    NetworkSpec<Other> out;
    out.layer_dims = layer_dims;
    out.output_activation = output_activation;
    for (const auto& w : weights) out.weights.push_back(w.template cast<Other>());
    for (const auto& b : biases) out.biases.push_back(b.template cast<Other>());
    return out;
  }
};

/// Weights drawn from N(0, 2 / fan_in), zero biases.
template <typename Scalar = double>
NetworkSpec<Scalar> he_initialized(const std::vector<Eigen::Index>& layer_dims, OutputActivation phi,
                                   std::mt19937_64& rng) {
  NetworkSpec<Scalar> spec;
  spec.layer_dims = layer_dims;
  spec.output_activation = phi;
  if (layer_dims.size() < 3) throw DimensionError("network needs at least one hidden layer (k >= 1)");
  for (std::size_t l = 1; l < layer_dims.size(); ++l) {
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(layer_dims[l - 1])));
    MatrixX<Scalar> w(layer_dims[l], layer_dims[l - 1]);
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = static_cast<Scalar>(normal(rng));
    }
    spec.weights.push_back(std::move(w));
    spec.biases.push_back(VectorX<Scalar>::Zero(layer_dims[l]));
  }
  spec.validate();
  return spec;
}

/// [W | diag(b)].
template <typename Scalar>
MatrixX<Scalar> extend_weight(const MatrixX<Scalar>& w, const VectorX<Scalar>& b) {
  if (b.size() != w.rows()) throw DimensionError("bias length must equal weight rows");
  MatrixX<Scalar> out = MatrixX<Scalar>::Zero(w.rows(), w.cols() + w.rows());
  out.leftCols(w.cols()) = w;
  out.rightCols(w.rows()).diagonal() = b;
  return out;
}

/// [a; 1 ... 1] with `next_dim` trailing ones (applied to every column).
template <typename Scalar>
MatrixX<Scalar> extend_activation(const MatrixX<Scalar>& a, Eigen::Index next_dim) {
  if (next_dim < 1) throw DimensionError("next_dim must be at least 1");
  const Eigen::Index cols = a.cols() == 0 ? 1 : a.cols();
  MatrixX<Scalar> out(a.rows() + next_dim, cols);
  if (a.rows() > 0) out.topRows(a.rows()) = a;
  out.bottomRows(next_dim).setOnes();
  return out;
}

template <typename Scalar>
VectorX<Scalar> extend_activation(const VectorX<Scalar>& a, Eigen::Index next_dim) {
  return extend_activation<Scalar>(MatrixX<Scalar>(a), next_dim).col(0);
}

/// Entry is true iff z >= 0 (zero counts as active). Exact sign test, no band.
template <typename Derived>
Mask relu_pattern(const Eigen::MatrixBase<Derived>& z) {
  if (z.hasNaN()) throw InvalidInputError("pre-activation contains NaN");
  return z.array() >= typename Derived::Scalar(0);
}

template <typename Scalar>
MatrixX<Scalar> apply_mask(const Mask& mask, const MatrixX<Scalar>& z) {
  return mask.select(z, MatrixX<Scalar>::Zero(z.rows(), z.cols()));
}

/// phi applied column by column.
template <typename Scalar>
MatrixX<Scalar> activate(OutputActivation phi, const MatrixX<Scalar>& z) {
  using std::exp;
  using std::tanh;
  switch (phi) {
    case OutputActivation::identity:
      return z;
    case OutputActivation::sigmoid:
      return z.unaryExpr([](Scalar v) { return Scalar(1) / (Scalar(1) + exp(-v)); });
    case OutputActivation::tanh:
      return z.unaryExpr([](Scalar v) { return tanh(v); });
    case OutputActivation::softmax: {
      MatrixX<Scalar> out(z.rows(), z.cols());
      for (Eigen::Index m = 0; m < z.cols(); ++m) {
        const Scalar shift = z.col(m).maxCoeff();
        out.col(m) = (z.col(m).array() - shift).exp().matrix();
        out.col(m) /= out.col(m).sum();
      }
      return out;
    }
  }
  throw ConfigError("unknown output activation");
}

/// J_phi(z)^T v, column by column.
template <typename Scalar>
MatrixX<Scalar> activation_jacobian_transpose_apply(OutputActivation phi, const MatrixX<Scalar>& z,
                                                    const MatrixX<Scalar>& v) {
  switch (phi) {
    case OutputActivation::identity:
      return v;
    case OutputActivation::sigmoid: {
      const MatrixX<Scalar> s = activate(phi, z);
      return (s.array() * (Scalar(1) - s.array()) * v.array()).matrix();
    }
    case OutputActivation::tanh: {
      const MatrixX<Scalar> t = activate(phi, z);
      return ((Scalar(1) - t.array().square()) * v.array()).matrix();
    }
    case OutputActivation::softmax: {
      const MatrixX<Scalar> s = activate(phi, z);
      MatrixX<Scalar> out(z.rows(), z.cols());
      for (Eigen::Index m = 0; m < z.cols(); ++m) {
        const Scalar sv = s.col(m).dot(v.col(m));
        out.col(m) = (s.col(m).array() * (v.col(m).array() - sv)).matrix();
      }
      return out;
    }
  }
  throw ConfigError("unknown output activation");
}

/// Dense Jacobian of phi at a single point.
template <typename Scalar>
MatrixX<Scalar> activation_jacobian(OutputActivation phi, const VectorX<Scalar>& z) {
  const Eigen::Index n = z.size();
  switch (phi) {
    case OutputActivation::identity:
      return MatrixX<Scalar>::Identity(n, n);
    case OutputActivation::sigmoid: {
      const VectorX<Scalar> s = activate<Scalar>(phi, z).col(0);
      return (s.array() * (Scalar(1) - s.array())).matrix().asDiagonal();
    }
    case OutputActivation::tanh: {
      const VectorX<Scalar> t = activate<Scalar>(phi, z).col(0);
      return (Scalar(1) - t.array().square()).matrix().asDiagonal();
    }
    case OutputActivation::softmax: {
      const VectorX<Scalar> s = activate<Scalar>(phi, z).col(0);
      MatrixX<Scalar> j = -s * s.transpose();
      j.diagonal() += s;
      return j;
    }
  }
  throw ConfigError("unknown output activation");
}

/// Per-hidden-layer ReLU masks; masks[l-1] is n_l x M.
struct ActivationPattern {
  std::vector<Mask> masks;

  int layers() const { return static_cast<int>(masks.size()); }
  const Mask& layer(int l) const { return masks.at(static_cast<std::size_t>(l - 1)); }
  Eigen::Index columns() const { return masks.empty() ? 0 : masks.front().cols(); }

  friend bool operator==(const ActivationPattern& a, const ActivationPattern& b) {
    if (a.masks.size() != b.masks.size()) return false;
    for (std::size_t i = 0; i < a.masks.size(); ++i) {
      if (a.masks[i].rows() != b.masks[i].rows() || a.masks[i].cols() != b.masks[i].cols()) return false;
      if ((a.masks[i] != b.masks[i]).any()) return false;
    }
    return true;
  }
};

template <typename Scalar>
ActivationPattern uniform_pattern(const NetworkSpec<Scalar>& spec, bool active, Eigen::Index columns = 1) {
  ActivationPattern p;
  for (int l = 1; l <= spec.hidden_layers(); ++l) p.masks.push_back(Mask::Constant(spec.dim(l), columns, active));
  return p;
}

template <typename Scalar>
ActivationPattern random_pattern(const NetworkSpec<Scalar>& spec, std::mt19937_64& rng, Eigen::Index columns = 1) {
  std::bernoulli_distribution coin(0.5);
  ActivationPattern p;
  for (int l = 1; l <= spec.hidden_layers(); ++l) {
    Mask m(spec.dim(l), columns);
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = coin(rng);
    }
    p.masks.push_back(std::move(m));
  }
  return p;
}

template <typename Scalar>
struct ForwardTrace {
  std::vector<MatrixX<Scalar>> z;  ///< z^(1..k+1), one column per sample
  std::vector<MatrixX<Scalar>> a;  ///< a^(1..k)
  MatrixX<Scalar> y_hat;
  ActivationPattern pattern;

  const MatrixX<Scalar>& pre(int layer) const { return z.at(static_cast<std::size_t>(layer - 1)); }
  const MatrixX<Scalar>& post(int layer) const { return a.at(static_cast<std::size_t>(layer - 1)); }
};

/// Standard forward pass on each column of `x` (n0 x M).
template <typename Scalar>
ForwardTrace<Scalar> forward_pass(const NetworkSpec<Scalar>& spec, const MatrixX<Scalar>& x) {
  if (x.rows() != spec.input_dim()) {
    throw DimensionError("input has " + std::to_string(x.rows()) + " rows, network expects " +
                         std::to_string(spec.input_dim()));
  }
  ForwardTrace<Scalar> trace;
  const int k = spec.hidden_layers();
  MatrixX<Scalar> prev = x;
  for (int l = 1; l <= k + 1; ++l) {
    MatrixX<Scalar> z = spec.weight(l) * prev;
    z.colwise() += spec.bias(l);
    if (l <= k) {
      Mask mask = relu_pattern(z);
      prev = apply_mask(mask, z);
      trace.a.push_back(prev);
      trace.pattern.masks.push_back(std::move(mask));
    }
    trace.z.push_back(std::move(z));
  }
  trace.y_hat = activate(spec.output_activation, trace.z.back());
  return trace;
}

/// Network output phi(z^(k+1)) for every column of `x`.
template <typename Scalar>
MatrixX<Scalar> predict(const NetworkSpec<Scalar>& spec, const MatrixX<Scalar>& x) {
  return forward_pass(spec, x).y_hat;
}

}  // namespace neural_sheaf
