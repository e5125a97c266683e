#pragma once

// Synthetic regression and classification tasks.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <utility>

#include "neural_sheaf/errors.hpp"
#include "neural_sheaf/network.hpp"

namespace neural_sheaf {

enum class DatasetKind { paraboloid, saddle, circular, blobs };

inline std::string to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::paraboloid: return "paraboloid";
    case DatasetKind::saddle: return "saddle";
    case DatasetKind::circular: return "circular";
    case DatasetKind::blobs: return "blobs";
  }
  return "paraboloid";
}

inline DatasetKind parse_dataset_kind(const std::string& name) {
  if (name == "paraboloid") return DatasetKind::paraboloid;
  if (name == "saddle") return DatasetKind::saddle;
  if (name == "circular") return DatasetKind::circular;
  if (name == "blobs") return DatasetKind::blobs;
  throw ConfigError("unknown dataset kind '" + name + "'");
}

struct Dataset {
  Eigen::MatrixXd X;  ///< n0 x M
  Eigen::MatrixXd Y;  ///< 1 x M for regression and the circular task, one-hot C x M for blobs
  DatasetKind kind = DatasetKind::paraboloid;
  std::uint64_t seed = 0;

  Eigen::Index size() const { return X.cols(); }
  bool classification() const { return kind == DatasetKind::circular || kind == DatasetKind::blobs; }
};

inline double paraboloid_target(double x1, double x2) { return x1 * x1 + x2 * x2 - 2.0 / 3.0; }
inline double saddle_target(double x1, double x2) { return x1 * x1 - x2 * x2 + 0.5 * std::sin(2.0 * x1); }

/// Output activation that matches the task's targets.
inline OutputActivation task_activation(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::circular: return OutputActivation::sigmoid;
    case DatasetKind::blobs: return OutputActivation::softmax;
    default: return OutputActivation::identity;
  }
}

inline Eigen::Index task_output_dim(DatasetKind kind) { return kind == DatasetKind::blobs ? 4 : 1; }

/// Draws `n` samples. `stream` separates independent draws with the same seed
/// (0 for training data, 1 for test data).
inline Dataset make_dataset(DatasetKind kind, Eigen::Index n, std::uint64_t seed, std::uint64_t stream = 0) {
  if (n < 1) throw InvalidInputError("dataset needs at least one sample");
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(kind)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  Dataset d;
  d.kind = kind;
  d.seed = seed;
  d.X.resize(2, n);
  d.Y = Eigen::MatrixXd::Zero(task_output_dim(kind), n);
  const double two_pi = 2.0 * std::numbers::pi;
  for (Eigen::Index m = 0; m < n; ++m) {
    switch (kind) {
      case DatasetKind::paraboloid: {
        const double x1 = -2.0 + 4.0 * unit(rng);
        const double x2 = -2.0 + 4.0 * unit(rng);
        d.X.col(m) << x1, x2;
        d.Y(0, m) = paraboloid_target(x1, x2);
        break;
      }
      case DatasetKind::saddle: {
        const double x1 = 2.0 * unit(rng);
        const double x2 = 2.0 * unit(rng);
        d.X.col(m) << x1, x2;
        d.Y(0, m) = saddle_target(x1, x2);
        break;
      }
      case DatasetKind::circular: {
        const bool annulus = unit(rng) < 0.5;
        const double r = annulus ? 1.2 + 0.8 * unit(rng) : 0.8 * unit(rng);
        const double theta = two_pi * unit(rng);
        d.X.col(m) << r * std::cos(theta), r * std::sin(theta);
        d.Y(0, m) = annulus ? 1.0 : 0.0;
        break;
      }
      case DatasetKind::blobs: {
        static const double centers[4][2] = {{1.5, 1.5}, {-1.5, 1.5}, {-1.5, -1.5}, {1.5, -1.5}};
        const int c = static_cast<int>(std::floor(4.0 * unit(rng))) % 4;
        const double angle = c * std::numbers::pi / 4.0;
        const double u = std::sqrt(0.4) * normal(rng);
        const double v = std::sqrt(0.1) * normal(rng);
        const double cs = std::cos(angle);
        const double sn = std::sin(angle);
        d.X.col(m) << centers[c][0] + cs * u - sn * v, centers[c][1] + sn * u + cs * v;
        d.Y(c, m) = 1.0;
        break;
      }
    }
  }
  return d;
}

/// Train split on stream 0, test split on stream 1.
inline std::pair<Dataset, Dataset> make_split(DatasetKind kind, Eigen::Index n_train, Eigen::Index n_test,
                                              std::uint64_t seed) {
  return {make_dataset(kind, n_train, seed, 0), make_dataset(kind, n_test, seed, 1)};
}

struct TaskMetrics {
  double loss = 0;      ///< mean squared error, or mean cross-entropy for classification
  double accuracy = 0;  ///< classification only
};

/// Task loss of `spec` on (X, Y). Regression uses the mean over samples of
/// ||y_hat - y||^2; classification uses mean cross-entropy plus accuracy.
template <typename Scalar>
TaskMetrics evaluate_task(const NetworkSpec<Scalar>& spec, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                          bool classification) {
  if (X.cols() == 0) throw InvalidInputError("cannot evaluate on an empty dataset");
  if (X.rows() != spec.input_dim() || Y.rows() != spec.output_dim() || Y.cols() != X.cols()) {
    throw DimensionError("dataset does not match the network dimensions");
  }
  const Eigen::MatrixXd pred = predict(spec, X.cast<Scalar>().eval()).template cast<double>();
  const double m = static_cast<double>(X.cols());
  TaskMetrics out;
  if (!classification) {
    out.loss = (pred - Y).squaredNorm() / m;
    return out;
  }
  const double eps = 1e-300;
  double ce = 0;
  double correct = 0;
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    if (pred.rows() == 1) {
      const double s = pred(0, j);
      const double y = Y(0, j);
      ce -= y * std::log(std::max(s, eps)) + (1.0 - y) * std::log(std::max(1.0 - s, eps));
      correct += ((s >= 0.5) == (y >= 0.5)) ? 1.0 : 0.0;
    } else {
      Eigen::Index guess = 0;
      Eigen::Index truth = 0;
      pred.col(j).maxCoeff(&guess);
      Y.col(j).maxCoeff(&truth);
      ce -= Y.col(j).dot(pred.col(j).cwiseMax(eps).array().log().matrix());
      correct += guess == truth ? 1.0 : 0.0;
    }
  }
  out.loss = ce / m;
  out.accuracy = correct / m;
  return out;
}

template <typename Scalar>
TaskMetrics evaluate_task(const NetworkSpec<Scalar>& spec, const Dataset& data) {
  return evaluate_task(spec, data.X, data.Y, data.classification());
}

}  // namespace neural_sheaf
