#pragma once

// Shared fixtures for the unit tests.

#include <Eigen/Dense>

#include <random>
#include <vector>

#include "neural_sheaf/network.hpp"

namespace test_support {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// He weights plus N(0, 0.3^2) biases so that bias paths are exercised.
inline neural_sheaf::NetworkSpec<double> random_net(const std::vector<Index>& dims, neural_sheaf::OutputActivation phi,
                                                    std::mt19937_64& rng) {
  auto spec = neural_sheaf::he_initialized<double>(dims, phi, rng);
  std::normal_distribution<double> n(0.0, 0.3);
  for (auto& b : spec.biases) {
    for (Index i = 0; i < b.size(); ++i) b(i) = n(rng);
  }
  return spec;
}

inline MatrixXd random_inputs(Index n0, Index m, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  MatrixXd x(n0, m);
  for (Index j = 0; j < m; ++j) {
    for (Index i = 0; i < n0; ++i) x(i, j) = u(rng);
  }
  return x;
}

/// Cyclic Jacobi eigenvalue iteration; an oracle independent of Eigen's solver.
inline VectorXd jacobi_eigenvalues(MatrixXd a, double tol = 1e-14) {
  const Index n = a.rows();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (Index i = 0; i < n; ++i) {
      for (Index j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    }
    if (off < tol * tol) break;
    for (Index p = 0; p < n; ++p) {
      for (Index q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (Index k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Index k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  VectorXd ev = a.diagonal();
  std::sort(ev.data(), ev.data() + n);
  return ev;
}

}  // namespace test_support
