#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "neural_sheaf/errors.hpp"
#include "neural_sheaf/network.hpp"
#include "support.hpp"

using namespace neural_sheaf;
using test_support::MatrixXd;
using test_support::VectorXd;

namespace {

NetworkSpec<double> hand_net() {
  NetworkSpec<double> s;
  s.layer_dims = {2, 2, 1};
  s.weights = {(MatrixXd(2, 2) << 1.0, -1.0, 0.5, 2.0).finished(), (MatrixXd(1, 2) << 3.0, -2.0).finished()};
  s.biases = {(VectorXd(2) << 0.0, -1.0).finished(), (VectorXd(1) << 0.25).finished()};
  return s;
}

}  // namespace

TEST_CASE("forward pass on a hand-computed net") {
  const NetworkSpec<double> s = hand_net();
  const MatrixXd x = (MatrixXd(2, 1) << 1.0, 2.0).finished();
  const auto t = forward_pass(s, x);
  // z1 = (1 - 2, 0.5 + 4 - 1) = (-1, 3.5); a1 = (0, 3.5); z2 = -7 + 0.25
  CHECK(t.pre(1)(0, 0) == doctest::Approx(-1.0));
  CHECK(t.pre(1)(1, 0) == doctest::Approx(3.5));
  CHECK(t.post(1)(0, 0) == 0.0);
  CHECK(t.post(1)(1, 0) == doctest::Approx(3.5));
  CHECK(t.y_hat(0, 0) == doctest::Approx(-6.75));
  CHECK_FALSE(t.pattern.layer(1)(0, 0));
  CHECK(t.pattern.layer(1)(1, 0));
}

TEST_CASE("relu pattern counts zero as active") {
  const MatrixXd z = (MatrixXd(3, 1) << -1e-12, 0.0, 2.0).finished();
  const Mask m = relu_pattern(z);
  CHECK_FALSE(m(0, 0));
  CHECK(m(1, 0));
  CHECK(m(2, 0));
}

TEST_CASE("batched forward pass equals the column loop") {
  std::mt19937_64 rng(3);
  const auto spec = test_support::random_net({3, 5, 4, 2}, OutputActivation::softmax, rng);
  const MatrixXd x = test_support::random_inputs(3, 6, rng);
  const MatrixXd batch = predict(spec, x);
  for (Eigen::Index m = 0; m < 6; ++m) {
    const MatrixXd one = predict(spec, MatrixXd(x.col(m)));
    CHECK((one.col(0) - batch.col(m)).cwiseAbs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("he initialization has zero biases and fan-in variance") {
  std::mt19937_64 rng(11);
  const auto spec = he_initialized<double>({400, 300, 1}, OutputActivation::identity, rng);
  CHECK(spec.bias(1).isZero());
  const MatrixXd& w = spec.weight(1);
  const double mean = w.mean();
  const double var = (w.array() - mean).square().mean();
  CHECK(std::abs(mean) < 0.005);
  CHECK(var == doctest::Approx(2.0 / 400.0).epsilon(0.03));
}

TEST_CASE("extended weight and activation blocks") {
  const NetworkSpec<double> s = hand_net();
  const MatrixXd wbar = extend_weight(s.weight(1), s.bias(1));
  REQUIRE(wbar.rows() == 2);
  REQUIRE(wbar.cols() == 4);
  CHECK(wbar(1, 3) == -1.0);
  CHECK(wbar(0, 3) == 0.0);
  const MatrixXd x = (MatrixXd(2, 1) << 1.0, 2.0).finished();
  const MatrixXd xbar = extend_activation(x, 2);
  CHECK(xbar.rows() == 4);
  CHECK(((wbar * xbar) - (s.weight(1) * x + s.bias(1))).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("activation jacobians match finite differences") {
  const VectorXd z = (VectorXd(3) << 0.3, -1.2, 0.8).finished();
  for (auto phi : {OutputActivation::identity, OutputActivation::sigmoid, OutputActivation::tanh,
                   OutputActivation::softmax}) {
    const MatrixXd j = activation_jacobian(phi, z);
    MatrixXd fd(3, 3);
    const double h = 1e-6;
    for (int c = 0; c < 3; ++c) {
      VectorXd zp = z;
      VectorXd zm = z;
      zp(c) += h;
      zm(c) -= h;
      fd.col(c) = (activate<double>(phi, zp) - activate<double>(phi, zm)).col(0) / (2 * h);
    }
    CHECK((j - fd).cwiseAbs().maxCoeff() < 1e-9);
    const VectorXd v = (VectorXd(3) << 1.0, -2.0, 0.5).finished();
    const MatrixXd jt = activation_jacobian_transpose_apply<double>(phi, z, v);
    CHECK((jt.col(0) - j.transpose() * v).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("softmax is shift invariant and stable") {
  const MatrixXd z = (MatrixXd(3, 1) << 1000.0, 1001.0, 999.0).finished();
  const MatrixXd s = activate(OutputActivation::softmax, z);
  CHECK(s.allFinite());
  CHECK(s.sum() == doctest::Approx(1.0));
  const MatrixXd s2 = activate(OutputActivation::softmax, MatrixXd(z.array() - 1000.0));
  CHECK((s - s2).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("output activation names round trip") {
  for (auto phi : {OutputActivation::identity, OutputActivation::sigmoid, OutputActivation::tanh,
                   OutputActivation::softmax}) {
    CHECK(parse_output_activation(to_string(phi)) == phi);
  }
  CHECK_THROWS_AS(parse_output_activation("relu"), ConfigError);
}

TEST_CASE("invalid specs are rejected") {
  NetworkSpec<double> s = hand_net();
  s.weights[0] = MatrixXd::Zero(3, 2);
  CHECK_THROWS_AS(s.validate(), DimensionError);
  s = hand_net();
  s.biases[1](0) = std::nan("");
  CHECK_THROWS_AS(s.validate(), InvalidInputError);
  std::mt19937_64 rng(0);
  CHECK_THROWS_AS(he_initialized<double>({2, 1}, OutputActivation::identity, rng), DimensionError);
  CHECK_THROWS_AS(forward_pass(hand_net(), MatrixXd(MatrixXd::Zero(3, 1))), DimensionError);
}

TEST_CASE("single precision instantiation") {
  const NetworkSpec<float> s = hand_net().cast<float>();
  const Eigen::MatrixXf x = (Eigen::MatrixXf(2, 1) << 1.0f, 2.0f).finished();
  CHECK(predict(s, x)(0, 0) == doctest::Approx(-6.75f));
}
