#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "neural_sheaf/errors.hpp"
#include "neural_sheaf/training.hpp"
#include "support.hpp"

using namespace neural_sheaf;
using test_support::MatrixXd;
using test_support::VectorXd;

namespace {

// 1/2 sum of squared weight-edge residuals as a function of the parameters.
double weight_edge_energy(const NeuralSheaf<double>& s, const Cochain<double>& c) {
  const auto parts = coboundary_apply(s, c);
  double e = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (s.edges()[i].kind == EdgeKind::weight) e += 0.5 * parts[i].squaredNorm();
  }
  return e;
}

}  // namespace

TEST_CASE("default beta and stagnation bound") {
  CHECK(default_beta(300) == doctest::Approx(1.0 / 300.0));
  CHECK_THROWS_AS(default_beta(0), InvalidInputError);
  CHECK(stagnation_bound(0.1, 2.0, 3.0, 1.5, 0.2) == doctest::Approx(0.1 * 2.0 * 3.0 / (1.5 * 0.2)));
  CHECK_THROWS_AS(stagnation_bound(0.1, 2.0, 3.0, 1.0, 0.0), DomainError);
  CHECK_THROWS_AS(stagnation_bound(-0.1, 2.0, 3.0, 1.0, 0.5), DomainError);
}

TEST_CASE("training sheaf clamps the output") {
  std::mt19937_64 rng(41);
  const auto spec = test_support::random_net({2, 4, 3}, OutputActivation::softmax, rng);
  const NeuralSheaf<double> s = training_sheaf(spec);
  for (Eigen::Index i = 0; i < 3; ++i) CHECK_FALSE(s.free_mask()[static_cast<std::size_t>(s.output_offset() + i)]);
  CHECK(s.output_edge_active());
}

TEST_CASE("weight velocity is minus beta times the parameter gradient") {
  std::mt19937_64 rng(42);
  const auto spec = test_support::random_net({3, 4, 2, 1}, OutputActivation::identity, rng);
  NeuralSheaf<double> s = training_sheaf(spec);
  const Cochain<double> c = random_cochain(s, test_support::random_inputs(3, 5, rng), rng);
  const double beta = 0.3;
  const auto u = weight_velocity(s, c, beta);
  const double h = 1e-6;
  for (int l = 1; l <= 3; ++l) {
    auto& w = s.network().weights[static_cast<std::size_t>(l - 1)];
    for (Eigen::Index j = 0; j < w.size(); ++j) {
      const double keep = w(j);
      w(j) = keep + h;
      const double fp = weight_edge_energy(s, c);
      w(j) = keep - h;
      const double fm = weight_edge_energy(s, c);
      w(j) = keep;
      CHECK(u[static_cast<std::size_t>(l - 1)].dW(j) == doctest::Approx(-beta * (fp - fm) / (2 * h)).epsilon(1e-6));
    }
    auto& b = s.network().biases[static_cast<std::size_t>(l - 1)];
    for (Eigen::Index j = 0; j < b.size(); ++j) {
      const double keep = b(j);
      b(j) = keep + h;
      const double fp = weight_edge_energy(s, c);
      b(j) = keep - h;
      const double fm = weight_edge_energy(s, c);
      b(j) = keep;
      CHECK(u[static_cast<std::size_t>(l - 1)].db(j) == doctest::Approx(-beta * (fp - fm) / (2 * h)).epsilon(1e-6));
    }
  }
}

TEST_CASE("joint step with regularization pulls toward the anchors") {
  std::mt19937_64 rng(43);
  const auto spec = test_support::random_net({2, 3, 1}, OutputActivation::identity, rng);
  const MatrixXd X = test_support::random_inputs(2, 4, rng);
  const MatrixXd Y = MatrixXd::Zero(1, 4);
  TrainConfig plain;
  TrainConfig reg;
  reg.lambda = 2.0;
  reg.mu = 3.0;
  TrainState<double> a = make_train_state(spec, X, Y, plain);
  TrainState<double> b = make_train_state(spec, X, Y, reg);
  REQUIRE(a.cochain.values == b.cochain.values);
  const double beta = 0.25;
  joint_step(a, plain, beta);
  joint_step(b, reg, beta);
  // zero anchors: the extra terms are -dt alpha lambda w and -dt beta mu W
  const auto& s = a.sheaf;
  MatrixXd expected = a.cochain.values;
  const MatrixXd start = make_train_state(spec, X, Y, plain).cochain.values;
  for (auto idx : s.free_indices()) expected.row(idx) -= plain.dt * plain.alpha * 2.0 * start.row(idx);
  CHECK((b.cochain.values - expected).cwiseAbs().maxCoeff() < 1e-14);
  const MatrixXd w_expected = a.sheaf.network().weight(1) - plain.dt * beta * 3.0 * spec.weight(1);
  CHECK((b.sheaf.network().weight(1) - w_expected).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("initial anchors leave a state at its anchor unaffected") {
  std::mt19937_64 rng(44);
  const auto spec = test_support::random_net({2, 3, 1}, OutputActivation::identity, rng);
  const MatrixXd X = test_support::random_inputs(2, 3, rng);
  const MatrixXd Y = MatrixXd::Ones(1, 3);
  TrainConfig plain;
  TrainConfig anchored;
  anchored.lambda = 5.0;
  anchored.mu = 5.0;
  anchored.anchors = AnchorMode::initial;
  TrainState<double> a = make_train_state(spec, X, Y, plain);
  TrainState<double> b = make_train_state(spec, X, Y, anchored);
  joint_step(a, plain, 0.1);
  joint_step(b, anchored, 0.1);
  CHECK((a.cochain.values - b.cochain.values).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((a.sheaf.network().weight(2) - b.sheaf.network().weight(2)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("short training run reduces the regression loss") {
  const auto [tr, te] = make_split(DatasetKind::paraboloid, 60, 40, 1);
  TrainConfig c;
  c.steps = 4000;
  c.record_every = 1000;
  c.seed = 2;
  const auto r = train<double>({2, 12, 1}, OutputActivation::identity, tr, te, c);
  REQUIRE(r.history.size() == 5);
  CHECK(r.history.steps.back() == 4000);
  CHECK(r.history.train_loss.back() < r.history.train_loss.front());
  CHECK(r.history.edge_names.size() == 4);
  CHECK(r.history.weight_norms.front().size() == 2);
  // deterministic
  const auto again = train<double>({2, 12, 1}, OutputActivation::identity, tr, te, c);
  CHECK(again.history.train_loss == r.history.train_loss);
}

TEST_CASE("classification training with cross-entropy and forward init") {
  const auto [tr, te] = make_split(DatasetKind::blobs, 80, 40, 3);
  TrainConfig c;
  c.steps = 3000;
  c.record_every = 3000;
  c.loss = LossKind::cross_entropy();
  c.init_mode = InitMode::forward;
  const auto r = train<double>({2, 10, 4}, OutputActivation::softmax, tr, te, c);
  CHECK(r.history.train_loss.back() < r.history.train_loss.front());
  CHECK(r.history.test_accuracy.back() > 0.5);
}

TEST_CASE("training config validation") {
  TrainConfig c;
  c.beta = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.init_mode = InitMode::zeros;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  std::mt19937_64 rng(45);
  const auto spec = test_support::random_net({2, 3, 1}, OutputActivation::identity, rng);
  TrainConfig ce;
  ce.loss = LossKind::cross_entropy();
  CHECK_THROWS_AS(make_train_state(spec, MatrixXd(MatrixXd::Zero(2, 2)), MatrixXd(MatrixXd::Zero(1, 2)), ce), ConfigError);
  CHECK_THROWS_AS(make_train_state(spec, MatrixXd(MatrixXd::Zero(2, 2)), MatrixXd(MatrixXd::Zero(1, 3)), TrainConfig{}), DimensionError);
}

TEST_CASE("training divergence surfaces as a typed error") {
  const auto [tr, te] = make_split(DatasetKind::paraboloid, 50, 10, 0);
  TrainConfig c;
  c.beta = 50.0;
  c.steps = 5000;
  CHECK_THROWS_AS(train<double>({2, 10, 1}, OutputActivation::identity, tr, te, c), DivergenceError);
}
