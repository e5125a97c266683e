#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "neural_sheaf/diagnostics.hpp"
#include "neural_sheaf/errors.hpp"
#include "neural_sheaf/training.hpp"
#include "support.hpp"

using namespace neural_sheaf;
using test_support::MatrixXd;
using test_support::VectorXd;

TEST_CASE("spectrum agrees with the Jacobi oracle") {
  std::mt19937_64 rng(51);
  for (auto dims : std::vector<std::vector<Eigen::Index>>{{2, 6, 1}, {2, 4, 3, 1}, {3, 5, 2}}) {
    const NeuralSheaf<double> s(test_support::random_net(dims, OutputActivation::identity, rng));
    const MatrixXd lap = forward_restricted_laplacian(s, VectorXd(test_support::random_inputs(dims[0], 1, rng)));
    const auto r = spectrum(lap);
    const VectorXd oracle = test_support::jacobi_eigenvalues(lap);
    CHECK((r.eigenvalues - oracle).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(r.lambda1 == doctest::Approx(oracle(0)));
    CHECK(r.kappa == doctest::Approx(oracle(oracle.size() - 1) / oracle(0)));
    for (Eigen::Index j = 0; j < r.eigenvectors.cols(); ++j) {
      CHECK((lap * r.eigenvectors.col(j) - r.eigenvalues(j) * r.eigenvectors.col(j)).norm() < 1e-9);
      Eigen::Index i = 0;
      r.eigenvectors.col(j).cwiseAbs().maxCoeff(&i);
      CHECK(r.eigenvectors(i, j) > 0);
    }
  }
}

TEST_CASE("spectrum of a hand matrix") {
  const MatrixXd m = (MatrixXd(2, 2) << 2.0, 1.0, 1.0, 2.0).finished();
  const auto r = spectrum(m);
  CHECK(r.lambda1 == doctest::Approx(1.0));
  CHECK(r.lambda_max == doctest::Approx(3.0));
  CHECK(r.kappa == doctest::Approx(3.0));
  CHECK(r.eigenvectors(0, 1) == doctest::Approx(std::sqrt(0.5)));
  CHECK_THROWS_AS(spectrum(MatrixXd((MatrixXd(2, 2) << 1.0, 2.0, 0.0, 1.0).finished())), InvalidInputError);
  CHECK_THROWS_AS(spectrum(MatrixXd(MatrixXd::Zero(2, 3))), DimensionError);
}

TEST_CASE("block energies partition a unit vector") {
  std::mt19937_64 rng(52);
  const auto spec = test_support::random_net({2, 7, 1}, OutputActivation::identity, rng);
  const FiedlerEnergy fe = fiedler_block_energy(spec, VectorXd(test_support::random_inputs(2, 1, rng)));
  double total = 0;
  std::vector<std::string> names;
  for (const auto& b : fe.fiedler) {
    total += b.energy;
    names.push_back(b.block);
  }
  CHECK(total == doctest::Approx(1.0));
  CHECK(names == std::vector<std::string>{"z1", "a1", "z2"});
  CHECK(fe.lambda1 <= fe.lambda_max);
  // a sigmoid output keeps y_hat in the full form
  const auto sig = test_support::random_net({2, 7, 1}, OutputActivation::sigmoid, rng);
  const FiedlerEnergy fs = fiedler_block_energy(sig, VectorXd(test_support::random_inputs(2, 1, rng)));
  CHECK(fs.fiedler.back().block == "y");
}

TEST_CASE("summary statistics") {
  const SummaryStats s = summarize({4.0, 1.0, 3.0, 2.0});
  CHECK(s.median == 2.5);
  CHECK(s.mean == 2.5);
  CHECK(s.std == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(s.min == 1.0);
  CHECK(s.max == 4.0);
  CHECK(summarize({7.0}).std == 0.0);
  CHECK_THROWS_AS(summarize({}), InvalidInputError);
}

TEST_CASE("spectral gap shrinks with depth") {
  const double shallow = he_spectral_sweep({2, 30, 1}, 20, 3).lambda1_stats.median;
  const double deep = he_spectral_sweep({2, 8, 6, 4, 1}, 20, 3).lambda1_stats.median;
  CHECK(shallow > deep);
  std::mt19937_64 rng(53);
  const auto spec = he_initialized<double>({2, 10, 1}, OutputActivation::identity, rng);
  const SpectralSweep sw = spectral_sweep(spec, 10, 1);
  CHECK(sw.lambda1.size() == 10);
  CHECK(sw.lambda1_stats.min > 0.0);
}

TEST_CASE("residual scatter at the forward cochain is zero") {
  std::mt19937_64 rng(54);
  const auto spec = test_support::random_net({2, 5, 3, 1}, OutputActivation::identity, rng);
  const NeuralSheaf<double> s(spec);
  const auto recs = residual_scatter(s, forward_cochain(s, test_support::random_inputs(2, 4, rng)));
  CHECK(recs.size() == 4 * (5 + 3));
  for (const auto& r : recs) {
    CHECK(std::abs(r.weight_residual) < 1e-14);
    CHECK(std::abs(r.relu_residual) < 1e-14);
    CHECK(r.active == (r.z >= 0));
  }
}

TEST_CASE("clamped equilibrium localizes discord on active coordinates") {
  std::mt19937_64 rng(55);
  const auto spec = test_support::random_net({2, 8, 1}, OutputActivation::identity, rng);
  const MatrixXd X = test_support::random_inputs(2, 6, rng);
  MatrixXd Y(1, 6);
  for (Eigen::Index m = 0; m < 6; ++m) Y(0, m) = paraboloid_target(X(0, m), X(1, m));
  DiffusionConfig c;
  c.max_steps = 200000;
  c.record_every = 10000;
  const auto t = clamped_equilibrium(spec, X, Y, c);
  REQUIRE(t.converged);
  CHECK((t.final_cochain.values.middleRows(training_sheaf(spec).output_offset(), 1) - Y).cwiseAbs().maxCoeff() == 0);
  for (const auto& r : residual_scatter(training_sheaf(spec), t.final_cochain)) {
    if (!r.active) CHECK(std::abs(r.weight_residual) < 1e-8);
  }
  const PinnedDiscordReport rep = pinned_discord(spec, X, Y, c);
  CHECK(rep.samples == 6);
  CHECK(rep.non_converged == 0);
  CHECK(rep.edges.size() == 4);
  CHECK(rep.total_mean > 0.0);
}

TEST_CASE("per-edge discord names follow the edge order") {
  std::mt19937_64 rng(56);
  const auto spec = test_support::random_net({2, 3, 3, 1}, OutputActivation::identity, rng);
  const NeuralSheaf<double> s(spec);
  const auto d = per_edge_discord(s, random_cochain(s, test_support::random_inputs(2, 1, rng), rng));
  std::vector<std::string> names;
  for (const auto& e : d) names.push_back(e.edge);
  CHECK(names == std::vector<std::string>{"W1", "R1", "W2", "R2", "W3", "out"});
}
