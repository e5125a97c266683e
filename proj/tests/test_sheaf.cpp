#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "neural_sheaf/errors.hpp"
#include "neural_sheaf/sheaf.hpp"
#include "support.hpp"

using namespace neural_sheaf;
using test_support::MatrixXd;
using test_support::VectorXd;

namespace {

NetworkSpec<double> net(const std::vector<Eigen::Index>& dims, OutputActivation phi = OutputActivation::identity) {
  std::mt19937_64 rng(5);
  return test_support::random_net(dims, phi, rng);
}

}  // namespace

TEST_CASE("path layout for [2,3,1]") {
  const NeuralSheaf<double> s(net({2, 3, 1}));
  // x: 2 + 3, z1: 3, a1: 3 + 1, z2: 1, y: 1
  CHECK(s.dimension() == 14);
  REQUIRE(s.vertices().size() == 5);
  CHECK(s.vertices()[0].name == "x");
  CHECK(s.vertices()[2].dim == 4);
  CHECK(s.vertices()[4].name == "y");
  std::vector<std::string> names;
  for (const auto& e : s.edges()) names.push_back(e.name);
  CHECK(names == std::vector<std::string>{"W1", "R1", "W2", "out"});
  // fixed: the extended input (5) and the ones block of a1 (1)
  CHECK(s.boundary_size() == 6);
  CHECK(s.free_count() == 8);
  CHECK_FALSE(s.output_edge_active());
}

TEST_CASE("edge count and free dimension for deeper nets") {
  const NeuralSheaf<double> s(net({3, 4, 5, 2}, OutputActivation::sigmoid));
  CHECK(s.edges().size() == 2 * 2 + 2);
  CHECK(s.free_count() == 4 + 4 + 5 + 5 + 2 + 2);
  CHECK(s.output_edge_active());
}

TEST_CASE("boundary cochain carries inputs and ones blocks") {
  const NeuralSheaf<double> s(net({2, 3, 2, 1}));
  const MatrixXd x = (MatrixXd(2, 2) << 0.5, -1.0, 2.0, 3.0).finished();
  const Cochain<double> c = boundary_cochain(s, x);
  CHECK(c.values.topRows(2) == x);
  CHECK(c.values.middleRows(2, 3).isOnes());
  CHECK(c.values.middleRows(s.activation_offset(1) + 3, 2).isOnes());
  CHECK(c.values.middleRows(s.activation_offset(2) + 2, 1).isOnes());
  CHECK(free_part(s, c.values, 1).isZero());
}

TEST_CASE("hard pins join the boundary, soft pins add a target vertex") {
  const auto spec = net({2, 4, 1});
  const VectorXd t = (VectorXd(2) << 0.7, -0.1).finished();
  const NeuralSheaf<double> base(spec);
  const auto hard = apply_pin(base, PinSpec<double>::hard_pin(PinSite::hidden, 1, {1, 3}, t));
  CHECK(hard.free_count() == base.free_count() - 2);
  CHECK(hard.dimension() == base.dimension());
  const Cochain<double> hc = boundary_cochain(hard, MatrixXd(MatrixXd::Zero(2, 1)));
  CHECK(hc.values(hard.activation_offset(1) + 1, 0) == 0.7);
  CHECK(hc.values(hard.activation_offset(1) + 3, 0) == -0.1);

  const auto soft = apply_pin(base, PinSpec<double>::soft_pin(PinSite::hidden, 1, {1, 3}, t, 5.0));
  CHECK(soft.dimension() == base.dimension() + 2);
  CHECK(soft.free_count() == base.free_count());
  CHECK(soft.edges().back().kind == EdgeKind::pin);
  const Cochain<double> sc = boundary_cochain(soft, MatrixXd(MatrixXd::Zero(2, 1)));
  CHECK(sc.values.bottomRows(2).col(0) == t);
  CHECK(remove_pins(soft).dimension() == base.dimension());
}

TEST_CASE("output pins activate the output edge for identity output") {
  const auto spec = net({2, 4, 1});
  const NeuralSheaf<double> s(spec, {PinSpec<double>::hard_pin(PinSite::output, 2, {0}, VectorXd::Constant(1, 0.3))});
  CHECK(s.output_edge_active());
  CHECK(s.free_count() == 4 + 4 + 1);
}

TEST_CASE("invalid pins are rejected") {
  const auto spec = net({2, 4, 1});
  const VectorXd one = VectorXd::Constant(1, 0.0);
  CHECK_THROWS_AS(NeuralSheaf<double>(spec, {PinSpec<double>::hard_pin(PinSite::input, 0, {0}, one)}), ConfigError);
  CHECK_THROWS_AS(NeuralSheaf<double>(spec, {PinSpec<double>::hard_pin(PinSite::hidden, 2, {0}, one)}), ConfigError);
  CHECK_THROWS_AS(NeuralSheaf<double>(spec, {PinSpec<double>::hard_pin(PinSite::hidden, 1, {4}, one)}), ConfigError);
  CHECK_THROWS_AS(NeuralSheaf<double>(spec, {PinSpec<double>::hard_pin(PinSite::hidden, 1, {9}, one)}), ConfigError);
  CHECK_THROWS_AS(NeuralSheaf<double>(spec, {PinSpec<double>::hard_pin(PinSite::hidden, 1, {0, 1}, one)}),
                  DimensionError);
  CHECK_THROWS_AS(
      NeuralSheaf<double>(spec, {PinSpec<double>::hard_pin(PinSite::hidden, 1, {1, 1}, VectorXd::Zero(2))}),
      ConfigError);
  CHECK_THROWS_AS(NeuralSheaf<double>(spec, {PinSpec<double>::soft_pin(PinSite::hidden, 1, {0}, one, -1.0)}),
                  ConfigError);
  CHECK_THROWS_AS(NeuralSheaf<double>(spec, {PinSpec<double>::hard_pin(PinSite::hidden, 1, {0}, one),
                                             PinSpec<double>::hard_pin(PinSite::hidden, 1, {0}, one)}),
                  ConfigError);
}

TEST_CASE("forward cochain embeds the forward trace") {
  const auto spec = net({2, 3, 2}, OutputActivation::softmax);
  const NeuralSheaf<double> s(spec);
  const MatrixXd x = (MatrixXd(2, 1) << 0.4, -0.9).finished();
  const Cochain<double> c = forward_cochain(s, x);
  const auto t = forward_pass(spec, x);
  CHECK(c.values.middleRows(s.pre_offset(1), 3) == t.pre(1));
  CHECK(c.values.middleRows(s.activation_offset(1), 3) == t.post(1));
  CHECK(c.values.middleRows(s.output_offset(), 2) == t.y_hat);
  CHECK(current_pattern(s, c.values) == t.pattern);
}

TEST_CASE("random cochain keeps the boundary and syncs an eliminated output") {
  const NeuralSheaf<double> s(net({2, 3, 1}));
  std::mt19937_64 rng(1);
  const MatrixXd x = (MatrixXd(2, 1) << 1.0, 2.0).finished();
  const Cochain<double> c = random_cochain(s, x, rng);
  CHECK(fixed_part(s, c.values) == fixed_part(s, boundary_cochain(s, x).values));
  CHECK(c.values(s.output_offset(), 0) == c.values(s.pre_offset(2), 0));
}
