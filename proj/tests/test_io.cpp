#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "neural_sheaf/errors.hpp"
#include "neural_sheaf/io.hpp"
#include "support.hpp"

using namespace neural_sheaf;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "neural_sheaf_test_io";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

}  // namespace

TEST_CASE("model round trip is exact") {
  std::mt19937_64 rng(71);
  const auto spec = test_support::random_net({3, 5, 4, 2}, OutputActivation::softmax, rng);
  const fs::path p = scratch("model.json");
  save_model(p, spec);
  const auto back = load_model(p);
  CHECK(back.layer_dims == spec.layer_dims);
  CHECK(back.output_activation == OutputActivation::softmax);
  for (std::size_t l = 0; l < spec.weights.size(); ++l) {
    CHECK(back.weights[l] == spec.weights[l]);
    CHECK(back.biases[l] == spec.biases[l]);
  }
}

TEST_CASE("model JSON validation") {
  std::mt19937_64 rng(72);
  json j = model_to_json(test_support::random_net({2, 3, 1}, OutputActivation::identity, rng));
  json extra = j;
  extra["momentum"] = 0.9;
  CHECK_THROWS_AS(model_from_json(extra), ConfigError);
  json missing = j;
  missing.erase("biases");
  CHECK_THROWS_AS(model_from_json(missing), ConfigError);
  json bad_shape = j;
  bad_shape["weights"][0].erase(0);
  CHECK_THROWS_AS(model_from_json(bad_shape), DimensionError);
  json no_hidden = j;
  no_hidden["layer_dims"] = {2, 1};
  CHECK_THROWS_AS(model_from_json(no_hidden), DimensionError);
  json text = j;
  text["biases"][0][0] = "zero";
  CHECK_THROWS_AS(model_from_json(text), InvalidInputError);
  json act = j;
  act["output_activation"] = "gelu";
  CHECK_THROWS(model_from_json(act));
  CHECK_THROWS_AS(read_json_file(scratch("does_not_exist.json")), ConfigError);
  const fs::path broken = scratch("broken.json");
  std::ofstream(broken) << "{\"layer_dims\": [";
  CHECK_THROWS_AS(read_json_file(broken), ConfigError);
}

TEST_CASE("number formatting round trips") {
  for (double v : {0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, 0.0}) {
    CHECK(std::stod(format_number(v)) == v);
  }
  CHECK(format_number(0.5) == "0.5");
  CHECK(format_number(-2.0) == "-2");
}

TEST_CASE("CSV writer") {
  const fs::path p = scratch("plain.csv");
  {
    CsvWriter csv(p, {"a", "b"});
    csv.row(std::vector<double>{1.5, -0.25});
    csv.row(std::vector<std::string>{"x", "y"});
    CHECK_THROWS_AS(csv.row(std::vector<double>{1.0}), DimensionError);
  }
  CHECK(lines_of(p) == std::vector<std::string>{"a,b", "1.5,-0.25", "x,y"});
}

TEST_CASE("dataset and scatter CSV layouts") {
  const Dataset d = make_dataset(DatasetKind::blobs, 5, 1);
  const fs::path p = scratch("blobs.csv");
  write_dataset_csv(p, d);
  const auto lines = lines_of(p);
  REQUIRE(lines.size() == 6);
  CHECK(lines[0] == "x1,x2,y1,y2,y3,y4");
  std::stringstream first(lines[1]);
  std::string cell;
  std::getline(first, cell, ',');
  CHECK(std::stod(cell) == d.X(0, 0));

  const fs::path q = scratch("regress.csv");
  write_dataset_csv(q, make_dataset(DatasetKind::saddle, 3, 1));
  CHECK(lines_of(q)[0] == "x1,x2,y");

  const fs::path s = scratch("scatter.csv");
  write_scatter_csv(s, {DiscordRecord{2, 1, 4, -0.5, 0.25, 0.0, false}});
  CHECK(lines_of(s) == std::vector<std::string>{"sample,layer,coord,z,weight_residual,relu_residual,active",
                                                "2,1,4,-0.5,0.25,0,0"});
}

TEST_CASE("trajectory and history CSV headers") {
  std::mt19937_64 rng(73);
  const auto spec = test_support::random_net({2, 3, 1}, OutputActivation::identity, rng);
  const NeuralSheaf<double> sheaf(spec);
  DiffusionConfig c;
  c.max_steps = 50;
  c.record_every = 10;
  const auto t = run_diffusion(sheaf, test_support::random_inputs(2, 2, rng), InitMode::random, c);
  const fs::path p = scratch("trajectory.csv");
  write_trajectory_csv(p, t);
  const auto lines = lines_of(p);
  CHECK(lines[0] == "step,discord_total,energy,discord_edge_W1,discord_edge_R1,discord_edge_W2,discord_edge_out,y_hat_0,y_hat_1");
  CHECK(lines.size() == t.steps.size() + 1);
  write_crossings_csv(scratch("crossings.csv"), t);
  CHECK(lines_of(scratch("crossings.csv"))[0] == "step,sample,layer,coord,direction");

  TrainHistory h;
  h.steps = {0};
  h.train_loss = {1.0};
  h.test_loss = {2.0};
  h.train_accuracy = {std::nan("")};
  h.test_accuracy = {std::nan("")};
  h.edge_names = {"W1", "R1", "W2", "out"};
  h.weight_norms = {{1.0, 2.0}};
  write_history_csv(scratch("history.csv"), h);
  const auto hl = lines_of(scratch("history.csv"));
  CHECK(hl[0] ==
        "step,train_loss,test_loss,train_accuracy,test_accuracy,discord_total,discord_edge_W1,discord_edge_R1,"
        "discord_edge_W2,discord_edge_out,wnorm_layer_1,wnorm_layer_2");
  CHECK(hl[1] == "0,1,2,nan,nan,nan,nan,nan,nan,nan,1,2");
}
