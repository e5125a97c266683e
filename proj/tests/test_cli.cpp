#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "neural_sheaf/cli.hpp"
#include "neural_sheaf/io.hpp"
#include "support.hpp"

using namespace neural_sheaf;
namespace fs = std::filesystem;

namespace {

fs::path out_root() {
  const fs::path dir = fs::temp_directory_path() / "neural_sheaf_test_cli";
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run(std::vector<std::string> args) {
  args.push_back("--out");
  args.push_back(out_root().string());
  return run_cli(args);
}

fs::path tiny_model() {
  std::mt19937_64 rng(81);
  const fs::path p = out_root() / "tiny.json";
  save_model(p, test_support::random_net({2, 4, 1}, OutputActivation::identity, rng));
  return p;
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(run_cli(std::vector<std::string>{}) == exit_usage);
  CHECK(run_cli({"frobnicate"}) == exit_usage);
  CHECK(run_cli({"train", "--no-such-flag", "1"}) == exit_usage);
  CHECK(run_cli({"--help"}) == exit_ok);
  CHECK(run_cli({"train", "--help"}) == exit_ok);

  fs::remove_all(out_root() / "converge-missing");
  CHECK(run({"converge", "--model", (out_root() / "absent.json").string(), "--input", "0,0", "--label", "missing"}) ==
        exit_usage);
  CHECK_FALSE(fs::exists(out_root() / "converge-missing"));

  const fs::path cfg = out_root() / "bad_config.json";
  std::ofstream(cfg) << R"({"kind": "saddle", "colour": "blue"})";
  CHECK(run({"dataset", "--config", cfg.string(), "--label", "bad"}) == exit_usage);
  CHECK(run({"dataset", "--kind", "spiral", "--label", "bad"}) == exit_usage);
  CHECK(run({"dataset", "--n", "ten", "--label", "bad"}) == exit_usage);
  CHECK(run({"train", "--arch", "2,1", "--label", "bad"}) == exit_usage);
}

TEST_CASE("dataset command is deterministic and records its config") {
  REQUIRE(run({"dataset", "--kind", "circular", "--n", "25", "--seed", "4", "--label", "a"}) == exit_ok);
  REQUIRE(run({"dataset", "--kind", "circular", "--n", "25", "--seed", "4", "--label", "b"}) == exit_ok);
  const std::string a = slurp(out_root() / "dataset-a" / "dataset.csv");
  CHECK(a == slurp(out_root() / "dataset-b" / "dataset.csv"));
  CHECK(a.rfind("x1,x2,y\n", 0) == 0);
  const json cfg = read_json_file(out_root() / "dataset-a" / "config.json");
  CHECK(cfg.at("n") == 25);
  CHECK(cfg.at("kind") == "circular");

  const fs::path file = out_root() / "dataset_config.json";
  std::ofstream(file) << R"({"kind": "saddle", "n": 7})";
  REQUIRE(run({"dataset", "--config", file.string(), "--n", "9", "--label", "c"}) == exit_ok);
  const json c = read_json_file(out_root() / "dataset-c" / "config.json");
  CHECK(c.at("kind") == "saddle");
  CHECK(c.at("n") == 9);  // flags override the file
}

TEST_CASE("converge reaches the forward output") {
  const fs::path model = tiny_model();
  REQUIRE(run({"converge", "--model", model.string(), "--input", "0.5,-1", "--label", "tiny"}) == exit_ok);
  const json s = read_json_file(out_root() / "converge-tiny" / "summary.json");
  CHECK(s.at("converged") == true);
  CHECK(s.at("final_gap").get<double>() <= 1e-8);
  CHECK(s.at("config").at("input") == "0.5,-1");
  CHECK(fs::exists(out_root() / "converge-tiny" / "trajectory.csv"));
  CHECK(fs::exists(out_root() / "converge-tiny" / "crossings.csv"));

  CHECK(run({"converge", "--model", model.string(), "--input", "0.5,-1", "--max-steps", "3", "--label", "short"}) ==
        exit_runtime);
  CHECK(run({"converge", "--model", model.string(), "--input", "0.5", "--label", "wrong"}) == exit_usage);
  REQUIRE(run({"converge", "--model", model.string(), "--input", "0.5,-1", "--pin",
               "layer=1,idx=0;2,target=0.3;-0.2,gamma=2", "--label", "pinned"}) == exit_ok);
  CHECK(run({"converge", "--model", model.string(), "--input", "0.5,-1", "--pin", "layer=1,idx=9,target=1",
             "--label", "badpin"}) == exit_usage);
}

TEST_CASE("train and sgd write models and histories") {
  REQUIRE(run({"train", "--arch", "2,8,1", "--n-train", "40", "--n-test", "20", "--steps", "500", "--record-every",
               "250", "--label", "t"}) == exit_ok);
  const fs::path t = out_root() / "train-t";
  const json s = read_json_file(t / "summary.json");
  CHECK(s.at("config").at("steps") == 500);
  CHECK(s.at("beta").get<double>() == doctest::Approx(1.0 / 40.0));
  CHECK(load_model(t / "model.json").layer_dims == std::vector<Eigen::Index>{2, 8, 1});
  std::ifstream hist(t / "history.csv");
  std::size_t lines = 0;
  for (std::string line; std::getline(hist, line);) ++lines;
  CHECK(lines == 4);

  REQUIRE(run({"sgd", "--arch", "2,8,1", "--n-train", "40", "--n-test", "20", "--epochs", "200", "--label", "s"}) ==
          exit_ok);
  CHECK(fs::exists(out_root() / "sgd-s" / "model.json"));

  CHECK(run({"train", "--arch", "2,8,1", "--n-train", "40", "--n-test", "20", "--steps", "2000", "--beta", "50",
             "--label", "diverge"}) == exit_runtime);
}

TEST_CASE("diagnose spectrum on a saved model") {
  const fs::path model = tiny_model();
  REQUIRE(run({"diagnose", "--model", model.string(), "--mode", "spectrum", "--n-inputs", "5", "--label", "spec"}) ==
          exit_ok);
  const json s = read_json_file(out_root() / "diagnose-spec" / "spectrum.json");
  CHECK(s.dump().find("lambda1") != std::string::npos);
  CHECK(run({"diagnose", "--model", model.string(), "--mode", "poetry", "--label", "bad"}) == exit_usage);
}
