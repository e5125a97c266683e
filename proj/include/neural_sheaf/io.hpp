#pragma once

// Model JSON and CSV export.

#include <Eigen/Dense>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "neural_sheaf/dataset.hpp"
#include "neural_sheaf/diagnostics.hpp"
#include "neural_sheaf/diffusion.hpp"
#include "neural_sheaf/network.hpp"
#include "neural_sheaf/training.hpp"

namespace neural_sheaf {

using json = nlohmann::json;

/// {"layer_dims": [...], "weights": [[row, ...], ...], "biases": [...], "output_activation": "..."}
json model_to_json(const NetworkSpec<double>& spec);
NetworkSpec<double> model_from_json(const json& j);

void save_model(const std::filesystem::path& path, const NetworkSpec<double>& spec);
NetworkSpec<double> load_model(const std::filesystem::path& path);

json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const json& j);

/// Round-trip formatting of a double ("%.17g").
std::string format_number(double v);

/// Comma-separated rows with a header; '.' decimal point and '\n' line endings.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);
  void row(const std::vector<double>& values);
  void row(const std::vector<std::string>& cells);

 private:
  std::ofstream out_;
  std::size_t columns_;
};

void write_trajectory_csv(const std::filesystem::path& path, const Trajectory<double>& t);
void write_crossings_csv(const std::filesystem::path& path, const Trajectory<double>& t);
void write_history_csv(const std::filesystem::path& path, const TrainHistory& h);
void write_scatter_csv(const std::filesystem::path& path, const std::vector<DiscordRecord>& records);
void write_dataset_csv(const std::filesystem::path& path, const Dataset& d);

}  // namespace neural_sheaf
