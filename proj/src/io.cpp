#include "neural_sheaf/io.hpp"

#include <cstdio>
#include <sstream>

#include "neural_sheaf/errors.hpp"

namespace neural_sheaf {

namespace {

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j, Eigen::Index rows, Eigen::Index cols, const std::string& what) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows) {
    throw DimensionError(what + " must have " + std::to_string(rows) + " rows");
  }
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const json& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw DimensionError(what + " row " + std::to_string(i) + " must have " + std::to_string(cols) + " entries");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (!row[static_cast<std::size_t>(c)].is_number()) throw InvalidInputError(what + " entries must be numbers");
      m(i, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
  }
  return m;
}

}  // namespace

json model_to_json(const NetworkSpec<double>& spec) {
  json j;
  j["layer_dims"] = spec.layer_dims;
  j["output_activation"] = std::string(to_string(spec.output_activation));
  j["weights"] = json::array();
  j["biases"] = json::array();
  for (std::size_t l = 0; l < spec.weights.size(); ++l) {
    j["weights"].push_back(matrix_to_json(spec.weights[l]));
    j["biases"].push_back(std::vector<double>(spec.biases[l].data(), spec.biases[l].data() + spec.biases[l].size()));
  }
  return j;
}

NetworkSpec<double> model_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("model must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key != "layer_dims" && key != "weights" && key != "biases" && key != "output_activation") {
      throw ConfigError("unknown model key '" + key + "'");
    }
  }
  for (const char* key : {"layer_dims", "weights", "biases"}) {
    if (!j.contains(key)) throw ConfigError(std::string("model is missing '") + key + "'");
  }
  NetworkSpec<double> spec;
  try {
    spec.layer_dims = j.at("layer_dims").get<std::vector<Eigen::Index>>();
  } catch (const json::exception&) {
    throw ConfigError("layer_dims must be a list of integers");
  }
  if (spec.layer_dims.size() < 3) throw DimensionError("network needs at least one hidden layer (k >= 1)");
  spec.output_activation = parse_output_activation(j.value("output_activation", std::string("identity")));
  const json& w = j.at("weights");
  const json& b = j.at("biases");
  const std::size_t layers = spec.layer_dims.size() - 1;
  if (!w.is_array() || w.size() != layers || !b.is_array() || b.size() != layers) {
    throw DimensionError("model needs one weight matrix and one bias vector per layer");
  }
  for (std::size_t l = 0; l < layers; ++l) {
    const Eigen::Index rows = spec.layer_dims[l + 1];
    const Eigen::Index cols = spec.layer_dims[l];
    spec.weights.push_back(matrix_from_json(w[l], rows, cols, "weights[" + std::to_string(l) + "]"));
    if (!b[l].is_array() || static_cast<Eigen::Index>(b[l].size()) != rows) {
      throw DimensionError("biases[" + std::to_string(l) + "] must have " + std::to_string(rows) + " entries");
    }
    Eigen::VectorXd bias(rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
      if (!b[l][static_cast<std::size_t>(i)].is_number()) throw InvalidInputError("bias entries must be numbers");
      bias(i) = b[l][static_cast<std::size_t>(i)].get<double>();
    }
    spec.biases.push_back(std::move(bias));
  }
  spec.validate();
  return spec;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("invalid JSON in '" + path.string() + "': " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

void save_model(const std::filesystem::path& path, const NetworkSpec<double>& spec) {
  write_json_file(path, model_to_json(spec));
}

NetworkSpec<double> load_model(const std::filesystem::path& path) { return model_from_json(read_json_file(path)); }

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
    : out_(path, std::ios::binary), columns_(header.size()) {
  if (!out_) throw ConfigError("cannot write '" + path.string() + "'");
  row(header);
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  if (cells.size() != columns_) throw DimensionError("CSV row has the wrong number of cells");
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out_ << ',';
    out_ << cells[i];
  }
  out_ << '\n';
}

void CsvWriter::row(const std::vector<double>& values) {
  std::vector<std::string> cells;
  cells.reserve(values.size());
  for (double v : values) cells.push_back(format_number(v));
  row(cells);
}

void write_trajectory_csv(const std::filesystem::path& path, const Trajectory<double>& t) {
  std::vector<std::string> header{"step", "discord_total", "energy"};
  for (const auto& name : t.edge_names) header.push_back("discord_edge_" + name);
  const std::size_t n_out = t.output.empty() ? 0 : static_cast<std::size_t>(t.output.front().size());
  for (std::size_t i = 0; i < n_out; ++i) header.push_back("y_hat_" + std::to_string(i));
  CsvWriter csv(path, header);
  for (std::size_t r = 0; r < t.steps.size(); ++r) {
    std::vector<double> row{static_cast<double>(t.steps[r]), t.discord_total[r], t.energy[r]};
    for (double e : t.discord_per_edge[r]) row.push_back(e);
    for (Eigen::Index i = 0; i < t.output[r].size(); ++i) row.push_back(t.output[r](i));
    csv.row(row);
  }
}

void write_crossings_csv(const std::filesystem::path& path, const Trajectory<double>& t) {
  CsvWriter csv(path, {"step", "sample", "layer", "coord", "direction"});
  for (const Crossing& c : t.crossings) {
    csv.row(std::vector<double>{static_cast<double>(c.step), static_cast<double>(c.column),
                                static_cast<double>(c.layer), static_cast<double>(c.coordinate),
                                static_cast<double>(c.direction)});
  }
}

void write_history_csv(const std::filesystem::path& path, const TrainHistory& h) {
  std::vector<std::string> header{"step", "train_loss", "test_loss", "train_accuracy", "test_accuracy", "discord_total"};
  for (const auto& name : h.edge_names) header.push_back("discord_edge_" + name);
  const std::size_t layers = h.weight_norms.empty() ? 0 : h.weight_norms.front().size();
  for (std::size_t l = 0; l < layers; ++l) header.push_back("wnorm_layer_" + std::to_string(l + 1));
  CsvWriter csv(path, header);
  const double nan = std::nan("");
  for (std::size_t r = 0; r < h.size(); ++r) {
    std::vector<double> row{static_cast<double>(h.steps[r]), h.train_loss[r], h.test_loss[r], h.train_accuracy[r],
                            h.test_accuracy[r], r < h.discord_total.size() ? h.discord_total[r] : nan};
    for (std::size_t e = 0; e < h.edge_names.size(); ++e) {
      row.push_back(r < h.discord_per_edge.size() ? h.discord_per_edge[r][e] : nan);
    }
    for (double w : h.weight_norms[r]) row.push_back(w);
    csv.row(row);
  }
}

void write_scatter_csv(const std::filesystem::path& path, const std::vector<DiscordRecord>& records) {
  CsvWriter csv(path, {"sample", "layer", "coord", "z", "weight_residual", "relu_residual", "active"});
  for (const DiscordRecord& r : records) {
    csv.row(std::vector<double>{static_cast<double>(r.sample), static_cast<double>(r.layer),
                                static_cast<double>(r.coordinate), r.z, r.weight_residual, r.relu_residual,
                                r.active ? 1.0 : 0.0});
  }
}

void write_dataset_csv(const std::filesystem::path& path, const Dataset& d) {
  std::vector<std::string> header;
  for (Eigen::Index i = 0; i < d.X.rows(); ++i) header.push_back("x" + std::to_string(i + 1));
  for (Eigen::Index i = 0; i < d.Y.rows(); ++i) header.push_back(d.Y.rows() == 1 ? "y" : "y" + std::to_string(i + 1));
  CsvWriter csv(path, header);
  for (Eigen::Index m = 0; m < d.X.cols(); ++m) {
    std::vector<double> row;
    for (Eigen::Index i = 0; i < d.X.rows(); ++i) row.push_back(d.X(i, m));
    for (Eigen::Index i = 0; i < d.Y.rows(); ++i) row.push_back(d.Y(i, m));
    csv.row(row);
  }
}

}  // namespace neural_sheaf
