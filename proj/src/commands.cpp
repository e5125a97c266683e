// Command implementations for the neural_sheaf tool.
//
// Every command resolves its options in three layers: built-in defaults, an
// optional --config JSON object (unknown keys rejected), then flags given on
// the command line. The resolved options are written to config.json in the
// run directory <out>/<command>-<label>.

#include "neural_sheaf/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "neural_sheaf/benchmarks.hpp"
#include "neural_sheaf/dataset.hpp"
#include "neural_sheaf/diagnostics.hpp"
#include "neural_sheaf/diffusion.hpp"
#include "neural_sheaf/errors.hpp"
#include "neural_sheaf/io.hpp"
#include "neural_sheaf/training.hpp"

namespace neural_sheaf {

namespace {

namespace fs = std::filesystem;

enum class Kind { integer, number, optional_number, text, flag, list };

struct Key {
  std::string name;
  Kind kind;
  json fallback;
  std::string help;
};

std::vector<Key> common_keys() {
  return {{"seed", Kind::integer, 0, "random seed"},
          {"out", Kind::text, "runs", "output root directory"},
          {"label", Kind::text, "", "run label (defaults to a timestamp)"}};
}

std::vector<Key> diffusion_keys() {
  return {{"alpha", Kind::number, 1.0, "diffusion rate"},
          {"dt", Kind::number, 0.01, "Euler step"},
          {"max_steps", Kind::integer, 100000, "step limit"},
          {"tol", Kind::number, 1e-10, "free-velocity convergence threshold"},
          {"record_every", Kind::integer, 1, "trajectory recording interval"}};
}

std::vector<Key> train_keys() {
  return {{"task", Kind::text, "paraboloid", "paraboloid|saddle|circular|blobs"},
          {"arch", Kind::text, "2,30,1", "layer sizes"},
          {"n_train", Kind::integer, 300, "training samples"},
          {"n_test", Kind::integer, 300, "test samples"},
          {"loss", Kind::text, "auto", "squared|l1|pnorm|huber|cross_entropy|auto"},
          {"p", Kind::number, 3.0, "exponent of the p-norm loss"},
          {"tau", Kind::number, 1.0, "Huber threshold"},
          {"record_every", Kind::integer, 1000, "history recording interval"}};
}

std::vector<Key> sheaf_train_keys() {
  std::vector<Key> k = train_keys();
  k.push_back({"alpha", Kind::number, 1.0, "cochain rate"});
  k.push_back({"beta", Kind::optional_number, nullptr, "weight rate (default 1/n_train)"});
  k.push_back({"dt", Kind::number, 0.005, "Euler step"});
  k.push_back({"steps", Kind::integer, 100000, "joint Euler steps"});
  k.push_back({"lambda", Kind::number, 0.0, "cochain regularization"});
  k.push_back({"mu", Kind::number, 0.0, "weight regularization"});
  k.push_back({"anchors", Kind::text, "zero", "zero|initial"});
  k.push_back({"init", Kind::text, "auto", "random|forward_pass|auto"});
  return k;
}

std::vector<Key> keys_for(const std::string& command) {
  std::vector<Key> keys = common_keys();
  auto add = [&](const std::vector<Key>& more) { keys.insert(keys.end(), more.begin(), more.end()); };
  if (command == "dataset") {
    add({{"kind", Kind::text, "paraboloid", "paraboloid|saddle|circular|blobs"},
         {"n", Kind::integer, 300, "number of samples"},
         {"stream", Kind::integer, 0, "0 for training data, 1 for test data"}});
  } else if (command == "converge") {
    add({{"model", Kind::text, "", "model JSON"},
         {"input", Kind::text, "", "comma-separated input vector"},
         {"pin", Kind::list, json::array(), "layer=L|output,idx=i[;j],target=t[;u],gamma=hard|value"},
         {"init", Kind::text, "random", "random|zeros|forward_pass"},
         {"crossings", Kind::flag, true, "record boundary crossings"},
         {"slide_eps", Kind::number, 1e-6, "sliding band half-width"},
         {"slide_steps", Kind::integer, 20, "minimum sliding length"}});
    add(diffusion_keys());
  } else if (command == "train") {
    add(sheaf_train_keys());
  } else if (command == "sgd") {
    add(train_keys());
    add({{"lr", Kind::number, 0.01, "learning rate"}, {"epochs", Kind::integer, 10000, "full-batch epochs"}});
    for (auto& k : keys) {
      if (k.name == "record_every") k.fallback = 100;
    }
  } else if (command == "diagnose") {
    add({{"model", Kind::text, "", "model JSON"},
         {"mode", Kind::text, "spectrum", "spectrum|discord|pinned"},
         {"n_inputs", Kind::integer, 50, "random inputs for the spectrum"},
         {"task", Kind::text, "", "synthetic dataset for discord/pinned"},
         {"n", Kind::integer, 300, "samples drawn from the task"},
         {"data", Kind::text, "", "dataset CSV (x1.., optional y..)"}});
    add(diffusion_keys());
    for (auto& k : keys) {
      if (k.name == "max_steps") k.fallback = 1000000;
      if (k.name == "record_every") k.fallback = 1000;
    }
  } else if (command == "sweep") {
    add(sheaf_train_keys());
    add({{"kind", Kind::text, "beta", "beta|T"},
         {"grid", Kind::text, "0.1,1,10", "beta*n_train values (beta) or total times (T)"}});
  } else {
    throw ConfigError("unknown command '" + command + "'");
  }
  return keys;
}

json coerce(const Key& key, const json& value) {
  const std::string where = "option '" + key.name + "'";
  switch (key.kind) {
    case Kind::integer:
      if (!value.is_number_integer()) throw ConfigError(where + " must be an integer");
      if (value.get<long long>() < 0) throw ConfigError(where + " must be nonnegative");
      return value;
    case Kind::number:
      if (!value.is_number()) throw ConfigError(where + " must be a number");
      return value.get<double>();
    case Kind::optional_number:
      if (value.is_null()) return value;
      if (!value.is_number()) throw ConfigError(where + " must be a number or null");
      return value.get<double>();
    case Kind::text:
      if (!value.is_string()) throw ConfigError(where + " must be a string");
      return value;
    case Kind::flag:
      if (!value.is_boolean()) throw ConfigError(where + " must be true or false");
      return value;
    case Kind::list:
      if (!value.is_array()) throw ConfigError(where + " must be a list");
      for (const auto& v : value) {
        if (!v.is_string()) throw ConfigError(where + " entries must be strings");
      }
      return value;
  }
  return value;
}

json parse_flag_value(const Key& key, const std::string& text) {
  const std::string where = "option --" + key.name;
  try {
    std::size_t used = 0;
    switch (key.kind) {
      case Kind::integer: {
        const long long v = std::stoll(text, &used);
        if (used != text.size() || v < 0) throw ConfigError(where + " expects a nonnegative integer");
        return v;
      }
      case Kind::number:
      case Kind::optional_number: {
        if (key.kind == Kind::optional_number && (text == "none" || text == "default")) return nullptr;
        const double v = std::stod(text, &used);
        if (used != text.size()) throw ConfigError(where + " expects a number");
        return v;
      }
      case Kind::flag:
        if (text == "true" || text == "1") return true;
        if (text == "false" || text == "0") return false;
        throw ConfigError(where + " expects true or false");
      default:
        return text;
    }
  } catch (const std::logic_error& e) {
    if (dynamic_cast<const ConfigError*>(&e)) throw;
    throw ConfigError(where + " has an invalid value '" + text + "'");
  }
}

std::string dashed(std::string name) {
  for (char& c : name) {
    if (c == '_') c = '-';
  }
  return name;
}

/// Options of one subcommand bound to strings, resolved after parsing.
struct CommandOptions {
  std::string command;
  std::vector<Key> keys;
  std::map<std::string, std::string> raw;
  std::map<std::string, std::vector<std::string>> raw_lists;
  std::map<std::string, CLI::Option*> options;
  std::string config_path;

  void attach(CLI::App* sub) {
    keys = keys_for(command);
    sub->add_option("--config", config_path, "JSON file with option values");
    for (const Key& k : keys) {
      const std::string flag = "--" + dashed(k.name);
      if (k.kind == Kind::list) {
        options[k.name] = sub->add_option(flag, raw_lists[k.name], k.help);
      } else {
        options[k.name] = sub->add_option(flag, raw[k.name], k.help);
      }
    }
  }

  json resolve() const {
    json cfg = json::object();
    for (const Key& k : keys) cfg[k.name] = k.fallback;
    if (!config_path.empty()) {
      const json file = read_json_file(config_path);
      if (!file.is_object()) throw ConfigError("config must be a JSON object");
      for (const auto& [name, value] : file.items()) {
        const auto it = std::find_if(keys.begin(), keys.end(), [&](const Key& k) { return k.name == name; });
        if (it == keys.end()) throw ConfigError("unknown config key '" + name + "' for command " + command);
        cfg[name] = coerce(*it, value);
      }
    }
    for (const Key& k : keys) {
      if (options.at(k.name)->count() == 0) continue;
      if (k.kind == Kind::list) {
        cfg[k.name] = raw_lists.at(k.name);
      } else {
        cfg[k.name] = parse_flag_value(k, raw.at(k.name));
      }
    }
    return cfg;
  }
};

std::vector<double> parse_numbers(const std::string& text, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      while (used < item.size() && std::isspace(static_cast<unsigned char>(item[used]))) ++used;
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw ConfigError(what + ": cannot parse '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError(what + " is empty");
  return out;
}

std::vector<Eigen::Index> parse_arch(const std::string& text) {
  std::vector<Eigen::Index> dims;
  for (double v : parse_numbers(text, "arch")) {
    if (v < 1 || v != std::floor(v)) throw ConfigError("arch entries must be positive integers");
    dims.push_back(static_cast<Eigen::Index>(v));
  }
  if (dims.size() < 3) throw ConfigError("arch needs an input, at least one hidden layer and an output");
  return dims;
}

PinSpec<double> parse_pin(const std::string& text, const NetworkSpec<double>& spec) {
  std::map<std::string, std::string> fields;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("pin field '" + item + "' is not key=value");
    fields[item.substr(0, eq)] = item.substr(eq + 1);
  }
  for (const auto& [k, v] : fields) {
    if (k != "layer" && k != "idx" && k != "target" && k != "gamma") throw ConfigError("unknown pin field '" + k + "'");
  }
  if (!fields.count("layer") || !fields.count("idx") || !fields.count("target")) {
    throw ConfigError("pin needs layer, idx and target");
  }
  auto split = [](const std::string& s) {
    std::string t = s;
    for (char& c : t) {
      if (c == ';') c = ',';
    }
    return t;
  };
  PinSpec<double> pin;
  const std::string& layer = fields["layer"];
  if (layer == "output") {
    pin.site = PinSite::output;
    pin.layer = spec.hidden_layers() + 1;
  } else if (layer == "input") {
    pin.site = PinSite::input;
    pin.layer = 0;
  } else {
    const auto l = parse_numbers(layer, "pin layer");
    if (l.size() != 1 || l[0] != std::floor(l[0])) throw ConfigError("pin layer must be an integer or 'output'");
    pin.site = PinSite::hidden;
    pin.layer = static_cast<int>(l[0]);
  }
  for (double v : parse_numbers(split(fields["idx"]), "pin idx")) {
    if (v < 0 || v != std::floor(v)) throw ConfigError("pin indices must be nonnegative integers");
    pin.indices.push_back(static_cast<Eigen::Index>(v));
  }
  const auto targets = parse_numbers(split(fields["target"]), "pin target");
  pin.targets = Eigen::Map<const Eigen::VectorXd>(targets.data(), static_cast<Eigen::Index>(targets.size()));
  const std::string gamma = fields.count("gamma") ? fields["gamma"] : "hard";
  if (gamma != "hard") {
    const auto g = parse_numbers(gamma, "pin gamma");
    if (g.size() != 1) throw ConfigError("pin gamma must be a single value");
    pin.gamma = g[0];
  }
  return pin;
}

std::string timestamp_label() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y%m%d-%H%M%S");
  return os.str();
}

fs::path make_run_dir(const std::string& command, const json& cfg) {
  std::string label = cfg.at("label").get<std::string>();
  if (label.empty()) label = timestamp_label();
  const fs::path dir = fs::path(cfg.at("out").get<std::string>()) / (command + "-" + label);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory '" + dir.string() + "': " + ec.message());
  write_json_file(dir / "config.json", cfg);
  return dir;
}

std::uint64_t seed_of(const json& cfg) { return cfg.at("seed").get<std::uint64_t>(); }

DiffusionConfig diffusion_config(const json& cfg) {
  DiffusionConfig c;
  c.alpha = cfg.at("alpha").get<double>();
  c.dt = cfg.at("dt").get<double>();
  c.max_steps = cfg.at("max_steps").get<std::size_t>();
  c.tol = cfg.at("tol").get<double>();
  c.record_every = cfg.at("record_every").get<std::size_t>();
  c.seed = seed_of(cfg);
  c.validate();
  return c;
}

LossKind loss_for(const json& cfg, DatasetKind task) {
  const std::string name = cfg.at("loss").get<std::string>();
  if (name == "auto") {
    return (task == DatasetKind::circular || task == DatasetKind::blobs) ? LossKind::cross_entropy()
                                                                        : LossKind::squared();
  }
  return parse_loss(name, cfg.at("p").get<double>(), cfg.at("tau").get<double>());
}

struct TrainSetup {
  std::vector<Eigen::Index> arch;
  OutputActivation phi;
  Dataset train_set;
  Dataset test_set;
};

TrainSetup train_setup(const json& cfg) {
  TrainSetup s;
  const DatasetKind task = parse_dataset_kind(cfg.at("task").get<std::string>());
  s.arch = parse_arch(cfg.at("arch").get<std::string>());
  s.phi = task_activation(task);
  if (s.arch.front() != 2 || s.arch.back() != task_output_dim(task)) {
    throw ConfigError("arch must start with 2 and end with " + std::to_string(task_output_dim(task)) + " for task " +
                      to_string(task));
  }
  const auto n_train = cfg.at("n_train").get<Eigen::Index>();
  const auto n_test = cfg.at("n_test").get<Eigen::Index>();
  if (n_train < 1) throw ConfigError("n_train must be at least 1");
  s.train_set = make_dataset(task, n_train, seed_of(cfg), 0);
  if (n_test > 0) s.test_set = make_dataset(task, n_test, seed_of(cfg), 1);
  s.test_set.kind = task;
  return s;
}

TrainConfig train_config(const json& cfg, DatasetKind task) {
  TrainConfig c;
  c.alpha = cfg.at("alpha").get<double>();
  if (!cfg.at("beta").is_null()) c.beta = cfg.at("beta").get<double>();
  c.dt = cfg.at("dt").get<double>();
  c.steps = cfg.at("steps").get<std::size_t>();
  c.loss = loss_for(cfg, task);
  c.lambda = cfg.at("lambda").get<double>();
  c.mu = cfg.at("mu").get<double>();
  const std::string anchors = cfg.at("anchors").get<std::string>();
  if (anchors == "zero") {
    c.anchors = AnchorMode::zero;
  } else if (anchors == "initial") {
    c.anchors = AnchorMode::initial;
  } else {
    throw ConfigError("anchors must be 'zero' or 'initial'");
  }
  const std::string init = cfg.at("init").get<std::string>();
  if (init == "auto") {
    c.init_mode = (task == DatasetKind::circular || task == DatasetKind::blobs) ? InitMode::forward : InitMode::random;
  } else {
    c.init_mode = parse_init_mode(init);
  }
  c.seed = seed_of(cfg);
  c.record_every = std::max<std::size_t>(1, cfg.at("record_every").get<std::size_t>());
  c.validate();
  return c;
}

json history_summary(const TrainHistory& h) {
  json s;
  if (h.size() == 0) return s;
  s["final_step"] = h.steps.back();
  s["final_train_loss"] = h.train_loss.back();
  s["final_test_loss"] = std::isnan(h.test_loss.back()) ? json(nullptr) : json(h.test_loss.back());
  s["final_train_accuracy"] = h.train_accuracy.back();
  s["final_test_accuracy"] = std::isnan(h.test_accuracy.back()) ? json(nullptr) : json(h.test_accuracy.back());
  if (!h.discord_total.empty()) s["final_discord"] = h.discord_total.back();
  return s;
}

Dataset read_dataset_csv(const fs::path& path, Eigen::Index n0, bool& has_labels) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("dataset '" + path.string() + "' is empty");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  std::vector<std::size_t> xcols;
  std::vector<std::size_t> ycols;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (!header[i].empty() && header[i][0] == 'x') xcols.push_back(i);
    if (!header[i].empty() && header[i][0] == 'y') ycols.push_back(i);
  }
  if (static_cast<Eigen::Index>(xcols.size()) != n0) throw DimensionError("dataset has the wrong number of x columns");
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto values = parse_numbers(line, "dataset row");
    if (values.size() != header.size()) throw DimensionError("dataset row has the wrong number of cells");
    rows.push_back(values);
  }
  if (rows.empty()) throw InvalidInputError("dataset has no rows");
  Dataset d;
  d.X.resize(n0, static_cast<Eigen::Index>(rows.size()));
  d.Y.resize(static_cast<Eigen::Index>(ycols.size()), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t m = 0; m < rows.size(); ++m) {
    for (std::size_t i = 0; i < xcols.size(); ++i) d.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(m)) = rows[m][xcols[i]];
    for (std::size_t i = 0; i < ycols.size(); ++i) d.Y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(m)) = rows[m][ycols[i]];
  }
  has_labels = !ycols.empty();
  return d;
}

json stats_json(const SummaryStats& s) {
  return {{"median", s.median}, {"mean", s.mean}, {"std", s.std}, {"min", s.min}, {"max", s.max}};
}

// ---------------------------------------------------------------- commands

int cmd_dataset(const json& cfg) {
  const DatasetKind kind = parse_dataset_kind(cfg.at("kind").get<std::string>());
  const auto n = cfg.at("n").get<Eigen::Index>();
  if (n < 1) throw ConfigError("n must be at least 1");
  const Dataset d = make_dataset(kind, n, seed_of(cfg), cfg.at("stream").get<std::uint64_t>());
  const fs::path dir = make_run_dir("dataset", cfg);
  write_dataset_csv(dir / "dataset.csv", d);
  std::cout << "wrote " << (dir / "dataset.csv").string() << '\n';
  return exit_ok;
}

int cmd_converge(const json& cfg) {
  const std::string model_path = cfg.at("model").get<std::string>();
  if (model_path.empty()) throw ConfigError("converge needs --model");
  const NetworkSpec<double> spec = load_model(model_path);
  const std::string input_text = cfg.at("input").get<std::string>();
  if (input_text.empty()) throw ConfigError("converge needs --input");
  const auto input = parse_numbers(input_text, "input");
  if (static_cast<Eigen::Index>(input.size()) != spec.input_dim()) {
    throw DimensionError("input has " + std::to_string(input.size()) + " entries, model expects " +
                         std::to_string(spec.input_dim()));
  }
  const Eigen::MatrixXd x = Eigen::Map<const Eigen::VectorXd>(input.data(), spec.input_dim());
  std::vector<PinSpec<double>> pins;
  for (const auto& p : cfg.at("pin")) pins.push_back(parse_pin(p.get<std::string>(), spec));
  const NeuralSheaf<double> sheaf(spec, pins);
  DiffusionConfig dc = diffusion_config(cfg);
  dc.record_crossings = cfg.at("crossings").get<bool>();
  dc.slide_eps = cfg.at("slide_eps").get<double>();
  dc.slide_steps = cfg.at("slide_steps").get<std::size_t>();
  dc.validate();
  const InitMode init = parse_init_mode(cfg.at("init").get<std::string>());

  const fs::path dir = make_run_dir("converge", cfg);
  const Trajectory<double> t = run_diffusion(sheaf, x, init, dc);
  write_trajectory_csv(dir / "trajectory.csv", t);
  write_crossings_csv(dir / "crossings.csv", t);

  const Eigen::VectorXd forward = predict(spec, x).col(0);
  const Eigen::VectorXd final_out = t.output.back();
  json summary;
  summary["converged"] = t.converged;
  summary["steps"] = t.steps_taken;
  summary["final_velocity"] = t.final_velocity;
  summary["final_discord"] = t.discord_total.back();
  summary["final_energy"] = t.energy.back();
  summary["final_output"] = std::vector<double>(final_out.data(), final_out.data() + final_out.size());
  summary["forward_output"] = std::vector<double>(forward.data(), forward.data() + forward.size());
  summary["final_gap"] = (final_out - forward).cwiseAbs().maxCoeff();
  summary["discord_monotone"] = t.discord_monotone;
  summary["energy_monotone"] = t.energy_monotone;
  summary["crossings"] = t.crossings.size();
  summary["sliding_episodes"] = t.sliding_episodes.size();
  summary["config"] = cfg;
  write_json_file(dir / "summary.json", summary);
  std::cout << "converged=" << (t.converged ? "true" : "false") << " steps=" << t.steps_taken
            << " final_gap=" << format_number(summary["final_gap"].get<double>()) << '\n';
  if (!t.converged) {
    std::cerr << "error: diffusion did not converge within " << dc.max_steps << " steps\n";
    return exit_runtime;
  }
  return exit_ok;
}

int cmd_train(const json& cfg) {
  const TrainSetup s = train_setup(cfg);
  const TrainConfig tc = train_config(cfg, s.train_set.kind);
  const fs::path dir = make_run_dir("train", cfg);
  const TrainResult<double> r = train<double>(s.arch, s.phi, s.train_set, s.test_set, tc);
  save_model(dir / "model.json", r.spec);
  write_history_csv(dir / "history.csv", r.history);
  json summary = history_summary(r.history);
  summary["beta"] = tc.beta.value_or(default_beta(s.train_set.size()));
  summary["config"] = cfg;
  write_json_file(dir / "summary.json", summary);
  std::cout << "final train_loss=" << format_number(r.history.train_loss.back())
            << " test_loss=" << format_number(r.history.test_loss.back()) << '\n';
  return exit_ok;
}

int cmd_sgd(const json& cfg) {
  const TrainSetup s = train_setup(cfg);
  SgdConfig sc;
  sc.lr = cfg.at("lr").get<double>();
  sc.epochs = cfg.at("epochs").get<std::size_t>();
  sc.loss = loss_for(cfg, s.train_set.kind);
  sc.seed = seed_of(cfg);
  sc.record_every = std::max<std::size_t>(1, cfg.at("record_every").get<std::size_t>());
  sc.validate();
  check_loss_activation(sc.loss, s.phi);
  const fs::path dir = make_run_dir("sgd", cfg);
  const SgdResult<double> r = sgd_train<double>(s.arch, s.phi, s.train_set, s.test_set, sc);
  save_model(dir / "model.json", r.spec);
  write_history_csv(dir / "history.csv", r.history);
  json summary = history_summary(r.history);
  summary["config"] = cfg;
  write_json_file(dir / "summary.json", summary);
  std::cout << "final train_loss=" << format_number(r.history.train_loss.back())
            << " test_loss=" << format_number(r.history.test_loss.back()) << '\n';
  return exit_ok;
}

int cmd_diagnose(const json& cfg) {
  const std::string model_path = cfg.at("model").get<std::string>();
  if (model_path.empty()) throw ConfigError("diagnose needs --model");
  const NetworkSpec<double> spec = load_model(model_path);
  const std::string mode = cfg.at("mode").get<std::string>();
  if (mode != "spectrum" && mode != "discord" && mode != "pinned") throw ConfigError("unknown mode '" + mode + "'");

  if (mode == "spectrum") {
    const auto n_inputs = cfg.at("n_inputs").get<Eigen::Index>();
    if (n_inputs < 1) throw ConfigError("n_inputs must be at least 1");
    const Eigen::MatrixXd inputs = uniform_inputs(spec.input_dim(), n_inputs, seed_of(cfg));
    const SpectralSweep sweep = spectral_sweep(spec, inputs);
    const FiedlerEnergy fe = fiedler_block_energy(spec, Eigen::VectorXd(inputs.col(0)));
    const fs::path dir = make_run_dir("diagnose", cfg);
    json report;
    report["layer_dims"] = spec.layer_dims;
    report["n_inputs"] = n_inputs;
    report["lambda1"] = stats_json(sweep.lambda1_stats);
    report["lambda_max"] = stats_json(sweep.lambda_max_stats);
    report["kappa"] = stats_json(sweep.kappa_stats);
    report["lambda1_values"] = sweep.lambda1;
    report["lambda_max_values"] = sweep.lambda_max;
    json fiedler = json::object();
    for (const auto& b : fe.fiedler) fiedler[b.block] = b.energy;
    json top = json::object();
    for (const auto& b : fe.top) top[b.block] = b.energy;
    report["fiedler_block_energy_input0"] = fiedler;
    report["top_block_energy_input0"] = top;
    report["config"] = cfg;
    write_json_file(dir / "spectrum.json", report);
    std::cout << "lambda1 median=" << format_number(sweep.lambda1_stats.median) << '\n';
    return exit_ok;
  }

  Dataset data;
  bool has_labels = false;
  const std::string data_path = cfg.at("data").get<std::string>();
  const std::string task = cfg.at("task").get<std::string>();
  if (!data_path.empty()) {
    data = read_dataset_csv(data_path, spec.input_dim(), has_labels);
  } else if (!task.empty()) {
    data = make_dataset(parse_dataset_kind(task), cfg.at("n").get<Eigen::Index>(), seed_of(cfg), 1);
    has_labels = true;
  } else {
    throw ConfigError("diagnose " + mode + " needs --task or --data");
  }
  if (has_labels && data.Y.rows() != spec.output_dim()) throw DimensionError("labels do not match the model output");
  if (mode == "pinned" && !has_labels) throw ConfigError("pinned discord needs labelled data");

  DiffusionConfig dc = diffusion_config(cfg);
  if (mode == "pinned") {
    const fs::path dir = make_run_dir("diagnose", cfg);
    const PinnedDiscordReport rep = pinned_discord(spec, data.X, data.Y, dc);
    json report;
    report["samples"] = rep.samples;
    report["non_converged"] = rep.non_converged;
    report["total_mean"] = rep.total_mean;
    report["total_std"] = rep.total_std;
    json edges = json::object();
    for (std::size_t e = 0; e < rep.edges.size(); ++e) edges[rep.edges[e]] = {{"mean", rep.mean[e]}, {"std", rep.std[e]}};
    report["edges"] = edges;
    report["config"] = cfg;
    write_json_file(dir / "pinned.json", report);
    std::cout << "pinned discord total=" << format_number(rep.total_mean) << " non_converged=" << rep.non_converged
              << '\n';
    return rep.non_converged == 0 ? exit_ok : exit_runtime;
  }

  const fs::path dir = make_run_dir("diagnose", cfg);
  std::vector<DiscordRecord> records;
  json report;
  if (has_labels) {
    const Trajectory<double> t = clamped_equilibrium(spec, data.X, data.Y, dc);
    const NeuralSheaf<double> sheaf = training_sheaf(spec);
    records = residual_scatter(sheaf, t.final_cochain);
    json edges = json::object();
    for (const auto& e : per_edge_discord(sheaf, t.final_cochain)) edges[e.edge] = e.value;
    report["edges"] = edges;
    report["equilibrium"] = "label-clamped";
    report["converged"] = t.converged;
  } else {
    const NeuralSheaf<double> sheaf(spec);
    const Cochain<double> c = forward_cochain(sheaf, data.X);
    records = residual_scatter(sheaf, c);
    json edges = json::object();
    for (const auto& e : per_edge_discord(sheaf, c)) edges[e.edge] = e.value;
    report["edges"] = edges;
    report["equilibrium"] = "forward-pass";
    report["converged"] = true;
  }
  write_scatter_csv(dir / "scatter.csv", records);
  report["records"] = records.size();
  report["config"] = cfg;
  write_json_file(dir / "discord.json", report);
  std::cout << "wrote " << records.size() << " residual records\n";
  return report["converged"].get<bool>() ? exit_ok : exit_runtime;
}

int cmd_sweep(const json& cfg) {
  const std::string kind = cfg.at("kind").get<std::string>();
  if (kind != "beta" && kind != "T") throw ConfigError("sweep kind must be 'beta' or 'T'");
  const auto grid = parse_numbers(cfg.at("grid").get<std::string>(), "grid");
  for (double g : grid) {
    if (!(g > 0.0)) throw ConfigError("grid values must be positive");
  }
  const TrainSetup s = train_setup(cfg);
  const TrainConfig base = train_config(cfg, s.train_set.kind);
  const double n_train = static_cast<double>(s.train_set.size());
  const fs::path dir = make_run_dir("sweep", cfg);
  CsvWriter csv(dir / "sweep.csv",
                {"parameter", "beta", "beta_M", "dt", "steps", "final_train_loss", "final_test_loss", "status"});
  json points = json::array();
  for (double g : grid) {
    TrainConfig tc = base;
    if (kind == "beta") {
      tc.beta = g / n_train;
    } else {
      tc.steps = static_cast<std::size_t>(std::llround(g / tc.dt));
    }
    const double beta = tc.beta.value_or(default_beta(s.train_set.size()));
    std::string status = "ok";
    double train_loss = std::nan("");
    double test_loss = std::nan("");
    try {
      const TrainResult<double> r = train<double>(s.arch, s.phi, s.train_set, s.test_set, tc);
      train_loss = r.history.train_loss.back();
      test_loss = r.history.test_loss.back();
      if (!std::isfinite(train_loss)) status = "diverged";
    } catch (const DivergenceError& e) {
      status = "diverged";
      std::cerr << "grid point " << format_number(g) << ": " << e.what() << '\n';
    }
    csv.row(std::vector<std::string>{format_number(g), format_number(beta), format_number(beta * n_train),
                                     format_number(tc.dt), std::to_string(tc.steps), format_number(train_loss),
                                     format_number(test_loss), status});
    std::cout << kind << "=" << format_number(g) << " test_loss=" << format_number(test_loss) << " " << status << '\n';
    points.push_back({{"parameter", g}, {"status", status}});
  }
  write_json_file(dir / "summary.json", json{{"points", points}, {"config", cfg}});
  return exit_ok;
}

int dispatch(const std::string& command, const json& cfg) {
  if (command == "dataset") return cmd_dataset(cfg);
  if (command == "converge") return cmd_converge(cfg);
  if (command == "train") return cmd_train(cfg);
  if (command == "sgd") return cmd_sgd(cfg);
  if (command == "diagnose") return cmd_diagnose(cfg);
  if (command == "sweep") return cmd_sweep(cfg);
  throw ConfigError("unknown command '" + command + "'");
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Neural sheaf diffusion, training and diagnostics"};
  app.require_subcommand(1);
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"converge", "integrate the sheaf heat equation for one input"},
      {"train", "joint sheaf training on a synthetic task"},
      {"sgd", "full-batch gradient-descent baseline"},
      {"diagnose", "spectrum, discord scatter or pinned discord of a model"},
      {"sweep", "beta or integration-time sweep of sheaf training"},
      {"dataset", "write a synthetic dataset"}};
  std::vector<CommandOptions> opts(commands.size());
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < commands.size(); ++i) {
    opts[i].command = commands[i].first;
    CLI::App* sub = app.add_subcommand(commands[i].first, commands[i].second);
    opts[i].attach(sub);
    subs.push_back(sub);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? exit_ok : exit_usage;
  }
  for (std::size_t i = 0; i < subs.size(); ++i) {
    if (!subs[i]->parsed()) continue;
    try {
      return dispatch(opts[i].command, opts[i].resolve());
    } catch (const DivergenceError& e) {
      std::cerr << "error: " << e.what() << '\n';
      return exit_runtime;
    } catch (const std::invalid_argument& e) {
      std::cerr << "error: " << e.what() << '\n';
      return exit_usage;
    } catch (const std::domain_error& e) {
      std::cerr << "error: " << e.what() << '\n';
      return exit_usage;
    } catch (const std::logic_error& e) {
      std::cerr << "error: " << e.what() << '\n';
      return exit_usage;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return exit_runtime;
    }
  }
  return exit_usage;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<std::string> storage{"neural_sheaf"};
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace neural_sheaf
