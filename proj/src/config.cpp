#include "minitrain/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>

#include <CLI11.hpp>

#include "minitrain/error.hpp"

namespace minitrain {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string normalize_key(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) {
    throw ConfigError("option " + key + " needs a non-negative integer, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  throw ConfigError("option " + key + " needs a number, got '" + v + "'");
}

bool parse_bool(const std::string& key, const std::string& v) {
  std::string s = v;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "true" || s == "1" || s == "yes" || s == "on" || s.empty()) return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("option " + key + " needs true or false, got '" + v + "'");
}

}  // namespace

std::string RunConfig::recipe() const {
  std::vector<std::string> parts;
  if (optimizer == OptimizerKind::kSam) parts.emplace_back("sam");
  if (ip) parts.emplace_back("ip");
  if (gc) parts.emplace_back("gc");
  if (mltp) parts.emplace_back("mltp");
  if (parts.empty()) return "baseline";
  std::string out = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) out += "+" + parts[i];
  return out;
}

void RunConfig::validate() const {
  if (!(budget_seconds > 0.0)) throw ConfigError("budget-seconds must be positive");
  if (per_class == 0) throw ConfigError("per-class must be positive");
  if (batch_size == 0) throw ConfigError("batch-size must be positive");
  if (precision != 32 && precision != 64) throw ConfigError("precision must be 32 or 64");
  if (!(width > 0.0)) throw ConfigError("width must be positive");
  if (!(lr_peak > 0.0)) throw ConfigError("lr-peak must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(rho >= 0.0)) throw ConfigError("rho must be non-negative");
  if (!(weight_decay() >= 0.0)) throw ConfigError("lambda must be non-negative");
  if (!(mltp_beta > 0.0 && mltp_beta <= 1.0)) throw ConfigError("mltp-beta must lie in (0, 1]");
  if (ip && whitening_samples < 27) {
    throw ConfigError("whitening-samples must be at least 27");
  }
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["data_dir"] = data_dir.string();
  j["per_class"] = per_class;
  j["test_per_class"] = test_per_class;
  j["seed"] = seed;
  j["budget_seconds"] = budget_seconds;
  j["optimizer"] = optimizer == OptimizerKind::kSam ? "sam" : "sgd";
  j["gc"] = gc;
  j["ip"] = ip;
  j["mltp"] = mltp;
  j["max_epochs"] = max_epochs;
  j["batch_size"] = batch_size;
  j["lr_peak"] = lr_peak;
  j["momentum"] = momentum;
  j["rho"] = rho;
  j["lambda"] = weight_decay();
  j["label_smoothing"] = label_smoothing();
  j["activation"] = ip ? "celu" : "relu";
  j["stem"] = ip ? "whitened" : "plain";
  j["precision"] = precision;
  j["metrics_out"] = metrics_out.string();
  j["checkpoint_out"] = checkpoint_out.string();
  j["deterministic"] = deterministic;
  j["width"] = width;
  j["mltp_beta"] = mltp_beta;
  j["mltp_inner_steps"] = mltp_inner_steps;
  j["mltp_rounds"] = mltp_rounds;
  j["whitening_samples"] = whitening_samples;
  j["recipe"] = recipe();
  return j;
}

void apply_setting(RunConfig& cfg, const std::string& raw_key, const std::string& value) {
  const std::string key = normalize_key(raw_key);
  if (key == "data-dir") {
    cfg.data_dir = value;
  } else if (key == "per-class") {
    cfg.per_class = parse_uint(key, value);
  } else if (key == "test-per-class") {
    cfg.test_per_class = parse_uint(key, value);
  } else if (key == "seed") {
    cfg.seed = parse_uint(key, value);
  } else if (key == "budget-seconds") {
    cfg.budget_seconds = parse_double(key, value);
  } else if (key == "optimizer") {
    if (value == "sgd") {
      cfg.optimizer = OptimizerKind::kSgd;
    } else if (value == "sam") {
      cfg.optimizer = OptimizerKind::kSam;
    } else {
      throw ConfigError("optimizer must be sgd or sam, got '" + value + "'");
    }
  } else if (key == "gc") {
    cfg.gc = parse_bool(key, value);
  } else if (key == "ip") {
    cfg.ip = parse_bool(key, value);
  } else if (key == "mltp") {
    cfg.mltp = parse_bool(key, value);
  } else if (key == "max-epochs") {
    cfg.max_epochs = parse_uint(key, value);
  } else if (key == "batch-size") {
    cfg.batch_size = parse_uint(key, value);
  } else if (key == "lr-peak") {
    cfg.lr_peak = parse_double(key, value);
  } else if (key == "momentum") {
    cfg.momentum = parse_double(key, value);
  } else if (key == "rho") {
    cfg.rho = parse_double(key, value);
  } else if (key == "lambda") {
    cfg.lambda = parse_double(key, value);
  } else if (key == "precision") {
    const auto p = parse_uint(key, value);
    if (p != 32 && p != 64) throw ConfigError("precision must be 32 or 64");
    cfg.precision = static_cast<int>(p);
  } else if (key == "metrics-out") {
    cfg.metrics_out = value;
  } else if (key == "checkpoint-out") {
    cfg.checkpoint_out = value;
  } else if (key == "deterministic") {
    cfg.deterministic = parse_bool(key, value);
  } else if (key == "width") {
    cfg.width = parse_double(key, value);
  } else if (key == "mltp-beta") {
    cfg.mltp_beta = parse_double(key, value);
  } else if (key == "mltp-inner-steps") {
    cfg.mltp_inner_steps = parse_uint(key, value);
  } else if (key == "mltp-rounds") {
    cfg.mltp_rounds = parse_uint(key, value);
  } else if (key == "whitening-samples") {
    cfg.whitening_samples = parse_uint(key, value);
  } else {
    throw ConfigError("unknown option '" + raw_key + "'");
  }
}

std::map<std::string, std::string> read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    }
    out[normalize_key(trim(line.substr(0, eq)))] = trim(line.substr(eq + 1));
  }
  return out;
}

void apply_recipe(RunConfig& cfg, const std::string& recipe) {
  cfg.optimizer = OptimizerKind::kSgd;
  cfg.gc = cfg.ip = cfg.mltp = false;
  std::size_t start = 0;
  while (start <= recipe.size()) {
    const auto plus = recipe.find('+', start);
    const std::string part =
        recipe.substr(start, plus == std::string::npos ? std::string::npos : plus - start);
    if (part == "sam") {
      cfg.optimizer = OptimizerKind::kSam;
    } else if (part == "ip") {
      cfg.ip = true;
    } else if (part == "gc") {
      cfg.gc = true;
    } else if (part == "mltp") {
      cfg.mltp = true;
    } else if (part != "baseline" && part != "sgd") {
      throw ConfigError("unknown recipe component '" + part + "' in '" + recipe + "'");
    }
    if (plus == std::string::npos) break;
    start = plus + 1;
  }
}

ParsedCommand parse_config(int argc, const char* const* argv, const char* cifar_env) {
  CLI::App app{"Budgeted ResNet-9 training on small CIFAR-10 subsets", "minitrain"};
  app.set_version_flag("--version", "minitrain 1.0.0");

  std::map<std::string, std::string> values;
  std::vector<std::pair<std::string, CLI::Option*>> options;
  std::map<std::string, std::string> strings;
  std::map<std::string, bool> bools;

  auto value_option = [&](const std::string& name, const std::string& type,
                          const std::string& help) {
    options.emplace_back(name, app.add_option("--" + name, strings[name], help)->type_name(type));
  };
  auto flag_option = [&](const std::string& name, const std::string& help) {
    options.emplace_back(name, app.add_flag("--" + name, bools[name], help));
  };

  std::string config_path;
  app.add_option("--config", config_path, "key = value file; flags override its entries")
      ->type_name("PATH");
  value_option("data-dir", "DIR", "CIFAR-10 binary directory (default: $CIFAR_DIR)");
  value_option("per-class", "INT", "training images per class (default 500)");
  value_option("test-per-class", "INT", "test images per class, 0 for the whole split (default 100)");
  value_option("seed", "INT", "run seed (default 0)");
  value_option("budget-seconds", "SECONDS", "wall-clock budget (default 600)");
  value_option("optimizer", "sgd|sam", "sgd or sam (default sgd)");
  flag_option("gc", "gradient centralization");
  flag_option("ip", "label smoothing, CELU, whitening stem and weight decay");
  flag_option("mltp", "two-task meta-learning training");
  value_option("max-epochs", "INT", "epoch cap (default 200)");
  value_option("batch-size", "INT", "mini-batch size (default 256)");
  value_option("lr-peak", "FLOAT", "one-cycle peak learning rate (default 0.4)");
  value_option("momentum", "FLOAT", "heavy-ball momentum (default 0.9)");
  value_option("rho", "FLOAT", "SAM radius (default 0.05)");
  value_option("lambda", "FLOAT", "weight decay (default 0.0005 with --ip, else 0)");
  value_option("precision", "32|64", "32 or 64 (default 32)");
  value_option("metrics-out", "PATH", "metrics CSV path; the manifest is written next to it");
  value_option("checkpoint-out", "PATH", "final model checkpoint path");
  flag_option("deterministic", "fixed-order reductions and seeded streams only");
  value_option("width", "FLOAT", "channel-width multiplier (default 1)");
  value_option("mltp-beta", "FLOAT", "meta interpolation rate (default 0.5)");
  value_option("mltp-inner-steps", "INT", "inner steps per task, 0 for one task epoch (default 0)");
  value_option("mltp-rounds", "INT", "meta-rounds, 0 for max-epochs (default 0)");
  value_option("whitening-samples", "INT", "patches used to fit the whitening stem (default 100000)");
  bool matrix = false;
  std::string recipes;
  app.add_flag("--recipe-matrix", matrix, "run baseline, sam, sam+ip, sam+gc and mltp in turn");
  app.add_option("--recipes", recipes, "comma-separated recipe list for --recipe-matrix")
      ->type_name("LIST");

  ParsedCommand out;
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out.exit_now = true;
    out.message = app.help();
    return out;
  } catch (const CLI::CallForVersion&) {
    out.exit_now = true;
    out.message = "minitrain 1.0.0\n";
    return out;
  } catch (const CLI::ParseError& e) {
    throw ConfigError(e.what());
  }

  RunConfig& cfg = out.config;
  if (!config_path.empty()) {
    out.config_file = config_path;
    out.file_values = read_config_file(config_path);
    for (const auto& [k, v] : out.file_values) apply_setting(cfg, k, v);
  }
  for (const auto& [name, opt] : options) {
    if (opt->count() > 0) {
      const auto b = bools.find(name);
      const std::string value =
          b != bools.end() ? (b->second ? "true" : "false") : strings[name];
      out.flag_values[name] = value;
      apply_setting(cfg, name, value);
    }
  }
  if (cfg.data_dir.empty() && cifar_env != nullptr) cfg.data_dir = cifar_env;

  if (matrix || !recipes.empty()) {
    if (recipes.empty()) {
      out.recipes = kTableRecipes;
    } else {
      std::size_t start = 0;
      while (start <= recipes.size()) {
        const auto comma = recipes.find(',', start);
        const std::string r = trim(recipes.substr(
            start, comma == std::string::npos ? std::string::npos : comma - start));
        if (!r.empty()) {
          RunConfig probe;
          apply_recipe(probe, r);
          out.recipes.push_back(r);
        }
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
    }
  }
  cfg.validate();
  return out;
}

}  // namespace minitrain
