#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace minitrain {

enum class OptimizerKind { kSgd, kSam };

/// Full description of one training run.
struct RunConfig {
  std::filesystem::path data_dir;
  std::size_t per_class = 500;
  std::size_t test_per_class = 100;  // 0 = whole test split
  std::uint64_t seed = 0;
  double budget_seconds = 600.0;
  OptimizerKind optimizer = OptimizerKind::kSgd;
  bool gc = false;
  bool ip = false;
  bool mltp = false;
  std::size_t max_epochs = 200;
  std::size_t batch_size = 256;
  double lr_peak = 0.4;
  double momentum = 0.9;
  double rho = 0.05;
  std::optional<double> lambda;  // unset: 0.0005 with ip, else 0
  int precision = 32;
  std::filesystem::path metrics_out;
  std::filesystem::path checkpoint_out;
  bool deterministic = false;
  double width = 1.0;  // channel-width multiplier
  double mltp_beta = 0.5;
  std::size_t mltp_inner_steps = 0;  // 0 = one epoch over a task
  std::size_t mltp_rounds = 0;       // 0 = max_epochs
  std::size_t whitening_samples = 100000;

  double label_smoothing() const { return ip ? 0.1 : 0.0; }
  double celu_alpha() const { return 0.3; }
  double weight_decay() const { return lambda.value_or(ip ? 0.0005 : 0.0); }

  /// Tag such as "baseline", "sam+ip" or "mltp".
  std::string recipe() const;
  void validate() const;
  nlohmann::json to_json() const;
};

/// Sets one option from its textual value. Keys are the long flag names
/// without dashes; underscores are accepted in place of hyphens.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

/// Parses `key = value` lines; '#' starts a comment.
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);

/// Resets the technique toggles and applies a recipe tag ("baseline",
/// "sam", "sam+ip", "sam+gc", "mltp", or any '+' combination).
void apply_recipe(RunConfig& cfg, const std::string& recipe);

inline const std::vector<std::string> kTableRecipes{"baseline", "sam", "sam+ip", "sam+gc",
                                                    "mltp"};

struct ParsedCommand {
  RunConfig config;
  std::vector<std::string> recipes;  // set by --recipe-matrix
  std::optional<std::filesystem::path> config_file;
  std::map<std::string, std::string> file_values;
  std::map<std::string, std::string> flag_values;
  bool exit_now = false;  // --help or --version was handled
  std::string message;
};

/// Defaults < config file < flags. `cifar_env` backs --data-dir when
/// neither the file nor a flag sets it. Throws ConfigError on unknown
/// flags or keys and on invalid values.
ParsedCommand parse_config(int argc, const char* const* argv, const char* cifar_env);

}  // namespace minitrain
