#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "minitrain/budget.hpp"
#include "minitrain/cifar.hpp"
#include "minitrain/config.hpp"
#include "minitrain/learner.hpp"
#include "minitrain/metrics.hpp"

namespace minitrain {

inline constexpr const char* kLibraryVersion = "1.0.0";

/// Index of the largest value; ties go to the lowest index.
template <typename T>
std::size_t argmax_lowest(std::span<const T> row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i) {
    if (row[i] > row[best]) best = i;
  }
  return best;
}

/// Normalized, unaugmented batches covering `ds` in order.
template <typename T>
std::vector<Batch<T>> make_eval_batches(const Dataset& ds, const ChannelStats& stats,
                                        std::size_t batch_size);

/// Percent of samples whose argmax logit equals the label.
template <typename T>
double evaluate(Learner<T>& model, const std::vector<Batch<T>>& batches);

/// SHA-256 over parameter names, shapes and values.
template <typename T>
std::string state_digest(const std::vector<std::pair<std::string, Tensor<T>>>& state);

/// Where configuration values came from, echoed into the manifest.
struct ConfigSources {
  std::optional<std::filesystem::path> config_file;
  std::map<std::string, std::string> file_values;
  std::map<std::string, std::string> flag_values;
};

struct RunHooks {
  /// Clock for budget accounting; the steady clock when empty.
  BudgetClock::TimeSource time_source;
  /// Called after every optimizer step with (epoch, step within epoch).
  std::function<void(std::size_t, std::size_t)> on_step;
  std::function<void(const MetricsRecord&)> on_record;
};

struct RunResult {
  std::vector<MetricsRecord> records;
  nlohmann::json manifest;
  double final_accuracy = 0.0;
  std::size_t epochs_completed = 0;
  double wall_seconds = 0.0;
  double longest_epoch = 0.0;
  bool stopped_by_budget = false;
};

/// Trains one recipe on subsets drawn from the given pools. The budget
/// covers everything from the call (or from `clock`'s origin, when given)
/// to the last epoch. Metrics and the manifest are written when
/// cfg.metrics_out is set; the checkpoint when cfg.checkpoint_out is set.
RunResult run_training(const RunConfig& cfg, const Dataset& train_pool, const Dataset& test_pool,
                       const ConfigSources& sources = {}, const RunHooks& hooks = {},
                       BudgetClock* clock = nullptr);

/// Loads the CIFAR-10 splits from cfg.data_dir, then runs run_training.
RunResult run_from_config(const RunConfig& cfg, const ConfigSources& sources = {});

struct RecipeSummary {
  std::string recipe;
  bool ok = false;
  std::string error;
  double final_accuracy = 0.0;
  std::size_t epochs = 0;
  double wall_seconds = 0.0;
};

/// Runs each recipe in turn with its own budget. Output paths get a
/// per-recipe suffix. A failing recipe is reported and the rest continue.
std::vector<RecipeSummary> recipe_matrix(const RunConfig& base,
                                         const std::vector<std::string>& recipes,
                                         const Dataset& train_pool, const Dataset& test_pool,
                                         const RunHooks& hooks = {});

std::string format_recipe_table(const std::vector<RecipeSummary>& rows);

/// `metrics.csv` + "sam+ip" → `metrics.sam_ip.csv`.
std::filesystem::path recipe_path(const std::filesystem::path& base, const std::string& recipe);

/// Stop glibc from returning large tensor buffers to the OS after every
/// free. Training reallocates the same sizes each step, so mmap/munmap churn
/// otherwise costs ~15% wall time. No-op on other allocators.
void retain_freed_memory();

}  // namespace minitrain
