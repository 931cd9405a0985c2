#include <cstdlib>
#include <iostream>

#include "minitrain/cifar.hpp"
#include "minitrain/config.hpp"
#include "minitrain/error.hpp"
#include "minitrain/harness.hpp"

int main(int argc, char** argv) {
  using namespace minitrain;
  retain_freed_memory();
  try {
    ParsedCommand cmd = parse_config(argc, argv, std::getenv("CIFAR_DIR"));
    if (cmd.exit_now) {
      std::cout << cmd.message;
      return 0;
    }
    const RunConfig& cfg = cmd.config;
    ConfigSources sources{cmd.config_file, cmd.file_values, cmd.flag_values};

    if (!cmd.recipes.empty()) {
      if (cfg.data_dir.empty()) {
        throw ConfigError("no data directory: pass --data-dir or set CIFAR_DIR");
      }
      const Dataset train = load_cifar_split(cfg.data_dir, Split::kTrain);
      const Dataset test = load_cifar_split(cfg.data_dir, Split::kTest);
      const auto rows = recipe_matrix(cfg, cmd.recipes, train, test);
      std::cout << format_recipe_table(rows);
      for (const auto& r : rows) {
        if (!r.ok) return 1;
      }
      return 0;
    }

    const RunResult r = run_from_config(cfg, sources);
    for (const auto& rec : r.records) std::cout << format_metrics_row(rec) << "\n";
    std::cout << "final accuracy " << r.final_accuracy << "% after " << r.epochs_completed
              << " epoch(s) in " << r.wall_seconds << " s"
              << (r.stopped_by_budget ? " (budget reached)" : "") << "\n";
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
