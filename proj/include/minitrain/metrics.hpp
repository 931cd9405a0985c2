#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace minitrain {

struct MetricsRecord {
  std::size_t epoch = 0;
  double wall_seconds = 0.0;
  double train_loss = 0.0;  // NaN for the epoch-0 record of an untrained model
  double test_accuracy = 0.0;
  double lr = 0.0;
  std::string recipe;
};

inline constexpr const char* kMetricsHeader = "epoch,wall_seconds,train_loss,test_accuracy,lr,recipe";

std::string format_metrics_row(const MetricsRecord& r);

/// Header plus one LF-terminated row per record, values with 6 decimals.
void write_metrics(const std::vector<MetricsRecord>& records, const std::filesystem::path& path);

std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path);

/// Throws IoError unless `path` can be created or appended to.
void preflight_writable(const std::filesystem::path& path);

/// `<metrics path>.manifest.json`.
std::filesystem::path manifest_path(const std::filesystem::path& metrics);

void write_manifest(const nlohmann::json& manifest, const std::filesystem::path& path);

}  // namespace minitrain
