#include "minitrain/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "minitrain/error.hpp"

namespace minitrain {

std::string format_metrics_row(const MetricsRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f,%.6f,", r.epoch, r.wall_seconds,
                r.train_loss, r.test_accuracy, r.lr);
  return buf + r.recipe;
}

void write_metrics(const std::vector<MetricsRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write metrics to " + path.string());
  out << kMetricsHeader << '\n';
  for (const auto& r : records) out << format_metrics_row(r) << '\n';
  if (!out) throw IoError("failed writing metrics to " + path.string());
}

std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read metrics from " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    throw IoError("metrics file " + path.string() + " has an unexpected header");
  }
  std::vector<MetricsRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (line.back() == ',') fields.emplace_back();
    if (fields.size() != 6) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 6 fields");
    }
    MetricsRecord r;
    try {
      r.epoch = std::stoul(fields[0]);
      r.wall_seconds = std::stod(fields[1]);
      r.train_loss = std::stod(fields[2]);
      r.test_accuracy = std::stod(fields[3]);
      r.lr = std::stod(fields[4]);
    } catch (const std::exception&) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
    r.recipe = fields[5];
    out.push_back(std::move(r));
  }
  return out;
}

void preflight_writable(const std::filesystem::path& path) {
  const bool existed = std::filesystem::exists(path);
  {
    std::ofstream probe(path, std::ios::binary | std::ios::app);
    if (!probe) throw IoError("output path is not writable: " + path.string());
  }
  if (!existed) std::filesystem::remove(path);
}

std::filesystem::path manifest_path(const std::filesystem::path& metrics) {
  return std::filesystem::path(metrics.string() + ".manifest.json");
}

void write_manifest(const nlohmann::json& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write manifest to " + path.string());
  out << manifest.dump(2) << '\n';
}

}  // namespace minitrain
