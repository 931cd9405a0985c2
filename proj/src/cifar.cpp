#include "minitrain/cifar.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <random>

#include "minitrain/digest.hpp"
#include "minitrain/error.hpp"

namespace minitrain {

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(kCifarClasses, 0);
  for (int l : labels) ++counts.at(static_cast<std::size_t>(l));
  return counts;
}

Dataset load_cifar_binary(const std::vector<std::filesystem::path>& paths, Split split) {
  Dataset ds;
  ds.split = split;
  Sha256 digest;
  for (const auto& path : paths) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open CIFAR file: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (bytes.size() % kRecordBytes != 0) {
      throw DataError(path.string() + ": length " + std::to_string(bytes.size()) +
                      " is not a multiple of " + std::to_string(kRecordBytes));
    }
    digest.update(bytes);
    const std::size_t records = bytes.size() / kRecordBytes;
    ds.images.reserve(ds.images.size() + records * kImageBytes);
    for (std::size_t r = 0; r < records; ++r) {
      const std::uint8_t* rec = bytes.data() + r * kRecordBytes;
      if (rec[0] >= kCifarClasses) {
        throw DataError(path.string() + ": record " + std::to_string(r) + " has label byte " +
                        std::to_string(rec[0]));
      }
      ds.labels.push_back(rec[0]);
      ds.images.insert(ds.images.end(), rec + 1, rec + kRecordBytes);
    }
  }
  ds.source_digest = digest.finish();
  return ds;
}

void write_cifar_binary(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const char label = static_cast<char>(ds.labels[i]);
    out.write(&label, 1);
    auto img = ds.image(i);
    out.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

Dataset load_cifar_split(const std::filesystem::path& dir, Split split) {
  std::filesystem::path base = dir;
  if (!std::filesystem::exists(base / "test_batch.bin") &&
      std::filesystem::exists(base / "cifar-10-batches-bin")) {
    base /= "cifar-10-batches-bin";
  }
  std::vector<std::filesystem::path> files;
  if (split == Split::kTrain) {
    for (int i = 1; i <= 5; ++i) files.push_back(base / ("data_batch_" + std::to_string(i) + ".bin"));
  } else {
    files.push_back(base / "test_batch.bin");
  }
  for (const auto& f : files) {
    if (!std::filesystem::exists(f)) throw DataError("missing CIFAR-10 file: " + f.string());
  }
  return load_cifar_binary(files, split);
}

Dataset select_records(const Dataset& ds, std::span<const std::size_t> indices) {
  Dataset out;
  out.split = ds.split;
  out.source_digest = ds.source_digest;
  out.labels.reserve(indices.size());
  out.images.reserve(indices.size() * kImageBytes);
  for (std::size_t i : indices) {
    if (i >= ds.size()) throw DataError("record index " + std::to_string(i) + " out of range");
    out.labels.push_back(ds.labels[i]);
    auto img = ds.image(i);
    out.images.insert(out.images.end(), img.begin(), img.end());
  }
  return out;
}

std::vector<std::size_t> sample_subset_indices(const Dataset& ds, std::size_t per_class,
                                               std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(kCifarClasses);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  }
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> picked;
  picked.reserve(per_class * kCifarClasses);
  for (std::size_t c = 0; c < kCifarClasses; ++c) {
    auto& members = by_class[c];
    if (members.size() < per_class) {
      throw DataError("class " + std::to_string(c) + " has " + std::to_string(members.size()) +
                      " records, " + std::to_string(per_class) + " requested");
    }
    std::shuffle(members.begin(), members.end(), rng);
    picked.insert(picked.end(), members.begin(),
                  members.begin() + static_cast<std::ptrdiff_t>(per_class));
  }
  std::shuffle(picked.begin(), picked.end(), rng);
  return picked;
}

Dataset sample_subset(const Dataset& ds, std::size_t per_class, std::uint64_t seed) {
  const auto idx = sample_subset_indices(ds, per_class, seed);
  return select_records(ds, idx);
}

std::string dataset_digest(const Dataset& ds) {
  Sha256 h;
  h.update_u64(ds.size());
  for (int l : ds.labels) h.update_u64(static_cast<std::uint64_t>(l));
  h.update(ds.images);
  return h.finish();
}

}  // namespace minitrain
