#include "minitrain/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace minitrain {

namespace {

template <typename U>
void put_le(std::ostream& out, U value) {
  char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  }
  out.write(bytes, sizeof(U));
}

template <typename U>
U get_le(std::istream& in, const std::filesystem::path& path) {
  unsigned char bytes[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) {
    throw IoError("truncated checkpoint: " + path.string());
  }
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

template <typename T>
using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;

}  // namespace

std::filesystem::path checkpoint_sidecar(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".json");
}

template <typename T>
void write_tensor_records(const std::filesystem::path& path, const NamedTensors<T>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  for (const auto& [name, tensor] : records) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t e : tensor.shape()) put_le<std::uint64_t>(out, e);
    for (T v : tensor.data()) put_le<Bits<T>>(out, std::bit_cast<Bits<T>>(v));
  }
  if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

template <typename T>
NamedTensors<T> read_tensor_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  NamedTensors<T> records;
  while (in.peek() != std::char_traits<char>::eof()) {
    const auto len = get_le<std::uint32_t>(in, path);
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw IoError("truncated checkpoint: " + path.string());
    const auto rank = get_le<std::uint32_t>(in, path);
    if (rank == 0 || rank > 8) {
      throw IoError("implausible tensor rank " + std::to_string(rank) + " for " + name);
    }
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(get_le<std::uint64_t>(in, path));
    Tensor<T> tensor(shape);
    for (T& v : tensor.data()) v = std::bit_cast<T>(get_le<Bits<T>>(in, path));
    records.emplace_back(std::move(name), std::move(tensor));
  }
  return records;
}

template <typename T>
void save_checkpoint(const ResNet9<T>& model, const std::filesystem::path& path) {
  write_tensor_records(path, model.state());
  nlohmann::json side;
  side["format"] = "minitrain-checkpoint";
  side["version"] = 1;
  side["element_bytes"] = sizeof(T);
  side["model"] = nlohmann::json::parse(model_spec_to_json(model.spec()));
  std::ofstream out(checkpoint_sidecar(path), std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint sidecar for " + path.string());
  out << side.dump(2) << "\n";
}

template <typename T>
ResNet9<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream side_in(checkpoint_sidecar(path));
  if (!side_in) throw IoError("missing checkpoint sidecar for " + path.string());
  std::stringstream buf;
  buf << side_in.rdbuf();
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint sidecar is not valid JSON: " + std::string(e.what()));
  }
  if (side.value("element_bytes", 0) != static_cast<int>(sizeof(T))) {
    throw IoError("checkpoint element size " + std::to_string(side.value("element_bytes", 0)) +
                  " does not match requested precision");
  }
  ModelSpec spec = model_spec_from_json(side.at("model").dump());
  auto records = read_tensor_records<T>(path);
  if (spec.stem.kind == StemKind::kWhitened) {
    for (const auto& [name, tensor] : records) {
      if (name == "stem.whiten.filters") {
        spec.stem.filters.assign(tensor.data().begin(), tensor.data().end());
      }
    }
  }
  ResNet9<T> model = ResNet9<T>::build(spec, 0);
  model.load_state(records);
  return model;
}

template void write_tensor_records(const std::filesystem::path&, const NamedTensors<float>&);
template void write_tensor_records(const std::filesystem::path&, const NamedTensors<double>&);
template NamedTensors<float> read_tensor_records(const std::filesystem::path&);
template NamedTensors<double> read_tensor_records(const std::filesystem::path&);
template void save_checkpoint(const ResNet9<float>&, const std::filesystem::path&);
template void save_checkpoint(const ResNet9<double>&, const std::filesystem::path&);
template ResNet9<float> load_checkpoint(const std::filesystem::path&);
template ResNet9<double> load_checkpoint(const std::filesystem::path&);

}  // namespace minitrain
