#include "nsedit/checkpoint.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace nsedit {

namespace {

constexpr char kMagic[8] = {'N', 'S', 'E', 'D', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ostream& os, const std::string& s) {
  put<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw CheckpointError("truncated checkpoint");
  return v;
}

std::string get_string(std::istream& is, std::uint64_t limit = 1ULL << 32) {
  const auto n = get<std::uint64_t>(is);
  if (n > limit) throw CheckpointError("corrupt checkpoint string length");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw CheckpointError("truncated checkpoint");
  return s;
}

}  // namespace

const Tensor* CheckpointData::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot open " + tmp.string() + " for writing");
    os.write(kMagic, sizeof(kMagic));
    put<std::int32_t>(os, data.format_version);
    put_string(os, data.config.dump());
    put_string(os, data.meta.dump());
    put<std::uint64_t>(os, data.tensors.size());
    for (const auto& [name, t] : data.tensors) {
      put_string(os, name);
      put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
      for (int d : t.shape()) put<std::int32_t>(os, d);
      const std::vector<float> stored(t.storage().begin(), t.storage().end());
      os.write(reinterpret_cast<const char*>(stored.data()), static_cast<std::streamsize>(stored.size() * sizeof(float)));
    }
    if (!os) throw CheckpointError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint archive");
  }
  CheckpointData d;
  d.format_version = get<std::int32_t>(is);
  if (d.format_version != kCheckpointFormatVersion) {
    throw CheckpointError("checkpoint format version " + std::to_string(d.format_version) + " unsupported (expected " +
                          std::to_string(kCheckpointFormatVersion) + ")");
  }
  try {
    d.config = nlohmann::json::parse(get_string(is));
    d.meta = nlohmann::json::parse(get_string(is));
  } catch (const nlohmann::json::parse_error& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }
  const auto count = get<std::uint64_t>(is);
  for (std::uint64_t k = 0; k < count; ++k) {
    std::string name = get_string(is, 4096);
    const auto rank = get<std::uint32_t>(is);
    if (rank > 8) throw CheckpointError("corrupt tensor rank for " + name);
    Shape shape(rank);
    for (auto& dim : shape) dim = get<std::int32_t>(is);
    Tensor t(shape);
    std::vector<float> stored(t.numel());
    is.read(reinterpret_cast<char*>(stored.data()), static_cast<std::streamsize>(stored.size() * sizeof(float)));
    if (!is) throw CheckpointError("truncated tensor " + name);
    std::copy(stored.begin(), stored.end(), t.storage().begin());
    d.tensors.emplace_back(std::move(name), std::move(t));
  }
  return d;
}

void load_parameters(ParamStore& params, const CheckpointData& data) {
  for (const auto& [name, var] : params.entries()) {
    const Tensor* t = data.find(name);
    if (!t) throw CheckpointError("checkpoint lacks parameter " + name);
    if (t->shape() != var.value().shape()) {
      throw CheckpointError("parameter " + name + " has shape " + to_string(t->shape()) + " in checkpoint but " +
                            to_string(var.value().shape()) + " in the model");
    }
    Var handle = var;
    handle.mutable_value() = *t;
  }
}

void append_parameters(const ParamStore& params, CheckpointData& data) {
  for (const auto& [name, var] : params.entries()) data.tensors.emplace_back(name, var.value());
}

Model load_model(const CheckpointData& data) {
  const nlohmann::json& cfg = data.config.contains("model") ? data.config.at("model") : data.config;
  Model model(model_config_from_json(cfg), 0);
  load_parameters(model.params(), data);
  return model;
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string file_fingerprint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  std::ostringstream hex;
  hex << std::hex << std::setw(16) << std::setfill('0') << fnv1a(ss.str());
  return hex.str();
}

}  // namespace nsedit
