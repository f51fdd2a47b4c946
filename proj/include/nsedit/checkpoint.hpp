#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "nsedit/nets.hpp"

namespace nsedit {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointFormatVersion = 1;

// Single-file archive: magic, format version, config snapshot, metadata, and
// named tensors. Written to a temporary file and renamed into place.
struct CheckpointData {
  int format_version = kCheckpointFormatVersion;
  nlohmann::json config;
  nlohmann::json meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
CheckpointData read_checkpoint(const std::filesystem::path& path);

// Copies every model parameter out of `data`; names and shapes must agree exactly.
void load_parameters(ParamStore& params, const CheckpointData& data);
void append_parameters(const ParamStore& params, CheckpointData& data);

// Builds a model from a checkpoint's config snapshot and loads its weights.
Model load_model(const CheckpointData& data);

// Stable content hash of a file, hex encoded.
std::string file_fingerprint(const std::filesystem::path& path);
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 1469598103934665603ULL);

}  // namespace nsedit
