#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "nsedit/config.hpp"
#include "nsedit/tensor.hpp"

namespace nsedit {

class IngestionError : public std::runtime_error {
 public:
  IngestionError(const std::string& what, std::vector<std::string> paths);
  const std::vector<std::string>& paths() const { return paths_; }

 private:
  std::vector<std::string> paths_;
};

// Images in the model's value range, (C, R, R) each, with their file names.
struct Dataset {
  std::vector<Tensor> images;
  std::vector<std::string> names;

  std::size_t size() const { return images.size(); }
};

struct DatasetSplit {
  Dataset train;
  Dataset validation;
};

// Reads every PNG in `dir` (sorted by name), converts to `channels`, center-crops
// to a square and resizes to `resolution`. Unreadable files are collected and
// reported together.
Dataset load_image_directory(const std::filesystem::path& dir, int channels, int resolution, ValueRange range);

// Deterministic split: an image goes to validation when the hash of its file
// name falls below `validation_fraction`.
DatasetSplit split_by_name_hash(const Dataset& data, double validation_fraction);

Tensor center_crop_resize(const Tensor& image, int resolution);

// Procedural face-like test images in [0, 1]: coarse layout, mid-scale features
// and fine texture all vary with the seed.
Tensor synthesize_face(int resolution, int channels, std::mt19937_64& rng);
Dataset synthesize_dataset(int count, int resolution, int channels, std::uint64_t seed, ValueRange range);
void write_synthetic_dataset(const std::filesystem::path& dir, int count, int resolution, int channels,
                             std::uint64_t seed);

}  // namespace nsedit
