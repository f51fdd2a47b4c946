#pragma once

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

#include "nsedit/config.hpp"
#include "nsedit/tensor.hpp"

namespace nsedit {

class ImageIOError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// PNG codec over (C, H, W) tensors with values in [0, 1]; C is 1 or 3.
Tensor decode_png(std::string_view bytes, int channels);
std::string encode_png(const Tensor& image);
Tensor read_png(const std::filesystem::path& path, int channels);
void write_png(const std::filesystem::path& path, const Tensor& image);

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

// Conversion between stored [0, 1] pixels and the model's value range.
Tensor to_model_range(const Tensor& unit_image, ValueRange range);
Tensor to_unit_range(const Tensor& model_image, ValueRange range);

// Tiles equally sized (C, H, W) images row-major into a rows x cols sheet.
Tensor make_grid(std::span<const Tensor> images, int rows, int cols);

}  // namespace nsedit
