#include "nsedit/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

namespace nsedit {

Tensor decode_png(std::string_view bytes, int channels) {
  if (channels != 1 && channels != 3) throw ImageIOError("only 1- or 3-channel images are supported");
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw ImageIOError(std::string("not a readable PNG: ") + img.message);
  }
  img.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw ImageIOError(std::string("PNG decode failed: ") + img.message);
  }
  const int H = static_cast<int>(img.height), W = static_cast<int>(img.width);
  Tensor t({channels, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < channels; ++c)
        t[(static_cast<std::size_t>(c) * H + y) * W + x] =
            buf[(static_cast<std::size_t>(y) * W + x) * channels + c] / 255.0f;
  return t;
}

std::string encode_png(const Tensor& image) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
    throw ImageIOError("encode_png expects (1|3, H, W), got " + to_string(image.shape()));
  }
  const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
  std::vector<png_byte> buf(static_cast<std::size_t>(C) * H * W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < C; ++c) {
        const real v = std::clamp(image[(static_cast<std::size_t>(c) * H + y) * W + x], real{0}, real{1});
        buf[(static_cast<std::size_t>(y) * W + x) * C + c] = static_cast<png_byte>(std::lround(v * 255.0f));
      }
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(W);
  img.height = static_cast<png_uint_32>(H);
  img.format = C == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, buf.data(), 0, nullptr)) {
    throw ImageIOError(std::string("PNG encode failed: ") + img.message);
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, buf.data(), 0, nullptr)) {
    throw ImageIOError(std::string("PNG encode failed: ") + img.message);
  }
  out.resize(size);
  return out;
}

Tensor read_png(const std::filesystem::path& path, int channels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageIOError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return decode_png(ss.str(), channels);
  } catch (const ImageIOError& e) {
    throw ImageIOError(path.string() + ": " + e.what());
  }
}

void write_png(const std::filesystem::path& path, const Tensor& image) {
  const std::string bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ImageIOError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

namespace {
constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(std::string_view bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) | (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                       static_cast<unsigned char>(bytes[i + 2]);
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (i < bytes.size()) {
    unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
    const bool two = i + 1 < bytes.size();
    if (two) v |= static_cast<unsigned char>(bytes[i + 1]) << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += two ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::string base64_decode(std::string_view text) {
  std::array<int, 256> lut;
  lut.fill(-1);
  for (int k = 0; k < 64; ++k) lut[static_cast<unsigned char>(kAlphabet[k])] = k;
  std::string out;
  unsigned acc = 0;
  int bits = 0;
  for (char ch : text) {
    if (ch == '=') break;
    if (ch == '\n' || ch == '\r' || ch == ' ') continue;
    const int v = lut[static_cast<unsigned char>(ch)];
    if (v < 0) throw ImageIOError("invalid base64 payload");
    acc = (acc << 6) | static_cast<unsigned>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out += static_cast<char>((acc >> bits) & 0xFF);
    }
  }
  return out;
}

Tensor to_model_range(const Tensor& unit_image, ValueRange range) {
  if (range == ValueRange::unit) return unit_image;
  Tensor out = unit_image;
  for (auto& v : out.storage()) v = v * 2.0f - 1.0f;
  return out;
}

Tensor to_unit_range(const Tensor& model_image, ValueRange range) {
  if (range == ValueRange::unit) return model_image;
  Tensor out = model_image;
  for (auto& v : out.storage()) v = (v + 1.0f) * 0.5f;
  return out;
}

Tensor make_grid(std::span<const Tensor> images, int rows, int cols) {
  if (images.empty() || rows < 1 || cols < 1 || static_cast<int>(images.size()) > rows * cols) {
    throw DimensionError("grid layout does not fit the image count");
  }
  const Shape s = images[0].shape();
  if (s.size() != 3) throw DimensionError("grid cells must be (C, H, W)");
  const int C = s[0], H = s[1], W = s[2];
  Tensor out({C, rows * H, cols * W});
  for (std::size_t k = 0; k < images.size(); ++k) {
    if (images[k].shape() != s) throw DimensionError("grid cells must share a shape");
    const int r = static_cast<int>(k) / cols, q = static_cast<int>(k) % cols;
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          out[(static_cast<std::size_t>(c) * rows * H + r * H + y) * cols * W + q * W + x] =
              images[k][(static_cast<std::size_t>(c) * H + y) * W + x];
  }
  return out;
}

}  // namespace nsedit
