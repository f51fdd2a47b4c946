#include "nsedit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace nsedit {

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw DimensionError("negative dimension in shape " + to_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(Shape shape, real fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<real> data) : Tensor(std::move(shape), Buffer(data.begin(), data.end())) {}

Tensor::Tensor(Shape shape, Buffer data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_)) {
    throw DimensionError("tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                         to_string(shape_));
  }
}

int Tensor::dim(int i) const {
  if (i < 0) i += rank();
  if (i < 0 || i >= rank()) throw DimensionError("dimension index out of range for shape " + to_string(shape_));
  return shape_[static_cast<std::size_t>(i)];
}

real& Tensor::at(int n, int c, int h, int w) {
  return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

real Tensor::at(int n, int c, int h, int w) const {
  return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw DimensionError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(real v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::operator==(const Tensor& other) const {
  return shape_ == other.shape_ &&
         (data_.empty() || std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(real)) == 0);
}

Tensor as_batch(const Tensor& t) {
  if (t.rank() == 4) return t;
  if (t.rank() == 3) return t.reshaped({1, t.dim(0), t.dim(1), t.dim(2)});
  throw DimensionError("expected an image tensor of rank 3 or 4, got " + to_string(t.shape()));
}

Tensor slice_batch(const Tensor& t, int begin, int count) {
  if (t.rank() < 1 || begin < 0 || count < 0 || begin + count > t.dim(0)) {
    throw DimensionError("batch slice out of range for shape " + to_string(t.shape()));
  }
  Shape s = t.shape();
  const std::size_t per = t.numel() / static_cast<std::size_t>(s[0]);
  s[0] = count;
  Buffer out(t.storage().begin() + static_cast<std::ptrdiff_t>(per * begin),
                         t.storage().begin() + static_cast<std::ptrdiff_t>(per * (begin + count)));
  return Tensor(std::move(s), std::move(out));
}

Tensor stack_batch(std::span<const Tensor> items) {
  if (items.empty()) throw DimensionError("cannot stack an empty list");
  const Shape& s0 = items[0].shape();
  Buffer out;
  out.reserve(items[0].numel() * items.size());
  for (const auto& t : items) {
    if (t.shape() != s0) throw DimensionError("stack shape mismatch: " + to_string(t.shape()) + " vs " + to_string(s0));
    out.insert(out.end(), t.storage().begin(), t.storage().end());
  }
  Shape s{static_cast<int>(items.size())};
  s.insert(s.end(), s0.begin(), s0.end());
  return Tensor(std::move(s), std::move(out));
}

Tensor concat_batch(std::span<const Tensor> items) {
  if (items.empty()) throw DimensionError("cannot concatenate an empty list");
  Shape s = items[0].shape();
  int total = 0;
  Buffer out;
  for (const auto& t : items) {
    if (t.rank() != static_cast<int>(s.size()) || !std::equal(s.begin() + 1, s.end(), t.shape().begin() + 1)) {
      throw DimensionError("batch concat shape mismatch: " + to_string(t.shape()));
    }
    total += t.dim(0);
    out.insert(out.end(), t.storage().begin(), t.storage().end());
  }
  s[0] = total;
  return Tensor(std::move(s), std::move(out));
}

namespace {

template <typename Sampler>
Tensor resize_with(const Tensor& image, int height, int width, Sampler&& sample) {
  if (height < 1 || width < 1) throw DimensionError("resize target must be positive");
  const Tensor src = as_batch(image);
  const int B = src.dim(0), C = src.dim(1);
  Tensor out({B, C, height, width});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) out.at(b, c, y, x) = sample(src, b, c, y, x);
  if (image.rank() == 3) return out.reshaped({C, height, width});
  return out;
}

}  // namespace

Tensor resize_bilinear(const Tensor& image, int height, int width) {
  const Tensor src = as_batch(image);
  const int H = src.dim(2), W = src.dim(3);
  const double sy = static_cast<double>(H) / height, sx = static_cast<double>(W) / width;
  return resize_with(image, height, width, [&](const Tensor& s, int b, int c, int y, int x) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(H - 1));
    const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(W - 1));
    const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
    const int y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
    const double ty = fy - y0, tx = fx - x0;
    const double top = s.at(b, c, y0, x0) * (1 - tx) + s.at(b, c, y0, x1) * tx;
    const double bot = s.at(b, c, y1, x0) * (1 - tx) + s.at(b, c, y1, x1) * tx;
    return static_cast<real>(top * (1 - ty) + bot * ty);
  });
}

Tensor resize_nearest(const Tensor& image, int height, int width) {
  const Tensor src = as_batch(image);
  const int H = src.dim(2), W = src.dim(3);
  return resize_with(image, height, width, [&](const Tensor& s, int b, int c, int y, int x) {
    const int sy = std::min(H - 1, static_cast<int>(static_cast<long long>(y) * H / height));
    const int sx = std::min(W - 1, static_cast<int>(static_cast<long long>(x) * W / width));
    return s.at(b, c, sy, sx);
  });
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw DimensionError("max_abs_diff shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, static_cast<double>(std::fabs(a[i] - b[i])));
  return m;
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.storage().begin(), t.storage().end(), [](real v) { return std::isfinite(v); });
}

}  // namespace nsedit
