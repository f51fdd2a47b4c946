#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nsedit {

// Element type of every tensor. The double build exists for tight gradient checks.
#ifdef NSEDIT_DOUBLE
using real = double;
#else
using real = float;
#endif

// Error taxonomy shared by every module.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// 64-byte aligned storage: vectorized kernels peel loops by address alignment,
// so a fixed alignment keeps results independent of where memory lands.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<real, AlignedAllocator<real>>;

using Shape = std::vector<int>;

std::string to_string(const Shape& shape);

/// Dense row-major tensor. Images use (C, H, W) or batched (B, C, H, W).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, real fill = 0.0f);
  Tensor(Shape shape, std::vector<real> data);
  Tensor(Shape shape, Buffer data);
  Tensor(Shape shape, std::initializer_list<real> data) : Tensor(std::move(shape), Buffer(data)) {}

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const;
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  real* ptr() { return data_.data(); }
  const real* ptr() const { return data_.data(); }
  std::span<real> data() { return data_; }
  std::span<const real> data() const { return data_; }
  Buffer& storage() { return data_; }
  const Buffer& storage() const { return data_; }
  std::vector<real> to_vector() const { return {data_.begin(), data_.end()}; }

  real& operator[](std::size_t i) { return data_[i]; }
  real operator[](std::size_t i) const { return data_[i]; }

  // Rank-4 accessors.
  real& at(int n, int c, int h, int w);
  real at(int n, int c, int h, int w) const;

  Tensor reshaped(Shape shape) const;
  void fill(real v);

  // Bitwise equality of shape and contents.
  bool operator==(const Tensor& other) const;

 private:
  Shape shape_;
  Buffer data_;
};

std::size_t shape_numel(const Shape& shape);

// Promotes (C,H,W) to (1,C,H,W); rank-4 passes through.
Tensor as_batch(const Tensor& t);

Tensor slice_batch(const Tensor& t, int begin, int count);
Tensor stack_batch(std::span<const Tensor> items);
Tensor concat_batch(std::span<const Tensor> items);

// Bilinear resize with half-pixel centers (align_corners = false), any rank-3/4 image.
Tensor resize_bilinear(const Tensor& image, int height, int width);
// Nearest resize by an integer factor in either direction is handled by the autograd ops;
// this version is for plain image preparation.
Tensor resize_nearest(const Tensor& image, int height, int width);

double max_abs_diff(const Tensor& a, const Tensor& b);
bool all_finite(const Tensor& t);

}  // namespace nsedit
