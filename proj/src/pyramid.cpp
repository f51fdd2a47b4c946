#include "nsedit/pyramid.hpp"

#include <string>

namespace nsedit {

void PyramidSpec::validate() const {
  if (base_resolution < 1) throw ConfigError("base_resolution must be >= 1");
  if (n_scales < 2) throw ConfigError("n_scales must be >= 2");
  if (channels < 1) throw ConfigError("channels must be >= 1");
}

int PyramidSpec::resolution(int level) const {
  if (level < 0 || level >= n_scales) throw RangeError("pyramid level " + std::to_string(level) + " out of range");
  return base_resolution << level;
}

void ImagePyramid::validate() const {
  if (levels.empty()) throw DimensionError("empty pyramid");
  const Tensor& first = levels.front();
  const int rank = first.rank();
  if (rank != 3 && rank != 4) throw DimensionError("pyramid levels must be rank 3 or 4");
  const int c_axis = rank - 3;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const Tensor& t = levels[i];
    if (t.rank() != rank) throw DimensionError("pyramid levels disagree in rank");
    if (rank == 4 && t.dim(0) != first.dim(0)) throw DimensionError("pyramid levels disagree in batch size");
    if (t.dim(c_axis) != first.dim(c_axis)) throw DimensionError("pyramid levels disagree in channel count");
    const int expect = first.dim(c_axis + 1) << i;
    if (t.dim(c_axis + 1) != expect || t.dim(c_axis + 2) != (first.dim(c_axis + 2) << i)) {
      throw DimensionError("pyramid level " + std::to_string(i) + " has shape " + to_string(t.shape()) +
                           ", expected spatial size " + std::to_string(expect));
    }
  }
}

ImagePyramid ImagePyramid::item(int index) const {
  ImagePyramid out;
  for (const auto& l : levels) {
    if (l.rank() != 4) throw DimensionError("item() on an unbatched pyramid");
    Tensor s = slice_batch(l, index, 1);
    out.levels.push_back(s.reshaped({l.dim(1), l.dim(2), l.dim(3)}));
  }
  return out;
}

int ImagePyramid::batch_size() const {
  if (levels.empty()) return 0;
  return levels.front().rank() == 4 ? levels.front().dim(0) : 1;
}

Tensor avg_pool_2x2(const Tensor& image) {
  NoGradGuard guard;
  const Tensor batched = as_batch(image);
  Tensor out = ops::avg_pool_2x2(constant(batched)).value();
  if (image.rank() == 3) return out.reshaped({out.dim(1), out.dim(2), out.dim(3)});
  return out;
}

Tensor downsample_chain(const Tensor& image, int steps) {
  if (steps < 0) throw RangeError("downsample steps must be >= 0");
  const Tensor b = as_batch(image);
  const int div = 1 << steps;
  if (b.dim(2) % div != 0 || b.dim(3) % div != 0) {
    throw DimensionError("spatial size " + to_string(image.shape()) + " not divisible by 2^" + std::to_string(steps));
  }
  Tensor out = image;
  for (int i = 0; i < steps; ++i) out = avg_pool_2x2(out);
  return out;
}

Var downsample_chain(const Var& image, int steps) {
  if (steps < 0) throw RangeError("downsample steps must be >= 0");
  Var out = image;
  for (int i = 0; i < steps; ++i) out = ops::avg_pool_2x2(out);
  return out;
}

Var disentanglement_loss(std::span<const Var> levels) {
  if (levels.size() < 2) throw ConfigError("disentanglement loss needs at least two scales");
  std::vector<Var> terms;
  for (std::size_t i = 0; i + 1 < levels.size(); ++i) {
    const Shape& fine = levels[i + 1].shape();
    const Shape& coarse = levels[i].shape();
    if (fine.size() != 4 || coarse.size() != 4 || fine[0] != coarse[0] || fine[1] != coarse[1] ||
        fine[2] != 2 * coarse[2] || fine[3] != 2 * coarse[3]) {
      throw DimensionError("disentanglement loss level mismatch: " + to_string(coarse) + " vs " + to_string(fine));
    }
    terms.push_back(ops::mse(ops::avg_pool_2x2(levels[i + 1]), levels[i]));
  }
  return ops::sum_all(terms);
}

double disentanglement_loss(const ImagePyramid& pyramid) {
  NoGradGuard guard;
  std::vector<Var> levels;
  for (const auto& l : pyramid.levels) levels.push_back(constant(as_batch(l)));
  return disentanglement_loss(std::span<const Var>(levels)).item();
}

}  // namespace nsedit
