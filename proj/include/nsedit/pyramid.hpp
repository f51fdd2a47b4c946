#pragma once

#include <span>
#include <vector>

#include "nsedit/autograd.hpp"
#include "nsedit/tensor.hpp"

namespace nsedit {

struct PyramidSpec {
  int base_resolution = 4;
  int n_scales = 4;
  int channels = 3;

  void validate() const;
  // Spatial size of level `level` (0-based): base_resolution * 2^level.
  int resolution(int level) const;
  int output_resolution() const { return resolution(n_scales - 1); }
};

/// Images G_1..G_n at dyadically increasing resolution. Levels may be single
/// images (C, H, W) or batches (B, C, H, W); all levels share the leading layout.
struct ImagePyramid {
  std::vector<Tensor> levels;

  int n_scales() const { return static_cast<int>(levels.size()); }
  // Checks the dyadic size ladder and the shared channel count.
  void validate() const;
  // Item `index` of a batched pyramid as an unbatched pyramid.
  ImagePyramid item(int index) const;
  int batch_size() const;
};

// Mean of each non-overlapping 2x2 block. Odd sizes throw DimensionError.
Tensor avg_pool_2x2(const Tensor& image);
// avg_pool_2x2 applied `steps` times.
Tensor downsample_chain(const Tensor& image, int steps);

// Sum over consecutive levels of MSE(S(G_{i+1}), G_i).
double disentanglement_loss(const ImagePyramid& pyramid);

// Differentiable forms over batched levels; for a batch, equals the mean of the
// per-item losses because every item has the same element count.
Var downsample_chain(const Var& image, int steps);
Var disentanglement_loss(std::span<const Var> levels);

}  // namespace nsedit
