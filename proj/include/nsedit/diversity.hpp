#pragma once

#include <span>
#include <vector>

#include "nsedit/autograd.hpp"
#include "nsedit/pyramid.hpp"
#include "nsedit/tensor.hpp"

namespace nsedit {

enum class DistanceMetric {
  euclidean,            // latent vectors
  pixelwise_euclidean,  // flattened images
};

struct DiversityConfig {
  int num_samples = 4;
  double alpha = 0.8;
  double epsilon = 1e-8;

  void validate() const;
};

/// Row-normalized pairwise distance matrix: zero diagonal, rows sum to 1
/// unless every sample in the row coincides.
class NormalizedDistanceMatrix {
 public:
  NormalizedDistanceMatrix() = default;
  explicit NormalizedDistanceMatrix(Tensor entries);

  int size() const { return entries_.empty() ? 0 : entries_.dim(0); }
  real operator()(int i, int j) const { return entries_[static_cast<std::size_t>(i) * size() + j]; }
  const Tensor& entries() const { return entries_; }

 private:
  Tensor entries_;
};

// N x N distances between N equally shaped samples. Both metrics are the L2 norm
// of the flattened difference; the enum records which space the samples live in.
Tensor pairwise_distances(std::span<const Tensor> samples, DistanceMetric metric);
NormalizedDistanceMatrix normalize_rows(const Tensor& distances, double epsilon);
double ndiv_hinge(const NormalizedDistanceMatrix& dz, const NormalizedDistanceMatrix& dg, double alpha);

// latents: one (latent_dim) tensor per sample; pyramids: one per sample.
double progressive_ndiv_loss(std::span<const Tensor> latents, std::span<const ImagePyramid> pyramids,
                             const DiversityConfig& config);

// Differentiable form. latents: (N, latent_dim); levels[k]: (N, C, H_k, W_k).
Var progressive_ndiv_loss(const Var& latents, std::span<const Var> levels, const DiversityConfig& config);

}  // namespace nsedit
