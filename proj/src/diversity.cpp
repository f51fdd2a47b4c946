#include "nsedit/diversity.hpp"

#include <string>

namespace nsedit {

void DiversityConfig::validate() const {
  if (num_samples < 2) throw ConfigError("diversity needs num_samples >= 2");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("diversity alpha must lie in (0, 1]");
  if (!(epsilon > 0.0)) throw ConfigError("diversity epsilon must be > 0");
}

NormalizedDistanceMatrix::NormalizedDistanceMatrix(Tensor entries) : entries_(std::move(entries)) {
  if (entries_.rank() != 2 || entries_.dim(0) != entries_.dim(1)) {
    throw DimensionError("normalized distance matrix must be square, got " + to_string(entries_.shape()));
  }
}

namespace {

Var stack_samples(std::span<const Tensor> samples) {
  if (samples.size() < 2) throw ConfigError("pairwise distances need at least two samples");
  for (const auto& s : samples) {
    if (s.shape() != samples[0].shape()) {
      throw DimensionError("sample shape mismatch: " + to_string(s.shape()) + " vs " + to_string(samples[0].shape()));
    }
  }
  return constant(stack_batch(samples));
}

}  // namespace

Tensor pairwise_distances(std::span<const Tensor> samples, DistanceMetric /*metric*/) {
  NoGradGuard guard;
  return ops::pairwise_distances(stack_samples(samples)).value();
}

NormalizedDistanceMatrix normalize_rows(const Tensor& distances, double epsilon) {
  NoGradGuard guard;
  return NormalizedDistanceMatrix(ops::normalize_rows(constant(distances), epsilon).value());
}

double ndiv_hinge(const NormalizedDistanceMatrix& dz, const NormalizedDistanceMatrix& dg, double alpha) {
  NoGradGuard guard;
  return ops::hinge_mean(constant(dz.entries()), constant(dg.entries()), alpha).item();
}

Var progressive_ndiv_loss(const Var& latents, std::span<const Var> levels, const DiversityConfig& config) {
  if (latents.value().rank() != 2) throw DimensionError("latents must be (N, latent_dim)");
  const int N = latents.value().dim(0);
  if (N < 2) throw ConfigError("diversity loss needs at least two samples");
  if (levels.empty()) throw DimensionError("diversity loss needs at least one scale");
  Var dz = ops::normalize_rows(ops::pairwise_distances(latents), config.epsilon);
  std::vector<Var> terms;
  for (std::size_t k = 0; k < levels.size(); ++k) {
    if (levels[k].value().rank() < 1 || levels[k].value().dim(0) != N) {
      throw DimensionError("scale " + std::to_string(k) + " holds " + to_string(levels[k].shape()) + " for " +
                           std::to_string(N) + " latents");
    }
    Var dg = ops::normalize_rows(ops::pairwise_distances(levels[k]), config.epsilon);
    terms.push_back(ops::hinge_mean(dz, dg, config.alpha));
  }
  return ops::sum_all(terms);
}

double progressive_ndiv_loss(std::span<const Tensor> latents, std::span<const ImagePyramid> pyramids,
                             const DiversityConfig& config) {
  if (latents.size() != pyramids.size()) {
    throw DimensionError("got " + std::to_string(latents.size()) + " latents for " + std::to_string(pyramids.size()) +
                         " pyramids");
  }
  NoGradGuard guard;
  Var z = stack_samples(latents);
  const Tensor flat = z.value().reshaped({z.value().dim(0), static_cast<int>(z.value().numel() / z.value().dim(0))});
  const int n = pyramids.front().n_scales();
  std::vector<Var> levels;
  for (int k = 0; k < n; ++k) {
    std::vector<Tensor> items;
    for (const auto& p : pyramids) {
      if (p.n_scales() != n) throw DimensionError("pyramids disagree in scale count");
      items.push_back(p.levels[k]);
    }
    levels.push_back(stack_samples(items));
  }
  return progressive_ndiv_loss(constant(flat), levels, config).item();
}

}  // namespace nsedit
