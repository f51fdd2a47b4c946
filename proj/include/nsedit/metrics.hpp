#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "nsedit/nets.hpp"
#include "nsedit/tensor.hpp"

namespace nsedit {

using Feature = std::vector<double>;

// Deterministic image -> fixed-length feature map.
class PerceptualEmbedder {
 public:
  virtual ~PerceptualEmbedder() = default;
  virtual int dim() const = 0;
  virtual std::string id() const = 0;
  virtual Feature embed(const Tensor& image) const = 0;
};

// Flattened pixels scaled by 1/sqrt(D), so distances are RMS pixel differences.
// With pool > 1, pool x pool blocks are averaged first.
class PixelEmbedder : public PerceptualEmbedder {
 public:
  explicit PixelEmbedder(Shape image_shape, int pool = 1);
  int dim() const override { return dim_; }
  std::string id() const override;
  Feature embed(const Tensor& image) const override;

 private:
  Shape shape_;
  int pool_;
  int dim_;
};

double feature_distance(const Feature& a, const Feature& b);

struct FeatureStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  long long count = 0;

  int dim() const { return static_cast<int>(mean.size()); }
  // Sample mean and unbiased covariance; needs at least two rows.
  static FeatureStats from_features(std::span<const Feature> rows);
};

// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)), with the root taken on
// the symmetric form S_a^(1/2) S_b S_a^(1/2).
double frechet_distance(const FeatureStats& a, const FeatureStats& b, double tolerance = 1e-6);

// Mean over unordered pairs of embedder distance.
double pairwise_diversity(std::span<const Feature> features);
double pairwise_diversity(std::span<const Tensor> images, const PerceptualEmbedder& embedder);

// Minimum distance from any sample to the ground truth.
double shortest_distance(std::span<const Feature> samples, const Feature& ground_truth);
double shortest_distance(std::span<const Tensor> samples, const Tensor& ground_truth,
                         const PerceptualEmbedder& embedder);

// Percentage of examples on which each method has the smallest shortest
// distance; ties split the win equally.
std::map<std::string, double> recovery_count(const std::map<std::string, std::vector<double>>& per_method);

inline constexpr int kLandmarkCount = 68;
using Landmarks = std::array<std::array<double, 2>, kLandmarkCount>;

class LandmarkProvider {
 public:
  virtual ~LandmarkProvider() = default;
  // nullopt when the image has no landmarks.
  virtual std::optional<Landmarks> find(const std::string& image_id) const = 0;
};

// Records of `filename, x1, y1, ..., x68, y68`; one per line.
class LandmarkFile : public LandmarkProvider {
 public:
  // Points outside [0, width) x [0, height) are rejected when bounds are given.
  static LandmarkFile load(const std::filesystem::path& path, int width = 0, int height = 0);
  static LandmarkFile parse(const std::string& text, int width = 0, int height = 0);
  void insert(std::string image_id, const Landmarks& points);
  std::optional<Landmarks> find(const std::string& image_id) const override;
  std::size_t size() const { return records_.size(); }

 private:
  std::unordered_map<std::string, Landmarks> records_;
};

// Mean over the 68 points of squared coordinate distance.
double landmark_mse(const Landmarks& a, const Landmarks& b);

// Best-sample landmark error for one example; throws RangeError when any image
// lacks landmarks.
double landmark_alignment(std::span<const std::string> samples, const std::string& ground_truth,
                          const LandmarkProvider& provider);

struct LandmarkExample {
  std::string ground_truth;
  std::vector<std::string> samples;
};

struct LandmarkReport {
  double value = 0.0;
  int examples = 0;
  int skipped = 0;
};

// Mean over examples; examples with missing landmarks are skipped and counted.
LandmarkReport landmark_alignment(std::span<const LandmarkExample> examples, const LandmarkProvider& provider);

struct ProfileOptions {
  double spread = 0.5;
  int codes_per_scale = 10;
  std::uint64_t seed = 0;
};

// For each scale k: fix a centre latent set, perturb only scale k, and average
// the pairwise embedder distance of the full-resolution outputs over conditions.
std::vector<double> scale_variation_profile(const Model& model, std::span<const Tensor> condition_inputs,
                                            const PerceptualEmbedder& embedder, const ProfileOptions& options = {});

}  // namespace nsedit
