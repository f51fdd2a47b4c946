#include "nsedit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

namespace nsedit {

PixelEmbedder::PixelEmbedder(Shape image_shape, int pool) : shape_(std::move(image_shape)), pool_(pool), dim_(0) {
  if (shape_.size() != 3 || shape_numel(shape_) == 0) throw DimensionError("pixel embedder needs a (C, H, W) shape");
  if (pool_ < 1 || shape_[1] % pool_ != 0 || shape_[2] % pool_ != 0) {
    throw ConfigError("pool " + std::to_string(pool_) + " does not divide " + to_string(shape_));
  }
  dim_ = shape_[0] * (shape_[1] / pool_) * (shape_[2] / pool_);
}

std::string PixelEmbedder::id() const {
  return "pixel" + to_string(shape_) + (pool_ > 1 ? "/pool" + std::to_string(pool_) : "");
}

Feature PixelEmbedder::embed(const Tensor& image) const {
  if (image.shape() != shape_) {
    throw DimensionError("pixel embedder expects " + to_string(shape_) + ", got " + to_string(image.shape()));
  }
  const double s = 1.0 / std::sqrt(static_cast<double>(dim_));
  if (pool_ == 1) {
    Feature f(image.numel());
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = image[i] * s;
    return f;
  }
  const int C = shape_[0], H = shape_[1], W = shape_[2], h = H / pool_, w = W / pool_;
  const double area = static_cast<double>(pool_) * pool_;
  Feature f(static_cast<std::size_t>(dim_), 0.0);
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        f[(static_cast<std::size_t>(c) * h + y / pool_) * w + x / pool_] +=
            image[(static_cast<std::size_t>(c) * H + y) * W + x];
  for (auto& v : f) v = v / area * s;
  return f;
}

double feature_distance(const Feature& a, const Feature& b) {
  if (a.size() != b.size()) {
    throw DimensionError("feature sizes differ: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

FeatureStats FeatureStats::from_features(std::span<const Feature> rows) {
  if (rows.size() < 2) throw ConfigError("feature statistics need at least two samples");
  const int d = static_cast<int>(rows[0].size());
  Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (static_cast<int>(rows[i].size()) != d) throw DimensionError("ragged feature rows");
    for (int j = 0; j < d; ++j) X(static_cast<Eigen::Index>(i), j) = rows[i][j];
  }
  FeatureStats s;
  s.count = static_cast<long long>(rows.size());
  s.mean = X.colwise().mean().transpose();
  const Eigen::MatrixXd centered = X.rowwise() - s.mean.transpose();
  s.covariance = (centered.transpose() * centered) / static_cast<double>(s.count - 1);
  return s;
}

namespace {

// Eigen-decomposition of a symmetric matrix; small negative eigenvalues are
// clamped, large ones reported.
Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> psd_eigen(const Eigen::MatrixXd& m, double tolerance,
                                                         const char* what) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  if (es.info() != Eigen::Success) throw NumericError(std::string("eigendecomposition failed for ") + what);
  const double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
  if (lo < -tolerance * std::max(1.0, std::abs(hi))) {
    std::ostringstream os;
    os << what << " is not positive semidefinite: eigenvalues in [" << lo << ", " << hi << "]";
    throw NumericError(os.str());
  }
  return es;
}

}  // namespace

double frechet_distance(const FeatureStats& a, const FeatureStats& b, double tolerance) {
  if (a.dim() != b.dim() || a.covariance.rows() != a.dim() || b.covariance.rows() != b.dim()) {
    throw DimensionError("feature statistics dimensions differ: " + std::to_string(a.dim()) + " vs " +
                         std::to_string(b.dim()));
  }
  const auto ea = psd_eigen(a.covariance, tolerance, "first covariance");
  psd_eigen(b.covariance, tolerance, "second covariance");
  const Eigen::VectorXd ra = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd sqrt_a = ea.eigenvectors() * ra.asDiagonal() * ea.eigenvectors().transpose();
  const auto em = psd_eigen(sqrt_a * b.covariance * sqrt_a, tolerance, "covariance product");
  const double tr_sqrt = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double mean_term = (a.mean - b.mean).squaredNorm();
  const double d = mean_term + a.covariance.trace() + b.covariance.trace() - 2.0 * tr_sqrt;
  return d < 0.0 && d > -tolerance * std::max(1.0, mean_term + a.covariance.trace()) ? 0.0 : d;
}

double pairwise_diversity(std::span<const Feature> features) {
  if (features.size() < 2) throw ConfigError("pairwise diversity needs at least two images");
  double s = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < features.size(); ++i)
    for (std::size_t j = i + 1; j < features.size(); ++j, ++pairs) s += feature_distance(features[i], features[j]);
  return s / static_cast<double>(pairs);
}

double pairwise_diversity(std::span<const Tensor> images, const PerceptualEmbedder& embedder) {
  std::vector<Feature> f;
  for (const auto& im : images) f.push_back(embedder.embed(im));
  return pairwise_diversity(f);
}

double shortest_distance(std::span<const Feature> samples, const Feature& ground_truth) {
  if (samples.empty()) throw ConfigError("shortest distance needs at least one sample");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : samples) best = std::min(best, feature_distance(s, ground_truth));
  return best;
}

double shortest_distance(std::span<const Tensor> samples, const Tensor& ground_truth,
                         const PerceptualEmbedder& embedder) {
  std::vector<Feature> f;
  for (const auto& s : samples) f.push_back(embedder.embed(s));
  return shortest_distance(f, embedder.embed(ground_truth));
}

std::map<std::string, double> recovery_count(const std::map<std::string, std::vector<double>>& per_method) {
  if (per_method.empty()) throw ConfigError("recovery count needs at least one method");
  const std::size_t n = per_method.begin()->second.size();
  for (const auto& [name, v] : per_method) {
    if (v.size() != n) throw DimensionError("method " + name + " covers " + std::to_string(v.size()) + " examples, expected " + std::to_string(n));
  }
  if (n == 0) throw ConfigError("recovery count needs at least one example");
  std::map<std::string, double> wins;
  for (const auto& [name, v] : per_method) wins[name] = 0.0;
  for (std::size_t e = 0; e < n; ++e) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [name, v] : per_method) best = std::min(best, v[e]);
    int tied = 0;
    for (const auto& [name, v] : per_method) tied += v[e] == best;
    for (const auto& [name, v] : per_method)
      if (v[e] == best) wins[name] += 1.0 / tied;
  }
  for (auto& [name, w] : wins) w = 100.0 * w / static_cast<double>(n);
  return wins;
}

LandmarkFile LandmarkFile::load(const std::filesystem::path& path, int width, int height) {
  std::ifstream in(path);
  if (!in) throw RangeError("cannot read landmark file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), width, height);
}

LandmarkFile LandmarkFile::parse(const std::string& text, int width, int height) {
  LandmarkFile f;
  std::istringstream lines(text);
  std::string line;
  int lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::istringstream row(line);
    std::string field;
    while (std::getline(row, field, ',')) {
      const auto b = field.find_first_not_of(" \t\r"), e = field.find_last_not_of(" \t\r");
      fields.push_back(b == std::string::npos ? "" : field.substr(b, e - b + 1));
    }
    if (fields.size() != 1 + 2 * kLandmarkCount) {
      throw DimensionError("landmark line " + std::to_string(lineno) + " has " + std::to_string(fields.size()) +
                           " fields, expected " + std::to_string(1 + 2 * kLandmarkCount));
    }
    Landmarks pts{};
    for (int p = 0; p < kLandmarkCount; ++p) {
      for (int a = 0; a < 2; ++a) {
        try {
          pts[p][a] = std::stod(fields[1 + 2 * p + a]);
        } catch (const std::exception&) {
          throw DimensionError("landmark line " + std::to_string(lineno) + " has a non-numeric coordinate");
        }
      }
      if ((width > 0 && (pts[p][0] < 0 || pts[p][0] >= width)) ||
          (height > 0 && (pts[p][1] < 0 || pts[p][1] >= height))) {
        throw RangeError("landmark " + std::to_string(p + 1) + " of " + fields[0] + " lies outside the image");
      }
    }
    f.insert(fields[0], pts);
  }
  return f;
}

void LandmarkFile::insert(std::string image_id, const Landmarks& points) { records_[std::move(image_id)] = points; }

std::optional<Landmarks> LandmarkFile::find(const std::string& image_id) const {
  auto it = records_.find(image_id);
  if (it == records_.end()) return std::nullopt;
  return it->second;
}

double landmark_mse(const Landmarks& a, const Landmarks& b) {
  double s = 0.0;
  for (int p = 0; p < kLandmarkCount; ++p) {
    const double dx = a[p][0] - b[p][0], dy = a[p][1] - b[p][1];
    s += dx * dx + dy * dy;
  }
  return s / kLandmarkCount;
}

double landmark_alignment(std::span<const std::string> samples, const std::string& ground_truth,
                          const LandmarkProvider& provider) {
  if (samples.empty()) throw ConfigError("landmark alignment needs at least one sample");
  const auto gt = provider.find(ground_truth);
  if (!gt) throw RangeError("no landmarks for " + ground_truth);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : samples) {
    const auto lm = provider.find(s);
    if (!lm) throw RangeError("no landmarks for " + s);
    best = std::min(best, landmark_mse(*lm, *gt));
  }
  return best;
}

LandmarkReport landmark_alignment(std::span<const LandmarkExample> examples, const LandmarkProvider& provider) {
  LandmarkReport r;
  double sum = 0.0;
  for (const auto& e : examples) {
    try {
      sum += landmark_alignment(e.samples, e.ground_truth, provider);
      ++r.examples;
    } catch (const RangeError&) {
      ++r.skipped;
    }
  }
  if (r.examples == 0) throw RangeError("no example has complete landmarks");
  r.value = sum / r.examples;
  return r;
}

std::vector<double> scale_variation_profile(const Model& model, std::span<const Tensor> condition_inputs,
                                            const PerceptualEmbedder& embedder, const ProfileOptions& options) {
  const ModelConfig& mc = model.config();
  if (condition_inputs.empty()) throw ConfigError("scale variation profile needs at least one condition");
  if (options.codes_per_scale < 2) throw ConfigError("scale variation profile needs codes_per_scale >= 2");
  if (!(options.spread >= 0.0)) throw ConfigError("spread must be >= 0");
  const int n = mc.pyramid.n_scales;
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> profile(static_cast<std::size_t>(n), 0.0);
  for (const auto& input : condition_inputs) {
    const ConditionalCode code = model.encode(input);
    const ScaleLatentSet center = model.expand(LatentCode::sample(mc.latent_dim, rng));
    for (int k = 0; k < n; ++k) {
      std::vector<Feature> feats;
      for (int j = 0; j < options.codes_per_scale; ++j) {
        ScaleLatentSet s = center;
        for (auto& v : s.per_scale[k].values) v = static_cast<real>(v + options.spread * normal(rng));
        feats.push_back(embedder.embed(model.decode(code, s).levels.back()));
      }
      profile[k] += pairwise_diversity(feats);
    }
  }
  for (auto& v : profile) v /= static_cast<double>(condition_inputs.size());
  return profile;
}

}  // namespace nsedit
