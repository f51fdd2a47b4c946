#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "../support/oracle.hpp"
#include "nsedit/metrics.hpp"
#include "nsedit/trainer.hpp"

using namespace nsedit;

namespace {

Feature scalar(double v) { return Feature{v}; }

// Naive enumeration oracles.
double naive_distance(const Feature& a, const Feature& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

double naive_diversity(const std::vector<Feature>& f) {
  double s = 0.0;
  int pairs = 0;
  for (std::size_t i = 0; i < f.size(); ++i)
    for (std::size_t j = i + 1; j < f.size(); ++j) s += naive_distance(f[i], f[j]), ++pairs;
  return s / pairs;
}

double naive_shortest(const std::vector<Feature>& s, const Feature& gt) {
  double best = INFINITY;
  for (const auto& x : s) best = std::min(best, naive_distance(x, gt));
  return best;
}

std::vector<Feature> random_features(int count, int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<Feature> out(static_cast<std::size_t>(count), Feature(static_cast<std::size_t>(dim)));
  for (auto& f : out)
    for (auto& v : f) v = n(rng);
  return out;
}

Landmarks grid_landmarks(double dx = 0.0, double dy = 0.0, double s = 1.0) {
  Landmarks l{};
  for (int i = 0; i < kLandmarkCount; ++i) l[i] = {s * (10.0 + i % 10 + dx), s * (10.0 + i / 10 + dy)};
  return l;
}

}  // namespace

TEST_CASE("frechet distance: closed forms and invariants") {
  std::mt19937_64 rng(1);
  const auto rows = random_features(50, 3, rng);
  const FeatureStats a = FeatureStats::from_features(rows);
  CHECK(std::abs(frechet_distance(a, a)) <= 1e-9);

  FeatureStats u, v;
  u.mean = Eigen::VectorXd::Zero(1);
  v.mean = Eigen::VectorXd::Ones(1);
  u.covariance = v.covariance = Eigen::MatrixXd::Identity(1, 1);
  CHECK(frechet_distance(u, v) == doctest::Approx(1.0));

  // Diagonal Gaussians: sum of (mu diff)^2 + (sigma_a - sigma_b)^2.
  FeatureStats d1, d2;
  d1.mean = Eigen::VectorXd::Zero(3);
  d2.mean = Eigen::Vector3d(1.0, 0.0, -2.0);
  d1.covariance = Eigen::Vector3d(1.0, 4.0, 9.0).asDiagonal();
  d2.covariance = Eigen::Vector3d(4.0, 4.0, 1.0).asDiagonal();
  CHECK(frechet_distance(d1, d2) == doctest::Approx(5.0 + 1.0 + 0.0 + 4.0));
  CHECK(frechet_distance(d1, d2) == doctest::Approx(frechet_distance(d2, d1)));

  const auto other = random_features(40, 3, rng);
  const FeatureStats b = FeatureStats::from_features(other);
  CHECK(frechet_distance(a, b) == doctest::Approx(frechet_distance(b, a)).epsilon(1e-9));
  CHECK(frechet_distance(a, b) >= -1e-6);

  FeatureStats wrong;
  wrong.mean = Eigen::VectorXd::Zero(2);
  wrong.covariance = Eigen::MatrixXd::Identity(2, 2);
  CHECK_THROWS_AS(frechet_distance(a, wrong), DimensionError);
  FeatureStats bad = u;
  bad.covariance(0, 0) = -1.0;
  CHECK_THROWS_AS(frechet_distance(bad, v), NumericError);
  CHECK_THROWS(FeatureStats::from_features(std::vector<Feature>{scalar(1.0)}));
}

TEST_CASE("frechet distance from samples matches the Gaussian closed form") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  // 1-D: N(0, 1) vs N(1, 4) -> 1 + (1 - 2)^2 = 2.
  std::vector<Feature> x, y;
  for (int i = 0; i < 10000; ++i) x.push_back(scalar(n(rng))), y.push_back(scalar(1.0 + 2.0 * n(rng)));
  const double fd1 = frechet_distance(FeatureStats::from_features(x), FeatureStats::from_features(y));
  CHECK(std::abs(fd1 - 2.0) / 2.0 < 0.05);

  // 8-D: identity vs diag(s^2) with shifted mean.
  std::vector<Feature> p, q;
  double expected = 0.0;
  std::vector<double> sd(8), mu(8);
  for (int k = 0; k < 8; ++k) {
    sd[k] = 0.5 + 0.25 * k;
    mu[k] = 0.3 * (k % 3);
    expected += mu[k] * mu[k] + (1.0 - sd[k]) * (1.0 - sd[k]);
  }
  for (int i = 0; i < 10000; ++i) {
    Feature a(8), b(8);
    for (int k = 0; k < 8; ++k) a[k] = n(rng), b[k] = mu[k] + sd[k] * n(rng);
    p.push_back(a), q.push_back(b);
  }
  const double fd8 = frechet_distance(FeatureStats::from_features(p), FeatureStats::from_features(q));
  INFO("expected " << expected << " got " << fd8);
  CHECK(std::abs(fd8 - expected) / expected < 0.05);
}

TEST_CASE("pairwise diversity") {
  CHECK(pairwise_diversity(std::vector<Feature>{scalar(1), scalar(1), scalar(1)}) == 0.0);
  CHECK(pairwise_diversity(std::vector<Feature>{scalar(0.0), scalar(0.4)}) == doctest::Approx(0.4));
  // Pairwise distances {1, 2, 3}.
  CHECK(pairwise_diversity(std::vector<Feature>{scalar(0), scalar(1), scalar(3)}) == doctest::Approx(2.0));
  CHECK_THROWS(pairwise_diversity(std::vector<Feature>{scalar(0)}));
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    const auto f = random_features(2 + t % 9, 1 + t % 5, rng);
    CHECK(pairwise_diversity(f) == doctest::Approx(naive_diversity(f)).epsilon(1e-12));
  }
}

TEST_CASE("shortest distance") {
  const Feature gt = scalar(0.0);
  CHECK(shortest_distance(std::vector<Feature>{scalar(0.3), scalar(-0.1), scalar(0.5)}, gt) == doctest::Approx(0.1));
  CHECK(shortest_distance(std::vector<Feature>{scalar(0.3), gt}, gt) == 0.0);
  CHECK_THROWS(shortest_distance(std::vector<Feature>{}, gt));
  std::mt19937_64 rng(4);
  for (int t = 0; t < 50; ++t) {
    auto s = random_features(1 + t % 10, 4, rng);
    const Feature g = random_features(1, 4, rng)[0];
    const double before = shortest_distance(s, g);
    CHECK(before == doctest::Approx(naive_shortest(s, g)).epsilon(1e-12));
    s.push_back(random_features(1, 4, rng)[0]);
    CHECK(shortest_distance(s, g) <= before);
  }
}

TEST_CASE("image-level metrics go through the embedder") {
  std::mt19937_64 rng(5);
  const PixelEmbedder e({3, 4, 4});
  const Tensor a = oracle::random_tensor({3, 4, 4}, rng), b = oracle::random_tensor({3, 4, 4}, rng);
  double ss = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) ss += double(a[i] - b[i]) * (a[i] - b[i]);
  const double rms = std::sqrt(ss / a.numel());
  CHECK(feature_distance(e.embed(a), e.embed(b)) == doctest::Approx(rms).epsilon(1e-6));
  const std::vector<Tensor> both{a, b};
  CHECK(pairwise_diversity(both, e) == doctest::Approx(rms).epsilon(1e-6));
  CHECK(shortest_distance(both, a, e) == 0.0);
  CHECK_THROWS_AS(e.embed(Tensor({3, 8, 8})), DimensionError);
  // Pooling averages blocks: a constant image is unaffected.
  const PixelEmbedder pooled({3, 4, 4}, 2);
  CHECK(pooled.dim() == 12);
  CHECK(feature_distance(pooled.embed(Tensor({3, 4, 4}, 0.5f)), pooled.embed(Tensor({3, 4, 4}, 0.0f))) ==
        doctest::Approx(0.5));
  CHECK(e.id() != pooled.id());
}

TEST_CASE("recovery count") {
  auto r = recovery_count({{"a", {0.1, 0.2}}, {"b", {0.3, 0.4}}});
  CHECK(r["a"] == doctest::Approx(100.0));
  CHECK(r["b"] == doctest::Approx(0.0));
  r = recovery_count({{"a", {0.1, 0.5}}, {"b", {0.3, 0.4}}});
  CHECK(r["a"] == doctest::Approx(50.0));
  CHECK(r["b"] == doctest::Approx(50.0));
  r = recovery_count({{"a", {0.2}}, {"b", {0.2}}, {"c", {0.9}}});
  CHECK(r["a"] == doctest::Approx(50.0));
  CHECK(r["b"] == doctest::Approx(50.0));
  CHECK(r["c"] == doctest::Approx(0.0));
  CHECK_THROWS(recovery_count({{"a", {0.1, 0.2}}, {"b", {0.3}}}));

  // Naive oracle: enumerate examples, split ties, percentages sum to 100.
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> level(0, 3);
  for (int t = 0; t < 30; ++t) {
    const int methods = 2 + t % 3, examples = 1 + t % 10;
    std::map<std::string, std::vector<double>> in;
    for (int m = 0; m < methods; ++m)
      for (int e = 0; e < examples; ++e) in["m" + std::to_string(m)].push_back(level(rng) * 0.25);
    std::map<std::string, double> expect;
    for (int e = 0; e < examples; ++e) {
      double best = INFINITY;
      for (const auto& [k, v] : in) best = std::min(best, v[e]);
      int winners = 0;
      for (const auto& [k, v] : in) winners += v[e] == best;
      for (const auto& [k, v] : in)
        if (v[e] == best) expect[k] += 100.0 / examples / winners;
    }
    const auto got = recovery_count(in);
    double total = 0.0;
    for (const auto& [k, v] : got) {
      CHECK(v == doctest::Approx(expect[k]).epsilon(1e-12));
      total += v;
    }
    CHECK(std::abs(total - 100.0) < 1e-9);
  }
}

TEST_CASE("landmark alignment") {
  LandmarkFile f;
  f.insert("gt", grid_landmarks());
  f.insert("same", grid_landmarks());
  f.insert("shift", grid_landmarks(3.0, 4.0));
  CHECK(landmark_mse(grid_landmarks(), grid_landmarks()) == 0.0);
  CHECK(landmark_mse(grid_landmarks(), grid_landmarks(3.0, 4.0)) == doctest::Approx(25.0));
  const double base = landmark_mse(grid_landmarks(), grid_landmarks(1.0, -2.0));
  CHECK(landmark_mse(grid_landmarks(0, 0, 3.0), grid_landmarks(1.0, -2.0, 3.0)) == doctest::Approx(9.0 * base));

  const std::vector<std::string> samples{"shift", "same"};
  CHECK(landmark_alignment(samples, "gt", f) == 0.0);
  CHECK(landmark_alignment(std::vector<std::string>{"shift"}, "gt", f) == doctest::Approx(25.0));
  CHECK_THROWS_AS(landmark_alignment(std::vector<std::string>{"missing"}, "gt", f), RangeError);

  const std::vector<LandmarkExample> ex{{"gt", {"shift"}}, {"gt", {"same", "shift"}}, {"gt", {"missing"}}};
  const LandmarkReport rep = landmark_alignment(ex, f);
  CHECK(rep.examples == 2);
  CHECK(rep.skipped == 1);
  CHECK(rep.value == doctest::Approx(12.5));

  // Naive enumeration over small random instances.
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  LandmarkFile g;
  std::vector<Landmarks> pts;
  for (int i = 0; i < 10; ++i) {
    pts.push_back(grid_landmarks(u(rng), u(rng), 1.0 + u(rng) / 10));
    g.insert("p" + std::to_string(i), pts.back());
  }
  for (int k = 1; k < 10; ++k) {
    std::vector<std::string> s;
    double best = INFINITY;
    for (int i = 1; i <= k; ++i) {
      s.push_back("p" + std::to_string(i));
      double acc = 0.0;
      for (int p = 0; p < kLandmarkCount; ++p)
        acc += std::pow(pts[i][p][0] - pts[0][p][0], 2) + std::pow(pts[i][p][1] - pts[0][p][1], 2);
      best = std::min(best, acc / kLandmarkCount);
    }
    CHECK(landmark_alignment(s, "p0", g) == doctest::Approx(best).epsilon(1e-12));
  }
}

TEST_CASE("landmark files parse, validate bounds and reject malformed rows") {
  std::ostringstream line;
  line << "face.png";
  for (int i = 0; i < kLandmarkCount; ++i) line << "," << i % 30 << "," << i / 30;
  const LandmarkFile f = LandmarkFile::parse(line.str() + "\n", 32, 32);
  CHECK(f.size() == 1);
  REQUIRE(f.find("face.png").has_value());
  CHECK((*f.find("face.png"))[5][0] == 5.0);
  CHECK_FALSE(f.find("other.png").has_value());
  CHECK_THROWS_AS(LandmarkFile::parse(line.str(), 16, 16), RangeError);
  CHECK_THROWS_AS(LandmarkFile::parse("face.png,1,2,3\n"), DimensionError);
}

TEST_CASE("scale variation profile: zero spread, ignored latents, errors") {
  const ModelConfig mc = ModelConfig::desk_outpainting();
  Model m(mc, 3);
  const Dataset ds = synthesize_dataset(3, 32, 3, 4, ValueRange::symmetric);
  std::vector<Tensor> conds;
  for (const auto& img : ds.images) conds.push_back(make_condition(img, mc).input);
  const PixelEmbedder e({3, 32, 32});
  ProfileOptions zero;
  zero.spread = 0.0;
  zero.codes_per_scale = 3;
  for (double v : scale_variation_profile(m, conds, e, zero)) CHECK(v == 0.0);

  ProfileOptions o;
  o.codes_per_scale = 3;
  const auto prof = scale_variation_profile(m, conds, e, o);
  CHECK(prof.size() == 4);
  for (double v : prof) CHECK(v > 0.0);
  CHECK(scale_variation_profile(m, conds, e, o) == prof);

  // A decoder whose last stage ignores its latent: zero style projection weights.
  Var w = m.params().get("gen/stage3/style/weight");
  w.mutable_value().fill(0.0f);
  const auto blind = scale_variation_profile(m, conds, e, o);
  CHECK(blind[3] == 0.0);
  CHECK(blind[0] > 0.0);

  CHECK_THROWS(scale_variation_profile(m, std::vector<Tensor>{}, e, o));
  CHECK_THROWS(scale_variation_profile(m, conds, PixelEmbedder({3, 16, 16}), o));
  CHECK_THROWS(scale_variation_profile(m, std::vector<Tensor>{Tensor({4, 16, 16})}, e, o));
}
