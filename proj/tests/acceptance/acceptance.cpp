// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only if all pass.
// Usage: acceptance [--out DIR] [--only NAME]...
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "../support/oracle.hpp"
#include "nsedit/autograd.hpp"
#include "nsedit/config.hpp"
#include "nsedit/data.hpp"
#include "nsedit/diversity.hpp"
#include "nsedit/metrics.hpp"
#include "nsedit/nets.hpp"
#include "nsedit/pyramid.hpp"
#include "nsedit/trainer.hpp"

namespace fs = std::filesystem;
using namespace nsedit;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::string join(const std::vector<double>& v, const char* f = "%.4f") {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + fmt(f, v[i]);
  return s;
}

oracle::Vec flatten(std::span<const Var> vars, bool grad) {
  oracle::Vec out;
  for (const auto& v : vars) {
    const auto part = oracle::to_vec(grad ? v.grad() : v.value());
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Analytic gradients of both generator-side regularizers against central
// differences of independent double-precision references.
Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const int N = 4, C = 3, D = 8, instances = 20;
  DiversityConfig cfg;
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  int failures = 0;
  for (int inst = 0; inst < instances; ++inst) {
    const Tensor z = oracle::random_tensor({N, D}, rng);
    std::vector<Var> lv{parameter(oracle::random_tensor({N, C, 4, 4}, rng)),
                        parameter(oracle::random_tensor({N, C, 8, 8}, rng))};
    const oracle::Vec x = flatten(lv, false);
    const std::size_t per0 = static_cast<std::size_t>(C) * 16, per1 = static_cast<std::size_t>(C) * 64;
    auto split = [&](const oracle::Vec& xs) {
      std::vector<std::vector<oracle::Vec>> levels(2);
      for (int i = 0; i < N; ++i) {
        levels[0].emplace_back(xs.begin() + i * per0, xs.begin() + (i + 1) * per0);
        levels[1].emplace_back(xs.begin() + N * per0 + i * per1, xs.begin() + N * per0 + (i + 1) * per1);
      }
      return levels;
    };

    // Disentanglement loss, batch mean of per-item losses.
    backward(disentanglement_loss(std::span<const Var>(lv)));
    const oracle::Vec ga = flatten(lv, true);
    auto disent = [&](const oracle::Vec& xs) {
      const auto levels = split(xs);
      double s = 0.0;
      for (int i = 0; i < N; ++i)
        s += oracle::disent({oracle::Image{C, 4, 4, levels[0][i]}, oracle::Image{C, 8, 8, levels[1][i]}});
      return s / N;
    };
    const double e1 = oracle::relative_error(ga, oracle::numeric_gradient(disent, x));

    // Progressive normalized diversity loss.
    for (auto& v : lv) v.zero_grad();
    backward(progressive_ndiv_loss(constant(z), lv, cfg));
    const oracle::Vec gb = flatten(lv, true);
    std::vector<oracle::Vec> zr;
    const auto zv = oracle::to_vec(z);
    for (int i = 0; i < N; ++i) zr.emplace_back(zv.begin() + i * D, zv.begin() + (i + 1) * D);
    auto ndiv = [&](const oracle::Vec& xs) { return oracle::ndiv(zr, split(xs), cfg.alpha, cfg.epsilon); };
    const double e2 = oracle::relative_error(gb, oracle::numeric_gradient(ndiv, x));

    worst = std::max({worst, e1, e2});
    if (!(e1 < 1e-3) || !(e2 < 1e-3)) ++failures;
  }
  const double t = seconds_since(t0);
  return {failures == 0 && t < 60.0, std::to_string(instances) + " instances (N=4, n=2, 4x4 base), worst relative error " +
                                         fmt("%.2e", worst) + ", " + fmt("%.1fs", t)};
}

// ---------------------------------------------------------------------------
Outcome causality_suite() {
  const int trials = 50;
  int broken = 0, checks = 0;
  std::mt19937_64 rng(7);
  const ModelConfig c = ModelConfig::desk_outpainting();
  for (int trial = 0; trial < trials; ++trial) {
    Model m(c, 1000 + trial);
    const Tensor input = oracle::random_tensor({c.input_channels(), c.input_resolution(), c.input_resolution()}, rng);
    const ConditionalCode code = m.encode(input);
    const ScaleLatentSet base = m.expand(LatentCode::sample(c.latent_dim, rng));
    const ImagePyramid ref = m.decode(code, base);
    for (int k = 1; k <= c.pyramid.n_scales; ++k) {
      ScaleLatentSet pert = base;
      pert.per_scale[k - 1] = LatentCode::sample(c.latent_dim, rng);
      const ImagePyramid out = m.decode(code, pert);
      for (int i = 0; i < k - 1; ++i, ++checks)
        if (!(out.levels[i] == ref.levels[i])) ++broken;
      ++checks;
      if (out.levels[k - 1] == ref.levels[k - 1]) ++broken;  // the perturbation must reach its own level
    }
  }
  return {broken == 0, std::to_string(trials) + " random decoders (n=4), " + std::to_string(checks) +
                           " level comparisons, " + std::to_string(broken) + " violations"};
}

// ---------------------------------------------------------------------------
Outcome loss_zero_oracles() {
  std::mt19937_64 rng(11);
  DiversityConfig cfg;
  int nonzero = 0, cases = 0;
  for (int trial = 0; trial < 20; ++trial) {
    // Nearest-neighbour upsampling chain: every coarser level is the 2x2 mean of the next.
    ImagePyramid p;
    p.levels.push_back(oracle::random_tensor({3, 4, 4}, rng));
    for (int i = 1; i < 4; ++i) {
      const Tensor& prev = p.levels.back();
      const int h = prev.dim(1) * 2, w = prev.dim(2) * 2;
      Tensor up({3, h, w});
      for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x)
            up[(static_cast<std::size_t>(ch) * h + y) * w + x] =
                prev[(static_cast<std::size_t>(ch) * (h / 2) + y / 2) * (w / 2) + x / 2];
      p.levels.push_back(std::move(up));
    }
    ++cases;
    if (disentanglement_loss(p) != 0.0) ++nonzero;

    // Distance-preserving toy generator: each level is a fixed scaled copy of z, zero padded.
    const int N = 4, D = 6;
    std::vector<Tensor> z;
    std::vector<ImagePyramid> pyrs(N);
    for (int i = 0; i < N; ++i) z.push_back(oracle::random_tensor({D}, rng));
    for (int i = 0; i < N; ++i) {
      for (int k = 0; k < 3; ++k) {
        const int r = 4 << k;
        Tensor img({1, r, r});
        for (int d = 0; d < D; ++d) img[static_cast<std::size_t>(d)] = z[i][static_cast<std::size_t>(d)] * static_cast<real>(k + 1);
        pyrs[i].levels.push_back(std::move(img));
      }
    }
    ++cases;
    if (progressive_ndiv_loss(z, pyrs, cfg) != 0.0) ++nonzero;
  }
  return {nonzero == 0, std::to_string(cases) + " oracle instances, " + std::to_string(nonzero) + " nonzero losses"};
}

// ---------------------------------------------------------------------------
Landmarks random_landmarks(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 32.0);
  Landmarks l;
  for (auto& p : l) p = {u(rng), u(rng)};
  return l;
}

Outcome metric_oracles() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(31);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::string> problems;

  // Frechet distance on Gaussians against the closed form.
  auto sample = [&](const std::vector<double>& mu, const std::vector<double>& sd) {
    std::vector<Feature> rows(10000, Feature(mu.size()));
    for (auto& r : rows)
      for (std::size_t d = 0; d < mu.size(); ++d) r[d] = mu[d] + sd[d] * normal(rng);
    return FeatureStats::from_features(rows);
  };
  auto closed = [](const std::vector<double>& m1, const std::vector<double>& s1, const std::vector<double>& m2,
                   const std::vector<double>& s2) {
    double f = 0.0;
    for (std::size_t d = 0; d < m1.size(); ++d) f += (m1[d] - m2[d]) * (m1[d] - m2[d]) + (s1[d] - s2[d]) * (s1[d] - s2[d]);
    return f;
  };
  std::string fid_detail;
  for (std::size_t dim : {1u, 8u}) {
    std::vector<double> m1(dim), s1(dim), m2(dim), s2(dim);
    std::uniform_real_distribution<double> u(0.5, 2.0);
    for (std::size_t d = 0; d < dim; ++d) m1[d] = 0.0, s1[d] = 1.0, m2[d] = u(rng), s2[d] = u(rng);
    const double want = closed(m1, s1, m2, s2);
    const double got = frechet_distance(sample(m1, s1), sample(m2, s2));
    const double rel = std::abs(got - want) / want;
    fid_detail += " FID" + std::to_string(dim) + "D rel.err " + fmt("%.3f", rel);
    if (!(rel < 0.05)) problems.push_back("frechet " + std::to_string(dim) + "-D");
  }

  // Small instances against naive enumeration.
  std::uniform_int_distribution<int> count(2, 10);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = count(rng), dim = 1 + trial % 5;
    std::vector<Feature> f(n, Feature(dim));
    // Coarse integer grid so ties occur.
    std::uniform_int_distribution<int> g(0, 3);
    for (auto& r : f)
      for (auto& v : r) v = g(rng);
    Feature gt(dim);
    for (auto& v : gt) v = g(rng);
    auto dist = [](const Feature& a, const Feature& b) {
      double s = 0;
      for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
      return std::sqrt(s);
    };
    double best = 1e300;
    for (const auto& r : f) best = std::min(best, dist(r, gt));
    if (shortest_distance(f, gt) != best) problems.push_back("shortest_distance");
    double sum = 0;
    int pairs = 0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) sum += dist(f[i], f[j]), ++pairs;
    if (std::abs(pairwise_diversity(f) - sum / pairs) > 1e-12 * std::max(1.0, sum / pairs))
      problems.push_back("pairwise_diversity");

    // Recovery count: ties split equally.
    const int methods = 1 + trial % 4, examples = count(rng);
    std::map<std::string, std::vector<double>> per;
    for (int m = 0; m < methods; ++m)
      for (int e = 0; e < examples; ++e) per["m" + std::to_string(m)].push_back(g(rng));
    std::map<std::string, double> naive;
    for (const auto& [k, v] : per) naive[k] = 0.0;
    for (int e = 0; e < examples; ++e) {
      double lo = 1e300;
      for (const auto& [k, v] : per) lo = std::min(lo, v[e]);
      std::vector<std::string> win;
      for (const auto& [k, v] : per)
        if (v[e] == lo) win.push_back(k);
      for (const auto& k : win) naive[k] += 100.0 / examples / static_cast<double>(win.size());
    }
    const auto got = recovery_count(per);
    for (const auto& [k, v] : naive)
      if (std::abs(got.at(k) - v) > 1e-9) problems.push_back("recovery_count");

    // Landmark alignment: best sample, mean over examples, missing ones skipped.
    LandmarkFile lf;
    std::vector<LandmarkExample> ex;
    double lm_sum = 0.0;
    int used = 0, skipped = 0;
    for (int e = 0; e < 1 + trial % 3; ++e) {
      LandmarkExample le{"gt" + std::to_string(e), {}};
      const Landmarks gtl = random_landmarks(rng);
      const bool drop = e > 0 && (trial + e) % 3 == 0;
      if (!drop) lf.insert(le.ground_truth, gtl);
      double b = 1e300;
      for (int s = 0; s < 1 + e; ++s) {
        le.samples.push_back("s" + std::to_string(e) + "_" + std::to_string(s));
        const Landmarks sl = random_landmarks(rng);
        lf.insert(le.samples.back(), sl);
        double m = 0.0;
        for (int p = 0; p < kLandmarkCount; ++p) {
          const double dx = sl[p][0] - gtl[p][0], dy = sl[p][1] - gtl[p][1];
          m += dx * dx + dy * dy;
        }
        b = std::min(b, m / kLandmarkCount);
      }
      if (drop) {
        ++skipped;
      } else {
        lm_sum += b, ++used;
      }
      ex.push_back(std::move(le));
    }
    const LandmarkReport r = landmark_alignment(ex, lf);
    const double want = used ? lm_sum / used : 0.0;
    if (r.skipped != skipped || r.examples != used || (used && std::abs(r.value - want) > 1e-9 * std::max(1.0, want)))
      problems.push_back("landmark_alignment");
  }
  const double t = seconds_since(t0);
  std::set<std::string> uniq(problems.begin(), problems.end());
  std::string bad;
  for (const auto& p : uniq) bad += " " + p;
  return {problems.empty() && t < 60.0,
          fid_detail.substr(1) + "; 200 enumeration instances" + (bad.empty() ? "" : ", mismatches:" + bad) + ", " +
              fmt("%.1fs", t)};
}

// ---------------------------------------------------------------------------
// Desk-scale training experiment shared by the last three criteria.
struct DeskRun {
  std::vector<BatchRecord> records;
  std::vector<double> profile;
  Dataset validation;
  std::shared_ptr<Model> model;
  double seconds = 0.0;
};

std::vector<Tensor> conditions_for(const Dataset& validation, const ModelConfig& mc, int count) {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < validation.size() && static_cast<int>(out.size()) < count; ++i)
    out.push_back(make_condition(validation.images[i], mc).input);
  // Top up with fresh synthetic faces when the held-out split is short.
  if (static_cast<int>(out.size()) < count) {
    const Dataset extra = synthesize_dataset(count - static_cast<int>(out.size()), mc.output_resolution(),
                                             mc.pyramid.channels, 777, mc.value_range);
    for (const auto& img : extra.images) out.push_back(make_condition(img, mc).input);
  }
  return out;
}

DeskRun desk_run(const Dataset& data, const TrainConfig& cfg, const fs::path& out, const char* label) {
  const auto t0 = std::chrono::steady_clock::now();
  DeskRun run;
  TrainOptions opts;
  opts.on_step = [&](const BatchRecord& r) {
    if (r.step % 250 == 0) {
      std::printf("  [%s] step %lld  D %.4f  G_adv %.4f  disent %.5f  ndiv %.5f  (%.0fs)\n", label, r.step,
                  r.discriminator, r.generator_adversarial, r.disentanglement, r.diversity, seconds_since(t0));
      std::fflush(stdout);
    }
  };
  const TrainResult res = train(data, cfg, out, opts);
  run.records = res.records;
  run.validation = res.split.validation;
  run.model = std::make_shared<Model>(load_model(read_checkpoint(res.checkpoint)));
  const std::vector<Tensor> conds = conditions_for(run.validation, cfg.model, 100);
  const ModelConfig& mc = cfg.model;
  const PixelEmbedder embedder({mc.pyramid.channels, mc.output_resolution(), mc.output_resolution()});
  ProfileOptions po;
  po.seed = 5;
  run.profile = scale_variation_profile(*run.model, conds, embedder, po);
  run.seconds = seconds_since(t0);
  return run;
}

// Non-increasing, allowing one adjacent rise of at most 10% relative magnitude.
bool trend_holds(const std::vector<double>& p, double* worst_rise, int* rises) {
  *rises = 0;
  *worst_rise = 0.0;
  bool ok = true;
  for (std::size_t k = 1; k < p.size(); ++k) {
    if (p[k] > p[k - 1]) {
      const double rel = (p[k] - p[k - 1]) / p[k - 1];
      ++*rises;
      *worst_rise = std::max(*worst_rise, rel);
      if (rel > 0.10) ok = false;
    }
  }
  return ok && *rises <= 1;
}

Outcome trend(const DeskRun& main, const DeskRun& ablation) {
  double worst = 0.0, ab_worst = 0.0;
  int rises = 0, ab_rises = 0;
  const bool ok = trend_holds(main.profile, &worst, &rises);
  const bool ab_ok = trend_holds(ablation.profile, &ab_worst, &ab_rises);
  return {ok, "profile [" + join(main.profile) + "], " + std::to_string(rises) + " rise(s), largest " +
                  fmt("%.1f%%", 100 * worst) + "; ablation without disentanglement [" + join(ablation.profile) +
                  "] " + (ab_ok ? "also non-increasing" : "not non-increasing") + "; " +
                  fmt("%.0fs", main.seconds + ablation.seconds)};
}

Outcome recovery_monotonicity(const DeskRun& run) {
  const Model& m = *run.model;
  const ModelConfig& mc = m.config();
  const PixelEmbedder embedder({mc.pyramid.channels, mc.output_resolution(), mc.output_resolution()}, 4);
  double s1 = 0, s4 = 0, s16 = 0;
  int violations = 0;
  const int n = static_cast<int>(run.validation.size());
  for (int i = 0; i < n; ++i) {
    const ConditionalCode code = m.encode(make_condition(run.validation.images[i], mc).input);
    const Feature gt = embedder.embed(run.validation.images[i]);
    std::mt19937_64 rng(9000 + i);
    std::vector<Feature> f;
    for (int k = 0; k < 16; ++k)
      f.push_back(embedder.embed(m.decode_shared(code, LatentCode::sample(mc.latent_dim, rng)).levels.back()));
    const double a = shortest_distance(std::span(f).first(1), gt);
    const double b = shortest_distance(std::span(f).first(4), gt);
    const double c = shortest_distance(std::span<const Feature>(f), gt);
    if (b > a || c > b) ++violations;
    s1 += a, s4 += b, s16 += c;
  }
  s1 /= n, s4 /= n, s16 /= n;
  return {n > 0 && violations == 0 && s16 <= s4 && s4 <= s1,
          std::to_string(n) + " validation examples, mean shortest K=1 " + fmt("%.4f", s1) + ", K=4 " +
              fmt("%.4f", s4) + ", K=16 " + fmt("%.4f", s16)};
}

Outcome training_sanity(const DeskRun& run) {
  const auto& r = run.records;
  bool finite = true;
  for (const auto& rec : r) finite = finite && rec.finite();
  if (r.size() < 2000) return {false, "run stopped after " + std::to_string(r.size()) + " steps"};
  auto window_mean = [&](long long lo, long long hi) {
    double s = 0;
    int c = 0;
    for (const auto& rec : r)
      if (rec.step >= lo && rec.step <= hi) s += rec.disentanglement, ++c;
    return s / c;
  };
  const double at100 = r[99].disentanglement, at2000 = r[1999].disentanglement;
  const double w100 = window_mean(90, 110), w2000 = window_mean(1980, 2000);
  const bool ok = finite && at2000 < 0.5 * at100 && w2000 < 0.5 * w100;
  return {ok, "disentanglement step 100 " + fmt("%.5f", at100) + " -> step 2000 " + fmt("%.5f", at2000) +
                  " (ratio " + fmt("%.3f", at2000 / at100) + "; 21-step windows " + fmt("%.5f", w100) + " -> " +
                  fmt("%.5f", w2000) + "), losses " + (finite ? "all finite" : "NOT finite")};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path out = fs::temp_directory_path() / "nsedit_acceptance";
  std::set<std::string> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--out" && i + 1 < argc) {
      out = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      only.insert(argv[++i]);
    } else {
      std::fprintf(stderr, "usage: acceptance [--out DIR] [--only NAME]...\n");
      return 1;
    }
  }
  fs::create_directories(out);
  auto wanted = [&](const std::string& name) { return only.empty() || only.count(name) > 0; };

  json summary = json::array();
  bool all = true;
  auto report = [&](const std::string& name, const Outcome& o) {
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
    summary.push_back({{"criterion", name}, {"pass", o.pass}, {"detail", o.detail}});
    all = all && o.pass;
  };
  auto guarded = [&](const std::string& name, const std::function<Outcome()>& f) {
    if (!wanted(name)) return;
    try {
      report(name, f());
    } catch (const std::exception& e) {
      report(name, {false, std::string("threw: ") + e.what()});
    }
  };

  guarded("gradient-suite", gradient_suite);
  guarded("scale-causality", causality_suite);
  guarded("loss-zero-oracles", loss_zero_oracles);
  guarded("metric-oracles", metric_oracles);

  const bool need_run = wanted("disentanglement-trend") || wanted("identity-recovery") || wanted("training-sanity");
  if (need_run) {
    std::optional<DeskRun> main_run, ablation_run;
    std::string failure;
    try {
      const TrainConfig cfg;  // desk-scale outpainting, n = 4, 2,000 steps, seed 0
      const Dataset data = synthesize_dataset(1000, 32, 3, 0, cfg.model.value_range);
      std::printf("desk-scale run: 1000 synthetic 32x32 images, %d steps\n", cfg.total_steps);
      main_run = desk_run(data, cfg, out / "desk", "full");
      if (wanted("disentanglement-trend")) {
        TrainConfig ab = cfg;
        ab.weights.disent = 0.0;
        ablation_run = desk_run(data, ab, out / "ablation", "no-disent");
      }
    } catch (const std::exception& e) {
      failure = std::string("threw: ") + e.what();
    }
    if (wanted("disentanglement-trend")) {
      if (main_run && ablation_run) {
        guarded("disentanglement-trend", [&] { return trend(*main_run, *ablation_run); });
      } else {
        report("disentanglement-trend", {false, failure});
      }
    }
    if (wanted("identity-recovery")) {
      if (main_run) {
        guarded("identity-recovery", [&] { return recovery_monotonicity(*main_run); });
      } else {
        report("identity-recovery", {false, failure});
      }
    }
    if (wanted("training-sanity")) {
      if (main_run) {
        guarded("training-sanity", [&] { return training_sanity(*main_run); });
      } else {
        report("training-sanity", {false, failure});
      }
    }
  }
  std::ofstream(out / "acceptance.json") << summary.dump(2) << '\n';
  return all ? 0 : 1;
}
