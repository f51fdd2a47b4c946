// nsedit: training, evaluation, profiling, sampling and serving front end.
#include <atomic>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nsedit/checkpoint.hpp"
#include "nsedit/config.hpp"
#include "nsedit/data.hpp"
#include "nsedit/http_api.hpp"
#include "nsedit/image_io.hpp"
#include "nsedit/metrics.hpp"
#include "nsedit/navsvc.hpp"
#include "nsedit/trainer.hpp"

// After Eigen: resolv.h defines a `_res` macro that collides with Eigen parameter names.
#include <httplib.h>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nsedit;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct Options {
  std::string config, data, out, checkpoint, landmarks, store_dir, host = "127.0.0.1", mode = "grid",
                                                                   split = "all";
  std::uint64_t seed = 0;
  bool seed_set = false;
  int steps = -1;
  int samples_per_input = -1;
  int port = 8080;
  int count = 1000;
  int resolution = 32;
  int channels = 3;
  int inputs = 8;
  int conditions = 100;
  int codes = 10;
  double spread = 0.5;
  int embed_pool = 1;
  int eval_pool = 4;
  int max_candidates = 64;
  int idle_timeout = 1800;
  int print_every = 50;
};

// Every output directory gets the resolved configuration it was produced with.
void echo_config(const fs::path& out, const json& config) {
  fs::create_directories(out);
  save_json(out / "config.json", config);
}

struct LoadedCheckpoint {
  CheckpointData data;
  std::shared_ptr<Model> model;
  std::string id;
};

LoadedCheckpoint load(const std::string& path) {
  if (path.empty()) throw std::runtime_error("--checkpoint is required");
  LoadedCheckpoint c;
  c.data = read_checkpoint(path);
  c.model = std::make_shared<Model>(load_model(c.data));
  c.id = file_fingerprint(path);
  return c;
}

Dataset load_split(const Options& o, const ModelConfig& mc, double validation_fraction) {
  if (o.data.empty()) throw std::runtime_error("--data is required");
  Dataset d = load_image_directory(o.data, mc.pyramid.channels, mc.output_resolution(), mc.value_range);
  if (o.split == "all") return d;
  DatasetSplit s = split_by_name_hash(d, validation_fraction);
  Dataset& pick = o.split == "validation" ? s.validation : s.train;
  if (pick.size() == 0) throw IngestionError("the " + o.split + " split of the dataset is empty", {o.data});
  return pick;
}

double validation_fraction_of(const CheckpointData& c) {
  return c.config.contains("validation_fraction") ? c.config.at("validation_fraction").get<double>() : 0.1;
}

json run_meta(const Options& o, const LoadedCheckpoint& c, const std::string& command) {
  json j = c.data.config;
  j["command"] = command;
  j["checkpoint"] = {{"path", o.checkpoint}, {"fingerprint", c.id}};
  j["data"] = o.data;
  j["seed_used"] = o.seed;
  return j;
}

int cmd_train(const Options& o) {
  TrainConfig cfg = o.config.empty() ? TrainConfig{} : load_train_config(o.config);
  if (o.seed_set) cfg.seed = o.seed;
  if (o.steps >= 0) cfg.total_steps = o.steps;
  if (o.samples_per_input > 0) cfg.diversity.num_samples = o.samples_per_input;
  cfg.validate();
  if (o.data.empty() || o.out.empty()) throw std::runtime_error("--data and --out are required");
  if (!fs::is_directory(o.data)) throw IngestionError("dataset directory does not exist", {o.data});
  TrainOptions opts;
  if (!o.checkpoint.empty()) opts.resume = o.checkpoint;
  opts.on_step = [&](const BatchRecord& r) {
    if (o.print_every > 0 && (r.step % o.print_every == 0 || r.step == cfg.total_steps)) {
      std::printf("step %lld  D %.4f  G_adv %.4f  disent %.5f  ndiv %.5f  (%.1fs)\n", r.step, r.discriminator,
                  r.generator_adversarial, r.disentanglement, r.diversity, r.wall_time);
      std::fflush(stdout);
    }
  };
  const TrainResult res = train(fs::path(o.data), cfg, o.out, opts);
  std::printf("checkpoint: %s\n", res.checkpoint.string().c_str());
  return kExitOk;
}

int cmd_eval(const Options& o) {
  if (o.out.empty()) throw std::runtime_error("--out is required");
  const LoadedCheckpoint c = load(o.checkpoint);
  const ModelConfig& mc = c.model->config();
  const Dataset test = load_split(o, mc, validation_fraction_of(c.data));
  const int K = o.samples_per_input > 0 ? o.samples_per_input : 16;
  const PixelEmbedder embedder({mc.pyramid.channels, mc.output_resolution(), mc.output_resolution()}, o.eval_pool);
  json meta = run_meta(o, c, "eval");
  meta["samples_per_input"] = K;
  meta["embedder"] = embedder.id();
  echo_config(o.out, meta);

  std::vector<Feature> real, fake;
  std::vector<double> shortest;
  double diversity_sum = 0.0, distance_sum = 0.0;
  const fs::path sample_dir = fs::path(o.out) / "samples";
  fs::create_directories(sample_dir);
  std::vector<LandmarkExample> lm_examples;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const ConditionalCode code = c.model->encode(make_condition(test.images[i], mc).input);
    // Per-input stream: the first K samples are the same for every larger K.
    std::seed_seq seq{static_cast<std::uint32_t>(o.seed), static_cast<std::uint32_t>(o.seed >> 32), static_cast<std::uint32_t>(i)};
    std::mt19937_64 rng(seq);
    std::vector<Feature> feats;
    LandmarkExample lm{test.names[i], {}};
    for (int k = 0; k < K; ++k) {
      const Tensor img = c.model->decode_shared(code, LatentCode::sample(mc.latent_dim, rng)).levels.back();
      feats.push_back(embedder.embed(img));
      const std::string name = fs::path(test.names[i]).stem().string() + "_s" + std::to_string(k) + ".png";
      write_png(sample_dir / name, to_unit_range(img, mc.value_range));
      lm.samples.push_back(name);
    }
    real.push_back(embedder.embed(test.images[i]));
    for (const auto& f : feats) distance_sum += feature_distance(f, real.back());
    shortest.push_back(shortest_distance(feats, real.back()));
    if (K >= 2) diversity_sum += pairwise_diversity(feats);
    fake.insert(fake.end(), feats.begin(), feats.end());
    lm_examples.push_back(std::move(lm));
  }
  json metrics = json::array();
  auto add = [&](const std::string& name, double value, json counts) {
    metrics.push_back({{"metric", name}, {"value", value}, {"counts", counts}, {"embedder", embedder.id()}});
  };
  const double mean_shortest = [&] {
    double s = 0.0;
    for (double v : shortest) s += v;
    return s / static_cast<double>(shortest.size());
  }();
  if (real.size() >= 2) {
    add("fid", frechet_distance(FeatureStats::from_features(real), FeatureStats::from_features(fake)),
        {{"real", real.size()}, {"generated", fake.size()}});
  }
  if (K >= 2) add("pairwise_diversity", diversity_sum / static_cast<double>(test.size()), {{"inputs", test.size()}, {"samples_per_input", K}});
  add("mean_distance", distance_sum / static_cast<double>(test.size() * K), {{"inputs", test.size()}, {"samples_per_input", K}});
  add("shortest_distance", mean_shortest, {{"inputs", test.size()}, {"samples_per_input", K}});
  add("recovery_count", recovery_count({{"model", shortest}}).at("model"), {{"inputs", test.size()}, {"methods", 1}});
  if (!o.landmarks.empty()) {
    const LandmarkFile lf = LandmarkFile::load(o.landmarks, mc.output_resolution(), mc.output_resolution());
    const LandmarkReport r = landmark_alignment(lm_examples, lf);
    add("landmark_alignment", r.value, {{"examples", r.examples}, {"skipped", r.skipped}});
  }
  const json report = {{"checkpoint", c.id}, {"metrics", metrics}};
  save_json(fs::path(o.out) / "report.json", report);
  std::cout << report.dump(2) << std::endl;
  return kExitOk;
}

int cmd_profile(const Options& o) {
  if (o.out.empty()) throw std::runtime_error("--out is required");
  const LoadedCheckpoint c = load(o.checkpoint);
  const ModelConfig& mc = c.model->config();
  const Dataset d = load_split(o, mc, validation_fraction_of(c.data));
  std::vector<Tensor> inputs;
  for (std::size_t i = 0; i < d.size() && static_cast<int>(i) < o.conditions; ++i) {
    inputs.push_back(make_condition(d.images[i], mc).input);
  }
  const PixelEmbedder embedder({mc.pyramid.channels, mc.output_resolution(), mc.output_resolution()}, o.embed_pool);
  ProfileOptions po;
  po.spread = o.spread;
  po.codes_per_scale = o.codes;
  po.seed = o.seed;
  json meta = run_meta(o, c, "profile");
  meta["profile"] = {{"spread", po.spread}, {"codes_per_scale", po.codes_per_scale}, {"conditions", inputs.size()},
                     {"embedder", embedder.id()}};
  echo_config(o.out, meta);
  const std::vector<double> prof = scale_variation_profile(*c.model, inputs, embedder, po);
  std::ofstream csv(fs::path(o.out) / "profile.csv");
  csv << "scale,resolution,mean_distance\n";
  std::printf("%-6s %-11s %s\n", "scale", "resolution", "mean_distance");
  for (std::size_t k = 0; k < prof.size(); ++k) {
    const int r = mc.pyramid.resolution(static_cast<int>(k));
    csv << k + 1 << ',' << r << ',' << prof[k] << '\n';
    std::printf("%-6zu %-11d %.6f\n", k + 1, r, prof[k]);
  }
  save_json(fs::path(o.out) / "profile.json", {{"profile", prof}, {"embedder", embedder.id()}});
  return kExitOk;
}

int cmd_sample(const Options& o) {
  if (o.out.empty()) throw std::runtime_error("--out is required");
  if (o.mode != "grid" && o.mode != "scales") throw CLI::ValidationError("--mode", "must be grid or scales");
  const LoadedCheckpoint c = load(o.checkpoint);
  const ModelConfig& mc = c.model->config();
  const Dataset d = load_split(o, mc, validation_fraction_of(c.data));
  const int K = o.samples_per_input > 0 ? o.samples_per_input : 8;
  const int M = std::min<int>(o.inputs, static_cast<int>(d.size()));
  json meta = run_meta(o, c, "sample");
  meta["sample"] = {{"mode", o.mode}, {"samples_per_input", K}, {"inputs", M}, {"spread", o.spread}};
  echo_config(o.out, meta);
  std::mt19937_64 rng(o.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int n = mc.pyramid.n_scales;
  auto unit = [&](const Tensor& t) { return to_unit_range(t, mc.value_range); };
  std::vector<Tensor> tiles;
  for (int i = 0; i < M; ++i) {
    const ConditionalCode code = c.model->encode(make_condition(d.images[i], mc).input);
    if (o.mode == "grid") {
      for (int k = 0; k < K; ++k)
        tiles.push_back(unit(c.model->decode_shared(code, LatentCode::sample(mc.latent_dim, rng)).levels.back()));
    } else {
      std::vector<Tensor> sheet;
      const ScaleLatentSet center = c.model->expand(LatentCode::sample(mc.latent_dim, rng));
      for (int s = 0; s < n; ++s) {
        for (int k = 0; k < K; ++k) {
          ScaleLatentSet z = center;
          for (auto& v : z.per_scale[s].values) v = static_cast<real>(v + o.spread * normal(rng));
          sheet.push_back(unit(c.model->decode(code, z).levels.back()));
        }
      }
      char name[48];
      std::snprintf(name, sizeof(name), "scales_%03d.png", i);
      write_png(fs::path(o.out) / name, make_grid(sheet, n, K));
    }
  }
  if (o.mode == "grid") write_png(fs::path(o.out) / "grid.png", make_grid(tiles, M, K));
  std::printf("wrote %d x %d samples to %s\n", M, K, o.out.c_str());
  return kExitOk;
}

std::atomic<httplib::Server*> g_server{nullptr};

void stop_server(int) {
  if (auto* s = g_server.load()) s->stop();
}

int cmd_serve(const Options& o) {
  const LoadedCheckpoint c = load(o.checkpoint);
  NavServiceConfig cfg;
  cfg.max_candidates = o.max_candidates;
  cfg.idle_timeout = std::chrono::seconds(o.idle_timeout);
  if (!o.store_dir.empty()) cfg.store_dir = o.store_dir;
  NavigationService svc(c.model, c.id, cfg);
  httplib::Server server;
  install_routes(server, svc);
  if (!server.bind_to_port(o.host, o.port)) {
    throw std::runtime_error("cannot bind " + o.host + ":" + std::to_string(o.port));
  }
  g_server = &server;
  std::signal(SIGINT, stop_server);
  std::signal(SIGTERM, stop_server);
  std::printf("serving checkpoint %s on http://%s:%d\n", c.id.c_str(), o.host.c_str(), o.port);
  std::fflush(stdout);
  server.listen_after_bind();
  g_server = nullptr;
  return kExitOk;
}

int cmd_synth(const Options& o) {
  if (o.out.empty()) throw std::runtime_error("--out is required");
  if (o.count < 1 || o.resolution < 1 || (o.channels != 1 && o.channels != 3)) {
    throw CLI::ValidationError("synth", "count and resolution must be positive, channels 1 or 3");
  }
  write_synthetic_dataset(o.out, o.count, o.resolution, o.channels, o.seed);
  std::printf("wrote %d images to %s\n", o.count, o.out.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Nested scale-editable conditional image generation"};
  app.require_subcommand(1);
  Options o;

  auto seed_opt = [&o](CLI::App* sub) {
    sub->add_option_function<std::uint64_t>(
        "--seed",
        [&o](std::uint64_t v) {
          o.seed = v;
          o.seed_set = true;
        },
        "Random seed");
  };

  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", o.config, "Training config (JSON)")->check(CLI::ExistingFile);
  train->add_option("--data", o.data, "Image directory")->required();
  train->add_option("--out", o.out, "Output directory")->required();
  train->add_option("--checkpoint", o.checkpoint, "Resume from this checkpoint")->check(CLI::ExistingFile);
  train->add_option("--steps", o.steps, "Total steps (overrides config)")->check(CLI::NonNegativeNumber);
  train->add_option("--samples-per-input", o.samples_per_input, "Latent samples per condition (N)")
      ->check(CLI::PositiveNumber);
  train->add_option("--print-every", o.print_every, "Progress line interval");
  seed_opt(train);

  auto* eval = app.add_subcommand("eval", "Compute FID, diversity and identity-recovery metrics");
  eval->add_option("--checkpoint", o.checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", o.data, "Test image directory")->required();
  eval->add_option("--out", o.out, "Report directory")->required();
  eval->add_option("--samples-per-input", o.samples_per_input, "Samples per test image (K, default 16)")
      ->check(CLI::PositiveNumber);
  eval->add_option("--landmarks", o.landmarks, "Landmark file covering ground truths and written samples")
      ->check(CLI::ExistingFile);
  eval->add_option("--split", o.split, "all | train | validation")->check(CLI::IsMember({"all", "train", "validation"}));
  eval->add_option("--embed-pool", o.eval_pool, "Average-pool factor of the pixel embedder")->capture_default_str();
  seed_opt(eval);

  auto* profile = app.add_subcommand("profile", "Per-scale variation profile");
  profile->add_option("--checkpoint", o.checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);
  profile->add_option("--data", o.data, "Condition image directory")->required();
  profile->add_option("--out", o.out, "Output directory")->required();
  profile->add_option("--conditions", o.conditions, "Number of conditions")->check(CLI::PositiveNumber);
  profile->add_option("--codes", o.codes, "Codes per scale")->check(CLI::Range(2, 100000));
  profile->add_option("--spread", o.spread, "Latent perturbation spread")->check(CLI::NonNegativeNumber);
  profile->add_option("--embed-pool", o.embed_pool, "Average-pool factor of the pixel embedder")->capture_default_str();
  profile->add_option("--split", o.split, "all | train | validation")->check(CLI::IsMember({"all", "train", "validation"}));
  seed_opt(profile);

  auto* serve = app.add_subcommand("serve", "Run the navigation service");
  serve->add_option("--checkpoint", o.checkpoint, "Checkpoint")->required()->envname("NSEDIT_CHECKPOINT");
  serve->add_option("--port", o.port, "Port")->envname("NSEDIT_PORT")->check(CLI::Range(0, 65535));
  serve->add_option("--host", o.host, "Bind address")->envname("NSEDIT_HOST");
  serve->add_option("--max-candidates", o.max_candidates, "Candidate cap per request")
      ->envname("NSEDIT_MAX_CANDIDATES")
      ->check(CLI::PositiveNumber);
  serve->add_option("--idle-timeout", o.idle_timeout, "Session idle timeout in seconds")
      ->envname("NSEDIT_IDLE_TIMEOUT")
      ->check(CLI::PositiveNumber);
  serve->add_option("--store-dir", o.store_dir, "Write sessions through to this directory");

  auto* sample = app.add_subcommand("sample", "Write sample grids");
  sample->add_option("--checkpoint", o.checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);
  sample->add_option("--data", o.data, "Condition image directory")->required();
  sample->add_option("--out", o.out, "Output directory")->required();
  sample->add_option("--samples-per-input", o.samples_per_input, "Samples per input (K, default 8)")
      ->check(CLI::PositiveNumber);
  sample->add_option("--inputs", o.inputs, "Number of inputs (M)")->check(CLI::PositiveNumber);
  sample->add_option("--mode", o.mode, "grid | scales")->check(CLI::IsMember({"grid", "scales"}));
  sample->add_option("--spread", o.spread, "Per-scale spread in scales mode")->check(CLI::NonNegativeNumber);
  sample->add_option("--split", o.split, "all | train | validation")->check(CLI::IsMember({"all", "train", "validation"}));
  seed_opt(sample);

  auto* synth = app.add_subcommand("synth", "Generate a synthetic face-like dataset");
  synth->add_option("--out", o.out, "Output directory")->required();
  synth->add_option("--count", o.count, "Number of images");
  synth->add_option("--resolution", o.resolution, "Image size");
  synth->add_option("--channels", o.channels, "1 or 3");
  seed_opt(synth);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (train->parsed()) return cmd_train(o);
    if (eval->parsed()) return cmd_eval(o);
    if (profile->parsed()) return cmd_profile(o);
    if (serve->parsed()) return cmd_serve(o);
    if (sample->parsed()) return cmd_sample(o);
    if (synth->parsed()) return cmd_synth(o);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kExitRuntime;
  }
  return kExitUsage;
}
