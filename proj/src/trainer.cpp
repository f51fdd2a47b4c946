#include "nsedit/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "nsedit/diversity.hpp"
#include "nsedit/image_io.hpp"
#include "nsedit/pyramid.hpp"

namespace nsedit {

// ------------------------------------------------------------ task adapters

Tensor outpainting_mask(const ModelConfig& config) {
  const int R = config.output_resolution();
  const MaskSpec& m = config.task.mask;
  if (!(m.visible_fraction > 0.0 && m.visible_fraction <= 1.0)) {
    throw ConfigError("mask visible_fraction must lie in (0, 1]");
  }
  const int side = static_cast<int>(std::lround(R * std::sqrt(m.visible_fraction)));
  if (side < 1 || side > R) throw ConfigError("mask window does not fit a " + std::to_string(R) + "px image");
  if (std::abs(static_cast<double>(side) * side / (static_cast<double>(R) * R) - m.visible_fraction) > 1e-9) {
    throw ConfigError("visible_fraction " + std::to_string(m.visible_fraction) +
                      " is not a square pixel window at resolution " + std::to_string(R));
  }
  const int x0 = std::clamp(static_cast<int>(std::lround(m.center_x * R - side / 2.0)), 0, R - side);
  const int y0 = std::clamp(static_cast<int>(std::lround(m.center_y * R - side / 2.0)), 0, R - side);
  Tensor mask({1, R, R}, 0.0f);
  for (int y = y0; y < y0 + side; ++y)
    for (int x = x0; x < x0 + side; ++x) mask[static_cast<std::size_t>(y) * R + x] = 1.0f;
  return mask;
}

ConditionPair make_condition(const Tensor& ground_truth, const ModelConfig& config) {
  const int R = config.output_resolution(), C = config.pyramid.channels;
  if (ground_truth.rank() != 3 || ground_truth.dim(0) != C || ground_truth.dim(1) != R || ground_truth.dim(2) != R) {
    throw DimensionError("ground truth must be (" + std::to_string(C) + ", " + std::to_string(R) + ", " +
                         std::to_string(R) + "), got " + to_string(ground_truth.shape()));
  }
  ConditionPair out;
  if (config.task.kind == Task::outpainting) {
    const Tensor mask = outpainting_mask(config);
    out.input = Tensor({C + 1, R, R});
    const std::size_t plane = static_cast<std::size_t>(R) * R;
    for (int c = 0; c < C; ++c)
      for (std::size_t i = 0; i < plane; ++i) out.input[c * plane + i] = ground_truth[c * plane + i] * mask[i];
    std::copy(mask.ptr(), mask.ptr() + plane, out.input.ptr() + C * plane);
  } else {
    const int f = config.task.sr_factor;
    if (f < 1 || R % f != 0) {
      throw ConfigError("superresolution factor " + std::to_string(f) + " does not divide " + std::to_string(R));
    }
    out.input = resize_bilinear(ground_truth, R / f, R / f);
    if (out.input.dim(1) == config.pyramid.base_resolution) out.target = out.input;
  }
  return out;
}

TrainBatch make_batch(std::span<const Tensor> images, const ModelConfig& config) {
  std::vector<Tensor> gts, ins, tgts;
  for (const auto& img : images) {
    ConditionPair p = make_condition(img, config);
    gts.push_back(img);
    ins.push_back(std::move(p.input));
    if (!p.target.empty()) tgts.push_back(std::move(p.target));
  }
  TrainBatch b;
  b.ground_truth = stack_batch(gts);
  b.inputs = stack_batch(ins);
  if (!tgts.empty()) b.targets = stack_batch(tgts);
  return b;
}

GeneratedBatch generate(const Model& model, const TrainBatch& batch, int samples_per_condition,
                        std::mt19937_64& rng) {
  Tensor z({batch.inputs.dim(0) * samples_per_condition, model.config().latent_dim});
  std::normal_distribution<real> normal(0.0f, 1.0f);
  for (auto& v : z.storage()) v = normal(rng);
  return generate(model, batch, z);
}

GeneratedBatch generate(const Model& model, const TrainBatch& batch, const Tensor& z) {
  const int B = batch.inputs.dim(0), L = model.config().latent_dim;
  if (z.rank() != 2 || z.dim(1) != L || z.dim(0) % B != 0 || z.dim(0) == 0) {
    throw DimensionError("latents must be (B * N, " + std::to_string(L) + ")");
  }
  const int N = z.dim(0) / B;
  GeneratedBatch g;
  g.conditions = B;
  g.samples_per_condition = N;
  g.code = model.encode(constant(batch.inputs));
  EncodedBatch rep;
  rep.code = ops::repeat_interleave(g.code.code, N);
  for (const auto& s : g.code.skips) rep.skips.push_back(ops::repeat_interleave(s, N));
  g.z = constant(z);
  const std::vector<Var> latents = model.expand(g.z);
  g.levels = model.decode(rep, latents);
  return g;
}

// ------------------------------------------------------------------- losses

Var discriminator_objective(std::span<const Var> real_logits, std::span<const Var> fake_logits) {
  if (real_logits.size() != fake_logits.size()) throw DimensionError("real/fake logit scale counts differ");
  std::vector<Var> terms;
  for (std::size_t i = 0; i < real_logits.size(); ++i) {
    terms.push_back(ops::softplus_mean(real_logits[i], -1.0));
    terms.push_back(ops::softplus_mean(fake_logits[i], 1.0));
  }
  return ops::sum_all(terms);
}

Var generator_adversarial_objective(std::span<const Var> fake_logits, AdversarialForm form) {
  std::vector<Var> terms;
  for (const auto& l : fake_logits) {
    // non-saturating: -log D(G); minimax: log(1 - D(G)) = -softplus(l)
    terms.push_back(form == AdversarialForm::non_saturating ? ops::softplus_mean(l, -1.0)
                                                            : ops::scale(ops::softplus_mean(l, 1.0), -1.0));
  }
  return ops::sum_all(terms);
}

namespace {

Tensor repeated_condition(const GeneratedBatch& g) {
  NoGradGuard guard;
  return ops::repeat_interleave(ops::detach(g.code.code), g.samples_per_condition).value();
}

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + what + " loss: " + std::to_string(v));
}

}  // namespace

GeneratorLoss generator_loss(const Model& model, const TrainBatch& batch, const GeneratedBatch& fakes,
                             const TrainConfig& config) {
  const int n = model.config().pyramid.n_scales, N = fakes.samples_per_condition;
  GeneratorLoss out;
  std::vector<Var> terms;

  if (config.weights.gan != 0.0) {
    const Tensor cond = repeated_condition(fakes);
    std::vector<Var> logits;
    for (int i = 0; i < n; ++i) logits.push_back(model.discriminate(fakes.levels[i], cond, i + 1));
    Var adv = generator_adversarial_objective(logits, config.adversarial);
    out.adversarial = adv.item();
    terms.push_back(ops::scale(adv, config.weights.gan));
  }

  if (config.weights.disent != 0.0) {
    Var dis = disentanglement_loss(fakes.levels);
    if (!batch.targets.empty()) {
      const Tensor tgt = ops::repeat_interleave(constant(batch.targets), N).value();
      dis = ops::add(dis, ops::mse(ops::avg_pool_2x2(fakes.levels[0]), constant(tgt)));
    }
    out.disentanglement = dis.item();
    terms.push_back(ops::scale(dis, config.weights.disent));
  }

  if (config.weights.ndiv != 0.0) {
    std::vector<Var> per_condition;
    for (int b = 0; b < fakes.conditions; ++b) {
      std::vector<Var> lv;
      for (const auto& l : fakes.levels) lv.push_back(ops::slice_batch(l, b * N, N));
      per_condition.push_back(progressive_ndiv_loss(ops::slice_batch(fakes.z, b * N, N), lv, config.diversity));
    }
    Var div = ops::scale(ops::sum_all(per_condition), 1.0 / fakes.conditions);
    out.diversity = div.item();
    terms.push_back(ops::scale(div, config.weights.ndiv));
  }

  out.total = terms.empty() ? constant(Tensor({1}, 0.0f)) : ops::sum_all(terms);
  require_finite(out.adversarial, "generator adversarial");
  require_finite(out.disentanglement, "disentanglement");
  require_finite(out.diversity, "diversity");
  require_finite(out.total.item(), "generator total");
  return out;
}

Var discriminator_loss(const Model& model, const TrainBatch& batch, const GeneratedBatch& fakes) {
  const int n = model.config().pyramid.n_scales;
  Tensor code;
  {
    NoGradGuard guard;
    code = ops::detach(fakes.code.code).value();
  }
  const Tensor cond_fake = repeated_condition(fakes);
  std::vector<Var> real, fake;
  for (int i = 0; i < n; ++i) {
    real.push_back(model.discriminate(constant(downsample_chain(batch.ground_truth, n - 1 - i)), code, i + 1));
    fake.push_back(model.discriminate(ops::detach(fakes.levels[i]), cond_fake, i + 1));
  }
  Var loss = discriminator_objective(real, fake);
  require_finite(loss.item(), "discriminator");
  return loss;
}

// ---------------------------------------------------------------- trainer

bool BatchRecord::finite() const {
  return std::isfinite(generator_adversarial) && std::isfinite(discriminator) && std::isfinite(disentanglement) &&
         std::isfinite(diversity) && std::isfinite(generator_total);
}

nlohmann::json BatchRecord::to_json() const {
  return {{"step", step},
          {"generator_adversarial", generator_adversarial},
          {"discriminator", discriminator},
          {"disentanglement", disentanglement},
          {"diversity", diversity},
          {"generator_total", generator_total},
          {"wall_time", wall_time}};
}

Trainer::Trainer(TrainConfig config, Dataset train_data)
    : config_(std::move(config)),
      data_(std::move(train_data)),
      model_(config_.model, config_.seed),
      gen_opt_(model_.generator_parameters(), config_.optimizer),
      disc_opt_(model_.discriminator_parameters(), config_.optimizer),
      rng_(config_.seed ^ 0x9e3779b97f4a7c15ULL),
      start_(std::chrono::steady_clock::now()) {
  config_.validate();
  if (data_.size() == 0) throw IngestionError("training set is empty", {});
  order_.resize(data_.size());
  std::iota(order_.begin(), order_.end(), 0);
  std::shuffle(order_.begin(), order_.end(), rng_);
}

std::vector<Tensor> Trainer::next_images() {
  std::vector<Tensor> out;
  for (int i = 0; i < config_.batch_size; ++i) {
    if (cursor_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    out.push_back(data_.images[order_[cursor_++]]);
  }
  return out;
}

StepDraw Trainer::draw() {
  StepDraw d;
  d.batch = make_batch(next_images(), config_.model);
  d.z = Tensor({d.batch.inputs.dim(0) * config_.diversity.num_samples, config_.model.latent_dim});
  std::normal_distribution<real> normal(0.0f, 1.0f);
  for (auto& v : d.z.storage()) v = normal(rng_);
  return d;
}

BatchRecord Trainer::update(const StepDraw& draw) {
  const TrainBatch& batch = draw.batch;
  const GeneratedBatch fakes = generate(model_, batch, draw.z);

  BatchRecord r;
  disc_opt_.zero_grad();
  Var d_loss = discriminator_loss(model_, batch, fakes);
  r.discriminator = d_loss.item();
  backward(d_loss);
  disc_opt_.step();

  auto disc_params = model_.discriminator_parameters();
  for (auto& p : disc_params) p.set_requires_grad(false);
  gen_opt_.zero_grad();
  GeneratorLoss g;
  try {
    g = generator_loss(model_, batch, fakes, config_);
    backward(g.total);
  } catch (...) {
    for (auto& p : disc_params) p.set_requires_grad(true);
    throw;
  }
  for (auto& p : disc_params) p.set_requires_grad(true);
  gen_opt_.step();

  ++step_;
  r.step = step_;
  r.generator_adversarial = g.adversarial;
  r.disentanglement = g.disentanglement;
  r.diversity = g.diversity;
  r.generator_total = g.total.item();
  r.wall_time = elapsed_before_ + std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  return r;
}

namespace {

void append_moments(const std::string& tag, const ParamStore& params, const std::string& prefix, const Adam& opt,
                    CheckpointData& data) {
  std::size_t k = 0;
  for (const auto& [name, var] : params.entries()) {
    if (name.rfind(prefix, 0) != 0) continue;
    data.tensors.emplace_back("adam/" + tag + "/m/" + name, opt.first_moments()[k]);
    data.tensors.emplace_back("adam/" + tag + "/v/" + name, opt.second_moments()[k]);
    ++k;
  }
}

void restore_moments(const std::string& tag, const ParamStore& params, const std::string& prefix, Adam& opt,
                     const CheckpointData& data) {
  std::size_t k = 0;
  for (const auto& [name, var] : params.entries()) {
    if (name.rfind(prefix, 0) != 0) continue;
    const Tensor* m = data.find("adam/" + tag + "/m/" + name);
    const Tensor* v = data.find("adam/" + tag + "/v/" + name);
    if (!m || !v || m->shape() != var.shape() || v->shape() != var.shape()) {
      throw CheckpointError("checkpoint lacks optimizer state for " + name);
    }
    opt.first_moments()[k] = *m;
    opt.second_moments()[k] = *v;
    ++k;
  }
}

}  // namespace

CheckpointData Trainer::snapshot() const {
  CheckpointData d;
  d.config = nsedit::to_json(config_);
  std::ostringstream rng;
  rng << rng_;
  d.meta = {{"step", step_},
            {"rng", rng.str()},
            {"order", order_},
            {"cursor", cursor_},
            {"wall_time", elapsed_before_ + std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count()},
            {"gen_opt_steps", gen_opt_.steps()},
            {"disc_opt_steps", disc_opt_.steps()}};
  append_parameters(model_.params(), d);
  append_moments("gen", model_.params(), "gen/", gen_opt_, d);
  append_moments("disc", model_.params(), "disc/", disc_opt_, d);
  return d;
}

void Trainer::restore(const CheckpointData& data) {
  if (data.config.contains("model") && data.config.at("model") != nsedit::to_json(config_.model)) {
    throw CheckpointError("checkpoint model config differs from the training config");
  }
  load_parameters(model_.params(), data);
  const auto& m = data.meta;
  if (!m.contains("step")) throw CheckpointError("checkpoint has no training state");
  step_ = m.at("step").get<long long>();
  std::istringstream rng(m.at("rng").get<std::string>());
  rng >> rng_;
  auto order = m.at("order").get<std::vector<std::size_t>>();
  if (order.size() != data_.size()) throw CheckpointError("checkpoint was written for a different dataset size");
  order_ = std::move(order);
  cursor_ = m.at("cursor").get<std::size_t>();
  elapsed_before_ = m.at("wall_time").get<double>();
  start_ = std::chrono::steady_clock::now();
  gen_opt_.set_steps(m.at("gen_opt_steps").get<long long>());
  disc_opt_.set_steps(m.at("disc_opt_steps").get<long long>());
  restore_moments("gen", model_.params(), "gen/", gen_opt_, data);
  restore_moments("disc", model_.params(), "disc/", disc_opt_, data);
}

// ------------------------------------------------------------- train driver

namespace {

Tensor input_preview(const Tensor& input, const ModelConfig& cfg) {
  const int C = cfg.pyramid.channels, R = cfg.output_resolution();
  Tensor img({C, input.dim(1), input.dim(2)});
  std::copy(input.ptr(), input.ptr() + img.numel(), img.ptr());
  if (img.dim(1) != R) img = resize_nearest(img, R, R);
  return img;
}

void write_sample_grid(const Model& model, const Dataset& source, const TrainConfig& cfg,
                       const std::filesystem::path& path) {
  const ModelConfig& mc = cfg.model;
  const int rows = static_cast<int>(std::min<std::size_t>(4, source.size()));
  const int N = cfg.diversity.num_samples;
  std::mt19937_64 rng(cfg.seed + 17);
  std::vector<Tensor> tiles;
  for (int r = 0; r < rows; ++r) {
    const ConditionPair p = make_condition(source.images[r], mc);
    const ConditionalCode code = model.encode(p.input);
    tiles.push_back(to_unit_range(input_preview(p.input, mc), mc.value_range));
    for (int j = 0; j < N; ++j) {
      const ImagePyramid pyr = model.decode_shared(code, LatentCode::sample(mc.latent_dim, rng));
      tiles.push_back(to_unit_range(pyr.levels.back(), mc.value_range));
    }
    tiles.push_back(to_unit_range(source.images[r], mc.value_range));
  }
  std::filesystem::create_directories(path.parent_path());
  write_png(path, make_grid(tiles, rows, N + 2));
}

}  // namespace

TrainResult train(const std::filesystem::path& data_dir, const TrainConfig& config,
                  const std::filesystem::path& out_dir, const TrainOptions& options) {
  config.validate();
  const Dataset data = load_image_directory(data_dir, config.model.pyramid.channels, config.model.output_resolution(),
                                            config.model.value_range);
  return train(data, config, out_dir, options);
}

TrainResult train(const Dataset& data, const TrainConfig& config, const std::filesystem::path& out_dir,
                  const TrainOptions& options) {
  namespace fs = std::filesystem;
  config.validate();
  if (data.size() == 0) throw IngestionError("dataset is empty", {});
  TrainResult result;
  result.split = split_by_name_hash(data, config.validation_fraction);
  if (result.split.train.size() == 0) throw IngestionError("train split is empty", {});

  fs::create_directories(out_dir);
  save_json(out_dir / "config.json", nsedit::to_json(config));
  result.checkpoint = out_dir / "checkpoint.nsed";

  Trainer trainer(config, result.split.train);
  std::ios::openmode mode = std::ios::out;
  if (options.resume) {
    trainer.restore(read_checkpoint(*options.resume));
    mode |= std::ios::app;
  }
  std::ofstream log(out_dir / "metrics.jsonl", mode);
  if (!log) throw std::runtime_error("cannot write " + (out_dir / "metrics.jsonl").string());

  const Dataset& preview = result.split.validation.size() > 0 ? result.split.validation : result.split.train;
  auto save = [&] { write_checkpoint(result.checkpoint, trainer.snapshot()); };
  if (trainer.step_count() == 0) save();

  while (trainer.step_count() < config.total_steps) {
    const BatchRecord r = trainer.step();
    if (!r.finite()) throw NumericError("non-finite loss at step " + std::to_string(r.step) + ": " + r.to_json().dump());
    log << r.to_json().dump() << '\n';
    log.flush();
    result.records.push_back(r);
    if (options.on_step) options.on_step(r);
    if (config.checkpoint_every > 0 && r.step % config.checkpoint_every == 0) save();
    if (config.sample_every > 0 && r.step % config.sample_every == 0) {
      char name[40];
      std::snprintf(name, sizeof(name), "step_%06lld.png", r.step);
      write_sample_grid(trainer.model(), preview, config, out_dir / "samples" / name);
    }
  }
  save();
  return result;
}

}  // namespace nsedit
