#include "nsedit/nets.hpp"

#include <cmath>

namespace nsedit {

namespace {

constexpr real kSlope = 0.2f;

Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.storage()) v = static_cast<real>(dist(rng));
  return t;
}

double leaky_gain() { return std::sqrt(2.0 / (1.0 + kSlope * kSlope)); }

Tensor latent_batch(std::span<const LatentCode> codes) {
  const int B = static_cast<int>(codes.size());
  const int L = codes.empty() ? 0 : codes[0].dim();
  Tensor t({B, L});
  for (int b = 0; b < B; ++b) {
    if (codes[b].dim() != L) throw DimensionError("latent dimension mismatch within batch");
    std::copy(codes[b].values.begin(), codes[b].values.end(), t.ptr() + static_cast<std::size_t>(b) * L);
  }
  return t;
}

Tensor unbatch(const Tensor& t) { return t.reshaped({t.dim(1), t.dim(2), t.dim(3)}); }

}  // namespace

LatentCode LatentCode::sample(int dim, std::mt19937_64& rng) {
  std::normal_distribution<real> dist(0.0f, 1.0f);
  LatentCode z;
  z.values.resize(static_cast<std::size_t>(dim));
  for (auto& v : z.values) v = dist(rng);
  return z;
}

// ---------------------------------------------------------------- ParamStore

Var ParamStore::add(std::string name, Tensor init) {
  if (contains(name)) throw ConfigError("duplicate parameter " + name);
  entries_.emplace_back(std::move(name), parameter(std::move(init)));
  return entries_.back().second;
}

const Var& ParamStore::get(const std::string& name) const {
  for (const auto& [n, v] : entries_)
    if (n == name) return v;
  throw RangeError("unknown parameter " + name);
}

bool ParamStore::contains(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.first == name) return true;
  return false;
}

std::vector<Var> ParamStore::with_prefix(const std::string& prefix) const {
  std::vector<Var> out;
  for (const auto& [n, v] : entries_)
    if (n.rfind(prefix, 0) == 0) out.push_back(v);
  return out;
}

std::size_t ParamStore::parameter_count(const std::string& prefix) const {
  std::size_t n = 0;
  for (const auto& [name, v] : entries_)
    if (name.rfind(prefix, 0) == 0) n += v.value().numel();
  return n;
}

// --------------------------------------------------------------------- Model

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  build(seed);
}

int Model::stage_input_resolution(int stage) const { return (config_.pyramid.base_resolution << stage) / 2; }

std::vector<int> Model::skip_indices_for(int resolution) const {
  std::vector<int> idx;
  if (!config_.skip_connections) return idx;
  for (std::size_t i = 0; i + 1 < enc_acts_.size(); ++i)
    if (enc_acts_[i].resolution == resolution) idx.push_back(static_cast<int>(i));
  return idx;
}

Model::DiscSpec Model::disc_spec(int scale_index) const {
  const int res = config_.pyramid.resolution(scale_index - 1);
  const int cond = enc_acts_.back().channels;
  const int dw = config_.disc_width;
  DiscSpec s;
  const std::string p = "disc/d" + std::to_string(scale_index);
  s.convs.push_back({p + "/conv0", config_.pyramid.channels + cond, dw, 3, 1, 1, false});
  int ch = dw, r = res, j = 1;
  while (r > 4) {
    const int next = std::min(ch * 2, 4 * dw);
    s.convs.push_back({p + "/conv" + std::to_string(j++), ch, next, 4, 2, 1, false});
    ch = next;
    r = ops::conv_output_size(r, 4, 2, 1);
  }
  s.final_channels = ch;
  s.final_resolution = r;
  return s;
}

void Model::build(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double gain = leaky_gain();
  auto add_conv = [&](const std::string& name, int in, int out, int k, double g) {
    params_.add(name + "/weight", normal_tensor({out, in, k, k}, g / std::sqrt(static_cast<double>(in * k * k)), rng));
    params_.add(name + "/bias", Tensor({out}, 0.0f));
  };

  // Encoder.
  enc_acts_.push_back({config_.input_channels(), config_.input_resolution()});
  int ch = config_.input_channels(), res = config_.input_resolution();
  for (std::size_t i = 0; i < config_.encoder.size(); ++i) {
    const auto& l = config_.encoder[i];
    add_conv("gen/encoder/conv" + std::to_string(i), ch, l.filters, l.kernel, gain);
    ch = l.filters;
    res = ops::conv_output_size(res, l.kernel, l.stride, l.padding);
    enc_acts_.push_back({ch, res});
  }

  // Shared mapping network (bias-free, so m(0) = 0) and per-scale affine maps A_i.
  const int L = config_.latent_dim, M = config_.mapping_width, F = config_.feature_width;
  int in = L;
  for (int d = 0; d < config_.mapping_depth; ++d) {
    params_.add("gen/mapping/fc" + std::to_string(d) + "/weight",
                normal_tensor({M, in}, gain / std::sqrt(static_cast<double>(in)), rng));
    in = M;
  }
  const int n = config_.pyramid.n_scales;
  for (int i = 0; i < n; ++i) {
    const std::string a = "gen/affine" + std::to_string(i);
    params_.add(a + "/weight", normal_tensor({L, M}, 1.0 / std::sqrt(static_cast<double>(M)), rng));
    params_.add(a + "/bias", Tensor({L}, 0.0f));
  }

  // Cascade stages.
  for (int i = 0; i < n; ++i) {
    const std::string s = "gen/stage" + std::to_string(i);
    int cin = i == 0 ? enc_acts_.back().channels : F;
    for (int k : skip_indices_for(stage_input_resolution(i))) cin += enc_acts_[k].channels;
    add_conv(s + "/conv", cin, F, 3, gain);
    params_.add(s + "/style/weight", normal_tensor({2 * F, L}, 1.0 / std::sqrt(static_cast<double>(L)), rng));
    Tensor style_bias({2 * F}, 0.0f);
    for (int c = 0; c < F; ++c) style_bias[c] = 1.0f;
    params_.add(s + "/style/bias", std::move(style_bias));
    add_conv(s + "/head", F, config_.pyramid.channels, 1, 1.0);
  }

  // Discriminators.
  for (int i = 1; i <= n; ++i) {
    const DiscSpec d = disc_spec(i);
    for (const auto& c : d.convs) add_conv(c.name, c.in, c.out, c.kernel, gain);
    const int flat = d.final_channels * d.final_resolution * d.final_resolution;
    const std::string fc = "disc/d" + std::to_string(i) + "/fc";
    params_.add(fc + "/weight", normal_tensor({1, flat}, 1.0 / std::sqrt(static_cast<double>(flat)), rng));
    params_.add(fc + "/bias", Tensor({1}, 0.0f));
  }
}

Var Model::conv(const std::string& prefix, const Var& x, int stride, int padding) const {
  return ops::conv2d(x, params_.get(prefix + "/weight"), params_.get(prefix + "/bias"), stride, padding);
}

void Model::check_scale(int scale_index) const {
  if (scale_index < 1 || scale_index > config_.pyramid.n_scales) {
    throw RangeError("scale index " + std::to_string(scale_index) + " outside 1.." +
                     std::to_string(config_.pyramid.n_scales));
  }
}

Shape Model::code_shape() const { return {enc_acts_.back().channels, enc_acts_.back().resolution, enc_acts_.back().resolution}; }

EncodedBatch Model::encode(const Var& input) const {
  const Tensor& x = input.value();
  const int R = config_.input_resolution(), C = config_.input_channels();
  if (x.rank() != 4 || x.dim(1) != C || x.dim(2) != R || x.dim(3) != R) {
    throw DimensionError("encoder expects (B, " + std::to_string(C) + ", " + std::to_string(R) + ", " +
                         std::to_string(R) + "), got " + to_string(x.shape()));
  }
  EncodedBatch out;
  std::vector<Var> acts{input};
  Var h = input;
  for (std::size_t i = 0; i < config_.encoder.size(); ++i) {
    const auto& l = config_.encoder[i];
    h = conv("gen/encoder/conv" + std::to_string(i), h, l.stride, l.padding);
    if (l.instance_norm) h = ops::instance_norm(h);
    h = ops::leaky_relu(h, kSlope);
    acts.push_back(h);
  }
  out.code = h;
  if (config_.skip_connections) {
    acts.pop_back();
    out.skips = std::move(acts);
  }
  return out;
}

Var Model::map_latent(const Var& z, int scale_index) const {
  check_scale(scale_index);
  if (z.value().rank() != 2 || z.value().dim(1) != config_.latent_dim) {
    throw DimensionError("latent batch must be (B, " + std::to_string(config_.latent_dim) + "), got " +
                         to_string(z.shape()));
  }
  Var h = z;
  for (int d = 0; d < config_.mapping_depth; ++d) {
    h = ops::leaky_relu(ops::linear(h, params_.get("gen/mapping/fc" + std::to_string(d) + "/weight"), Var()), kSlope);
  }
  const std::string a = "gen/affine" + std::to_string(scale_index - 1);
  return ops::linear(h, params_.get(a + "/weight"), params_.get(a + "/bias"));
}

std::vector<Var> Model::expand(const Var& z) const {
  if (z.value().rank() != 2 || z.value().dim(1) != config_.latent_dim) {
    throw DimensionError("latent batch must be (B, " + std::to_string(config_.latent_dim) + ")");
  }
  Var h = z;
  for (int d = 0; d < config_.mapping_depth; ++d) {
    h = ops::leaky_relu(ops::linear(h, params_.get("gen/mapping/fc" + std::to_string(d) + "/weight"), Var()), kSlope);
  }
  std::vector<Var> out;
  for (int i = 0; i < config_.pyramid.n_scales; ++i) {
    const std::string a = "gen/affine" + std::to_string(i);
    out.push_back(ops::linear(h, params_.get(a + "/weight"), params_.get(a + "/bias")));
  }
  return out;
}

Var Model::image_head(const Var& logits) const {
  Var y = ops::tanh(logits);
  if (config_.value_range == ValueRange::unit) y = ops::add_scalar(ops::scale(y, 0.5), 0.5);
  return y;
}

std::vector<Var> Model::decode(const EncodedBatch& c, std::span<const Var> latents) const {
  const int n = config_.pyramid.n_scales;
  if (static_cast<int>(latents.size()) != n) {
    throw DimensionError("decoder needs " + std::to_string(n) + " latents, got " + std::to_string(latents.size()));
  }
  const Tensor& code = c.code.value();
  const Shape cs = code_shape();
  if (code.rank() != 4 || code.dim(1) != cs[0] || code.dim(2) != cs[1] || code.dim(3) != cs[2]) {
    throw DimensionError("conditional code must be (B, " + std::to_string(cs[0]) + ", " + std::to_string(cs[1]) +
                         ", " + std::to_string(cs[2]) + "), got " + to_string(code.shape()));
  }
  const int B = code.dim(0);
  for (const auto& z : latents) {
    if (z.value().rank() != 2 || z.value().dim(0) != B || z.value().dim(1) != config_.latent_dim) {
      throw DimensionError("per-scale latent must be (" + std::to_string(B) + ", " +
                           std::to_string(config_.latent_dim) + "), got " + to_string(z.shape()));
    }
  }
  if (config_.skip_connections && c.skips.size() + 1 != enc_acts_.size()) {
    throw DimensionError("conditional code is missing encoder skip tensors");
  }

  std::vector<Var> images;
  Var h, logits;
  for (int i = 0; i < n; ++i) {
    const int rin = stage_input_resolution(i);
    std::vector<Var> parts;
    parts.push_back(i == 0 ? ops::upsample_nearest(c.code, rin / cs[1]) : h);
    for (int k : skip_indices_for(rin)) parts.push_back(c.skips[k]);
    Var x = ops::upsample_nearest(ops::concat_channels(parts), 2);
    const std::string s = "gen/stage" + std::to_string(i);
    x = conv(s + "/conv", x, 1, 1);
    Var style = ops::linear(latents[i], params_.get(s + "/style/weight"), params_.get(s + "/style/bias"));
    h = ops::leaky_relu(ops::adain(x, style), kSlope);
    Var head = conv(s + "/head", h, 1, 0);
    // Residual images: each level adds detail to the upsampled pre-activation of the level below.
    logits = (i == 0 || !config_.residual_images) ? head : ops::add(ops::upsample_nearest(logits, 2), head);
    images.push_back(image_head(logits));
  }
  return images;
}

Var Model::discriminate(const Var& image, const Tensor& condition, int scale_index) const {
  check_scale(scale_index);
  const int r = config_.pyramid.resolution(scale_index - 1);
  const Tensor& x = image.value();
  if (x.rank() != 4 || x.dim(1) != config_.pyramid.channels || x.dim(2) != r || x.dim(3) != r) {
    throw DimensionError("discriminator " + std::to_string(scale_index) + " expects images of " + std::to_string(r) +
                         "x" + std::to_string(r) + ", got " + to_string(x.shape()));
  }
  if (condition.rank() != 4 || condition.dim(0) != x.dim(0)) {
    throw DimensionError("discriminator condition batch mismatch");
  }
  const Tensor cond = resize_bilinear(condition, r, r);
  const Var parts[] = {image, constant(cond)};
  Var h = ops::concat_channels(parts);
  const DiscSpec d = disc_spec(scale_index);
  for (const auto& c : d.convs) h = ops::leaky_relu(conv(c.name, h, c.stride, c.padding), kSlope);
  const int B = x.dim(0);
  h = ops::reshape(h, {B, d.final_channels * d.final_resolution * d.final_resolution});
  const std::string fc = "disc/d" + std::to_string(scale_index) + "/fc";
  return ops::linear(h, params_.get(fc + "/weight"), params_.get(fc + "/bias"));
}

// ------------------------------------------------------- single-item helpers

ConditionalCode Model::encode(const Tensor& input) const {
  NoGradGuard guard;
  if (input.rank() != 3) throw DimensionError("encode expects a single (C, H, W) image, got " + to_string(input.shape()));
  EncodedBatch e = encode(constant(as_batch(input)));
  ConditionalCode c;
  c.features = unbatch(e.code.value());
  for (const auto& s : e.skips) c.skips.push_back(unbatch(s.value()));
  return c;
}

LatentCode Model::map_latent(const LatentCode& z, int scale_index) const {
  NoGradGuard guard;
  const LatentCode one[] = {z};
  Var out = map_latent(constant(latent_batch(one)), scale_index);
  return LatentCode{out.value().to_vector()};
}

ScaleLatentSet Model::expand(const LatentCode& z) const {
  NoGradGuard guard;
  const LatentCode one[] = {z};
  ScaleLatentSet s;
  for (const auto& v : expand(constant(latent_batch(one)))) s.per_scale.push_back(LatentCode{v.value().to_vector()});
  return s;
}

ImagePyramid Model::decode(const ConditionalCode& c, const ScaleLatentSet& latents) const {
  NoGradGuard guard;
  if (latents.n_scales() != config_.pyramid.n_scales) {
    throw DimensionError("decoder needs " + std::to_string(config_.pyramid.n_scales) + " latents, got " +
                         std::to_string(latents.n_scales()));
  }
  EncodedBatch e;
  e.code = constant(as_batch(c.features));
  for (const auto& s : c.skips) e.skips.push_back(constant(as_batch(s)));
  std::vector<Var> zs;
  for (const auto& z : latents.per_scale) {
    if (z.dim() != config_.latent_dim) throw DimensionError("latent dimension mismatch");
    const LatentCode one[] = {z};
    zs.push_back(constant(latent_batch(one)));
  }
  ImagePyramid p;
  for (const auto& l : decode(e, zs)) p.levels.push_back(unbatch(l.value()));
  return p;
}

ImagePyramid Model::decode_shared(const ConditionalCode& c, const LatentCode& z) const { return decode(c, expand(z)); }

std::vector<real> Model::discriminate(const Tensor& images, const ConditionalCode& c, int scale_index) const {
  NoGradGuard guard;
  const Tensor batch = as_batch(images);
  const Tensor code = as_batch(c.features);
  std::vector<Tensor> reps(static_cast<std::size_t>(batch.dim(0)), code);
  Var out = discriminate(constant(batch), concat_batch(reps), scale_index);
  return out.value().to_vector();
}

// ---------------------------------------------------------------- auditing

std::vector<LayerShape> Model::shape_audit() const {
  std::vector<LayerShape> out;
  auto count = [&](const std::string& prefix) {
    std::size_t k = 0;
    for (const auto& [name, v] : params_.entries())
      if (name.rfind(prefix + "/", 0) == 0) k += v.value().numel();
    return k;
  };
  int res = config_.input_resolution();
  for (std::size_t i = 0; i < config_.encoder.size(); ++i) {
    const auto& l = config_.encoder[i];
    res = ops::conv_output_size(res, l.kernel, l.stride, l.padding);
    const std::string name = "gen/encoder/conv" + std::to_string(i);
    out.push_back({name, {1, l.filters, res, res}, count(name)});
  }
  for (int d = 0; d < config_.mapping_depth; ++d) {
    const std::string name = "gen/mapping/fc" + std::to_string(d);
    out.push_back({name, {1, config_.mapping_width}, count(name)});
  }
  const int n = config_.pyramid.n_scales;
  for (int i = 0; i < n; ++i) {
    const std::string name = "gen/affine" + std::to_string(i);
    out.push_back({name, {1, config_.latent_dim}, count(name)});
  }
  for (int i = 0; i < n; ++i) {
    const int r = config_.pyramid.resolution(i);
    const std::string s = "gen/stage" + std::to_string(i);
    out.push_back({s + "/conv", {1, config_.feature_width, r, r}, count(s + "/conv")});
    out.push_back({s + "/style", {1, 2 * config_.feature_width}, count(s + "/style")});
    out.push_back({s + "/head", {1, config_.pyramid.channels, r, r}, count(s + "/head")});
  }
  for (int i = 1; i <= n; ++i) {
    const DiscSpec d = disc_spec(i);
    int r = config_.pyramid.resolution(i - 1);
    for (const auto& c : d.convs) {
      r = ops::conv_output_size(r, c.kernel, c.stride, c.padding);
      out.push_back({c.name, {1, c.out, r, r}, count(c.name)});
    }
    const std::string fc = "disc/d" + std::to_string(i) + "/fc";
    out.push_back({fc, {1, 1}, count(fc)});
  }
  return out;
}

int Model::discriminator_receptive_field(int scale_index) const {
  check_scale(scale_index);
  const DiscSpec d = disc_spec(scale_index);
  int rf = 1, jump = 1;
  for (const auto& c : d.convs) {
    rf += (c.kernel - 1) * jump;
    jump *= c.stride;
  }
  // The dense head sees every cell of the final map.
  return rf + (d.final_resolution - 1) * jump;
}

}  // namespace nsedit
