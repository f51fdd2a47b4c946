#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nsedit/autograd.hpp"
#include "nsedit/config.hpp"
#include "nsedit/pyramid.hpp"

namespace nsedit {

/// Base random variable z, or one per-scale latent Z_i = A_i(m(z)).
struct LatentCode {
  std::vector<real> values;

  int dim() const { return static_cast<int>(values.size()); }
  static LatentCode sample(int dim, std::mt19937_64& rng);
  bool operator==(const LatentCode&) const = default;
};

/// One latent per decoder scale, coarsest first.
struct ScaleLatentSet {
  std::vector<LatentCode> per_scale;

  int n_scales() const { return static_cast<int>(per_scale.size()); }
  bool operator==(const ScaleLatentSet&) const = default;
};

/// Encoder output for one input image. `skips` holds the encoder activations
/// routed to the decoder when skip connections are enabled.
struct ConditionalCode {
  Tensor features;  // (Cc, h, w)
  std::vector<Tensor> skips;
};

// Batched encoder output used on the training path.
struct EncodedBatch {
  Var code;                // (B, Cc, h, w)
  std::vector<Var> skips;  // each (B, C_k, r_k, r_k)
};

class ParamStore {
 public:
  Var add(std::string name, Tensor init);
  const Var& get(const std::string& name) const;
  bool contains(const std::string& name) const;
  const std::vector<std::pair<std::string, Var>>& entries() const { return entries_; }
  std::vector<Var> with_prefix(const std::string& prefix) const;
  std::size_t parameter_count(const std::string& prefix = "") const;

 private:
  std::vector<std::pair<std::string, Var>> entries_;
};

struct LayerShape {
  std::string name;
  Shape output;  // for a batch of one
  std::size_t parameters = 0;
};

/// Conditional encoder, cascading decoder and per-scale discriminators.
/// Parameters live in one store keyed by hierarchical names ("gen/...", "disc/...").
class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::vector<Var> generator_parameters() const { return params_.with_prefix("gen/"); }
  std::vector<Var> discriminator_parameters() const { return params_.with_prefix("disc/"); }

  // --- differentiable batched path ---
  EncodedBatch encode(const Var& input) const;
  // z: (B, latent_dim) -> A_i(m(z)); scale_index is 1-based.
  Var map_latent(const Var& z, int scale_index) const;
  std::vector<Var> expand(const Var& z) const;
  // Returns n levels, each (B, C, r_i, r_i).
  std::vector<Var> decode(const EncodedBatch& c, std::span<const Var> latents) const;
  // image: (B, C, r, r); condition: (B, Cc, h, w) treated as a constant. Returns (B, 1) logits.
  Var discriminate(const Var& image, const Tensor& condition, int scale_index) const;

  // --- single-item inference ---
  ConditionalCode encode(const Tensor& input) const;
  LatentCode map_latent(const LatentCode& z, int scale_index) const;
  ScaleLatentSet expand(const LatentCode& z) const;
  ImagePyramid decode(const ConditionalCode& c, const ScaleLatentSet& latents) const;
  ImagePyramid decode_shared(const ConditionalCode& c, const LatentCode& z) const;
  // images: (B, C, r, r) all conditioned on c. Returns (B) logits.
  std::vector<real> discriminate(const Tensor& images, const ConditionalCode& c, int scale_index) const;

  Shape code_shape() const;
  // Every layer with its output shape and parameter count; a pure function of the config.
  std::vector<LayerShape> shape_audit() const;
  // Input-pixel footprint seen by one logit of discriminator `scale_index`.
  int discriminator_receptive_field(int scale_index) const;

 private:
  struct ConvSpec {
    std::string name;
    int in = 0, out = 0, kernel = 1, stride = 1, padding = 0;
    bool instance_norm = false;
  };
  struct EncoderActivation {
    int channels = 0, resolution = 0;
  };
  struct DiscSpec {
    std::vector<ConvSpec> convs;
    int final_channels = 0, final_resolution = 0;
  };

  void build(std::uint64_t seed);
  Var conv(const std::string& prefix, const Var& x, int stride, int padding) const;
  std::vector<int> skip_indices_for(int resolution) const;
  int stage_input_resolution(int stage) const;
  Var image_head(const Var& logits) const;
  DiscSpec disc_spec(int scale_index) const;
  void check_scale(int scale_index) const;

  ModelConfig config_;
  ParamStore params_;
  std::vector<EncoderActivation> enc_acts_;  // [0] is the input image; last is the code
};

}  // namespace nsedit
