#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <json.hpp>

#include "nsedit/checkpoint.hpp"
#include "nsedit/config.hpp"
#include "nsedit/data.hpp"
#include "nsedit/nets.hpp"
#include "nsedit/optim.hpp"

namespace nsedit {

// Encoder input plus the target used by the base-scale consistency term
// (the low-resolution image for superresolution; empty for outpainting).
struct ConditionPair {
  Tensor input;   // (C_in, R_in, R_in)
  Tensor target;  // (C, r, r) or empty
};

// (1, R, R): 1 where pixels are visible.
Tensor outpainting_mask(const ModelConfig& config);
ConditionPair make_condition(const Tensor& ground_truth, const ModelConfig& config);

struct TrainBatch {
  Tensor ground_truth;  // (B, C, R, R)
  Tensor inputs;        // (B, C_in, R_in, R_in)
  Tensor targets;       // (B, C, r, r) or empty
};

TrainBatch make_batch(std::span<const Tensor> images, const ModelConfig& config);

// N pyramids per condition, shared by every generator loss term of a step.
struct GeneratedBatch {
  EncodedBatch code;        // per condition
  Var z;                    // (B * N, latent_dim), item b * N + j belongs to condition b
  std::vector<Var> levels;  // each (B * N, C, r_i, r_i)
  int conditions = 0;
  int samples_per_condition = 0;
};

GeneratedBatch generate(const Model& model, const TrainBatch& batch, int samples_per_condition,
                        std::mt19937_64& rng);
// Same, with given base latents z: (B * N, latent_dim).
GeneratedBatch generate(const Model& model, const TrainBatch& batch, const Tensor& z);

struct GeneratorLoss {
  Var total;
  double adversarial = 0.0;
  double disentanglement = 0.0;
  double diversity = 0.0;
};

// Adversarial objectives from logits. The discriminator form is
// sum_i [softplus(-real_i) + softplus(fake_i)] with means over the batch.
Var discriminator_objective(std::span<const Var> real_logits, std::span<const Var> fake_logits);
Var generator_adversarial_objective(std::span<const Var> fake_logits, AdversarialForm form);

GeneratorLoss generator_loss(const Model& model, const TrainBatch& batch, const GeneratedBatch& fakes,
                             const TrainConfig& config);
// Fakes are detached; only discriminator parameters receive gradients.
Var discriminator_loss(const Model& model, const TrainBatch& batch, const GeneratedBatch& fakes);

struct BatchRecord {
  long long step = 0;
  double generator_adversarial = 0.0;
  double discriminator = 0.0;
  double disentanglement = 0.0;
  double diversity = 0.0;
  double generator_total = 0.0;
  double wall_time = 0.0;  // seconds since the trainer was constructed

  bool finite() const;
  nlohmann::json to_json() const;
};

// Everything random about one step: the batch and its base latents.
struct StepDraw {
  TrainBatch batch;
  Tensor z;  // (B * N, latent_dim)
};

class Trainer {
 public:
  Trainer(TrainConfig config, Dataset train_data);

  // One discriminator update followed by one generator update.
  BatchRecord step() { return update(draw()); }
  // Advances the data order and RNG exactly as step() does.
  StepDraw draw();
  BatchRecord update(const StepDraw& draw);

  const TrainConfig& config() const { return config_; }
  const Model& model() const { return model_; }
  Model& model() { return model_; }
  long long step_count() const { return step_; }

  CheckpointData snapshot() const;
  void restore(const CheckpointData& data);

 private:
  std::vector<Tensor> next_images();

  TrainConfig config_;
  Dataset data_;
  Model model_;
  Adam gen_opt_;
  Adam disc_opt_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  long long step_ = 0;
  double elapsed_before_ = 0.0;
  std::chrono::steady_clock::time_point start_;
};

struct TrainOptions {
  std::optional<std::filesystem::path> resume;
  std::function<void(const BatchRecord&)> on_step;
};

struct TrainResult {
  std::filesystem::path checkpoint;
  std::vector<BatchRecord> records;
  DatasetSplit split;
};

// Writes config.json, metrics.jsonl (one line per step), checkpoint.nsed and
// sample grids under `out_dir`.
TrainResult train(const std::filesystem::path& data_dir, const TrainConfig& config,
                  const std::filesystem::path& out_dir, const TrainOptions& options = {});
TrainResult train(const Dataset& data, const TrainConfig& config, const std::filesystem::path& out_dir,
                  const TrainOptions& options = {});

}  // namespace nsedit
