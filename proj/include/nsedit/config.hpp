#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "nsedit/diversity.hpp"
#include "nsedit/pyramid.hpp"

namespace nsedit {

enum class Task { outpainting, superresolution };

enum class ValueRange {
  symmetric,  // [-1, 1]
  unit,       // [0, 1]
};

// Rectangular visible window; everything outside is hidden.
struct MaskSpec {
  double visible_fraction = 0.25;
  double center_x = 0.5;
  double center_y = 0.5;
};

struct TaskSpec {
  Task kind = Task::outpainting;
  MaskSpec mask;
  int sr_factor = 8;
};

struct EncoderLayerSpec {
  int filters = 64;
  int kernel = 4;
  int stride = 2;
  int padding = 1;
  bool instance_norm = false;
};

struct ModelConfig {
  TaskSpec task;
  PyramidSpec pyramid{4, 4, 3};
  int latent_dim = 16;
  int mapping_depth = 3;
  int mapping_width = 64;
  int feature_width = 64;
  int disc_width = 16;
  std::vector<EncoderLayerSpec> encoder;
  bool skip_connections = false;
  // Each image head adds to the upsampled pre-activation of the coarser level.
  bool residual_images = false;
  ValueRange value_range = ValueRange::symmetric;

  int output_resolution() const { return pyramid.output_resolution(); }
  int input_resolution() const;
  int input_channels() const;
  void validate() const;

  // 32x32 output, n = 4 from base 4, 2x2 code.
  static ModelConfig desk_outpainting();
  // 32x32 output from a 4x4 input, levels 8/16/32, encoder skips.
  static ModelConfig desk_superresolution();
  // 128x128 output with the full 7-layer encoder table.
  static ModelConfig full_outpainting();
};

enum class AdversarialForm { non_saturating, minimax };

struct LossWeights {
  double gan = 1.0;
  double disent = 1.0;
  double ndiv = 1.0;
};

struct OptimizerConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  ModelConfig model = ModelConfig::desk_outpainting();
  LossWeights weights;
  DiversityConfig diversity;
  OptimizerConfig optimizer;
  AdversarialForm adversarial = AdversarialForm::non_saturating;
  int batch_size = 8;
  std::uint64_t seed = 0;
  int total_steps = 2000;
  int checkpoint_every = 500;
  int sample_every = 500;
  double validation_fraction = 0.1;

  void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const TrainConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig load_train_config(const std::filesystem::path& path);
void save_json(const std::filesystem::path& path, const nlohmann::json& j);

std::string to_string(Task t);
Task task_from_string(const std::string& s);

}  // namespace nsedit
