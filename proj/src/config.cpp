#include "nsedit/config.hpp"

#include <fstream>
#include <set>

#include "nsedit/autograd.hpp"

namespace nsedit {

using nlohmann::json;

std::string to_string(Task t) { return t == Task::outpainting ? "outpainting" : "superresolution"; }

Task task_from_string(const std::string& s) {
  if (s == "outpainting") return Task::outpainting;
  if (s == "superresolution") return Task::superresolution;
  throw ConfigError("unknown task '" + s + "'");
}

namespace {

std::string to_string(ValueRange r) { return r == ValueRange::symmetric ? "[-1,1]" : "[0,1]"; }

ValueRange value_range_from_string(const std::string& s) {
  if (s == "[-1,1]") return ValueRange::symmetric;
  if (s == "[0,1]") return ValueRange::unit;
  throw ConfigError("unknown value_range '" + s + "' (expected \"[-1,1]\" or \"[0,1]\")");
}

std::string to_string(AdversarialForm f) { return f == AdversarialForm::non_saturating ? "non_saturating" : "minimax"; }

AdversarialForm adversarial_from_string(const std::string& s) {
  if (s == "non_saturating") return AdversarialForm::non_saturating;
  if (s == "minimax") return AdversarialForm::minimax;
  throw ConfigError("unknown adversarial form '" + s + "'");
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items()) {
    if (!ok.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
  }
}

json encoder_to_json(const std::vector<EncoderLayerSpec>& layers) {
  json arr = json::array();
  for (const auto& l : layers) {
    arr.push_back({{"filters", l.filters},
                   {"kernel", l.kernel},
                   {"stride", l.stride},
                   {"padding", l.padding},
                   {"instance_norm", l.instance_norm}});
  }
  return arr;
}

}  // namespace

int ModelConfig::input_resolution() const {
  if (task.kind == Task::outpainting) return output_resolution();
  return output_resolution() / task.sr_factor;
}

int ModelConfig::input_channels() const {
  return task.kind == Task::outpainting ? pyramid.channels + 1 : pyramid.channels;
}

void ModelConfig::validate() const {
  pyramid.validate();
  if (pyramid.base_resolution < 2) throw ConfigError("decoder base_resolution must be >= 2");
  if (latent_dim < 1 || mapping_depth < 1 || mapping_width < 1 || feature_width < 1 || disc_width < 1) {
    throw ConfigError("network widths and depths must be positive");
  }
  if (encoder.empty()) throw ConfigError("encoder needs at least one layer");
  int res = input_resolution();
  if (task.kind == Task::superresolution) {
    if (task.sr_factor < 2 || output_resolution() % task.sr_factor != 0) {
      throw ConfigError("superresolution factor " + std::to_string(task.sr_factor) + " incompatible with output " +
                        std::to_string(output_resolution()));
    }
    if (pyramid.base_resolution != 2 * res) {
      throw ConfigError("superresolution decoding must start one octave above the input resolution (base " +
                        std::to_string(2 * res) + ")");
    }
  } else {
    const auto& m = task.mask;
    if (!(m.visible_fraction > 0.0 && m.visible_fraction <= 1.0)) throw ConfigError("mask visible_fraction must lie in (0, 1]");
    if (m.center_x < 0.0 || m.center_x > 1.0 || m.center_y < 0.0 || m.center_y > 1.0) {
      throw ConfigError("mask center must lie in [0, 1]");
    }
  }
  for (const auto& l : encoder) {
    if (l.filters < 1 || l.kernel < 1 || l.stride < 1 || l.padding < 0) throw ConfigError("invalid encoder layer");
    res = ops::conv_output_size(res, l.kernel, l.stride, l.padding);
    if (res < 1) throw ConfigError("encoder stack collapses the input to an empty map");
  }
  const int stage_input = pyramid.base_resolution / 2;
  if (res > stage_input || stage_input % res != 0) {
    throw ConfigError("encoder code resolution " + std::to_string(res) + " must divide the first stage input " +
                      std::to_string(stage_input));
  }
}

ModelConfig ModelConfig::desk_outpainting() {
  ModelConfig c;
  c.task.kind = Task::outpainting;
  c.pyramid = {4, 4, 3};
  c.encoder = {{16, 4, 2, 1, false}, {32, 4, 2, 1, true}, {64, 4, 2, 1, true}, {64, 4, 2, 1, true}, {32, 1, 1, 0, false}};
  c.residual_images = true;
  return c;
}

ModelConfig ModelConfig::desk_superresolution() {
  ModelConfig c;
  c.task.kind = Task::superresolution;
  c.task.sr_factor = 8;
  c.pyramid = {8, 3, 3};
  c.encoder = {{16, 3, 1, 1, false}, {32, 4, 2, 1, true}, {32, 1, 1, 0, false}};
  c.skip_connections = true;
  c.residual_images = true;
  return c;
}

ModelConfig ModelConfig::full_outpainting() {
  ModelConfig c;
  c.task.kind = Task::outpainting;
  c.pyramid = {4, 6, 3};
  c.feature_width = 512;
  c.latent_dim = 64;
  c.mapping_width = 256;
  c.disc_width = 64;
  // Seventh layer read as K1-S2-P0.
  c.encoder = {{64, 4, 2, 1, false},  {128, 4, 2, 1, true}, {256, 4, 2, 1, true}, {512, 4, 2, 1, true},
               {256, 4, 2, 1, true},  {256, 4, 2, 1, true}, {128, 1, 2, 0, false}};
  return c;
}

void TrainConfig::validate() const {
  model.validate();
  diversity.validate();
  if (weights.gan < 0 || weights.disent < 0 || weights.ndiv < 0) throw ConfigError("loss weights must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (total_steps < 0) throw ConfigError("total_steps must be >= 0");
  if (!(optimizer.learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (optimizer.beta1 < 0 || optimizer.beta1 >= 1 || optimizer.beta2 < 0 || optimizer.beta2 >= 1) {
    throw ConfigError("optimizer betas must lie in [0, 1)");
  }
  if (validation_fraction < 0.0 || validation_fraction >= 1.0) throw ConfigError("validation_fraction must lie in [0, 1)");
}

json to_json(const ModelConfig& c) {
  return {{"task",
           {{"kind", to_string(c.task.kind)},
            {"mask",
             {{"visible_fraction", c.task.mask.visible_fraction},
              {"center_x", c.task.mask.center_x},
              {"center_y", c.task.mask.center_y}}},
            {"sr_factor", c.task.sr_factor}}},
          {"pyramid",
           {{"base_resolution", c.pyramid.base_resolution},
            {"n_scales", c.pyramid.n_scales},
            {"channels", c.pyramid.channels}}},
          {"latent_dim", c.latent_dim},
          {"mapping_depth", c.mapping_depth},
          {"mapping_width", c.mapping_width},
          {"feature_width", c.feature_width},
          {"disc_width", c.disc_width},
          {"encoder", encoder_to_json(c.encoder)},
          {"skip_connections", c.skip_connections},
          {"residual_images", c.residual_images},
          {"value_range", to_string(c.value_range)}};
}

ModelConfig model_config_from_json(const json& j) {
  check_keys(j,
             {"preset", "task", "pyramid", "latent_dim", "mapping_depth", "mapping_width", "feature_width", "disc_width",
              "encoder", "skip_connections", "residual_images", "value_range"},
             "model");
  ModelConfig c = ModelConfig::desk_outpainting();
  if (j.contains("preset")) {
    const std::string p = j.at("preset").get<std::string>();
    if (p == "desk_outpainting") c = ModelConfig::desk_outpainting();
    else if (p == "desk_superresolution") c = ModelConfig::desk_superresolution();
    else if (p == "full_outpainting") c = ModelConfig::full_outpainting();
    else throw ConfigError("unknown model preset '" + p + "'");
  }
  if (j.contains("task")) {
    const json& t = j.at("task");
    check_keys(t, {"kind", "mask", "sr_factor"}, "model.task");
    if (t.contains("kind")) c.task.kind = task_from_string(t.at("kind").get<std::string>());
    read(t, "sr_factor", c.task.sr_factor);
    if (t.contains("mask")) {
      const json& m = t.at("mask");
      check_keys(m, {"visible_fraction", "center_x", "center_y"}, "model.task.mask");
      read(m, "visible_fraction", c.task.mask.visible_fraction);
      read(m, "center_x", c.task.mask.center_x);
      read(m, "center_y", c.task.mask.center_y);
    }
  }
  if (j.contains("pyramid")) {
    const json& p = j.at("pyramid");
    check_keys(p, {"base_resolution", "n_scales", "channels"}, "model.pyramid");
    read(p, "base_resolution", c.pyramid.base_resolution);
    read(p, "n_scales", c.pyramid.n_scales);
    read(p, "channels", c.pyramid.channels);
  }
  read(j, "latent_dim", c.latent_dim);
  read(j, "mapping_depth", c.mapping_depth);
  read(j, "mapping_width", c.mapping_width);
  read(j, "feature_width", c.feature_width);
  read(j, "disc_width", c.disc_width);
  read(j, "skip_connections", c.skip_connections);
  read(j, "residual_images", c.residual_images);
  if (j.contains("value_range")) c.value_range = value_range_from_string(j.at("value_range").get<std::string>());
  if (j.contains("encoder")) {
    c.encoder.clear();
    for (const auto& l : j.at("encoder")) {
      check_keys(l, {"filters", "kernel", "stride", "padding", "instance_norm"}, "model.encoder[]");
      EncoderLayerSpec s;
      read(l, "filters", s.filters);
      read(l, "kernel", s.kernel);
      read(l, "stride", s.stride);
      read(l, "padding", s.padding);
      read(l, "instance_norm", s.instance_norm);
      c.encoder.push_back(s);
    }
  }
  return c;
}

json to_json(const TrainConfig& c) {
  return {{"model", to_json(c.model)},
          {"weights", {{"gan", c.weights.gan}, {"disent", c.weights.disent}, {"ndiv", c.weights.ndiv}}},
          {"diversity",
           {{"num_samples", c.diversity.num_samples}, {"alpha", c.diversity.alpha}, {"epsilon", c.diversity.epsilon}}},
          {"optimizer",
           {{"learning_rate", c.optimizer.learning_rate},
            {"beta1", c.optimizer.beta1},
            {"beta2", c.optimizer.beta2},
            {"epsilon", c.optimizer.epsilon}}},
          {"adversarial", to_string(c.adversarial)},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"total_steps", c.total_steps},
          {"checkpoint_every", c.checkpoint_every},
          {"sample_every", c.sample_every},
          {"validation_fraction", c.validation_fraction}};
}

TrainConfig train_config_from_json(const json& j) {
  check_keys(j,
             {"model", "weights", "diversity", "optimizer", "adversarial", "batch_size", "seed", "total_steps",
              "checkpoint_every", "sample_every", "validation_fraction"},
             "config");
  TrainConfig c;
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  if (j.contains("weights")) {
    const json& w = j.at("weights");
    check_keys(w, {"gan", "disent", "ndiv"}, "weights");
    read(w, "gan", c.weights.gan);
    read(w, "disent", c.weights.disent);
    read(w, "ndiv", c.weights.ndiv);
  }
  if (j.contains("diversity")) {
    const json& d = j.at("diversity");
    check_keys(d, {"num_samples", "alpha", "epsilon"}, "diversity");
    read(d, "num_samples", c.diversity.num_samples);
    read(d, "alpha", c.diversity.alpha);
    read(d, "epsilon", c.diversity.epsilon);
  }
  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    check_keys(o, {"learning_rate", "beta1", "beta2", "epsilon"}, "optimizer");
    read(o, "learning_rate", c.optimizer.learning_rate);
    read(o, "beta1", c.optimizer.beta1);
    read(o, "beta2", c.optimizer.beta2);
    read(o, "epsilon", c.optimizer.epsilon);
  }
  if (j.contains("adversarial")) c.adversarial = adversarial_from_string(j.at("adversarial").get<std::string>());
  read(j, "batch_size", c.batch_size);
  read(j, "seed", c.seed);
  read(j, "total_steps", c.total_steps);
  read(j, "checkpoint_every", c.checkpoint_every);
  read(j, "sample_every", c.sample_every);
  read(j, "validation_fraction", c.validation_fraction);
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  TrainConfig c = train_config_from_json(j);
  c.validate();
  return c;
}

void save_json(const std::filesystem::path& path, const json& j) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out << j.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace nsedit
