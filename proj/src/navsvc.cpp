#include "nsedit/navsvc.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "nsedit/config.hpp"
#include "nsedit/image_io.hpp"
#include "nsedit/trainer.hpp"

namespace nsedit {

int ServiceError::http_status() const {
  switch (kind_) {
    case Kind::validation: return 400;
    case Kind::not_found: return 404;
    case Kind::conflict: return 409;
    case Kind::unavailable: return 503;
  }
  return 500;
}

std::string ServiceError::code() const {
  switch (kind_) {
    case Kind::validation: return "validation";
    case Kind::not_found: return "not_found";
    case Kind::conflict: return "conflict";
    case Kind::unavailable: return "unavailable";
  }
  return "internal";
}

double NavServiceConfig::default_spread(int scale) const {
  return first_scale_spread * std::pow(spread_decay, scale - 1);
}

namespace {

using Kind = ServiceError::Kind;

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
}

nlohmann::json tensor_json(const Tensor& t) { return {{"shape", t.shape()}, {"data", t.to_vector()}}; }

Tensor tensor_from_json(const nlohmann::json& j) {
  Shape shape = j.at("shape").get<Shape>();
  std::vector<real> data = j.at("data").get<std::vector<real>>();
  if (shape_numel(shape) != data.size()) throw ServiceError(Kind::validation, "tensor data does not match its shape");
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace

NavigationService::NavigationService(NavServiceConfig config)
    : config_(std::move(config)), id_rng_(std::random_device{}()) {}

NavigationService::NavigationService(std::shared_ptr<const Model> model, std::string checkpoint_id,
                                     NavServiceConfig config)
    : model_(std::move(model)),
      checkpoint_id_(std::move(checkpoint_id)),
      config_(std::move(config)),
      id_rng_(std::random_device{}()) {
  if (config_.max_candidates < 1) throw ConfigError("max_candidates must be >= 1");
  if (config_.store_dir) std::filesystem::create_directories(*config_.store_dir);
}

const Model& NavigationService::model() const {
  require_model();
  return *model_;
}

void NavigationService::require_model() const {
  if (!model_) throw ServiceError(Kind::unavailable, "no model is loaded");
}

std::string NavigationService::new_id() {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(id_rng_()));
  return buf;
}

Tensor NavigationService::encoder_input(const Tensor& image) const {
  const ModelConfig& mc = model_->config();
  const int C = mc.pyramid.channels, R = mc.output_resolution();
  if (image.rank() != 3 || image.dim(0) != C) {
    throw ServiceError(Kind::validation, "image must have " + std::to_string(C) + " channels, got " +
                                             to_string(image.shape()));
  }
  if (!all_finite(image)) throw ServiceError(Kind::validation, "image contains non-finite values");
  if (image.dim(1) == R && image.dim(2) == R) return make_condition(image, mc).input;
  const int r = mc.input_resolution();
  if (mc.task.kind == Task::superresolution && image.dim(1) == r && image.dim(2) == r) return image;
  throw ServiceError(Kind::validation, "image size " + to_string(image.shape()) + " does not fit the model");
}

ImagePyramid NavigationService::render_locked(const Session& s) const { return model_->decode(s.code, s.committed); }

std::string NavigationService::create_session(const Tensor& image, std::optional<std::uint64_t> seed) {
  require_model();
  auto s = std::make_shared<Session>();
  s->input = encoder_input(image);
  s->code = model_->encode(s->input);
  s->rng.seed(seed ? *seed : std::random_device{}() ^ (static_cast<std::uint64_t>(std::random_device{}()) << 32));
  s->committed = model_->expand(LatentCode::sample(model_->config().latent_dim, s->rng));
  s->last_used = std::chrono::steady_clock::now();
  {
    std::lock_guard lock(store_mutex_);
    s->id = new_id();
    sessions_[s->id] = s;
  }
  std::lock_guard lock(s->mutex);
  persist_locked(*s);
  return s->id;
}

std::shared_ptr<NavigationService::Session> NavigationService::find(const std::string& id) {
  require_model();
  evict_idle();
  {
    std::lock_guard lock(store_mutex_);
    auto it = sessions_.find(id);
    if (it != sessions_.end()) {
      it->second->last_used = std::chrono::steady_clock::now();
      return it->second;
    }
  }
  if (config_.store_dir && id.find_first_not_of("0123456789abcdef") == std::string::npos && !id.empty()) {
    const auto path = *config_.store_dir / (id + ".json");
    std::ifstream in(path);
    if (in) {
      auto s = restore(nlohmann::json::parse(in), id);
      std::lock_guard lock(store_mutex_);
      auto [it, inserted] = sessions_.emplace(id, s);
      return it->second;
    }
  }
  throw ServiceError(Kind::not_found, "unknown session " + id);
}

SessionView NavigationService::get(const std::string& id) {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  SessionView v;
  v.id = s->id;
  v.task = model_->config().task.kind;
  v.cursor = s->cursor;
  v.n_scales = model_->config().pyramid.n_scales;
  v.committed = s->committed;
  v.history = s->history;
  v.candidates = s->candidates;
  v.render = render_locked(*s);
  return v;
}

CandidateSet NavigationService::sample_candidates(const std::string& id, int scale, int count,
                                                  std::optional<double> spread) {
  auto s = find(id);
  const int n = model_->config().pyramid.n_scales;
  if (scale < 1 || scale > n) {
    throw ServiceError(Kind::validation, "scale " + std::to_string(scale) + " outside [1, " + std::to_string(n) + "]");
  }
  if (count < 1 || count > config_.max_candidates) {
    throw ServiceError(Kind::validation, "count must lie in [1, " + std::to_string(config_.max_candidates) + "]");
  }
  const double sigma = spread ? *spread : config_.default_spread(scale);
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ServiceError(Kind::validation, "spread must be finite and >= 0");

  std::lock_guard lock(s->mutex);
  std::normal_distribution<double> normal(0.0, 1.0);
  CandidateSet set;
  set.scale = scale;
  const std::uint64_t round = ++s->candidate_counter;
  for (int j = 0; j < count; ++j) {
    ScaleLatentSet lat = s->committed;
    for (auto& v : lat.per_scale[scale - 1].values) v = static_cast<real>(v + sigma * normal(s->rng));
    Candidate c;
    c.id = std::to_string(round) + "-" + std::to_string(scale) + "-" + std::to_string(j);
    c.latent = lat.per_scale[scale - 1];
    c.image = model_->decode(s->code, lat).levels.back();
    set.candidates.push_back(std::move(c));
  }
  s->candidates = set;
  return set;
}

ImagePyramid NavigationService::commit(const std::string& id, const std::string& candidate_id) {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  if (!s->candidates) throw ServiceError(Kind::conflict, "no open candidate set; candidate " + candidate_id + " is stale");
  const Candidate* chosen = nullptr;
  for (const auto& c : s->candidates->candidates)
    if (c.id == candidate_id) chosen = &c;
  if (!chosen) throw ServiceError(Kind::conflict, "candidate " + candidate_id + " is not in the current set");
  const int k = s->candidates->scale;
  CommitRecord rec;
  rec.scale = k;
  rec.candidate_id = candidate_id;
  rec.latent = chosen->latent;
  rec.previous = s->committed.per_scale[k - 1];
  rec.timestamp = now_seconds();
  s->committed.per_scale[k - 1] = chosen->latent;
  s->history.push_back(std::move(rec));
  s->cursor = std::min(k + 1, model_->config().pyramid.n_scales);
  s->candidates.reset();
  persist_locked(*s);
  return render_locked(*s);
}

ImagePyramid NavigationService::undo(const std::string& id) {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  if (s->history.empty()) throw ServiceError(Kind::conflict, "nothing to undo");
  const CommitRecord rec = s->history.back();
  s->history.pop_back();
  s->committed.per_scale[rec.scale - 1] = rec.previous;
  s->cursor = rec.scale;
  s->candidates.reset();
  persist_locked(*s);
  return render_locked(*s);
}

ImagePyramid NavigationService::render(const std::string& id) {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  return render_locked(*s);
}

nlohmann::json NavigationService::export_locked(const Session& s) const {
  const ModelConfig& mc = model_->config();
  nlohmann::json latents = nlohmann::json::array();
  for (const auto& z : s.committed.per_scale) latents.push_back(z.values);
  nlohmann::json history = nlohmann::json::array();
  for (const auto& h : s.history) {
    history.push_back({{"scale", h.scale},
                       {"candidate_id", h.candidate_id},
                       {"latent", h.latent.values},
                       {"previous", h.previous.values},
                       {"timestamp", h.timestamp}});
  }
  std::ostringstream rng;
  rng << s.rng;
  const ImagePyramid r = render_locked(s);
  return {{"format", "nsedit-session"},
          {"version", 1},
          {"id", s.id},
          {"checkpoint", checkpoint_id_},
          {"task", to_string(mc.task.kind)},
          {"input", tensor_json(s.input)},
          {"latents", latents},
          {"cursor", s.cursor},
          {"history", history},
          {"rng", rng.str()},
          {"candidate_counter", s.candidate_counter},
          {"final_image", base64_encode(encode_png(to_unit_range(r.levels.back(), mc.value_range)))}};
}

void NavigationService::persist_locked(const Session& s) const {
  if (!config_.store_dir) return;
  const auto path = *config_.store_dir / (s.id + ".json");
  save_json(path, export_locked(s));
}

nlohmann::json NavigationService::export_session(const std::string& id) {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  return export_locked(*s);
}

std::shared_ptr<NavigationService::Session> NavigationService::restore(const nlohmann::json& a, std::string id) {
  const ModelConfig& mc = model_->config();
  try {
    if (a.value("format", "") != "nsedit-session") throw ServiceError(Kind::validation, "not a session archive");
    if (a.at("task").get<std::string>() != to_string(mc.task.kind)) {
      throw ServiceError(Kind::validation, "archive task does not match the loaded model");
    }
    auto s = std::make_shared<Session>();
    s->id = std::move(id);
    s->input = tensor_from_json(a.at("input"));
    const Shape want{mc.input_channels(), mc.input_resolution(), mc.input_resolution()};
    if (s->input.shape() != want) throw ServiceError(Kind::validation, "archive input has the wrong shape");
    s->code = model_->encode(s->input);
    for (const auto& z : a.at("latents")) s->committed.per_scale.push_back(LatentCode{z.get<std::vector<real>>()});
    if (s->committed.n_scales() != mc.pyramid.n_scales) throw ServiceError(Kind::validation, "archive scale count mismatch");
    for (const auto& z : s->committed.per_scale)
      if (z.dim() != mc.latent_dim) throw ServiceError(Kind::validation, "archive latent dimension mismatch");
    s->cursor = a.at("cursor").get<int>();
    if (s->cursor < 1 || s->cursor > mc.pyramid.n_scales) throw ServiceError(Kind::validation, "archive cursor out of range");
    for (const auto& h : a.at("history")) {
      CommitRecord r;
      r.scale = h.at("scale").get<int>();
      r.candidate_id = h.at("candidate_id").get<std::string>();
      r.latent = LatentCode{h.at("latent").get<std::vector<real>>()};
      r.previous = LatentCode{h.at("previous").get<std::vector<real>>()};
      r.timestamp = h.at("timestamp").get<double>();
      if (r.scale < 1 || r.scale > mc.pyramid.n_scales || r.latent.dim() != mc.latent_dim ||
          r.previous.dim() != mc.latent_dim) {
        throw ServiceError(Kind::validation, "archive history entry is malformed");
      }
      s->history.push_back(std::move(r));
    }
    if (a.contains("rng")) {
      std::istringstream rng(a.at("rng").get<std::string>());
      rng >> s->rng;
    }
    s->candidate_counter = a.value("candidate_counter", std::uint64_t{0});
    s->last_used = std::chrono::steady_clock::now();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ServiceError(Kind::validation, std::string("malformed session archive: ") + e.what());
  }
}

std::string NavigationService::import_session(const nlohmann::json& archive) {
  require_model();
  std::string id;
  {
    std::lock_guard lock(store_mutex_);
    id = new_id();
  }
  auto s = restore(archive, id);
  {
    std::lock_guard lock(store_mutex_);
    sessions_[id] = s;
  }
  std::lock_guard lock(s->mutex);
  persist_locked(*s);
  return id;
}

std::size_t NavigationService::session_count() {
  std::lock_guard lock(store_mutex_);
  return sessions_.size();
}

std::size_t NavigationService::evict_idle() {
  const auto cutoff = std::chrono::steady_clock::now() - config_.idle_timeout;
  std::lock_guard lock(store_mutex_);
  std::size_t dropped = 0;
  for (auto it = sessions_.begin(); it != sessions_.end();) {
    if (it->second->last_used < cutoff) {
      it = sessions_.erase(it);
      ++dropped;
    } else {
      ++it;
    }
  }
  return dropped;
}

}  // namespace nsedit
