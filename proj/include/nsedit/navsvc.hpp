#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "nsedit/nets.hpp"

namespace nsedit {

// Error carrying the HTTP status it maps to.
class ServiceError : public std::runtime_error {
 public:
  enum class Kind { validation, not_found, conflict, unavailable };
  ServiceError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }
  int http_status() const;
  std::string code() const;

 private:
  Kind kind_;
};

struct NavServiceConfig {
  int max_candidates = 64;
  std::chrono::seconds idle_timeout{30 * 60};
  std::optional<std::filesystem::path> store_dir;  // write-through when set
  double first_scale_spread = 1.0;
  double spread_decay = 0.7;

  double default_spread(int scale) const;
};

struct Candidate {
  std::string id;
  LatentCode latent;  // replacement for the scale's committed latent
  Tensor image;       // full-resolution render, model value range
};

struct CandidateSet {
  int scale = 0;
  std::vector<Candidate> candidates;
};

struct CommitRecord {
  int scale = 0;
  std::string candidate_id;
  LatentCode latent;
  LatentCode previous;
  double timestamp = 0.0;  // seconds since the epoch
};

struct SessionView {
  std::string id;
  Task task = Task::outpainting;
  int cursor = 1;
  int n_scales = 0;
  ScaleLatentSet committed;
  std::vector<CommitRecord> history;
  std::optional<CandidateSet> candidates;
  ImagePyramid render;
};

class NavigationService {
 public:
  // Without a model every session operation fails as unavailable.
  explicit NavigationService(NavServiceConfig config = {});
  NavigationService(std::shared_ptr<const Model> model, std::string checkpoint_id, NavServiceConfig config = {});

  bool has_model() const { return static_cast<bool>(model_); }
  const std::string& checkpoint_id() const { return checkpoint_id_; }
  const NavServiceConfig& config() const { return config_; }
  const Model& model() const;

  // `image` is a full-resolution (C, R, R) picture (the task mask is applied
  // here) or, for superresolution, the low-resolution input itself. Values in
  // the model range.
  std::string create_session(const Tensor& image, std::optional<std::uint64_t> seed = std::nullopt);
  SessionView get(const std::string& id);
  CandidateSet sample_candidates(const std::string& id, int scale, int count,
                                 std::optional<double> spread = std::nullopt);
  ImagePyramid commit(const std::string& id, const std::string& candidate_id);
  ImagePyramid undo(const std::string& id);
  ImagePyramid render(const std::string& id);

  nlohmann::json export_session(const std::string& id);
  std::string import_session(const nlohmann::json& archive);

  std::size_t session_count();
  // Drops sessions idle for longer than the timeout; returns how many.
  std::size_t evict_idle();

 private:
  struct Session {
    std::mutex mutex;
    std::string id;
    Tensor input;  // encoder input
    ConditionalCode code;
    ScaleLatentSet committed;
    int cursor = 1;
    std::optional<CandidateSet> candidates;
    std::vector<CommitRecord> history;
    std::mt19937_64 rng;
    std::uint64_t candidate_counter = 0;
    std::chrono::steady_clock::time_point last_used;
  };

  std::shared_ptr<Session> find(const std::string& id);
  std::string new_id();
  void require_model() const;
  Tensor encoder_input(const Tensor& image) const;
  ImagePyramid render_locked(const Session& s) const;
  nlohmann::json export_locked(const Session& s) const;
  void persist_locked(const Session& s) const;
  std::shared_ptr<Session> restore(const nlohmann::json& archive, std::string id);

  std::shared_ptr<const Model> model_;
  std::string checkpoint_id_;
  NavServiceConfig config_;
  std::mutex store_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::mt19937_64 id_rng_;
};

}  // namespace nsedit
