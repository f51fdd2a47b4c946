#include "nsedit/http_api.hpp"

#include <httplib.h>

#include "nsedit/image_io.hpp"

namespace nsedit {

namespace {

using Kind = ServiceError::Kind;
using nlohmann::json;

void send(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    json j = json::parse(req.body);
    if (!j.is_object()) throw ServiceError(Kind::validation, "request body must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw ServiceError(Kind::validation, std::string("malformed JSON: ") + e.what());
  }
}

template <typename T>
T field(const json& j, const char* name) {
  if (!j.contains(name)) throw ServiceError(Kind::validation, std::string("missing field '") + name + "'");
  try {
    return j.at(name).get<T>();
  } catch (const json::exception&) {
    throw ServiceError(Kind::validation, std::string("field '") + name + "' has the wrong type");
  }
}

std::string png64(const Tensor& image, ValueRange range) {
  return base64_encode(encode_png(to_unit_range(image, range)));
}

// Wraps a handler with the shared error mapping.
template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const ServiceError& e) {
      send(res, e.http_status(), {{"error", {{"code", e.code()}, {"message", e.what()}}}});
    } catch (const std::exception& e) {
      send(res, 500, {{"error", {{"code", "internal"}, {"message", e.what()}}}});
    }
  };
}

}  // namespace

json render_to_json(const ImagePyramid& pyramid, ValueRange range) {
  json levels = json::array();
  for (const auto& l : pyramid.levels) levels.push_back(png64(l, range));
  return {{"levels", levels}, {"image", levels.back()}};
}

void install_routes(httplib::Server& server, NavigationService& svc) {
  auto range = [&svc] { return svc.model().config().value_range; };
  auto session_json = [&svc, range](const SessionView& v) {
    json history = json::array();
    for (const auto& h : v.history) {
      history.push_back({{"scale", h.scale}, {"candidate_id", h.candidate_id}, {"timestamp", h.timestamp}});
    }
    json candidates = nullptr;
    if (v.candidates) {
      candidates = {{"scale", v.candidates->scale}, {"ids", json::array()}};
      for (const auto& c : v.candidates->candidates) candidates["ids"].push_back(c.id);
    }
    json latents = json::array();
    for (const auto& z : v.committed.per_scale) latents.push_back(z.values);
    return json{{"id", v.id},
                {"task", to_string(v.task)},
                {"scale_cursor", v.cursor},
                {"n_scales", v.n_scales},
                {"latent_dim", svc.model().config().latent_dim},
                {"latents", latents},
                {"history", history},
                {"candidates", candidates},
                {"render", render_to_json(v.render, range())}};
  };

  server.Get("/v1/health", guarded([&svc](const httplib::Request&, httplib::Response& res) {
               send(res, 200, {{"status", svc.has_model() ? "ok" : "unavailable"},
                               {"checkpoint", svc.checkpoint_id()},
                               {"sessions", svc.session_count()}});
             }));

  server.Post("/v1/sessions", guarded([&svc, session_json](const httplib::Request& req, httplib::Response& res) {
                const json body = parse_body(req);
                if (!svc.has_model()) throw ServiceError(Kind::unavailable, "no model is loaded");
                Tensor image;
                try {
                  image = to_model_range(
                      decode_png(base64_decode(field<std::string>(body, "image")), svc.model().config().pyramid.channels),
                      svc.model().config().value_range);
                } catch (const ImageIOError& e) {
                  throw ServiceError(Kind::validation, std::string("malformed image: ") + e.what());
                }
                std::optional<std::uint64_t> seed;
                if (body.contains("seed")) seed = field<std::uint64_t>(body, "seed");
                const std::string id = svc.create_session(image, seed);
                send(res, 201, session_json(svc.get(id)));
              }));

  server.Post("/v1/sessions/import", guarded([&svc, session_json](const httplib::Request& req, httplib::Response& res) {
                const std::string id = svc.import_session(parse_body(req));
                send(res, 201, session_json(svc.get(id)));
              }));

  server.Get(R"(/v1/sessions/([0-9a-zA-Z]+))",
             guarded([&svc, session_json](const httplib::Request& req, httplib::Response& res) {
               send(res, 200, session_json(svc.get(req.matches[1])));
             }));

  server.Post(R"(/v1/sessions/([0-9a-zA-Z]+)/candidates)",
              guarded([&svc, range](const httplib::Request& req, httplib::Response& res) {
                const json body = parse_body(req);
                std::optional<double> spread;
                if (body.contains("spread")) spread = field<double>(body, "spread");
                const CandidateSet set =
                    svc.sample_candidates(req.matches[1], field<int>(body, "scale"), field<int>(body, "count"), spread);
                json cands = json::array();
                for (const auto& c : set.candidates) {
                  cands.push_back({{"id", c.id}, {"latent", c.latent.values}, {"thumbnail", png64(c.image, range())}});
                }
                send(res, 200, {{"scale", set.scale}, {"candidates", cands}});
              }));

  server.Post(R"(/v1/sessions/([0-9a-zA-Z]+)/commit)",
              guarded([&svc, range](const httplib::Request& req, httplib::Response& res) {
                const json body = parse_body(req);
                const ImagePyramid r = svc.commit(req.matches[1], field<std::string>(body, "candidate_id"));
                send(res, 200, {{"scale_cursor", svc.get(req.matches[1]).cursor}, {"render", render_to_json(r, range())}});
              }));

  server.Post(R"(/v1/sessions/([0-9a-zA-Z]+)/undo)",
              guarded([&svc, range](const httplib::Request& req, httplib::Response& res) {
                const ImagePyramid r = svc.undo(req.matches[1]);
                send(res, 200, {{"scale_cursor", svc.get(req.matches[1]).cursor}, {"render", render_to_json(r, range())}});
              }));

  server.Get(R"(/v1/sessions/([0-9a-zA-Z]+)/render)",
             guarded([&svc, range](const httplib::Request& req, httplib::Response& res) {
               send(res, 200, {{"render", render_to_json(svc.render(req.matches[1]), range())}});
             }));

  server.Get(R"(/v1/sessions/([0-9a-zA-Z]+)/export)",
             guarded([&svc](const httplib::Request& req, httplib::Response& res) {
               send(res, 200, svc.export_session(req.matches[1]));
             }));
}

}  // namespace nsedit
