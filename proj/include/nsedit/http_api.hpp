#pragma once

#include <json.hpp>

#include "nsedit/navsvc.hpp"

namespace httplib {
class Server;
}

namespace nsedit {

// JSON/HTTP binding of the navigation service, all routes under /v1:
//   GET  /v1/health
//   POST /v1/sessions                   {"image": png64, "seed"?}
//   POST /v1/sessions/import            archive from /export
//   GET  /v1/sessions/{id}
//   POST /v1/sessions/{id}/candidates   {"scale", "count", "spread"?}
//   POST /v1/sessions/{id}/commit       {"candidate_id"}
//   POST /v1/sessions/{id}/undo
//   GET  /v1/sessions/{id}/render
//   GET  /v1/sessions/{id}/export
// Images travel as base64 PNG; errors as {"error": {"code", "message"}}.
void install_routes(httplib::Server& server, NavigationService& service);

nlohmann::json render_to_json(const ImagePyramid& pyramid, ValueRange range);

}  // namespace nsedit
