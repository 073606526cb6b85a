#pragma once

#include <httplib.h>

#include "ctseg/triage.hpp"

namespace ctseg::triage {

/// Header carrying the static access token: "Authorization: Bearer <token>".
inline constexpr const char* kAuthHeader = "Authorization";

/// Mounts the case API on `server`:
///   POST /studies                       multipart files, or JSON {"path": dir}
///   GET  /cases?status=&page=&page_size=
///   GET  /cases/{id}
///   GET  /cases/{id}/overlays/{slice}   image/png
///   POST /cases/{id}/decision           {"decision", "clinician_id"}
///   POST /cases/{id}/retry
/// Errors are JSON {"error": {"code", "message"}}. Directory submission is
/// accepted only when `allow_path_submission` is set.
void mount_routes(httplib::Server& server, TriageService& service, bool allow_path_submission = false);

}  // namespace ctseg::triage
