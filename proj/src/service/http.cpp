#include <charconv>

#include "ctseg/error.hpp"
#include "ctseg/fs_util.hpp"
#include "ctseg/triage_http.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ctseg::triage {

namespace {

void send_error(httplib::Response& res, int status, std::string_view code, const std::string& message) {
    res.status = status;
    res.set_content(json{{"error", {{"code", code}, {"message", message}}}}.dump(), "application/json");
}

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

std::pair<int, std::string_view> http_status(ErrorCode code) {
    switch (code) {
        case ErrorCode::invalid_argument: return {400, "invalid_argument"};
        case ErrorCode::not_found: return {404, "not_found"};
        case ErrorCode::conflict: return {409, "conflict"};
        case ErrorCode::corrupt: return {422, "corrupt"};
        case ErrorCode::non_finite: return {500, "non_finite"};
        case ErrorCode::io: return {500, "io"};
    }
    return {500, "internal"};
}

int parse_int(const std::string& text, std::string_view name) {
    int v = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
        fail(ErrorCode::invalid_argument, std::string(name) + " must be an integer, got '" + text + "'");
    }
    return v;
}

template <class F>
httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
        try {
            f(req, res);
        } catch (const Error& e) {
            const auto [status, code] = http_status(e.code());
            send_error(res, status, code, e.what());
        } catch (const json::exception& e) {
            send_error(res, 400, "invalid_argument", std::string("malformed JSON body: ") + e.what());
        } catch (const std::exception& e) {
            send_error(res, 500, "internal", e.what());
        }
    };
}

}  // namespace

void mount_routes(httplib::Server& server, TriageService& service, bool allow_path_submission) {
    const std::string token = service.config().token;

    server.set_pre_routing_handler([token](const httplib::Request& req, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Origin", "*");
        res.set_header("Access-Control-Allow-Headers", "Authorization, Content-Type");
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        if (req.method == "OPTIONS") {
            res.status = 204;
            return httplib::Server::HandlerResponse::Handled;
        }
        if (!token.empty() && req.get_header_value(kAuthHeader) != "Bearer " + token) {
            send_error(res, 401, "unauthorized", "missing or wrong access token");
            return httplib::Server::HandlerResponse::Handled;
        }
        return httplib::Server::HandlerResponse::Unhandled;
    });

    server.Post("/studies", guarded([&service, allow_path_submission](const httplib::Request& req,
                                                                       httplib::Response& res) {
        CaseStore::SubmitOutcome out;
        if (req.is_multipart_form_data()) {
            std::vector<UploadedFile> files;
            for (const auto& [field, file] : req.files) files.push_back({file.filename, file.content});
            out = service.submit_files(files);
        } else {
            const json body = json::parse(req.body);
            if (!body.contains("path")) {
                fail(ErrorCode::invalid_argument, "expected multipart DICOM files or a JSON body with \"path\"");
            }
            if (!allow_path_submission) {
                fail(ErrorCode::invalid_argument, "path submission is disabled on this server");
            }
            out = service.submit_directory(body.at("path").get<std::string>());
        }
        send_json(res, out.created ? 201 : 200, {{"case_id", out.case_id}, {"created", out.created}});
    }));

    server.Get("/cases", guarded([&service](const httplib::Request& req, httplib::Response& res) {
        std::optional<CaseStatus> status;
        if (req.has_param("status") && !req.get_param_value("status").empty()) {
            status = parse_status(req.get_param_value("status"));
        }
        const int page = req.has_param("page") ? parse_int(req.get_param_value("page"), "page") : 1;
        const int size = req.has_param("page_size") ? parse_int(req.get_param_value("page_size"), "page_size") : 20;
        const CasePage p = service.store().list(status, page, size);
        json items = json::array();
        for (const auto& c : p.items) items.push_back(c.summary_json());
        send_json(res, 200, {{"items", items}, {"page", p.page}, {"page_size", p.page_size}, {"total", p.total}});
    }));

    server.Get(R"(/cases/([^/]+))", guarded([&service](const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        const auto c = service.store().get(id);
        if (!c) fail(ErrorCode::not_found, "case '" + id + "' does not exist");
        send_json(res, 200, c->to_json());
    }));

    server.Get(R"(/cases/([^/]+)/overlays/([^/]+))",
               guarded([&service](const httplib::Request& req, httplib::Response& res) {
                   const std::string id = req.matches[1];
                   const int slice = parse_int(req.matches[2], "slice");
                   const auto c = service.store().get(id);
                   if (!c) fail(ErrorCode::not_found, "case '" + id + "' does not exist");
                   if (c->status != CaseStatus::ready && c->status != CaseStatus::decided) {
                       fail(ErrorCode::not_found, "case '" + id + "' has no overlays while " +
                                                      std::string(to_string(c->status)));
                   }
                   if (slice < 0 || slice >= c->slice_count) {
                       fail(ErrorCode::not_found, "slice " + std::to_string(slice) + " is outside [0, " +
                                                      std::to_string(c->slice_count - 1) + "]");
                   }
                   const fs::path path = service.overlay_path(id, slice);
                   if (!fs::exists(path)) fail(ErrorCode::not_found, "overlay for slice " + std::to_string(slice) +
                                                                         " is missing");
                   res.set_content(read_file(path), "image/png");
               }));

    server.Post(R"(/cases/([^/]+)/decision)", guarded([&service](const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        const json body = json::parse(req.body);
        if (!body.contains("decision") || !body.contains("clinician_id")) {
            fail(ErrorCode::invalid_argument, "decision body needs \"decision\" and \"clinician_id\"");
        }
        const TriageCase c = service.store().record_decision(id, parse_decision(body.at("decision").get<std::string>()),
                                                             body.at("clinician_id").get<std::string>());
        send_json(res, 200, c.to_json());
    }));

    server.Post(R"(/cases/([^/]+)/retry)", guarded([&service](const httplib::Request& req, httplib::Response& res) {
        send_json(res, 200, service.store().retry(req.matches[1]).to_json());
    }));
}

}  // namespace ctseg::triage
