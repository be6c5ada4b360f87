#pragma once

// HTTP+JSON front end of TrialService.
//
//   POST /trials                         create a trial, returns its state (201)
//   GET  /trials/{id}                    state with posterior summaries
//   POST /trials/{id}/outcomes           {patient_index, dose_given, outcome}
//   GET  /trials/{id}/recommendation     next recommended dose
//   GET  /healthz
//
// Errors are {code, message, field?}. With a token configured, every route
// except /healthz requires "Authorization: Bearer <token>".

#include <cstdlib>
#include <optional>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "errors.hpp"
#include "service.hpp"

namespace dosefind {

struct ServerOptions {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string data_dir = "data";
    std::optional<std::string> token;

    /// DOSEFIND_BIND (host:port), DOSEFIND_DATA_DIR, DOSEFIND_TOKEN.
    static ServerOptions from_env() {
        ServerOptions o;
        if (const char* b = std::getenv("DOSEFIND_BIND")) {
            const std::string s = b;
            const auto colon = s.rfind(':');
            if (colon == std::string::npos) throw validation_error("DOSEFIND_BIND", "expected host:port");
            o.host = s.substr(0, colon);
            try {
                o.port = std::stoi(s.substr(colon + 1));
            } catch (const std::exception&) {
                throw validation_error("DOSEFIND_BIND", "invalid port");
            }
        }
        if (const char* d = std::getenv("DOSEFIND_DATA_DIR")) o.data_dir = d;
        if (const char* t = std::getenv("DOSEFIND_TOKEN"); t && *t) o.token = t;
        return o;
    }
};

namespace detail {

inline void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message,
                       const std::string& field = "") {
    json body = {{"code", code}, {"message", message}};
    if (!field.empty()) body["field"] = field;
    send_json(res, status, body);
}

template <class Fn>
void guarded(httplib::Response& res, Fn&& fn) {
    try {
        fn();
    } catch (const validation_error& e) {
        const std::string what = e.what();
        const std::string msg = e.field().empty() ? what : what.substr(e.field().size() + 2);
        send_error(res, 422, "validation_error", msg, e.field());
    } catch (const not_found_error& e) {
        send_error(res, 404, "not_found", e.what());
    } catch (const conflict_error& e) {
        send_error(res, 409, "conflict", e.what());
    } catch (const std::exception& e) {
        send_error(res, 500, "internal", e.what());
    }
}

inline json parse_body(const httplib::Request& req) {
    try {
        return json::parse(req.body);
    } catch (const json::parse_error& e) {
        throw validation_error("", std::string("malformed JSON body: ") + e.what());
    }
}

}  // namespace detail

inline void install_routes(httplib::Server& svr, TrialService& service, std::optional<std::string> token = {}) {
    svr.set_pre_routing_handler([token](const httplib::Request& req, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Origin", "*");
        res.set_header("Access-Control-Allow-Headers", "Authorization, Content-Type");
        if (req.method == "OPTIONS") {
            res.status = 204;
            return httplib::Server::HandlerResponse::Handled;
        }
        if (!token || req.path == "/healthz") return httplib::Server::HandlerResponse::Unhandled;
        if (req.get_header_value("Authorization") != "Bearer " + *token) {
            detail::send_error(res, 401, "unauthorized", "missing or invalid bearer token");
            return httplib::Server::HandlerResponse::Handled;
        }
        return httplib::Server::HandlerResponse::Unhandled;
    });

    svr.Get("/healthz", [&service](const httplib::Request&, httplib::Response& res) {
        detail::send_json(res, 200, {{"status", "ok"}, {"trials", service.trial_count()}});
    });
    svr.Post("/trials", [&service](const httplib::Request& req, httplib::Response& res) {
        detail::guarded(res, [&] { detail::send_json(res, 201, service.create_trial(detail::parse_body(req))); });
    });
    svr.Get(R"(/trials/([0-9a-f]+))", [&service](const httplib::Request& req, httplib::Response& res) {
        detail::guarded(res, [&] { detail::send_json(res, 200, service.get_state(req.matches[1])); });
    });
    svr.Get(R"(/trials/([0-9a-f]+)/recommendation)", [&service](const httplib::Request& req, httplib::Response& res) {
        detail::guarded(res, [&] { detail::send_json(res, 200, service.get_recommendation(req.matches[1])); });
    });
    svr.Post(R"(/trials/([0-9a-f]+)/outcomes)", [&service](const httplib::Request& req, httplib::Response& res) {
        detail::guarded(res, [&] {
            detail::send_json(res, 200, service.record_outcome(req.matches[1], detail::parse_body(req)));
        });
    });
    svr.set_error_handler([](const httplib::Request&, httplib::Response& res) {
        if (res.body.empty()) detail::send_error(res, res.status, res.status == 404 ? "not_found" : "error", "no such route");
    });
}

}  // namespace dosefind
