#pragma once

#include <cstdlib>
#include <string>
#include <utility>

#include <httplib.h>
#include <json.hpp>

#include "error.hpp"
#include "service.hpp"

namespace vlinspect {

struct BindAddress {
  std::string host = "127.0.0.1";
  int port = 8080;
};

// VLINSPECT_ADDR=host:port, or VLINSPECT_HOST / VLINSPECT_PORT separately.
inline BindAddress bind_address_from_env(BindAddress fallback = {}) {
  BindAddress b = fallback;
  if (const char* addr = std::getenv("VLINSPECT_ADDR"); addr && *addr) {
    std::string s(addr);
    const auto colon = s.rfind(':');
    if (colon == std::string::npos) {
      b.host = s;
    } else {
      if (colon > 0) b.host = s.substr(0, colon);
      b.port = std::stoi(s.substr(colon + 1));
    }
  }
  if (const char* h = std::getenv("VLINSPECT_HOST"); h && *h) b.host = h;
  if (const char* p = std::getenv("VLINSPECT_PORT"); p && *p) b.port = std::stoi(p);
  return b;
}

namespace detail {

inline void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename Fn>
void guarded(const Service& svc, httplib::Response& res, Fn&& fn) {
  auto fail = [&](int status, const std::string& msg) {
    send_json(res, status, {{"error", msg}, {"model_hash", svc.model_hash()}, {"corpus_hash", svc.corpus_hash()}});
  };
  try {
    send_json(res, 200, fn());
  } catch (const nlohmann::json::exception& e) {
    fail(400, std::string("malformed request: ") + e.what());
  } catch (const InvalidArgument& e) {
    fail(400, e.what());
  } catch (const NotFound& e) {
    fail(404, e.what());
  } catch (const Conflict& e) {
    fail(409, e.what());
  } catch (const Unavailable& e) {
    fail(503, e.what());
  } catch (const std::exception& e) {
    fail(500, e.what());
  }
}

inline nlohmann::json body_of(const httplib::Request& req) {
  auto j = nlohmann::json::parse(req.body);
  if (!j.is_object()) throw InvalidArgument("request body must be a JSON object");
  return j;
}

}  // namespace detail

// Registers the API routes on `server`. `svc` must outlive the server.
inline void install_routes(httplib::Server& server, Service& svc) {
  using detail::guarded;
  server.Get("/instances", [&svc](const httplib::Request&, httplib::Response& res) {
    guarded(svc, res, [&] { return svc.instances(); });
  });
  server.Post("/ask", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(svc, res, [&] { return svc.ask(detail::body_of(req)); });
  });
  server.Get(R"(/head/([^/]+)/map)", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(svc, res, [&] { return svc.head_map(req.matches[1], req.get_param_value("session")); });
  });
  server.Get(R"(/head/([^/]+)/stats)", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(svc, res, [&] {
      return svc.head_stats(req.matches[1], req.get_param_value("session"), req.get_param_value("agg"));
    });
  });
  server.Post("/filter", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(svc, res, [&] { return svc.filter(detail::body_of(req)); });
  });
  server.Post("/compare", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(svc, res, [&] { return svc.compare(detail::body_of(req)); });
  });
}

// Serves files under `dir` (image thumbnails, a built UI) at `/static/...`.
inline void mount_static(httplib::Server& server, const std::string& dir) {
  if (!server.set_mount_point("/static", dir)) throw ConfigError("cannot serve static files from '" + dir + "'");
}

}  // namespace vlinspect
