#pragma once

// HTTP front end over a SessionManager.
//
//   GET  /healthz
//   POST /v1/sessions                              PNG body or {image_png_base64, layout_dsl?}
//   GET  /v1/sessions
//   GET  /v1/sessions/{id}                         session manifest
//   POST /v1/sessions/{id}/nodes/{nid}/step        {action}
//   POST /v1/sessions/{id}/rollout                 {start_node, actions, stop_on_error}
//   GET  /v1/sessions/{id}/nodes/{nid}/image       image/png
//   GET  /v1/sessions/{id}/nodes/{nid}/layout      text/plain layout DSL
//
// Failures are problem documents {code, stage?, message, detail?}.

#include <memory>
#include <string>

#include <json.hpp>

#include "uisim/config.hpp"
#include "uisim/error.hpp"
#include "uisim/session.hpp"

namespace uisim {

int http_status_for(ErrorCode code);
nlohmann::json problem_json(const Error& error);

// Backends and store built from `config`; throws ConfigError or StoreIoError.
std::shared_ptr<SessionManager> make_session_manager(const ServiceConfig& config);

class Service {
 public:
  Service(ServiceConfig config, std::shared_ptr<SessionManager> manager);
  explicit Service(const ServiceConfig& config);
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Binds and serves on a background thread. Returns the bound port (useful
  // with port 0). Throws BindError.
  int start();
  // Binds and serves on the calling thread until stop().
  void run();
  // Stops accepting connections and waits for in-flight requests.
  void stop();

  int port() const;
  SessionManager& manager();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace uisim
