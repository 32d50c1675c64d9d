#include "uisim/service.hpp"

#include <atomic>
#include <filesystem>
#include <thread>

#include <httplib.h>

#include "uisim/codec.hpp"
#include "uisim/image.hpp"
#include "uisim/layout.hpp"

namespace uisim {
namespace {

constexpr std::size_t kMaxPayload = 16 * 1024 * 1024;
constexpr const char* kJson = "application/json";

Error bad_request(const std::string& msg) { return Error(ErrorCode::kInvalidRequest, msg); }

nlohmann::json parse_body(const httplib::Request& req) {
  auto j = nlohmann::json::parse(req.body, nullptr, false);
  if (j.is_discarded()) throw bad_request("request body is not valid JSON");
  if (!j.is_object()) throw bad_request("request body must be a JSON object");
  return j;
}

NodeId parse_node_id(const std::string& s) {
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    throw Error(ErrorCode::kNodeNotFound, "node " + s + " not found");
  }
}

bool looks_like_png(const std::string& body) {
  static const std::string sig = "\x89PNG\r\n\x1a\n";
  return body.compare(0, sig.size(), sig) == 0;
}

void send_json(httplib::Response& res, int status, const nlohmann::json& j) {
  res.status = status;
  res.set_content(j.dump(), kJson);
}

void send_problem(httplib::Response& res, const Error& e) {
  send_json(res, http_status_for(e.code()), problem_json(e));
}

template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const Error& e) {
      send_problem(res, e);
    } catch (const nlohmann::json::exception& e) {
      send_problem(res, bad_request(std::string("malformed request: ") + e.what()));
    } catch (const std::exception& e) {
      send_json(res, 500, {{"code", "InternalError"}, {"message", e.what()}});
    }
  };
}

nlohmann::json session_summary(const SessionTree& tree) {
  return {{"session_id", tree.session_id()},
          {"node_count", tree.size()},
          {"created_at", tree.created_at()},
          {"updated_at", tree.updated_at()}};
}

}  // namespace

int http_status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNodeNotFound:
    case ErrorCode::kSessionNotFound:
      return 404;
    case ErrorCode::kSyntaxError:
    case ErrorCode::kBoundsError:
    case ErrorCode::kDepthError:
    case ErrorCode::kLayoutTooLarge:
    case ErrorCode::kResolutionError:
    case ErrorCode::kInvalidImage:
    case ErrorCode::kInvalidAction:
    case ErrorCode::kInvalidRequest:
      return 400;
    case ErrorCode::kNoTransition:
    case ErrorCode::kInvalidPrediction:
      return 422;
    case ErrorCode::kBackendUnavailable:
      return 502;
    default:
      return 500;
  }
}

nlohmann::json problem_json(const Error& error) {
  nlohmann::json j = {{"code", error.code_name()}, {"message", error.what()}};
  if (error.stage()) j["stage"] = *error.stage();
  if (!error.detail().empty()) j["detail"] = error.detail();
  return j;
}

std::shared_ptr<SessionManager> make_session_manager(const ServiceConfig& config) {
  config.validate();
  const Theme theme = theme_by_name(config.theme);
  auto predictor = make_predictor(config.predictor, theme, config.layout_timeout);
  auto renderer =
      make_renderer(config.renderer, theme, config.width, config.height, config.render_timeout);
  auto store = std::make_shared<const SessionStore>(config.store_dir);
  std::error_code ec;
  std::filesystem::create_directories(config.store_dir, ec);
  if (ec || !std::filesystem::is_directory(config.store_dir))
    throw Error(ErrorCode::kStoreIoError, "store dir " + config.store_dir.string() + " is not writable",
                ec.message());
  return std::make_shared<SessionManager>(std::move(predictor), std::move(renderer), std::move(store),
                                          StepOptions{config.pass_prior_layout},
                                          config.max_cached_sessions);
}

struct Service::Impl {
  ServiceConfig config;
  std::shared_ptr<SessionManager> manager;
  httplib::Server server;
  std::thread thread;
  std::atomic<int> port{0};

  void routes();
  void bind();
};

void Service::Impl::routes() {
  server.set_payload_max_length(kMaxPayload);
  server.set_socket_options([](socket_t sock) {
    int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof yes);
  });
  server.set_default_headers({{"Access-Control-Allow-Origin", config.cors_origin}});
  server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
    res.status = 204;
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.set_header("Access-Control-Max-Age", "600");
  });

  SessionManager& m = *manager;

  server.Get("/healthz", guarded([&m, this](const httplib::Request&, httplib::Response& res) {
    const bool predictor_ok = m.predictor().reachable();
    const bool renderer_ok = m.renderer().reachable();
    send_json(res, 200,
              {{"status", "ok"},
               {"ready", predictor_ok && renderer_ok},
               {"predictor", {{"name", m.predictor().name()}, {"reachable", predictor_ok}}},
               {"renderer", {{"name", m.renderer().name()}, {"reachable", renderer_ok}}},
               {"store", {{"dir", config.store_dir.string()}}}});
  }));

  server.Post("/v1/sessions", guarded([&m](const httplib::Request& req, httplib::Response& res) {
    Image image;
    std::optional<ScreenLayout> layout;
    if (req.get_header_value("Content-Type") == "image/png" || looks_like_png(req.body)) {
      image = decode_png(std::span(reinterpret_cast<const std::uint8_t*>(req.body.data()),
                                   req.body.size()));
    } else {
      const auto body = parse_body(req);
      if (!body.contains("image_png_base64") || !body["image_png_base64"].is_string())
        throw bad_request("image_png_base64 is required");
      image = decode_png(base64_decode(body["image_png_base64"].get<std::string>()));
      if (body.contains("layout_dsl") && !body["layout_dsl"].is_null()) {
        layout = parse_layout(body["layout_dsl"].get<std::string>());
        layout->source = LayoutSource::kAnnotated;
      }
    }
    const auto tree = m.create(image, layout);
    auto j = session_summary(*tree);
    j["root_id"] = tree->root_id();
    j["session"] = session_manifest(*tree);
    res.set_header("Location", "/v1/sessions/" + tree->session_id());
    send_json(res, 201, j);
  }));

  server.Get("/v1/sessions", guarded([&m](const httplib::Request&, httplib::Response& res) {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& id : m.list()) list.push_back(session_summary(*m.get(id)));
    send_json(res, 200, {{"sessions", list}});
  }));

  server.Get(R"(/v1/sessions/([A-Za-z0-9_-]+))",
             guarded([&m](const httplib::Request& req, httplib::Response& res) {
               send_json(res, 200, session_manifest(*m.get(req.matches[1])));
             }));

  server.Post(R"(/v1/sessions/([A-Za-z0-9_-]+)/nodes/([0-9]+)/step)",
              guarded([&m](const httplib::Request& req, httplib::Response& res) {
                const std::string sid = req.matches[1];
                const NodeId from = parse_node_id(req.matches[2]);
                const auto body = parse_body(req);
                if (!body.contains("action")) throw bad_request("action is required");
                const SimAction action = action_from_json(body["action"]);
                const NodeId id = m.branch_step(sid, from, action);
                send_json(res, 201,
                          {{"session_id", sid}, {"node", node_manifest(m.get(sid)->node(id))}});
              }));

  server.Post(R"(/v1/sessions/([A-Za-z0-9_-]+)/rollout)",
              guarded([&m](const httplib::Request& req, httplib::Response& res) {
                const std::string sid = req.matches[1];
                const auto body = parse_body(req);
                RolloutRequest r;
                r.start_node = body.value("start_node", NodeId{0});
                r.stop_on_error = body.value("stop_on_error", true);
                if (!body.contains("actions") || !body["actions"].is_array())
                  throw bad_request("actions must be an array");
                for (const auto& a : body["actions"]) r.actions.push_back(action_from_json(a));
                const RolloutResult result = m.rollout(sid, r);
                const auto tree = m.get(sid);
                nlohmann::json nodes = nlohmann::json::array();
                for (NodeId id : result.created) nodes.push_back(node_manifest(tree->node(id)));
                nlohmann::json failures = nlohmann::json::array();
                for (const auto& f : result.failures)
                  failures.push_back({{"action_index", f.action_index}, {"error", problem_json(f.error)}});
                nlohmann::json j = {{"session_id", sid},
                                    {"created", result.created},
                                    {"nodes", nodes},
                                    {"failures", failures}};
                if (!result.ok()) j["error"] = problem_json(result.failures.front().error);
                send_json(res, result.ok() ? 201 : http_status_for(result.failures.front().error.code()),
                          j);
              }));

  server.Get(R"(/v1/sessions/([A-Za-z0-9_-]+)/nodes/([0-9]+)/image)",
             guarded([&m](const httplib::Request& req, httplib::Response& res) {
               const auto tree = m.get(req.matches[1]);
               const auto png = encode_png(tree->node(parse_node_id(req.matches[2])).state.image);
               res.status = 200;
               res.set_header("ETag", "\"" + sha256_hex(png) + "\"");
               res.set_content(std::string(png.begin(), png.end()), "image/png");
             }));

  server.Get(R"(/v1/sessions/([A-Za-z0-9_-]+)/nodes/([0-9]+)/layout)",
             guarded([&m](const httplib::Request& req, httplib::Response& res) {
               const auto tree = m.get(req.matches[1]);
               res.status = 200;
               res.set_content(serialize_layout(tree->node(parse_node_id(req.matches[2])).state.layout),
                               "text/plain; charset=utf-8");
             }));

  server.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (!res.body.empty()) return;
    if (res.status == 404)
      send_json(res, 404, {{"code", "NotFound"}, {"message", "no route for " + req.method + " " + req.path}});
  });
}

void Service::Impl::bind() {
  if (config.port == 0) {
    const int p = server.bind_to_any_port(config.host);
    if (p <= 0) throw Error(ErrorCode::kBindError, "cannot bind " + config.host);
    port = p;
  } else {
    if (!server.bind_to_port(config.host, config.port))
      throw Error(ErrorCode::kBindError,
                  "cannot bind " + config.host + ":" + std::to_string(config.port));
    port = config.port;
  }
}

Service::Service(ServiceConfig config, std::shared_ptr<SessionManager> manager)
    : impl_(std::make_unique<Impl>()) {
  impl_->config = std::move(config);
  impl_->manager = std::move(manager);
  impl_->routes();
}

Service::Service(const ServiceConfig& config) : Service(config, make_session_manager(config)) {}

Service::~Service() { stop(); }

int Service::start() {
  impl_->bind();
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return impl_->port;
}

void Service::run() {
  impl_->bind();
  impl_->server.listen_after_bind();
}

void Service::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

int Service::port() const { return impl_->port; }

SessionManager& Service::manager() { return *impl_->manager; }

}  // namespace uisim
