#include "stub_backend.hpp"

#include <thread>

#include "uisim/codec.hpp"
#include "uisim/config.hpp"
#include "uisim/error.hpp"
#include "uisim/fid.hpp"
#include "uisim/image.hpp"
#include "uisim/raster.hpp"
#include "uisim/service.hpp"

#include <httplib.h>

namespace uisim::testing {

struct StubBackend::Impl {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::mutex mu;
  StubHandler predict, render, action, layout, embed;

  StubHandler get(StubHandler StubBackend::Impl::*which) {
    std::lock_guard lock(mu);
    return this->*which;
  }
};

namespace {

Image image_field(const nlohmann::json& req, const char* key) {
  return decode_png(base64_decode(req.at(key).get<std::string>()));
}

}  // namespace

StubBackend::StubBackend(std::optional<AppGraph> graph) : impl_(std::make_unique<Impl>()) {
  auto predictor = std::make_shared<RuleBasedPredictor>(
      graph ? std::move(*graph) : AppGraph::load(demo_appgraph_path()));

  impl_->predict = [predictor](const nlohmann::json& req) {
    try {
      const Image image = image_field(req, "image_png_base64");
      std::optional<ScreenLayout> prior;
      if (req.contains("prior_layout_dsl")) prior = parse_layout(req["prior_layout_dsl"].get<std::string>());
      const ScreenLayout next =
          predictor->predict(image, SimAction::from_text(req.at("action_text").get<std::string>()), prior);
      return StubReply::json({{"layout_dsl", serialize_layout(next)}, {"model", "stub-graph"}});
    } catch (const Error& e) {
      return StubReply::json(problem_json(e), 422);
    }
  };
  impl_->render = [](const nlohmann::json& req) {
    const ScreenLayout layout = parse_layout(req.at("layout_dsl").get<std::string>());
    const Image image = uisim::render(layout, light_theme(), req.at("width").get<int>(),
                                      req.at("height").get<int>());
    return StubReply::json({{"image_png_base64", base64_encode(encode_png(image))}});
  };
  impl_->action = [](const nlohmann::json&) {
    return StubReply::json({{"action_text", "tap the next button"}, {"version", "stub-action-1"}});
  };
  impl_->layout = [](const nlohmann::json&) {
    return StubReply::json(
        {{"layout_dsl", "CONTAINER root (0,0,1,1)\n  BUTTON next 'Next' (0.1,0.8,0.9,0.9)\n"},
         {"version", "stub-layout-1"}});
  };
  impl_->embed = [](const nlohmann::json& req) {
    const auto f = BuiltinExtractor().extract(image_field(req, "image_png_base64"));
    return StubReply::json({{"features", f}, {"version", "stub-embed-1"}});
  };

  const auto route = [this](const char* path, StubHandler Impl::*which, std::atomic<int>& counter) {
    impl_->server.Post(path, [this, which, &counter](const httplib::Request& req, httplib::Response& res) {
      ++counter;
      StubReply reply;
      auto body = nlohmann::json::parse(req.body, nullptr, false);
      if (body.is_discarded()) {
        reply = {400, R"({"error":"bad json"})"};
      } else {
        try {
          reply = impl_->get(which)(body);
        } catch (const std::exception& e) {
          reply = StubReply::json({{"error", e.what()}}, 400);
        }
      }
      res.status = reply.status;
      res.set_content(reply.body, "application/json");
    });
  };
  route("/v1/predict_layout", &Impl::predict, predict_calls);
  route("/v1/render", &Impl::render, render_calls);
  route("/v1/annotate_action", &Impl::action, action_calls);
  route("/v1/annotate_layout", &Impl::layout, layout_calls);
  route("/v1/embed", &Impl::embed, embed_calls);
  impl_->server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"status":"ok"})", "application/json");
  });

  impl_->port = impl_->server.bind_to_any_port("127.0.0.1");
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

StubBackend::~StubBackend() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

std::string StubBackend::url() const { return "http://127.0.0.1:" + std::to_string(impl_->port); }

void StubBackend::on_predict(StubHandler h) {
  std::lock_guard lock(impl_->mu);
  impl_->predict = std::move(h);
}
void StubBackend::on_render(StubHandler h) {
  std::lock_guard lock(impl_->mu);
  impl_->render = std::move(h);
}
void StubBackend::on_annotate_action(StubHandler h) {
  std::lock_guard lock(impl_->mu);
  impl_->action = std::move(h);
}
void StubBackend::on_annotate_layout(StubHandler h) {
  std::lock_guard lock(impl_->mu);
  impl_->layout = std::move(h);
}
void StubBackend::on_embed(StubHandler h) {
  std::lock_guard lock(impl_->mu);
  impl_->embed = std::move(h);
}

void StubBackend::reset_counters() {
  predict_calls = render_calls = action_calls = layout_calls = embed_calls = 0;
}

StubHandler reply_status(int status, std::string body) {
  return [status, body](const nlohmann::json&) { return StubReply{status, body}; };
}

StubHandler reply_text(std::string body) {
  return [body](const nlohmann::json&) { return StubReply{200, body}; };
}

StubHandler fail_first(int failures, int status, StubHandler then) {
  auto remaining = std::make_shared<std::atomic<int>>(failures);
  return [remaining, status, then](const nlohmann::json& req) {
    if (remaining->fetch_sub(1) > 0) return StubReply{status, R"({"error":"try later"})"};
    return then(req);
  };
}

}  // namespace uisim::testing
