#pragma once

// In-process HTTP server speaking every remote backend protocol: layout
// prediction, rendering, action and layout annotation, embedding. Handlers
// are replaceable per test; calls are counted per endpoint.

#include <atomic>
#include <functional>
#include <memory>
#include <mutex>
#include <string>

#include <json.hpp>

#include "uisim/transition.hpp"

namespace uisim::testing {

struct StubReply {
  int status = 200;
  std::string body;

  static StubReply json(const nlohmann::json& j, int status = 200) { return {status, j.dump()}; }
};

using StubHandler = std::function<StubReply(const nlohmann::json& request)>;

class StubBackend {
 public:
  // Default handlers: prediction follows `graph` (the bundled demo graph when
  // empty), rendering uses the built-in light rasterizer, embeddings use the
  // built-in extractor, annotators return fixed text and a one-element layout.
  explicit StubBackend(std::optional<AppGraph> graph = std::nullopt);
  ~StubBackend();

  StubBackend(const StubBackend&) = delete;
  StubBackend& operator=(const StubBackend&) = delete;

  std::string url() const;

  void on_predict(StubHandler h);
  void on_render(StubHandler h);
  void on_annotate_action(StubHandler h);
  void on_annotate_layout(StubHandler h);
  void on_embed(StubHandler h);

  std::atomic<int> predict_calls{0};
  std::atomic<int> render_calls{0};
  std::atomic<int> action_calls{0};
  std::atomic<int> layout_calls{0};
  std::atomic<int> embed_calls{0};

  void reset_counters();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Replies that exercise error handling.
StubHandler reply_status(int status, std::string body = "{}");
StubHandler reply_text(std::string body);
// Fails with `status` for the first `failures` calls, then delegates.
StubHandler fail_first(int failures, int status, StubHandler then);

}  // namespace uisim::testing
