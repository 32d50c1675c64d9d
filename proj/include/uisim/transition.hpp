#pragma once

// Two-stage transition: predict the next layout from (screen image, action),
// then render that layout to the next screen image.

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "uisim/http_client.hpp"
#include "uisim/image.hpp"
#include "uisim/layout.hpp"
#include "uisim/raster.hpp"

namespace uisim {

enum class ActionKind { kTap, kType, kScroll, kOpenApp, kBack, kHome, kOther };

std::string_view action_kind_name(ActionKind kind);
std::optional<ActionKind> action_kind_from_name(std::string_view name);

struct Point {
  double x = 0, y = 0;
  friend bool operator==(const Point&, const Point&) = default;
};

struct SimAction {
  std::string text;
  std::optional<ActionKind> kind;
  std::optional<Point> point;
  std::optional<std::string> typed_text;

  // Throws InvalidAction: empty text, TAP without point, TYPE without
  // typed_text, or a point outside the unit square.
  void validate() const;

  static SimAction from_text(std::string text) { return SimAction{std::move(text), {}, {}, {}}; }

  friend bool operator==(const SimAction&, const SimAction&) = default;
};

nlohmann::json action_to_json(const SimAction& action);
// Throws InvalidAction.
SimAction action_from_json(const nlohmann::json& j);

struct BackendInfo {
  std::string predictor;
  std::string renderer;
  // Whatever the predictor endpoint reported about its model (null if none).
  nlohmann::json predictor_metadata;

  friend bool operator==(const BackendInfo&, const BackendInfo&) = default;
};

struct StageLatency {
  double layout_ms = 0;
  double render_ms = 0;
  friend bool operator==(const StageLatency&, const StageLatency&) = default;
};

struct SimState {
  ScreenLayout layout;
  Image image;
  std::optional<SimAction> action_taken;
  BackendInfo backend_info;
  StageLatency latency_ms;
};

// Equality ignoring the latency fields.
bool same_state(const SimState& a, const SimState& b);

class LayoutPredictor {
 public:
  virtual ~LayoutPredictor() = default;
  virtual std::string name() const = 0;
  virtual ScreenLayout predict(const Image& image, const SimAction& action,
                               const std::optional<ScreenLayout>& prior_layout) const = 0;
  virtual nlohmann::json metadata() const { return nullptr; }
  virtual bool reachable() const { return true; }
};

class ScreenRenderer {
 public:
  virtual ~ScreenRenderer() = default;
  virtual std::string name() const = 0;
  virtual Image render(const ScreenLayout& layout) const = 0;
  virtual bool reachable() const { return true; }
};

// In-process rasterizer backend.
class BuiltinRenderer final : public ScreenRenderer {
 public:
  BuiltinRenderer(Theme theme = light_theme(), int width = kDefaultWidth,
                  int height = kDefaultHeight);
  std::string name() const override;
  Image render(const ScreenLayout& layout) const override;

  const Theme& theme() const { return theme_; }
  int width() const { return width_; }
  int height() const { return height_; }

 private:
  Theme theme_;
  int width_;
  int height_;
};

inline constexpr std::chrono::milliseconds kDefaultStageTimeout{60'000};

// POST {base}/v1/render {layout_dsl, width, height} -> {image_png_base64}.
class RemoteRenderer final : public ScreenRenderer {
 public:
  RemoteRenderer(const std::string& base_url, int width, int height,
                 std::chrono::milliseconds timeout = kDefaultStageTimeout);
  std::string name() const override;
  Image render(const ScreenLayout& layout) const override;
  bool reachable() const override { return client_.reachable(); }

 private:
  JsonHttpClient client_;
  int width_;
  int height_;
};

// POST {base}/v1/predict_layout {image_png_base64, action_text,
// prior_layout_dsl?} -> {layout_dsl}.
class RemotePredictor final : public LayoutPredictor {
 public:
  explicit RemotePredictor(const std::string& base_url,
                           std::chrono::milliseconds timeout = kDefaultStageTimeout);
  std::string name() const override;
  ScreenLayout predict(const Image& image, const SimAction& action,
                       const std::optional<ScreenLayout>& prior_layout) const override;
  nlohmann::json metadata() const override;
  bool reachable() const override { return client_.reachable(); }

 private:
  JsonHttpClient client_;
  mutable std::mutex mu_;
  mutable nlohmann::json metadata_;
};

// Matches an action against one AppGraph edge. An edge fires when any of its
// configured matchers does: all keywords present as whole words
// (case-insensitive), a TAP inside `tap_region`, or an action of `kind`.
struct ActionMatcher {
  std::vector<std::string> keywords;
  std::optional<BoundingBox> tap_region;
  std::optional<ActionKind> kind;

  bool matches(const SimAction& action) const;
};

struct AppEdge {
  std::string from;
  ActionMatcher matcher;
  std::string to;
};

// Scripted screen-transition graph (.appgraph.json).
struct AppGraph {
  std::map<std::string, ScreenLayout> screens;
  std::vector<AppEdge> edges;
  std::string initial_screen;

  // First-declared matching edge, or nullptr.
  const AppEdge* find_edge(const std::string& from, const SimAction& action) const;

  // Throws InvalidGraph.
  static AppGraph from_json(const nlohmann::json& j);
  static AppGraph load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

// Deterministic offline predictor driven by an AppGraph. The current screen
// is recognized by rendering every graph screen at the input resolution and
// comparing pixels; the prior layout's screen_id is the fallback.
class RuleBasedPredictor final : public LayoutPredictor {
 public:
  explicit RuleBasedPredictor(AppGraph graph, Theme theme = light_theme());
  std::string name() const override;
  ScreenLayout predict(const Image& image, const SimAction& action,
                       const std::optional<ScreenLayout>& prior_layout) const override;

  const AppGraph& graph() const { return graph_; }
  std::optional<std::string> recognize(const Image& image) const;

 private:
  AppGraph graph_;
  Theme theme_;
  mutable std::mutex mu_;
  // (width, height) -> pixel digest -> screen id
  mutable std::map<std::pair<int, int>, std::map<std::string, std::string>> index_;
};

// Stage 1. Rejects backend output that is not a valid layout.
ScreenLayout predict_layout(const LayoutPredictor& backend, const Image& image,
                            const SimAction& action,
                            const std::optional<ScreenLayout>& prior_layout = std::nullopt);

// Stage 2.
Image render_state(const ScreenRenderer& backend, const ScreenLayout& layout);

struct StepOptions {
  // Forward the current layout to the predictor as a hint.
  bool pass_prior_layout = false;
};

// Runs both stages; stage errors are rethrown tagged "layout" or "render".
SimState step(const LayoutPredictor& predictor, const ScreenRenderer& renderer,
              const SimState& current, const SimAction& action, const StepOptions& options = {});

}  // namespace uisim
