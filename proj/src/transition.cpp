#include "uisim/transition.hpp"

#include <array>
#include <cctype>

#include "uisim/codec.hpp"
#include "uisim/error.hpp"

namespace uisim {
namespace {

constexpr std::array<std::string_view, 7> kKindNames = {"TAP",  "TYPE", "SCROLL", "OPEN_APP",
                                                        "BACK", "HOME", "OTHER"};

// " w1 w2 ... " over lowercase alphanumeric words, for whole-word lookup.
std::string word_string(std::string_view text) {
  std::string out = " ";
  bool in_word = false;
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u) || u >= 0x80) {
      out.push_back(static_cast<char>(std::tolower(u)));
      in_word = true;
    } else if (in_word) {
      out.push_back(' ');
      in_word = false;
    }
  }
  if (in_word) out.push_back(' ');
  return out;
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since)
      .count();
}

Error graph_error(const std::string& msg) { return Error(ErrorCode::kInvalidGraph, msg); }

std::string pixel_digest(const Image& image) { return sha256_hex(image.pixels); }

}  // namespace

std::string_view action_kind_name(ActionKind kind) {
  return kKindNames[static_cast<std::size_t>(kind)];
}

std::optional<ActionKind> action_kind_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kKindNames.size(); ++i)
    if (kKindNames[i] == name) return static_cast<ActionKind>(i);
  return std::nullopt;
}

void SimAction::validate() const {
  if (text.empty()) throw Error(ErrorCode::kInvalidAction, "action text must not be empty");
  if (kind == ActionKind::kTap && !point)
    throw Error(ErrorCode::kInvalidAction, "TAP action requires a point");
  if (kind == ActionKind::kType && !typed_text)
    throw Error(ErrorCode::kInvalidAction, "TYPE action requires typed_text");
  if (point && !(point->x >= 0 && point->x <= 1 && point->y >= 0 && point->y <= 1))
    throw Error(ErrorCode::kInvalidAction, "action point must be normalized to [0,1]");
}

nlohmann::json action_to_json(const SimAction& action) {
  nlohmann::json j = {{"text", action.text}};
  j["kind"] = action.kind ? nlohmann::json(std::string(action_kind_name(*action.kind)))
                          : nlohmann::json();
  j["point"] = action.point ? nlohmann::json::array({action.point->x, action.point->y})
                            : nlohmann::json();
  j["typed_text"] = action.typed_text ? nlohmann::json(*action.typed_text) : nlohmann::json();
  return j;
}

SimAction action_from_json(const nlohmann::json& j) {
  SimAction a;
  try {
    if (j.is_string()) {
      a.text = j.get<std::string>();
    } else {
      a.text = j.at("text").get<std::string>();
      if (j.contains("kind") && !j["kind"].is_null()) {
        const auto name = j["kind"].get<std::string>();
        a.kind = action_kind_from_name(name);
        if (!a.kind) throw Error(ErrorCode::kInvalidAction, "unknown action kind '" + name + "'");
      }
      if (j.contains("point") && !j["point"].is_null()) {
        const auto& p = j["point"];
        if (!p.is_array() || p.size() != 2)
          throw Error(ErrorCode::kInvalidAction, "point must be [x, y]");
        a.point = Point{p[0].get<double>(), p[1].get<double>()};
      }
      if (j.contains("typed_text") && !j["typed_text"].is_null())
        a.typed_text = j["typed_text"].get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidAction, std::string("malformed action: ") + e.what());
  }
  a.validate();
  return a;
}

bool same_state(const SimState& a, const SimState& b) {
  return a.layout == b.layout && a.image == b.image && a.action_taken == b.action_taken &&
         a.backend_info == b.backend_info;
}

// ---------------------------------------------------------------------------
// Renderers

BuiltinRenderer::BuiltinRenderer(Theme theme, int width, int height)
    : theme_(std::move(theme)), width_(width), height_(height) {
  validate_theme(theme_);
  if (width < kMinResolution || width > kMaxResolution || height < kMinResolution ||
      height > kMaxResolution)
    throw Error(ErrorCode::kResolutionError, "renderer resolution outside [16, 4096]");
}

std::string BuiltinRenderer::name() const {
  return "builtin:" + theme_.name + "@" + std::to_string(width_) + "x" + std::to_string(height_);
}

Image BuiltinRenderer::render(const ScreenLayout& layout) const {
  return uisim::render(layout, theme_, width_, height_);
}

RemoteRenderer::RemoteRenderer(const std::string& base_url, int width, int height,
                               std::chrono::milliseconds timeout)
    : client_(base_url, timeout), width_(width), height_(height) {}

std::string RemoteRenderer::name() const { return "remote:" + client_.base_url(); }

Image RemoteRenderer::render(const ScreenLayout& layout) const {
  const nlohmann::json req = {
      {"layout_dsl", serialize_layout(layout)}, {"width", width_}, {"height", height_}};
  const auto res = client_.post("/v1/render", req);
  if (!res)
    throw Error(ErrorCode::kBackendUnavailable, "renderer unreachable: " + client_.base_url());
  if (res->status != 200)
    throw Error(ErrorCode::kBackendUnavailable,
                "renderer answered HTTP " + std::to_string(res->status), res->body);
  if (!res->json.is_object() || !res->json.contains("image_png_base64") ||
      !res->json["image_png_base64"].is_string())
    throw Error(ErrorCode::kInvalidImage, "renderer response lacks image_png_base64", res->body);
  std::vector<std::uint8_t> png;
  try {
    png = base64_decode(res->json["image_png_base64"].get<std::string>());
  } catch (const Error& e) {
    throw Error(ErrorCode::kInvalidImage, std::string("renderer payload: ") + e.what());
  }
  return decode_png(png);
}

// ---------------------------------------------------------------------------
// Predictors

RemotePredictor::RemotePredictor(const std::string& base_url, std::chrono::milliseconds timeout)
    : client_(base_url, timeout) {}

std::string RemotePredictor::name() const { return "remote:" + client_.base_url(); }

nlohmann::json RemotePredictor::metadata() const {
  std::lock_guard lock(mu_);
  return metadata_;
}

ScreenLayout RemotePredictor::predict(const Image& image, const SimAction& action,
                                      const std::optional<ScreenLayout>& prior_layout) const {
  nlohmann::json req = {{"image_png_base64", base64_encode(encode_png(image))},
                        {"action_text", action.text}};
  if (prior_layout) req["prior_layout_dsl"] = serialize_layout(*prior_layout);
  const auto res = client_.post("/v1/predict_layout", req);
  if (!res)
    throw Error(ErrorCode::kBackendUnavailable, "predictor unreachable: " + client_.base_url());
  if (res->status != 200)
    throw Error(ErrorCode::kBackendUnavailable,
                "predictor answered HTTP " + std::to_string(res->status), res->body);
  if (!res->json.is_object() || !res->json.contains("layout_dsl") ||
      !res->json["layout_dsl"].is_string())
    throw Error(ErrorCode::kInvalidPrediction, "predictor response lacks layout_dsl", res->body);
  if (res->json.contains("model")) {
    std::lock_guard lock(mu_);
    metadata_ = res->json["model"];
  }
  const auto dsl = res->json["layout_dsl"].get<std::string>();
  try {
    ScreenLayout layout = parse_layout(dsl);
    layout.source = LayoutSource::kPredicted;
    return layout;
  } catch (const Error& e) {
    throw Error(ErrorCode::kInvalidPrediction, std::string("unparseable prediction: ") + e.what(),
                dsl);
  }
}

bool ActionMatcher::matches(const SimAction& action) const {
  if (!keywords.empty()) {
    const auto words = word_string(action.text);
    bool all = true;
    for (const auto& kw : keywords) {
      if (words.find(word_string(kw)) == std::string::npos) {
        all = false;
        break;
      }
    }
    if (all) return true;
  }
  if (tap_region && action.kind == ActionKind::kTap && action.point) {
    const auto& r = *tap_region;
    if (action.point->x >= r.x0 && action.point->x <= r.x1 && action.point->y >= r.y0 &&
        action.point->y <= r.y1)
      return true;
  }
  return kind && action.kind == kind;
}

const AppEdge* AppGraph::find_edge(const std::string& from, const SimAction& action) const {
  for (const auto& e : edges)
    if (e.from == from && e.matcher.matches(action)) return &e;
  return nullptr;
}

AppGraph AppGraph::from_json(const nlohmann::json& j) {
  AppGraph g;
  try {
    if (j.value("schema_version", 1) != 1) throw graph_error("unsupported schema_version");
    for (const auto& [id, dsl] : j.at("screens").items()) {
      ScreenLayout layout;
      try {
        layout = parse_layout(dsl.get<std::string>());
      } catch (const Error& e) {
        throw graph_error("screen '" + id + "': " + e.what());
      }
      layout.source = LayoutSource::kScripted;
      layout.screen_id = id;
      g.screens.emplace(id, std::move(layout));
    }
    if (g.screens.empty()) throw graph_error("graph has no screens");
    g.initial_screen = j.value("initial_screen", g.screens.begin()->first);
    if (!g.screens.count(g.initial_screen))
      throw graph_error("initial_screen '" + g.initial_screen + "' is not a screen");
    for (const auto& ej : j.value("edges", nlohmann::json::array())) {
      AppEdge e;
      e.from = ej.at("from").get<std::string>();
      e.to = ej.at("to").get<std::string>();
      if (!g.screens.count(e.from) || !g.screens.count(e.to))
        throw graph_error("edge " + e.from + " -> " + e.to + " references an unknown screen");
      if (ej.contains("keywords")) e.matcher.keywords = ej["keywords"].get<std::vector<std::string>>();
      if (ej.contains("tap")) {
        const auto t = ej["tap"].get<std::vector<double>>();
        if (t.size() != 4) throw graph_error("tap region must be [x0,y0,x1,y1]");
        e.matcher.tap_region = BoundingBox{t[0], t[1], t[2], t[3]};
        if (!e.matcher.tap_region->valid()) throw graph_error("tap region outside the unit square");
      }
      if (ej.contains("kind")) {
        e.matcher.kind = action_kind_from_name(ej["kind"].get<std::string>());
        if (!e.matcher.kind) throw graph_error("unknown action kind in edge");
      }
      if (e.matcher.keywords.empty() && !e.matcher.tap_region && !e.matcher.kind)
        throw graph_error("edge " + e.from + " -> " + e.to + " has no matcher");
      g.edges.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw graph_error(std::string("malformed app graph: ") + e.what());
  }
  return g;
}

AppGraph AppGraph::load(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file_text(path);
  } catch (const Error& e) {
    throw graph_error(e.what());
  }
  const auto j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw graph_error("app graph is not valid JSON: " + path.string());
  return from_json(j);
}

nlohmann::json AppGraph::to_json() const {
  nlohmann::json screens_j = nlohmann::json::object();
  for (const auto& [id, layout] : screens) {
    ScreenLayout plain = layout;
    plain.source = LayoutSource::kAnnotated;
    plain.screen_id.reset();
    screens_j[id] = serialize_layout(plain);
  }
  nlohmann::json edges_j = nlohmann::json::array();
  for (const auto& e : edges) {
    nlohmann::json ej = {{"from", e.from}, {"to", e.to}};
    if (!e.matcher.keywords.empty()) ej["keywords"] = e.matcher.keywords;
    if (e.matcher.tap_region) {
      const auto& r = *e.matcher.tap_region;
      ej["tap"] = {r.x0, r.y0, r.x1, r.y1};
    }
    if (e.matcher.kind) ej["kind"] = std::string(action_kind_name(*e.matcher.kind));
    edges_j.push_back(std::move(ej));
  }
  return {{"schema_version", 1},
          {"initial_screen", initial_screen},
          {"screens", std::move(screens_j)},
          {"edges", std::move(edges_j)}};
}

RuleBasedPredictor::RuleBasedPredictor(AppGraph graph, Theme theme)
    : graph_(std::move(graph)), theme_(std::move(theme)) {
  validate_theme(theme_);
}

std::string RuleBasedPredictor::name() const { return "rule:appgraph"; }

std::optional<std::string> RuleBasedPredictor::recognize(const Image& image) const {
  if (!image.valid() || image.width < kMinResolution || image.width > kMaxResolution ||
      image.height < kMinResolution || image.height > kMaxResolution)
    return std::nullopt;
  std::lock_guard lock(mu_);
  auto& index = index_[{image.width, image.height}];
  if (index.empty()) {
    // Reverse order so the first screen (by id) wins on identical renders.
    for (auto it = graph_.screens.rbegin(); it != graph_.screens.rend(); ++it)
      index[pixel_digest(uisim::render(it->second, theme_, image.width, image.height))] = it->first;
  }
  const auto hit = index.find(pixel_digest(image));
  if (hit == index.end()) return std::nullopt;
  return hit->second;
}

ScreenLayout RuleBasedPredictor::predict(const Image& image, const SimAction& action,
                                         const std::optional<ScreenLayout>& prior_layout) const {
  auto current = recognize(image);
  if (!current && prior_layout && prior_layout->screen_id &&
      graph_.screens.count(*prior_layout->screen_id))
    current = prior_layout->screen_id;
  if (!current) throw Error(ErrorCode::kNoTransition, "current screen is not in the app graph");
  const AppEdge* edge = graph_.find_edge(*current, action);
  if (edge == nullptr)
    throw Error(ErrorCode::kNoTransition,
                "no transition from '" + *current + "' for action '" + action.text + "'");
  return graph_.screens.at(edge->to);
}

// ---------------------------------------------------------------------------
// Engine

ScreenLayout predict_layout(const LayoutPredictor& backend, const Image& image,
                            const SimAction& action,
                            const std::optional<ScreenLayout>& prior_layout) {
  if (!image.valid()) throw Error(ErrorCode::kInvalidImage, "input image is invalid");
  action.validate();
  ScreenLayout layout = backend.predict(image, action, prior_layout);
  try {
    validate_layout(layout);
  } catch (const Error& e) {
    std::string raw;
    try {
      raw = serialize_layout(layout);
    } catch (...) {
    }
    throw Error(ErrorCode::kInvalidPrediction, std::string("invalid prediction: ") + e.what(),
                raw);
  }
  if (layout.source != LayoutSource::kScripted) layout.source = LayoutSource::kPredicted;
  return layout;
}

Image render_state(const ScreenRenderer& backend, const ScreenLayout& layout) {
  validate_layout(layout);
  Image image = backend.render(layout);
  if (!image.valid()) throw Error(ErrorCode::kInvalidImage, "renderer produced an invalid image");
  return image;
}

SimState step(const LayoutPredictor& predictor, const ScreenRenderer& renderer,
              const SimState& current, const SimAction& action, const StepOptions& options) {
  SimState next;
  next.action_taken = action;

  auto t0 = std::chrono::steady_clock::now();
  try {
    next.layout = predict_layout(predictor, current.image, action,
                                 options.pass_prior_layout ? std::optional(current.layout)
                                                           : std::nullopt);
  } catch (Error& e) {
    e.with_stage("layout");
    throw;
  }
  next.latency_ms.layout_ms = elapsed_ms(t0);

  t0 = std::chrono::steady_clock::now();
  try {
    next.image = render_state(renderer, next.layout);
  } catch (Error& e) {
    e.with_stage("render");
    throw;
  }
  next.latency_ms.render_ms = elapsed_ms(t0);

  next.backend_info = {predictor.name(), renderer.name(), predictor.metadata()};
  return next;
}

}  // namespace uisim
