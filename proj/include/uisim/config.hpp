#pragma once

// Service configuration. Precedence: command-line flags > environment >
// config file > defaults.
//
// Config file (TOML subset: [tables], key = "string" | integer | float |
// true/false, # comments):
//
//   [server]
//   host = "127.0.0.1"
//   port = 8080
//   cors_origin = "*"
//   [store]
//   dir = "uisim-store"
//   [backends]
//   predictor = "rule:data/demo.appgraph.json"
//   renderer = "builtin"
//   embedder = "http://localhost:9003"
//   [render]
//   theme = "light"
//   width = 1080
//   height = 2400
//   [timeouts]
//   layout_ms = 60000
//   render_ms = 60000
//   [sessions]
//   max_cached = 64
//   pass_prior_layout = false
//
// Environment: UISIM_HOST, UISIM_PORT, UISIM_STORE_DIR, UISIM_PREDICTOR_URL,
// UISIM_RENDERER_URL, UISIM_EMBEDDER_URL, UISIM_THEME.

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>

#include "uisim/raster.hpp"
#include "uisim/transition.hpp"

namespace uisim {

using TomlValue = std::variant<std::string, long long, double, bool>;
// Keys are "table.key".
using TomlTable = std::map<std::string, TomlValue>;

// Throws ConfigError with the offending line.
TomlTable parse_toml_subset(const std::string& text);

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string cors_origin = "*";
  std::filesystem::path store_dir = "uisim-store";
  std::string predictor = "rule:demo";
  std::string renderer = "builtin";
  std::string embedder;
  std::string theme = "light";
  int width = kDefaultWidth;
  int height = kDefaultHeight;
  std::chrono::milliseconds layout_timeout = kDefaultStageTimeout;
  std::chrono::milliseconds render_timeout = kDefaultStageTimeout;
  std::size_t max_cached_sessions = 64;
  bool pass_prior_layout = false;

  // Throws ConfigError. Port 0 (ephemeral) is accepted for tests.
  void validate() const;

  void apply_toml(const TomlTable& table);
  void apply_env(const std::function<std::optional<std::string>(const std::string&)>& getenv);
  void apply_process_env();
};

ServiceConfig load_config_file(const std::filesystem::path& path, ServiceConfig base = {});

// Path of the bundled demo AppGraph.
std::filesystem::path demo_appgraph_path();

// "rule:<graph.json>" ("rule:demo" for the bundled graph), "remote:<url>" or
// a bare http:// URL.
std::shared_ptr<const LayoutPredictor> make_predictor(const std::string& spec, const Theme& theme,
                                                      std::chrono::milliseconds timeout);
// "builtin" or "remote:<url>" / bare http:// URL.
std::shared_ptr<const ScreenRenderer> make_renderer(const std::string& spec, const Theme& theme,
                                                    int width, int height,
                                                    std::chrono::milliseconds timeout);

}  // namespace uisim
