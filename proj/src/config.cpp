#include "uisim/config.hpp"

#include <cctype>
#include <cerrno>
#include <cstdlib>
#include <sstream>

#include "uisim/codec.hpp"
#include "uisim/error.hpp"

#ifndef UISIM_DATA_DIR
#define UISIM_DATA_DIR "data"
#endif

namespace uisim {
namespace {

Error config_error(const std::string& msg) { return Error(ErrorCode::kConfigError, msg); }

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') return false;
  return true;
}

// Parses the value at the start of `s`; `rest` receives what follows it.
TomlValue parse_value(const std::string& s, std::string& rest) {
  if (s.empty()) throw config_error("missing value");
  if (s[0] == '"') {
    std::string out;
    std::size_t i = 1;
    for (; i < s.size() && s[i] != '"'; ++i) {
      if (s[i] != '\\') {
        out += s[i];
        continue;
      }
      if (++i >= s.size()) break;
      switch (s[i]) {
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        default: throw config_error(std::string("unsupported escape \\") + s[i]);
      }
    }
    if (i >= s.size()) throw config_error("unterminated string");
    rest = s.substr(i + 1);
    return out;
  }
  if (s[0] == '\'') {
    const auto end = s.find('\'', 1);
    if (end == std::string::npos) throw config_error("unterminated string");
    rest = s.substr(end + 1);
    return s.substr(1, end - 1);
  }
  const auto hash = s.find('#');
  const std::string token = trim(s.substr(0, hash));
  rest = hash == std::string::npos ? "" : s.substr(hash);
  if (token == "true") return true;
  if (token == "false") return false;
  std::string digits;
  for (char c : token)
    if (c != '_') digits += c;
  if (digits.empty()) throw config_error("missing value");
  const char* begin = digits.c_str();
  char* end = nullptr;
  const bool is_float = digits.find_first_of(".eE") != std::string::npos;
  if (!is_float) {
    errno = 0;
    const long long v = std::strtoll(begin, &end, 10);
    if (*end == '\0' && errno == 0) return v;
  } else {
    const double v = std::strtod(begin, &end);
    if (*end == '\0') return v;
  }
  throw config_error("unsupported value '" + token + "'");
}

std::string as_string(const TomlValue& v, const std::string& key) {
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  throw config_error(key + " must be a string");
}

long long as_int(const TomlValue& v, const std::string& key) {
  if (const auto* i = std::get_if<long long>(&v)) return *i;
  throw config_error(key + " must be an integer");
}

bool as_bool(const TomlValue& v, const std::string& key) {
  if (const auto* b = std::get_if<bool>(&v)) return *b;
  throw config_error(key + " must be true or false");
}

long long parse_env_int(const std::string& name, const std::string& value) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(value, &used);
    if (used == value.size()) return v;
  } catch (const std::exception&) {
  }
  throw config_error(name + " must be an integer, got '" + value + "'");
}

std::optional<std::string> remote_url(const std::string& spec) {
  if (spec.rfind("remote:", 0) == 0) return spec.substr(7);
  if (spec.rfind("http://", 0) == 0) return spec;
  return std::nullopt;
}

}  // namespace

TomlTable parse_toml_subset(const std::string& text) {
  TomlTable out;
  std::istringstream in(text);
  std::string line, table;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    try {
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      if (t[0] == '[') {
        const auto close = t.find(']');
        if (close == std::string::npos) throw config_error("unterminated table header");
        const std::string after = trim(t.substr(close + 1));
        if (!after.empty() && after[0] != '#') throw config_error("text after table header");
        table = trim(t.substr(1, close - 1));
        if (!valid_key(table)) throw config_error("bad table name '" + table + "'");
        continue;
      }
      const auto eq = t.find('=');
      if (eq == std::string::npos) throw config_error("expected key = value");
      const std::string key = trim(t.substr(0, eq));
      if (!valid_key(key)) throw config_error("bad key '" + key + "'");
      std::string rest;
      TomlValue value = parse_value(trim(t.substr(eq + 1)), rest);
      rest = trim(rest);
      if (!rest.empty() && rest[0] != '#') throw config_error("text after value");
      const std::string full = table.empty() ? key : table + "." + key;
      if (!out.emplace(full, std::move(value)).second) throw config_error("duplicate key " + full);
    } catch (const Error& e) {
      throw config_error("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void ServiceConfig::validate() const {
  if (port < 0 || port > 65535) throw config_error("port must be in [1, 65535]");
  if (host.empty()) throw config_error("host must not be empty");
  if (layout_timeout.count() <= 0 || render_timeout.count() <= 0)
    throw config_error("timeouts must be positive");
  if (width < kMinResolution || width > kMaxResolution || height < kMinResolution ||
      height > kMaxResolution)
    throw config_error("resolution " + std::to_string(width) + "x" + std::to_string(height) +
                       " outside [" + std::to_string(kMinResolution) + ", " +
                       std::to_string(kMaxResolution) + "]");
  if (max_cached_sessions == 0) throw config_error("max_cached must be at least 1");
  if (predictor.empty() || renderer.empty()) throw config_error("backends must be set");
  theme_by_name(theme);
}

void ServiceConfig::apply_toml(const TomlTable& table) {
  for (const auto& [key, v] : table) {
    if (key == "server.host") host = as_string(v, key);
    else if (key == "server.port") port = static_cast<int>(as_int(v, key));
    else if (key == "server.cors_origin") cors_origin = as_string(v, key);
    else if (key == "store.dir") store_dir = as_string(v, key);
    else if (key == "backends.predictor") predictor = as_string(v, key);
    else if (key == "backends.renderer") renderer = as_string(v, key);
    else if (key == "backends.embedder") embedder = as_string(v, key);
    else if (key == "render.theme") theme = as_string(v, key);
    else if (key == "render.width") width = static_cast<int>(as_int(v, key));
    else if (key == "render.height") height = static_cast<int>(as_int(v, key));
    else if (key == "timeouts.layout_ms") layout_timeout = std::chrono::milliseconds(as_int(v, key));
    else if (key == "timeouts.render_ms") render_timeout = std::chrono::milliseconds(as_int(v, key));
    else if (key == "sessions.max_cached") {
      const long long n = as_int(v, key);
      if (n < 1) throw config_error("sessions.max_cached must be at least 1");
      max_cached_sessions = static_cast<std::size_t>(n);
    } else if (key == "sessions.pass_prior_layout") pass_prior_layout = as_bool(v, key);
    else throw config_error("unknown config key " + key);
  }
}

void ServiceConfig::apply_env(
    const std::function<std::optional<std::string>(const std::string&)>& getenv) {
  if (auto v = getenv("UISIM_HOST")) host = *v;
  if (auto v = getenv("UISIM_PORT")) port = static_cast<int>(parse_env_int("UISIM_PORT", *v));
  if (auto v = getenv("UISIM_STORE_DIR")) store_dir = *v;
  if (auto v = getenv("UISIM_PREDICTOR_URL")) predictor = *v;
  if (auto v = getenv("UISIM_RENDERER_URL")) renderer = *v;
  if (auto v = getenv("UISIM_EMBEDDER_URL")) embedder = *v;
  if (auto v = getenv("UISIM_THEME")) theme = *v;
}

void ServiceConfig::apply_process_env() {
  apply_env([](const std::string& name) -> std::optional<std::string> {
    const char* v = std::getenv(name.c_str());
    if (v == nullptr || *v == '\0') return std::nullopt;
    return std::string(v);
  });
}

ServiceConfig load_config_file(const std::filesystem::path& path, ServiceConfig base) {
  std::string text;
  try {
    text = read_file_text(path);
  } catch (const Error&) {
    throw config_error("cannot read config file " + path.string());
  }
  base.apply_toml(parse_toml_subset(text));
  return base;
}

std::filesystem::path demo_appgraph_path() {
  if (const char* dir = std::getenv("UISIM_DATA_DIR"); dir != nullptr && *dir != '\0')
    return std::filesystem::path(dir) / "demo.appgraph.json";
  return std::filesystem::path(UISIM_DATA_DIR) / "demo.appgraph.json";
}

std::shared_ptr<const LayoutPredictor> make_predictor(const std::string& spec, const Theme& theme,
                                                      std::chrono::milliseconds timeout) {
  if (auto url = remote_url(spec)) return std::make_shared<RemotePredictor>(*url, timeout);
  if (spec.rfind("rule:", 0) == 0) {
    const std::string path = spec.substr(5);
    if (path.empty()) throw config_error("rule predictor needs a graph path");
    return std::make_shared<RuleBasedPredictor>(
        AppGraph::load(path == "demo" ? demo_appgraph_path() : std::filesystem::path(path)), theme);
  }
  throw config_error("unknown predictor '" + spec + "' (expected rule:<graph>, remote:<url> or http://...)");
}

std::shared_ptr<const ScreenRenderer> make_renderer(const std::string& spec, const Theme& theme,
                                                    int width, int height,
                                                    std::chrono::milliseconds timeout) {
  if (spec == "builtin") return std::make_shared<BuiltinRenderer>(theme, width, height);
  if (auto url = remote_url(spec)) return std::make_shared<RemoteRenderer>(*url, width, height, timeout);
  throw config_error("unknown renderer '" + spec + "' (expected builtin, remote:<url> or http://...)");
}

}  // namespace uisim
