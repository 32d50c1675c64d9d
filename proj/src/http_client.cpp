#include "uisim/http_client.hpp"

#include <httplib.h>

#include "uisim/error.hpp"

namespace uisim {

JsonHttpClient::JsonHttpClient(const std::string& base_url, std::chrono::milliseconds timeout,
                               std::map<std::string, std::string> headers)
    : base_url_(base_url), timeout_(timeout), headers_(std::move(headers)) {
  constexpr std::string_view kScheme = "http://";
  if (base_url.rfind(kScheme, 0) != 0 || base_url.size() == kScheme.size())
    throw Error(ErrorCode::kConfigError, "backend URL must start with http://: " + base_url);
  const auto slash = base_url.find('/', kScheme.size());
  origin_ = base_url.substr(0, slash);
  if (slash != std::string::npos) {
    prefix_ = base_url.substr(slash);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  }
  if (timeout_.count() <= 0) throw Error(ErrorCode::kConfigError, "timeout must be positive");
}

JsonHttpClient::~JsonHttpClient() = default;

std::unique_ptr<httplib::Client> JsonHttpClient::acquire() const {
  {
    std::lock_guard lock(mu_);
    if (!pool_.empty()) {
      auto c = std::move(pool_.back());
      pool_.pop_back();
      return c;
    }
  }
  auto c = std::make_unique<httplib::Client>(origin_);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
  c->set_connection_timeout(secs.count(), usecs.count());
  c->set_read_timeout(secs.count(), usecs.count());
  c->set_write_timeout(secs.count(), usecs.count());
  c->set_keep_alive(true);
  httplib::Headers h;
  for (const auto& [k, v] : headers_) h.emplace(k, v);
  c->set_default_headers(std::move(h));
  return c;
}

void JsonHttpClient::release(std::unique_ptr<httplib::Client> client) const {
  std::lock_guard lock(mu_);
  if (pool_.size() < 8) pool_.push_back(std::move(client));
}

namespace {

JsonHttpClient::Response to_response(const httplib::Response& r) {
  JsonHttpClient::Response out;
  out.status = r.status;
  out.body = r.body;
  out.json = nlohmann::json::parse(r.body, nullptr, /*allow_exceptions=*/false);
  if (out.json.is_discarded()) out.json = nullptr;
  return out;
}

}  // namespace

std::optional<JsonHttpClient::Response> JsonHttpClient::post(const std::string& path,
                                                             const nlohmann::json& body) const {
  auto client = acquire();
  auto res = client->Post(prefix_ + path, body.dump(), "application/json");
  if (!res) return std::nullopt;
  auto out = to_response(res.value());
  release(std::move(client));
  return out;
}

std::optional<JsonHttpClient::Response> JsonHttpClient::get(const std::string& path) const {
  auto client = acquire();
  auto res = client->Get(prefix_ + path);
  if (!res) return std::nullopt;
  auto out = to_response(res.value());
  release(std::move(client));
  return out;
}

bool JsonHttpClient::reachable() const {
  const auto r = get("/healthz");
  return r && r->status == 200;
}

}  // namespace uisim
