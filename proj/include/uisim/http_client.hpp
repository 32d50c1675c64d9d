#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace httplib {
class Client;
}

namespace uisim {

// Pooled JSON-over-HTTP client for the remote backend protocol. Safe for
// concurrent use; each call borrows a keep-alive connection from the pool.
class JsonHttpClient {
 public:
  struct Response {
    int status = 0;
    std::string body;
    // Parsed body; null when the body is not JSON.
    nlohmann::json json;
  };

  // `base_url` is http://host[:port][/prefix]. Throws ConfigError on a
  // malformed URL.
  JsonHttpClient(const std::string& base_url, std::chrono::milliseconds timeout,
                 std::map<std::string, std::string> headers = {});
  ~JsonHttpClient();

  JsonHttpClient(const JsonHttpClient&) = delete;
  JsonHttpClient& operator=(const JsonHttpClient&) = delete;

  // Returns nullopt on transport failure (connect error, timeout).
  std::optional<Response> post(const std::string& path, const nlohmann::json& body) const;
  std::optional<Response> get(const std::string& path) const;

  // GET /healthz answered with 200.
  bool reachable() const;

  const std::string& base_url() const { return base_url_; }

 private:
  std::unique_ptr<httplib::Client> acquire() const;
  void release(std::unique_ptr<httplib::Client> client) const;

  std::string base_url_;
  std::string origin_;
  std::string prefix_;
  std::chrono::milliseconds timeout_;
  std::map<std::string, std::string> headers_;
  mutable std::mutex mu_;
  mutable std::vector<std::unique_ptr<httplib::Client>> pool_;
};

}  // namespace uisim
