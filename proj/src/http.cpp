#include <httplib.h>

#include "kgroute/http.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <regex>
#include <thread>

#include "kgroute/error.hpp"

namespace kgroute::http {

Url parse_url(const std::string& url) {
  static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) throw ConfigError("malformed endpoint URL '" + url + "'");
  return Url{m[1].str(), m[2].matched ? m[2].str() : "/"};
}

Response post_json(const std::string& url, const std::string& body,
                   const std::map<std::string, std::string>& headers,
                   std::chrono::milliseconds timeout) {
  const Url u = parse_url(url);
  httplib::Client client(u.scheme_host_port);
  const auto secs = timeout.count() / 1000;
  const auto usecs = (timeout.count() % 1000) * 1000;
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  httplib::Headers h;
  for (const auto& [k, v] : headers) h.emplace(k, v);
  auto res = client.Post(u.path, h, body, "application/json");
  if (!res) {
    throw TransportError("request to " + url + " failed: " + httplib::to_string(res.error()), true);
  }
  return Response{res->status, res->body};
}

void raise_for_status(const Response& r, const std::string& provider) {
  const bool retryable = r.status == 429 || r.status >= 500;
  throw TransportError(provider + " returned HTTP " + std::to_string(r.status) + ": " + r.body,
                       retryable);
}

std::string with_retries(const RetryPolicy& policy, const std::function<std::string()>& attempt) {
  auto backoff = policy.initial_backoff;
  for (int i = 1;; ++i) {
    try {
      return attempt();
    } catch (const TransportError& e) {
      if (!e.retryable()) throw;
      if (i >= policy.max_attempts) {
        throw TransportError(std::string(e.what()) + " (gave up after " + std::to_string(i) +
                                 " attempts)",
                             false);
      }
    }
    std::this_thread::sleep_for(backoff);
    backoff *= 2;
  }
}

void atomic_write(const std::string& path, const std::string& content) {
  static std::atomic<unsigned> counter{0};
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp." +
                       std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id())) +
                       "." + std::to_string(counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out << content;
    if (!out) throw Error("short write to '" + tmp.string() + "'");
  }
  fs::rename(tmp, target);
}

}  // namespace kgroute::http
