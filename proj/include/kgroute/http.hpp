#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <string>

namespace kgroute::http {

struct Response {
  int status = 0;
  std::string body;
};

struct Url {
  std::string scheme_host_port;  // e.g. "https://api.example.com:443"
  std::string path;              // e.g. "/v1/embeddings"
};

// Splits "http[s]://host[:port]/path". Throws ConfigError on anything else.
Url parse_url(const std::string& url);

// POSTs a JSON body. Throws TransportError(retryable) on connection failure;
// HTTP error statuses are returned, not thrown.
Response post_json(const std::string& url, const std::string& body,
                   const std::map<std::string, std::string>& headers,
                   std::chrono::milliseconds timeout);

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{200};
};

// Calls `attempt` until it succeeds. TransportErrors marked retryable are
// retried with exponential backoff; the last error is rethrown as a
// non-retryable TransportError.
std::string with_retries(const RetryPolicy& policy, const std::function<std::string()>& attempt);

// Maps an HTTP status to an exception: 429/5xx retryable, other 4xx not.
[[noreturn]] void raise_for_status(const Response& r, const std::string& provider);

// Writes `content` to `path` via a temp file and rename.
void atomic_write(const std::string& path, const std::string& content);

}  // namespace kgroute::http
