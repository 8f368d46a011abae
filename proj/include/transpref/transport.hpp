#pragma once

#include <chrono>
#include <functional>
#include <future>
#include <string>
#include <thread>
#include <vector>

#include "transpref/common.hpp"

namespace transpref::transport {

// Raised for failures that are worth retrying (connection refused, non-2xx,
// child exited non-zero). Schema problems are ProtocolError and are fatal.
class TransportError : public Error {
 public:
  explicit TransportError(const std::string& msg) : Error("transport", msg) {}
};

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{500};
};

// Calls `fn` until it succeeds or `policy.attempts` TransportErrors have been
// seen; the backoff doubles after each failure. The last error is rethrown.
template <class F>
auto with_retry(const RetryPolicy& policy, F&& fn) -> decltype(fn()) {
  auto backoff = policy.initial_backoff;
  for (int attempt = 1;; ++attempt) {
    try {
      return fn();
    } catch (const TransportError&) {
      if (attempt >= policy.attempts) throw;
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
  }
}

// Splits [0, n) into at most `fanout` contiguous chunks, runs `fn(begin, end)`
// for each (concurrently when fanout > 1) and returns the per-chunk results in
// chunk order.
template <class F>
auto run_chunked(std::size_t n, std::size_t fanout, F&& fn)
    -> std::vector<decltype(fn(std::size_t{}, std::size_t{}))> {
  using R = decltype(fn(std::size_t{}, std::size_t{}));
  if (fanout == 0) fanout = 1;
  std::size_t chunks = std::min(fanout, std::max<std::size_t>(n, 1));
  std::vector<std::pair<std::size_t, std::size_t>> bounds;
  for (std::size_t c = 0; c < chunks; ++c)
    bounds.emplace_back(n * c / chunks, n * (c + 1) / chunks);

  std::vector<R> out;
  out.reserve(chunks);
  if (chunks == 1) {
    out.push_back(fn(bounds[0].first, bounds[0].second));
    return out;
  }
  std::vector<std::future<R>> futs;
  for (auto [b, e] : bounds)
    futs.push_back(std::async(std::launch::async, [&fn, b = b, e = e] { return fn(b, e); }));
  for (auto& f : futs) out.push_back(f.get());
  return out;
}

struct HttpEndpoint {
  std::string scheme_host_port;  // e.g. "http://127.0.0.1:8080"
  std::string path;              // e.g. "/translate"
};

HttpEndpoint parse_http_url(const std::string& url);

// POSTs a JSON body; returns the parsed JSON response. Connection failures and
// non-2xx statuses throw TransportError; an unparseable body throws
// ProtocolError.
json http_post_json(const std::string& url, const json& body,
                    std::chrono::seconds timeout = std::chrono::seconds(60));

// Runs `command` through /bin/sh with `input` on stdin and returns stdout.
// A spawn failure or non-zero exit status throws TransportError.
std::string run_subprocess(const std::string& command, const std::string& input);

}  // namespace transpref::transport
