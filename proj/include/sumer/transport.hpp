// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <memory>
#include <mutex>
#include <semaphore>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace sumer {

using nlohmann::json;

/// Blocking JSON-over-POST request/response. Implementations are safe to call
/// from many threads at once.
class Transport {
 public:
  virtual ~Transport() = default;
  /// Throws InfrastructureError once the retry budget is spent.
  virtual json post(const std::string& path, const json& body) = 0;
};

struct HttpConfig {
  std::string base_url;  // "http://host:port" with optional path prefix
  std::string api_key;   // sent as a Bearer token when non-empty
  double timeout_seconds = 120.0;
  int max_retries = 3;
  double initial_backoff_seconds = 0.5;
  int max_in_flight = 8;
};

/// Caps the number of simultaneous requests with a counting semaphore.
class InFlightLimiter {
 public:
  explicit InFlightLimiter(int max_in_flight);

  class Slot {
   public:
    explicit Slot(InFlightLimiter& owner);
    ~Slot();
    Slot(const Slot&) = delete;
    Slot& operator=(const Slot&) = delete;

   private:
    InFlightLimiter& owner_;
  };

  int limit() const { return limit_; }

 private:
  int limit_;
  std::counting_semaphore<1 << 20> slots_;
};

/// OpenAI-style HTTP client with exponential backoff on transport errors,
/// HTTP 429 and 5xx.
class HttpTransport final : public Transport {
 public:
  explicit HttpTransport(HttpConfig config);
  json post(const std::string& path, const json& body) override;

 private:
  HttpConfig config_;
  std::string scheme_host_port_;
  std::string path_prefix_;
  InFlightLimiter limiter_;
};

/// One recorded exchange. In "subset" mode every object key in `request`
/// must match the actual request recursively, every array element must match
/// some element of the actual array, and strings match by substring.
/// "exact" requires equality.
struct RecordedExchange {
  std::string path;
  json request;
  std::string match = "subset";
  json response;
};

/// Offline replay of recorded exchanges: first matching entry wins.
class ReplayTransport final : public Transport {
 public:
  explicit ReplayTransport(std::vector<RecordedExchange> exchanges, int max_in_flight = 64);
  /// Fixture file: {"exchanges": [{"path", "request", "match", "response"}, ...]}
  static std::unique_ptr<ReplayTransport> from_file(const std::filesystem::path& path);

  json post(const std::string& path, const json& body) override;

  std::size_t calls() const { return calls_.load(); }

 private:
  std::vector<RecordedExchange> exchanges_;
  InFlightLimiter limiter_;
  std::atomic<std::size_t> calls_{0};
};

/// Wraps another transport and keeps every exchange for writing a fixture.
class RecordingTransport final : public Transport {
 public:
  explicit RecordingTransport(Transport& inner) : inner_(inner) {}
  json post(const std::string& path, const json& body) override;
  void save(const std::filesystem::path& path) const;

 private:
  Transport& inner_;
  mutable std::mutex mutex_;
  std::vector<RecordedExchange> exchanges_;
};

bool json_subset_match(const json& pattern, const json& actual);

}  // namespace sumer
