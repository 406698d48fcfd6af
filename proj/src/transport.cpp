// SPDX-License-Identifier: Apache-2.0
#include "sumer/transport.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <thread>

#include "sumer/errors.hpp"
#include "sumer/util.hpp"

namespace sumer {

InFlightLimiter::InFlightLimiter(int max_in_flight) : limit_(max_in_flight), slots_(max_in_flight) {
  if (max_in_flight < 1) throw ValidationError("max in-flight requests must be at least 1");
}

InFlightLimiter::Slot::Slot(InFlightLimiter& owner) : owner_(owner) { owner_.slots_.acquire(); }
InFlightLimiter::Slot::~Slot() { owner_.slots_.release(); }

HttpTransport::HttpTransport(HttpConfig config) : config_(std::move(config)), limiter_(config_.max_in_flight) {
  const auto scheme_end = config_.base_url.find("://");
  if (scheme_end == std::string::npos) throw ValidationError("base URL needs a scheme: " + config_.base_url);
  const auto path_start = config_.base_url.find('/', scheme_end + 3);
  scheme_host_port_ = config_.base_url.substr(0, path_start);
  if (path_start != std::string::npos) {
    path_prefix_ = config_.base_url.substr(path_start);
    while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
  }
}

json HttpTransport::post(const std::string& path, const json& body) {
  InFlightLimiter::Slot slot(limiter_);
  const auto payload = body.dump();
  const auto full_path = path_prefix_ + path;
  std::string last_error;
  auto backoff = config_.initial_backoff_seconds;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) {
      spdlog::warn("POST {}{} failed ({}); retry {}/{} in {:.2f}s", scheme_host_port_, full_path, last_error, attempt,
                   config_.max_retries, backoff);
      std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
      backoff *= 2.0;
    }
    // httplib::Client is not safe for concurrent use; one per request.
    httplib::Client client(scheme_host_port_);
    const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
        std::chrono::duration<double>(config_.timeout_seconds));
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    httplib::Headers headers;
    if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);
    auto res = client.Post(full_path, headers, payload, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      throw InfrastructureError("POST " + full_path + " returned HTTP " + std::to_string(res->status) + ": " +
                                res->body.substr(0, 500));
    }
    try {
      return json::parse(res->body);
    } catch (const json::parse_error& e) {
      throw InfrastructureError("POST " + full_path + " returned invalid JSON: " + e.what());
    }
  }
  throw InfrastructureError("POST " + scheme_host_port_ + full_path + " failed after " +
                            std::to_string(config_.max_retries + 1) + " attempts: " + last_error);
}

bool json_subset_match(const json& pattern, const json& actual) {
  if (pattern.is_object()) {
    if (!actual.is_object()) return false;
    for (const auto& [key, value] : pattern.items()) {
      if (!actual.contains(key) || !json_subset_match(value, actual[key])) return false;
    }
    return true;
  }
  if (pattern.is_array()) {
    if (!actual.is_array()) return false;
    for (const auto& p : pattern) {
      bool found = false;
      for (const auto& a : actual) {
        if (json_subset_match(p, a)) {
          found = true;
          break;
        }
      }
      if (!found) return false;
    }
    return true;
  }
  if (pattern.is_string()) {
    return actual.is_string() && actual.get<std::string>().find(pattern.get<std::string>()) != std::string::npos;
  }
  return pattern == actual;
}

ReplayTransport::ReplayTransport(std::vector<RecordedExchange> exchanges, int max_in_flight)
    : exchanges_(std::move(exchanges)), limiter_(max_in_flight) {}

std::unique_ptr<ReplayTransport> ReplayTransport::from_file(const std::filesystem::path& path) {
  json root;
  try {
    root = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError("fixture " + path.string() + ": " + e.what());
  }
  std::vector<RecordedExchange> exchanges;
  for (const auto& e : root.at("exchanges")) {
    exchanges.push_back({e.value("path", ""), e.value("request", json::object()), e.value("match", "subset"),
                         e.at("response")});
  }
  return std::make_unique<ReplayTransport>(std::move(exchanges));
}

json ReplayTransport::post(const std::string& path, const json& body) {
  InFlightLimiter::Slot slot(limiter_);
  ++calls_;
  for (const auto& e : exchanges_) {
    if (!e.path.empty() && e.path != path) continue;
    const bool hit = e.match == "exact" ? e.request == body : json_subset_match(e.request, body);
    if (hit) return e.response;
  }
  throw InfrastructureError("replay: no recorded exchange matches POST " + path);
}

json RecordingTransport::post(const std::string& path, const json& body) {
  auto response = inner_.post(path, body);
  std::lock_guard lock(mutex_);
  exchanges_.push_back({path, body, "exact", response});
  return response;
}

void RecordingTransport::save(const std::filesystem::path& path) const {
  json list = json::array();
  {
    std::lock_guard lock(mutex_);
    for (const auto& e : exchanges_) {
      list.push_back({{"path", e.path}, {"request", e.request}, {"match", e.match}, {"response", e.response}});
    }
  }
  write_file_atomic(path, json{{"exchanges", list}}.dump(2) + "\n");
}

}  // namespace sumer
