#pragma once
// Binds an ApiService to cpp-httplib, plus the tick-driven scheduler loop that
// runs next to it.

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "httplib.h"
#include "mhbench/api.hpp"

namespace mhbench {

class HttpService {
 public:
  explicit HttpService(api::ApiService& api) : api_(api) {
    auto handler = [this](const httplib::Request& req, httplib::Response& res) { dispatch(req, res); };
    server_.Get(R"(/(models|leaderboard|benchmarks|compare|runs|schedules|health)(/.*)?)", handler);
    server_.Post(R"(/(runs|profile-answers|schedules)(/.*)?)", handler);
  }

  /// Serves static dashboard assets under /ui.
  bool mount_static(const std::filesystem::path& dir) { return server_.set_mount_point("/ui", dir.string()); }

  /// Binds to `port` (0 picks a free port) and returns the bound port.
  int bind(const std::string& host, int port) {
    if (port == 0) return server_.bind_to_any_port(host);
    return server_.bind_to_port(host, port) ? port : -1;
  }

  void listen_after_bind() { server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  void wait_until_ready() { server_.wait_until_ready(); }

 private:
  void dispatch(const httplib::Request& req, httplib::Response& res) {
    api::Request ar;
    ar.method = req.method;
    ar.path = req.path;
    for (const auto& [k, v] : req.params) ar.query[k] = v;
    for (const auto& [k, v] : req.headers) ar.headers[to_lower(k)] = v;
    ar.body = req.body;
    const api::Response out = api_.handle(ar);
    res.status = out.status;
    res.set_header("X-Snapshot-Version", std::to_string(out.snapshot_version));
    res.set_header("X-Api-Schema-Version", std::string(api::kSchemaVersion));
    res.set_content(out.body.dump(), "application/json");
  }

  api::ApiService& api_;
  httplib::Server server_;
};

/// Calls `tick` every `interval` until destroyed.
class TickLoop {
 public:
  TickLoop(std::chrono::milliseconds interval, std::function<void()> tick)
      : thread_([this, interval, tick = std::move(tick)](std::stop_token stop) {
          std::unique_lock lock(mu_);
          while (!stop.stop_requested()) {
            lock.unlock();
            tick();
            lock.lock();
            cv_.wait_for(lock, stop, interval, [] { return false; });
          }
        }) {}

 private:
  std::mutex mu_;
  std::condition_variable_any cv_;
  std::jthread thread_;
};

}  // namespace mhbench
