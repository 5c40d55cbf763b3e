#pragma once
// Uniform access to model endpoints. A ChatTransport performs one raw
// exchange; the Gateway layers retries, per-model rate ceilings and a
// response size cap on top and stamps provenance onto a Transcript.
// Replay archives make every evaluation reproducible without a network.

#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "mhbench/common.hpp"

namespace mhbench {

enum class ModelKind { BaseModel, Tool };

inline std::string_view to_string(ModelKind k) { return k == ModelKind::BaseModel ? "base" : "tool"; }

inline std::optional<ModelKind> parse_model_kind(std::string_view s) {
  if (s == "base" || s == "base_model") return ModelKind::BaseModel;
  if (s == "tool") return ModelKind::Tool;
  return std::nullopt;
}

struct ModelDescriptor {
  std::string model_id;
  ModelKind kind = ModelKind::BaseModel;
  std::string display_name;
  std::string provider_endpoint;  // URL or alias
  std::string version_label;
  std::optional<std::string> base_of;  // Tools only: the underlying base model

  bool operator==(const ModelDescriptor&) const = default;
};

inline void validate_descriptor(const ModelDescriptor& m) {
  if (m.model_id.empty()) throw InvalidInputError("model_id must be nonempty");
  if (m.kind == ModelKind::BaseModel && m.base_of) {
    throw InvalidInputError("base model " + m.model_id + " cannot set base_of");
  }
}

inline json to_json(const ModelDescriptor& m) {
  return {{"model_id", m.model_id},
          {"kind", to_string(m.kind)},
          {"display_name", m.display_name},
          {"provider_endpoint", m.provider_endpoint},
          {"version_label", m.version_label},
          {"base_of", m.base_of ? json(*m.base_of) : json(nullptr)}};
}

inline ModelDescriptor model_from_json(const json& j) {
  ModelDescriptor m;
  m.model_id = j.at("model_id").get<std::string>();
  auto kind = parse_model_kind(j.value("kind", "base"));
  if (!kind) throw InvalidInputError("kind: expected base or tool");
  m.kind = *kind;
  m.display_name = j.value("display_name", m.model_id);
  m.provider_endpoint = j.value("provider_endpoint", "");
  m.version_label = j.value("version_label", "");
  if (auto it = j.find("base_of"); it != j.end() && !it->is_null()) m.base_of = it->get<std::string>();
  validate_descriptor(m);
  return m;
}

struct ChatMessage {
  std::string role;  // "user" | "assistant"
  std::string text;
  bool operator==(const ChatMessage&) const = default;
};

struct CompletionRequest {
  std::optional<std::string> system_text;
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  int max_output_tokens = 1024;

  bool operator==(const CompletionRequest&) const = default;
};

inline void validate_request(const CompletionRequest& r) {
  if (r.messages.empty()) throw InvalidInputError("completion request needs at least one message");
  if (!(r.temperature >= 0)) throw InvalidInputError("temperature must be nonnegative");
  if (r.max_output_tokens <= 0) throw InvalidInputError("max_output_tokens must be positive");
}

inline json to_json(const CompletionRequest& r) {
  json msgs = json::array();
  for (const auto& m : r.messages) msgs.push_back({{"role", m.role}, {"text", m.text}});
  return {{"system_text", r.system_text ? json(*r.system_text) : json(nullptr)},
          {"messages", msgs},
          {"temperature", r.temperature},
          {"max_output_tokens", r.max_output_tokens}};
}

inline CompletionRequest request_from_json(const json& j) {
  CompletionRequest r;
  if (auto it = j.find("system_text"); it != j.end() && !it->is_null()) r.system_text = it->get<std::string>();
  for (const auto& m : j.at("messages")) r.messages.push_back({m.at("role").get<std::string>(), m.at("text").get<std::string>()});
  r.temperature = j.value("temperature", 0.0);
  r.max_output_tokens = j.value("max_output_tokens", 1024);
  return r;
}

/// Hash of the model id and every request field, so any change misses.
inline std::string request_fingerprint(std::string_view model_id, const CompletionRequest& r) {
  json j = to_json(r);
  j["model_id"] = model_id;
  return sha256_hex(j.dump());
}

struct Transcript {
  CompletionRequest request;
  std::string model_id;
  std::string fingerprint;
  std::string completion_text;
  std::chrono::milliseconds latency{0};
  int attempt_count = 1;
  Timestamp captured_at{};
};

inline json to_json(const Transcript& t) {
  return {{"model_id", t.model_id},
          {"fingerprint", t.fingerprint},
          {"request", to_json(t.request)},
          {"completion_text", t.completion_text},
          {"latency_ms", t.latency.count()},
          {"attempt_count", t.attempt_count},
          {"captured_at", format_iso8601(t.captured_at)}};
}

inline Transcript transcript_from_json(const json& j) {
  Transcript t;
  t.model_id = j.at("model_id").get<std::string>();
  t.fingerprint = j.at("fingerprint").get<std::string>();
  t.request = request_from_json(j.at("request"));
  t.completion_text = j.at("completion_text").get<std::string>();
  t.latency = std::chrono::milliseconds(j.value("latency_ms", 0));
  t.attempt_count = j.value("attempt_count", 1);
  t.captured_at = parse_iso8601(j.at("captured_at").get<std::string>()).value_or(Timestamp{});
  return t;
}

// ---------------------------------------------------------------------------
// Errors. Transient failures are retried; the rest surface immediately.

class GatewayError : public Error {
 public:
  using Error::Error;
};

/// Connection refused, timeout, 429, 5xx: worth another attempt.
class TransientError : public GatewayError {
 public:
  using GatewayError::GatewayError;
};

class EndpointUnreachableError : public GatewayError {
 public:
  EndpointUnreachableError(const std::string& model_id, int attempts, const std::string& last)
      : GatewayError("endpoint for " + model_id + " unreachable after " + std::to_string(attempts) +
                     " attempts: " + last),
        attempts_(attempts) {}
  int attempts() const { return attempts_; }

 private:
  int attempts_;
};

class AuthenticationError : public GatewayError {
 public:
  using GatewayError::GatewayError;
};

class ResponseTooLargeError : public GatewayError {
 public:
  using GatewayError::GatewayError;
};

/// Non-transient protocol problem (4xx other than auth, unparsable body).
class BadResponseError : public GatewayError {
 public:
  using GatewayError::GatewayError;
};

class FingerprintMissError : public GatewayError {
 public:
  using GatewayError::GatewayError;
};

class CorruptArchiveError : public GatewayError {
 public:
  using GatewayError::GatewayError;
};

// ---------------------------------------------------------------------------
// Time source. Tests substitute ManualClock so backoff and rate windows are
// observable without sleeping.

class Clock {
 public:
  virtual ~Clock() = default;
  virtual std::chrono::steady_clock::time_point now() = 0;
  virtual void sleep_for(std::chrono::milliseconds d) = 0;
};

class SteadyClock final : public Clock {
 public:
  std::chrono::steady_clock::time_point now() override { return std::chrono::steady_clock::now(); }
  void sleep_for(std::chrono::milliseconds d) override { std::this_thread::sleep_for(d); }
};

class ManualClock final : public Clock {
 public:
  std::chrono::steady_clock::time_point now() override {
    std::lock_guard lock(mu_);
    return now_;
  }
  void sleep_for(std::chrono::milliseconds d) override {
    std::lock_guard lock(mu_);
    now_ += d;
    slept_.push_back(d);
  }
  void advance(std::chrono::milliseconds d) {
    std::lock_guard lock(mu_);
    now_ += d;
  }
  std::vector<std::chrono::milliseconds> sleeps() const {
    std::lock_guard lock(mu_);
    return slept_;
  }

 private:
  mutable std::mutex mu_;
  std::chrono::steady_clock::time_point now_{};
  std::vector<std::chrono::milliseconds> slept_;
};

// ---------------------------------------------------------------------------

struct RetryPolicy {
  int max_attempts = 3;  // total attempts, including the first
  std::chrono::milliseconds initial_backoff{200};
  double multiplier = 2.0;
  std::chrono::milliseconds max_backoff{10'000};

  std::chrono::milliseconds backoff_before(int attempt) const {
    // attempt is 2-based: the delay preceding the second, third, ... try.
    double d = static_cast<double>(initial_backoff.count());
    for (int i = 2; i < attempt; ++i) d *= multiplier;
    return std::chrono::milliseconds(
        static_cast<long long>(std::min(d, static_cast<double>(max_backoff.count()))));
  }
};

/// At most `ceiling` dispatches inside any sliding window of length `window`.
class RateLimiter {
 public:
  RateLimiter(int ceiling, std::chrono::milliseconds window, Clock& clock)
      : ceiling_(ceiling), window_(window), clock_(clock) {
    if (ceiling <= 0) throw InvalidInputError("rate ceiling must be positive");
  }

  void acquire() {
    std::unique_lock lock(mu_);
    while (true) {
      const auto now = clock_.now();
      while (!sent_.empty() && sent_.front() + window_ <= now) sent_.pop_front();
      if (static_cast<int>(sent_.size()) < ceiling_) {
        sent_.push_back(now);
        return;
      }
      const auto wait = std::chrono::duration_cast<std::chrono::milliseconds>(sent_.front() + window_ - now);
      lock.unlock();
      clock_.sleep_for(std::max(wait, std::chrono::milliseconds(1)));
      lock.lock();
    }
  }

  int ceiling() const { return ceiling_; }
  std::chrono::milliseconds window() const { return window_; }

 private:
  int ceiling_;
  std::chrono::milliseconds window_;
  Clock& clock_;
  std::mutex mu_;
  std::deque<std::chrono::steady_clock::time_point> sent_;
};

/// One raw exchange with an endpoint. Implementations throw TransientError for
/// retryable failures and other GatewayError subclasses for everything else.
class ChatTransport {
 public:
  virtual ~ChatTransport() = default;
  virtual std::string send(const ModelDescriptor& model, const CompletionRequest& request) = 0;
};

struct GatewayConfig {
  RetryPolicy retry;
  int rate_ceiling = 60;
  std::chrono::milliseconds rate_window{60'000};
  size_t max_response_bytes = 1 << 20;
};

class Gateway {
 public:
  Gateway(std::shared_ptr<ChatTransport> transport, GatewayConfig config = {},
          std::shared_ptr<Clock> clock = std::make_shared<SteadyClock>())
      : transport_(std::move(transport)), config_(config), clock_(std::move(clock)) {}

  const GatewayConfig& config() const { return config_; }

  Transcript complete(const ModelDescriptor& model, const CompletionRequest& request) {
    validate_request(request);
    const auto started = clock_->now();
    const int budget = std::max(1, config_.retry.max_attempts);
    std::string last_error;
    for (int attempt = 1; attempt <= budget; ++attempt) {
      if (attempt > 1) clock_->sleep_for(config_.retry.backoff_before(attempt));
      limiter_for(model.model_id).acquire();
      std::string text;
      try {
        text = transport_->send(model, request);
      } catch (const TransientError& e) {
        last_error = e.what();
        continue;
      }
      if (text.size() > config_.max_response_bytes) {
        throw ResponseTooLargeError("response from " + model.model_id + " is " + std::to_string(text.size()) +
                                    " bytes, cap is " + std::to_string(config_.max_response_bytes));
      }
      Transcript t;
      t.request = request;
      t.model_id = model.model_id;
      t.fingerprint = request_fingerprint(model.model_id, request);
      t.completion_text = std::move(text);
      t.latency = std::chrono::duration_cast<std::chrono::milliseconds>(clock_->now() - started);
      t.attempt_count = attempt;
      t.captured_at = now_utc();
      return t;
    }
    throw EndpointUnreachableError(model.model_id, budget, last_error);
  }

 private:
  RateLimiter& limiter_for(const std::string& model_id) {
    std::lock_guard lock(limiters_mu_);
    auto it = limiters_.find(model_id);
    if (it == limiters_.end()) {
      it = limiters_
               .emplace(model_id, std::make_unique<RateLimiter>(config_.rate_ceiling, config_.rate_window, *clock_))
               .first;
    }
    return *it->second;
  }

  std::shared_ptr<ChatTransport> transport_;
  GatewayConfig config_;
  std::shared_ptr<Clock> clock_;
  std::mutex limiters_mu_;
  std::map<std::string, std::unique_ptr<RateLimiter>> limiters_;
};

// ---------------------------------------------------------------------------
// Record / replay

/// fingerprint → completion text; read-only once loaded.
class ReplayArchive {
 public:
  ReplayArchive() = default;

  static ReplayArchive parse(std::string_view text) {
    ReplayArchive archive;
    auto records = parse_json_lines(text, [](size_t line, const std::string& what) {
      throw CorruptArchiveError("replay archive line " + std::to_string(line) + ": " + what);
    });
    for (const auto& rec : records) {
      const auto& j = rec.value;
      if (!j.is_object() || !j.contains("fingerprint") || !j.contains("completion_text") ||
          !j["fingerprint"].is_string() || !j["completion_text"].is_string()) {
        throw CorruptArchiveError("replay archive line " + std::to_string(rec.line_number) +
                                  ": expected {fingerprint, completion_text}");
      }
      archive.add(j["fingerprint"].get<std::string>(), j["completion_text"].get<std::string>());
    }
    return archive;
  }

  static ReplayArchive load(const std::filesystem::path& path) {
    try {
      return parse(read_file(path));
    } catch (const NotFoundError& e) {
      throw CorruptArchiveError(e.what());
    }
  }

  void add(const std::string& fingerprint, const std::string& completion) {
    if (!index_.count(fingerprint)) order_.push_back(fingerprint);
    index_[fingerprint] = completion;
  }

  void add(const std::string& model_id, const CompletionRequest& request, const std::string& completion) {
    add(request_fingerprint(model_id, request), completion);
  }

  std::optional<std::string> find(const std::string& fingerprint) const {
    auto it = index_.find(fingerprint);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  size_t size() const { return order_.size(); }

  std::string serialize() const {
    std::string out;
    for (const auto& fp : order_) out += json{{"fingerprint", fp}, {"completion_text", index_.at(fp)}}.dump() + "\n";
    return out;
  }

  void save(const std::filesystem::path& path) const { write_file(path, serialize()); }

 private:
  std::unordered_map<std::string, std::string> index_;
  std::vector<std::string> order_;
};

class ReplayTransport final : public ChatTransport {
 public:
  explicit ReplayTransport(ReplayArchive archive) : archive_(std::move(archive)) {}

  std::string send(const ModelDescriptor& model, const CompletionRequest& request) override {
    const auto fp = request_fingerprint(model.model_id, request);
    if (auto hit = archive_.find(fp)) return *hit;
    throw FingerprintMissError("no recorded completion for request " + fp.substr(0, 12) + " to " + model.model_id);
  }

 private:
  const ReplayArchive archive_;
};

/// Forwards to an inner transport and remembers every successful exchange.
class RecordingTransport final : public ChatTransport {
 public:
  explicit RecordingTransport(std::shared_ptr<ChatTransport> inner) : inner_(std::move(inner)) {}

  std::string send(const ModelDescriptor& model, const CompletionRequest& request) override {
    std::string text = inner_->send(model, request);
    std::lock_guard lock(mu_);
    archive_.add(model.model_id, request, text);
    return text;
  }

  ReplayArchive archive() const {
    std::lock_guard lock(mu_);
    return archive_;
  }

 private:
  std::shared_ptr<ChatTransport> inner_;
  mutable std::mutex mu_;
  ReplayArchive archive_;
};

/// Runs `requests` against `transport` and returns the resulting archive.
inline ReplayArchive record_session(std::shared_ptr<ChatTransport> transport, const ModelDescriptor& model,
                                    const std::vector<CompletionRequest>& requests, GatewayConfig config = {}) {
  auto recorder = std::make_shared<RecordingTransport>(std::move(transport));
  Gateway gateway(recorder, config);
  for (const auto& r : requests) gateway.complete(model, r);
  return recorder->archive();
}

inline std::shared_ptr<ChatTransport> replay_session(ReplayArchive archive) {
  return std::make_shared<ReplayTransport>(std::move(archive));
}

/// Answers every request through a callback. Handy for synthetic models.
class FunctionTransport final : public ChatTransport {
 public:
  using Fn = std::function<std::string(const ModelDescriptor&, const CompletionRequest&)>;
  explicit FunctionTransport(Fn fn) : fn_(std::move(fn)) {}
  std::string send(const ModelDescriptor& model, const CompletionRequest& request) override {
    return fn_(model, request);
  }

 private:
  Fn fn_;
};

}  // namespace mhbench
