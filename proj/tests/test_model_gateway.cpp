#include <gtest/gtest.h>

#include <atomic>

#include "support.hpp"

using namespace mhbench;
using namespace testing_support;

namespace {

CompletionRequest request(std::string text, double temperature = 0.0) {
  CompletionRequest r;
  r.messages.push_back({"user", std::move(text)});
  r.temperature = temperature;
  return r;
}

/// Fails with TransientError `failures` times, then answers "ok".
class FlakyTransport : public ChatTransport {
 public:
  explicit FlakyTransport(int failures) : failures_(failures) {}
  std::string send(const ModelDescriptor&, const CompletionRequest&) override {
    ++calls;
    if (calls <= failures_) throw TransientError("boom");
    return "ok";
  }
  std::atomic<int> calls{0};

 private:
  int failures_;
};

}  // namespace

TEST(Gateway, ReplayReturnsPrimedCompletion) {
  const auto m = model("m");
  ReplayArchive archive;
  archive.add(m.model_id, request("rate this"), "Rating: 2");
  Gateway g(replay_session(archive), fast_gateway(), std::make_shared<ManualClock>());
  const auto t = g.complete(m, request("rate this"));
  EXPECT_EQ(t.completion_text, "Rating: 2");
  EXPECT_EQ(t.attempt_count, 1);
  EXPECT_EQ(t.fingerprint, request_fingerprint("m", request("rate this")));
}

TEST(Gateway, RetriesTransientFailures) {
  auto flaky = std::make_shared<FlakyTransport>(2);
  auto clock = std::make_shared<ManualClock>();
  GatewayConfig cfg;
  cfg.retry.max_attempts = 3;
  Gateway g(flaky, cfg, clock);
  const auto t = g.complete(model("m"), request("x"));
  EXPECT_EQ(t.attempt_count, 3);
  EXPECT_EQ(flaky->calls, 3);
  const auto sleeps = clock->sleeps();
  ASSERT_EQ(sleeps.size(), 2u);
  EXPECT_EQ(sleeps[0], std::chrono::milliseconds(200));
  EXPECT_EQ(sleeps[1], std::chrono::milliseconds(400));
  EXPECT_EQ(t.latency, std::chrono::milliseconds(600));
}

TEST(Gateway, GivesUpAfterBudget) {
  auto flaky = std::make_shared<FlakyTransport>(4);
  GatewayConfig cfg;
  cfg.retry.max_attempts = 3;
  Gateway g(flaky, cfg, std::make_shared<ManualClock>());
  try {
    g.complete(model("m"), request("x"));
    FAIL() << "expected EndpointUnreachableError";
  } catch (const EndpointUnreachableError& e) {
    EXPECT_EQ(e.attempts(), 3);
  }
  EXPECT_EQ(flaky->calls, 3);
}

TEST(Gateway, BackoffIsCapped) {
  RetryPolicy p;
  p.initial_backoff = std::chrono::milliseconds(1000);
  p.max_backoff = std::chrono::milliseconds(3000);
  EXPECT_EQ(p.backoff_before(2).count(), 1000);
  EXPECT_EQ(p.backoff_before(3).count(), 2000);
  EXPECT_EQ(p.backoff_before(4).count(), 3000);
  EXPECT_EQ(p.backoff_before(9).count(), 3000);
}

TEST(Gateway, AuthenticationErrorsAreNotRetried) {
  std::atomic<int> calls{0};
  auto t = std::make_shared<FunctionTransport>([&](const ModelDescriptor&, const CompletionRequest&) -> std::string {
    ++calls;
    throw AuthenticationError("denied");
  });
  Gateway g(t, fast_gateway(), std::make_shared<ManualClock>());
  EXPECT_THROW(g.complete(model("m"), request("x")), AuthenticationError);
  EXPECT_EQ(calls, 1);
}

TEST(Gateway, OversizedResponseRejected) {
  auto t = std::make_shared<FunctionTransport>(
      [](const ModelDescriptor&, const CompletionRequest&) { return std::string(100, 'x'); });
  GatewayConfig cfg;
  cfg.max_response_bytes = 99;
  Gateway g(t, cfg, std::make_shared<ManualClock>());
  EXPECT_THROW(g.complete(model("m"), request("x")), ResponseTooLargeError);
}

TEST(Gateway, InvalidRequestRejected) {
  Gateway g(replay_session({}), fast_gateway(), std::make_shared<ManualClock>());
  EXPECT_THROW(g.complete(model("m"), CompletionRequest{}), InvalidInputError);
  auto r = request("x");
  r.max_output_tokens = 0;
  EXPECT_THROW(g.complete(model("m"), r), InvalidInputError);
}

TEST(RateLimiter, HoldsDispatchesInsideWindow) {
  ManualClock clock;
  RateLimiter limiter(2, std::chrono::milliseconds(1000), clock);
  limiter.acquire();
  limiter.acquire();
  EXPECT_TRUE(clock.sleeps().empty());
  limiter.acquire();
  ASSERT_EQ(clock.sleeps().size(), 1u);
  EXPECT_EQ(clock.sleeps()[0], std::chrono::milliseconds(1000));
}

TEST(RateLimiter, GatewayPerModelCeiling) {
  auto clock = std::make_shared<ManualClock>();
  GatewayConfig cfg;
  cfg.rate_ceiling = 3;
  cfg.rate_window = std::chrono::milliseconds(60'000);
  auto t = std::make_shared<FunctionTransport>([](const ModelDescriptor&, const CompletionRequest&) { return "ok"; });
  Gateway g(t, cfg, clock);
  for (int i = 0; i < 3; ++i) g.complete(model("a"), request("x"));
  for (int i = 0; i < 3; ++i) g.complete(model("b"), request("x"));
  EXPECT_TRUE(clock->sleeps().empty());
  g.complete(model("a"), request("x"));
  EXPECT_EQ(clock->sleeps().size(), 1u);
}

TEST(RecordReplay, RoundTrip) {
  const auto m = model("m");
  auto live = std::make_shared<FunctionTransport>(
      [](const ModelDescriptor&, const CompletionRequest& r) { return "echo " + r.messages.back().text; });
  const std::vector<CompletionRequest> reqs{request("one"), request("two")};
  const auto archive = record_session(live, m, reqs, fast_gateway());
  EXPECT_EQ(archive.size(), 2u);

  const auto reloaded = ReplayArchive::parse(archive.serialize());
  Gateway g(replay_session(reloaded), fast_gateway(), std::make_shared<ManualClock>());
  EXPECT_EQ(g.complete(m, reqs[0]).completion_text, "echo one");
  EXPECT_EQ(g.complete(m, reqs[1]).completion_text, "echo two");
}

TEST(RecordReplay, FingerprintCoversEveryField) {
  const auto m = model("m");
  ReplayArchive archive;
  archive.add(m.model_id, request("x"), "RATING: 1");
  Gateway g(replay_session(archive), fast_gateway(), std::make_shared<ManualClock>());
  EXPECT_THROW(g.complete(m, request("x", 0.7)), FingerprintMissError);
  auto r = request("x");
  r.system_text = "sys";
  EXPECT_THROW(g.complete(m, r), FingerprintMissError);
  EXPECT_THROW(g.complete(model("other"), request("x")), FingerprintMissError);
}

TEST(RecordReplay, EmptyArchiveMissesEverything) {
  Gateway g(replay_session({}), fast_gateway(), std::make_shared<ManualClock>());
  EXPECT_THROW(g.complete(model("m"), request("anything")), FingerprintMissError);
}

TEST(RecordReplay, CorruptArchiveRejected) {
  EXPECT_THROW(ReplayArchive::parse("{\"fingerprint\":\"a\"}\n"), CorruptArchiveError);
  EXPECT_THROW(ReplayArchive::parse("not json\n"), CorruptArchiveError);
  EXPECT_THROW(ReplayArchive::load(kFixtures / "missing.jsonl"), CorruptArchiveError);
}

TEST(RecordReplay, ReplayIsDeterministic) {
  const auto m = model("m");
  ReplayArchive archive;
  for (int i = 0; i < 10; ++i) archive.add(m.model_id, request("q" + std::to_string(i)), "a" + std::to_string(i));
  auto run = [&] {
    Gateway g(replay_session(archive), fast_gateway(), std::make_shared<ManualClock>());
    std::vector<std::string> out;
    for (int i = 0; i < 10; ++i) out.push_back(g.complete(m, request("q" + std::to_string(i))).completion_text);
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Serialization, RequestAndTranscriptRoundTrip) {
  auto r = request("hello", 0.25);
  r.system_text = "be brief";
  r.messages.push_back({"assistant", "hi"});
  EXPECT_EQ(request_from_json(to_json(r)), r);

  Transcript t;
  t.request = r;
  t.model_id = "m";
  t.fingerprint = request_fingerprint("m", r);
  t.completion_text = "done";
  t.latency = std::chrono::milliseconds(12);
  t.attempt_count = 2;
  t.captured_at = *parse_iso8601("2025-03-01T10:00:00Z");
  const auto back = transcript_from_json(to_json(t));
  EXPECT_EQ(to_json(back), to_json(t));
}

TEST(Serialization, ModelDescriptorValidation) {
  auto m = model("tool-1", ModelKind::Tool);
  EXPECT_EQ(model_from_json(to_json(m)), m);
  m.model_id.clear();
  EXPECT_THROW(validate_descriptor(m), InvalidInputError);
}
