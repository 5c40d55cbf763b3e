#include <gtest/gtest.h>

#include "support.hpp"

using namespace mhbench;
using namespace testing_support;

namespace {

ModelRating rating(std::string item, std::string key, std::optional<double> score) {
  ModelRating r;
  r.item_id = std::move(item);
  r.response_key = std::move(key);
  r.attempts = 1;
  if (score) {
    r.parse_status = ParseStatus::Parsed;
    r.predicted_score = score;
  }
  return r;
}

std::string prompt_text(const CompletionRequest& r) { return r.messages.at(0).text; }

/// Four validated items with two responses each; item "u3" never parses.
BenchmarkSuite four_item_suite() {
  BenchmarkSuite s;
  s.suite_id = "four";
  s.version = "1";
  s.taxonomy = seed_taxonomy();
  for (int i = 0; i < 4; ++i) {
    BenchmarkItem item;
    item.item_id = "u" + std::to_string(i);
    item.stimulus = "client says [[" + item.item_id + "]]";
    item.responses = {{"a", "reply a [[" + item.item_id + "]]", -1.0 + i, 0.5, 5},
                      {"b", "reply b [[" + item.item_id + "]]", 1.0 - i * 0.5, 0.5, 5}};
    s.items.push_back(item);
  }
  return s;
}

}  // namespace

TEST(Prompt, ContainsStimulusResponseAndScale) {
  const auto s = single_item_suite();
  const auto req = build_rating_prompt(s.items[0], s.items[0].responses[0], s.scale, kDefaultTemplateId);
  const auto text = prompt_text(req);
  EXPECT_NE(text.find("But my thoughts have been so terrible"), std::string::npos);
  EXPECT_NE(text.find(s.items[0].responses[0].text), std::string::npos);
  EXPECT_NE(text.find("RATING:"), std::string::npos);
  EXPECT_NE(text.find("-3"), std::string::npos);
  EXPECT_NE(text.find("3"), std::string::npos);
  EXPECT_EQ(req.temperature, 0.0);
}

TEST(Prompt, IsPure) {
  const auto s = single_item_suite();
  const auto a = build_rating_prompt(s.items[0], s.items[0].responses[1], s.scale, kDefaultTemplateId);
  const auto b = build_rating_prompt(s.items[0], s.items[0].responses[1], s.scale, kDefaultTemplateId);
  EXPECT_EQ(prompt_text(a), prompt_text(b));
  EXPECT_EQ(request_fingerprint("m", a), request_fingerprint("m", b));
}

TEST(Prompt, RendersScaleBounds) {
  const auto s = single_item_suite();
  const auto text = prompt_text(build_rating_prompt(s.items[0], s.items[0].responses[0], {0, 10}, kDefaultTemplateId));
  EXPECT_NE(text.find(" 0 "), std::string::npos);
  EXPECT_NE(text.find("10"), std::string::npos);
  EXPECT_EQ(text.find("-3"), std::string::npos);
}

TEST(Prompt, TemplatesFromDirectory) {
  TemplateRegistry reg;
  reg.load_directory(kData / "templates");
  EXPECT_TRUE(reg.contains("cot_single_terse"));
  EXPECT_TRUE(reg.contains(kDefaultTemplateId));
  EXPECT_THROW(reg.get("nope"), NotFoundError);
  EXPECT_THROW(reg.add("bad", "no placeholders"), InvalidInputError);
}

TEST(ParseRating, ExtractsTraceAndScore) {
  const RatingScale scale;
  const auto r = parse_rating("The helper dismisses feelings... RATING: -2", scale);
  ASSERT_TRUE(r);
  EXPECT_EQ(r->score, -2);
  EXPECT_EQ(r->reasoning_trace, "The helper dismisses feelings...");
  EXPECT_FALSE(r->clamped);
}

TEST(ParseRating, ClampsOutOfRange) {
  const auto r = parse_rating("RATING: 7", RatingScale{});
  ASSERT_TRUE(r);
  EXPECT_EQ(r->score, 3);
  EXPECT_TRUE(r->clamped);
}

TEST(ParseRating, MissingRatingFails) {
  EXPECT_FALSE(parse_rating("I cannot rate this.", RatingScale{}));
  EXPECT_FALSE(parse_rating("RATING: high", RatingScale{}));
}

TEST(ParseRating, LastMarkerWins) {
  const auto r = parse_rating("first guess rating: 1\nafter thought\nRating: -1.5\n", RatingScale{});
  ASSERT_TRUE(r);
  EXPECT_EQ(r->score, -1.5);
  EXPECT_NE(r->reasoning_trace.find("first guess"), std::string::npos);
}

TEST(ScoreRun, ExpertMeansGiveZeroError) {
  const auto s = single_item_suite();
  const auto score = score_run({rating("q03", "helper_a", -2.14), rating("q03", "helper_b", 2.14)}, s);
  EXPECT_EQ(*score.rmse, 0);
  EXPECT_EQ(*score.mae, 0);
  EXPECT_EQ(*score.preference_accuracy, 1);
}

TEST(ScoreRun, NearMissKeepsOrdering) {
  const auto s = single_item_suite();
  const auto score = score_run({rating("q03", "helper_a", -2.0), rating("q03", "helper_b", 2.0)}, s);
  EXPECT_NEAR(*score.rmse, 0.14, 1e-12);
  EXPECT_EQ(*score.preference_accuracy, 1);
}

TEST(ScoreRun, InvertedOrderingScoresZero) {
  const auto s = single_item_suite();
  const auto score = score_run({rating("q03", "helper_a", 1), rating("q03", "helper_b", -1)}, s);
  EXPECT_EQ(*score.preference_accuracy, 0);
}

TEST(ScoreRun, TiedPredictionIsAMismatch) {
  const auto s = single_item_suite();
  const auto score = score_run({rating("q03", "helper_a", 0), rating("q03", "helper_b", 0)}, s);
  EXPECT_NEAR(*score.rmse, 2.14, 1e-9);
  EXPECT_EQ(score.preference_pairs, 1u);
  EXPECT_EQ(*score.preference_accuracy, 0);
}

TEST(ScoreRun, NothingParsedIsUndefined) {
  const auto s = single_item_suite();
  const auto score = score_run({rating("q03", "helper_a", std::nullopt), rating("q03", "helper_b", std::nullopt)}, s);
  EXPECT_FALSE(score.rmse);
  EXPECT_FALSE(score.mae);
  EXPECT_FALSE(score.preference_accuracy);
  EXPECT_EQ(score.coverage, 0);
}

TEST(ScoreRun, RejectsBadReferences) {
  const auto s = single_item_suite();
  EXPECT_THROW(score_run({rating("zz", "helper_a", 0)}, s), InvalidInputError);
  EXPECT_THROW(score_run({rating("q03", "zz", 0)}, s), InvalidInputError);
  EXPECT_THROW(score_run({rating("q03", "helper_a", 0), rating("q03", "helper_a", 1)}, s), InvalidInputError);
}

TEST(ScoreRun, MatchesBruteForceReference) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 300; ++trial) {
    const auto s = random_suite(rng, 50, 4);
    const auto ratings = random_ratings(rng, s, trial % 10 == 0 ? 0.0 : 0.85);
    const auto got = score_run(ratings, s);
    const auto want = reference_score(ratings, s);
    ASSERT_EQ(got.rmse.has_value(), want.rmse.has_value());
    if (want.rmse) {
      EXPECT_NEAR(*got.rmse, *want.rmse, 1e-12);
      EXPECT_NEAR(*got.mae, *want.mae, 1e-12);
    }
    ASSERT_EQ(got.preference_accuracy.has_value(), want.preference_accuracy.has_value());
    if (want.preference_accuracy) {
      EXPECT_NEAR(*got.preference_accuracy, *want.preference_accuracy, 1e-12);
    }
    EXPECT_NEAR(got.coverage, want.coverage, 1e-12);
    ASSERT_EQ(got.per_technique_rmse.size(), want.per_technique_rmse.size());
    for (const auto& [tag, v] : want.per_technique_rmse) {
      const auto& g = got.per_technique_rmse.at(tag);
      ASSERT_EQ(g.has_value(), v.has_value()) << tag;
      if (v) {
        EXPECT_NEAR(*g, *v, 1e-12);
      }
    }
  }
}

TEST(ScoreRun, SerializationRoundTrip) {
  std::mt19937_64 rng(5);
  const auto s = random_suite(rng, 10);
  const auto score = score_run(random_ratings(rng, s), s);
  EXPECT_EQ(score_from_json(json::parse(to_json(score).dump())), score);
}

TEST(Evaluate, OracleReplay) {
  std::mt19937_64 rng(3);
  const auto s = random_suite(rng, 25);
  const auto m = model("oracle");
  Gateway g(replay_session(oracle_archive(m, s)), fast_gateway(), std::make_shared<ManualClock>());
  const auto run = evaluate(g, m, s, RunConfig{});
  EXPECT_EQ(*run.score.rmse, 0);
  EXPECT_EQ(*run.score.mae, 0);
  EXPECT_EQ(run.score.coverage, 1);
  EXPECT_EQ(run.model_id, "oracle");
  EXPECT_EQ(run.suite_version, s.version);
  for (const auto& r : run.ratings) EXPECT_EQ(r.reasoning_trace, "The response matches expert consensus.");
}

TEST(Evaluate, UnparseableItemLowersCoverage) {
  const auto s = four_item_suite();
  const auto m = model("m");
  RunConfig cfg;
  cfg.retry_budget = 1;
  auto t = std::make_shared<FunctionTransport>([&](const ModelDescriptor&, const CompletionRequest& req) {
    const auto& first = req.messages.front().text;
    if (first.find("[[u3]]") != std::string::npos) return std::string("I would rather not.");
    for (const auto& item : s.items)
      for (const auto& resp : item.responses)
        if (first.find(resp.text) != std::string::npos) return "RATING: " + format_number(*resp.expert_mean + 1);
    return std::string("?");
  });
  Gateway g(t, fast_gateway(), std::make_shared<ManualClock>());
  const auto run = evaluate(g, m, s, cfg);
  EXPECT_DOUBLE_EQ(run.score.coverage, 0.75);
  EXPECT_EQ(run.score.parsed_count, 6u);
  EXPECT_NEAR(*run.score.rmse, 1.0, 1e-12);
  for (const auto& r : run.ratings) {
    if (r.item_id == "u3") {
      EXPECT_EQ(r.parse_status, ParseStatus::ParseFailed);
      EXPECT_EQ(r.attempts, 2);
    }
  }
}

TEST(Evaluate, ParseRetryAppendsReminder) {
  const auto s = single_item_suite();
  const auto m = model("m");
  auto t = std::make_shared<FunctionTransport>([](const ModelDescriptor&, const CompletionRequest& req) {
    return req.messages.size() == 1 ? std::string("thinking...") : std::string("fine\nRATING: 1");
  });
  Gateway g(t, fast_gateway(), std::make_shared<ManualClock>());
  const auto run = evaluate(g, m, s, RunConfig{});
  for (const auto& r : run.ratings) {
    EXPECT_TRUE(r.parsed());
    EXPECT_EQ(r.attempts, 2);
  }
  ASSERT_EQ(run.transcripts.size(), 4u);
  const auto& retry = run.transcripts[1].request;
  ASSERT_EQ(retry.messages.size(), 3u);
  EXPECT_EQ(retry.messages[1].role, "assistant");
  EXPECT_NE(retry.messages[2].text.find("RATING:"), std::string::npos);
}

TEST(Evaluate, GatewayFailuresLowerCoverageOrAbort) {
  const auto s = four_item_suite();
  const auto m = model("m");
  auto partial = std::make_shared<FunctionTransport>([](const ModelDescriptor&, const CompletionRequest& req) {
    if (req.messages.front().text.find("[[u0]]") != std::string::npos) throw TransientError("down");
    return std::string("RATING: 0");
  });
  Gateway g(partial, fast_gateway(), std::make_shared<ManualClock>());
  const auto run = evaluate(g, m, s, RunConfig{});
  EXPECT_DOUBLE_EQ(run.score.coverage, 0.75);
  EXPECT_FALSE(run.ratings[0].error.empty());

  auto dead = std::make_shared<FunctionTransport>(
      [](const ModelDescriptor&, const CompletionRequest&) -> std::string { throw TransientError("down"); });
  Gateway g2(dead, fast_gateway(), std::make_shared<ManualClock>());
  EXPECT_THROW(evaluate(g2, m, s, RunConfig{}), GatewayError);

  auto denied = std::make_shared<FunctionTransport>(
      [](const ModelDescriptor&, const CompletionRequest&) -> std::string { throw AuthenticationError("no"); });
  Gateway g3(denied, fast_gateway(), std::make_shared<ManualClock>());
  EXPECT_THROW(evaluate(g3, m, s, RunConfig{}), AuthenticationError);
}

TEST(Evaluate, DeterministicUnderReplayAndWorkers) {
  std::mt19937_64 rng(9);
  const auto s = random_suite(rng, 30);
  const auto m = model("m");
  std::uniform_int_distribution<int> pick(-3, 3);
  const auto archive = archive_for(m, s, [&](const BenchmarkItem&, const CandidateResponse&) {
    return "trace\nRATING: " + std::to_string(pick(rng));
  });
  auto once = [&](int workers) {
    RunConfig cfg;
    cfg.workers = workers;
    Gateway g(replay_session(archive), fast_gateway(), std::make_shared<ManualClock>());
    return evaluate(g, m, s, cfg, {}, "fixed");
  };
  const auto a = once(1), b = once(1), c = once(4);
  EXPECT_EQ(a.score, b.score);
  EXPECT_EQ(a.ratings, b.ratings);
  EXPECT_EQ(a.score, c.score);
  EXPECT_EQ(a.ratings, c.ratings);
}

TEST(Evaluate, PendingItemsNotRated) {
  const auto s = load_suite_or_throw(kData / "suites" / "psychopharm_cases_demo");
  const auto m = model("m");
  auto t = std::make_shared<FunctionTransport>([](const ModelDescriptor&, const CompletionRequest&) { return "RATING: 0"; });
  Gateway g(t, fast_gateway(), std::make_shared<ManualClock>());
  const auto run = evaluate(g, m, s, RunConfig{});
  for (const auto& r : run.ratings) EXPECT_NE(r.item_id, "pc03");
}

TEST(RunRecord, JsonRoundTrip) {
  std::mt19937_64 rng(4);
  const auto s = random_suite(rng, 8);
  const auto m = model("m");
  Gateway g(replay_session(oracle_archive(m, s)), fast_gateway(), std::make_shared<ManualClock>());
  const auto run = evaluate(g, m, s, RunConfig{});
  const auto back = run_from_json(json::parse(to_json(run).dump()));
  EXPECT_EQ(to_json(back), to_json(run));
  EXPECT_EQ(back.score, run.score);
  EXPECT_EQ(back.ratings, run.ratings);
}
