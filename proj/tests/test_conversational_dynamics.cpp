#include <gtest/gtest.h>

#include "support.hpp"

using namespace mhbench;
using namespace testing_support;

namespace {

Inventory shipped(const char* file) { return load_inventory(kData / "inventories" / file); }

std::vector<ItemResponse> uniform(const Inventory& inv, int value) {
  std::vector<ItemResponse> out;
  for (const auto& item : inv.items) out.push_back({item.item_id, value, std::to_string(value), ""});
  return out;
}

/// Answers every item from a per-item callback, through a real gateway.
Administration administer_with(const Inventory& inv, std::function<std::string(const InventoryItem&)> answer) {
  auto transport = std::make_shared<FunctionTransport>([&](const ModelDescriptor&, const CompletionRequest& req) {
    for (const auto& item : inv.items)
      if (req.messages.front().text.find("Statement: " + item.text + "\n") != std::string::npos) return answer(item);
    return std::string("?");
  });
  Gateway g(transport, fast_gateway(), std::make_shared<ManualClock>());
  return administer(g, model("m"), inv);
}

}  // namespace

TEST(Inventories, ShippedFilesLoad) {
  for (const char* f : {"big_five.json", "hexaco.json", "mbti.json", "enneagram.json"}) {
    const auto inv = shipped(f);
    EXPECT_FALSE(inv.items.empty()) << f;
    for (const auto& dim : framework_dimensions(inv.framework)) {
      EXPECT_TRUE(std::any_of(inv.items.begin(), inv.items.end(), [&](const auto& i) { return i.dimension == dim; }))
          << f << " " << dim;
    }
  }
  EXPECT_TRUE(shipped("mbti.json").adapted);
  EXPECT_TRUE(shipped("enneagram.json").adapted);
}

TEST(Inventories, ReferenceRangeNeedsCitation) {
  json j = json::parse(read_file(kData / "inventories" / "big_five.json"));
  j["reference_ranges"] = json::array({{{"dimension", "openness"}, {"low", 40}, {"high", 60}}});
  EXPECT_THROW(inventory_from_json(j), InvalidInputError);
  j["reference_ranges"][0]["citation"] = "norms table";
  EXPECT_EQ(inventory_from_json(j).reference_ranges.at("openness").citation, "norms table");
}

TEST(Likert, Parsing) {
  EXPECT_EQ(parse_likert("3"), 3);
  EXPECT_EQ(parse_likert("Strongly agree (5)"), 5);
  EXPECT_EQ(parse_likert("I would say 4."), 4);
  EXPECT_EQ(parse_likert("strongly disagree"), 1);
  EXPECT_EQ(parse_likert("Neither agree nor disagree"), 3);
  EXPECT_FALSE(parse_likert("I prefer not to say"));
  EXPECT_FALSE(parse_likert("between 2 and 4"));
  EXPECT_FALSE(parse_likert("7"));
  EXPECT_FALSE(parse_likert("3.5"));
  EXPECT_FALSE(parse_likert("I do not agree"));
}

TEST(Administer, UniformAnswers) {
  const auto inv = shipped("big_five.json");
  const auto adm = administer_with(inv, [](const InventoryItem&) { return std::string("3"); });
  EXPECT_EQ(adm.coverage, 1.0);
  for (const auto& r : adm.responses) EXPECT_EQ(r.value, 3);
  EXPECT_EQ(adm.transcripts.size(), inv.items.size());
}

TEST(Administer, SkippedItemLowersCoverage) {
  const auto inv = shipped("hexaco.json");
  const std::string skipped = inv.items[5].item_id;
  const auto adm = administer_with(inv, [&](const InventoryItem& item) {
    return item.item_id == skipped ? std::string("I prefer not to say") : std::string("4");
  });
  const double n = static_cast<double>(inv.items.size());
  EXPECT_DOUBLE_EQ(adm.coverage, (n - 1) / n);
  EXPECT_TRUE(adm.responses[5].skipped());
}

TEST(Administer, FreshContextPerItem) {
  const auto inv = shipped("mbti.json");
  std::atomic<size_t> max_messages{0};
  auto transport = std::make_shared<FunctionTransport>([&](const ModelDescriptor&, const CompletionRequest& req) {
    max_messages = std::max<size_t>(max_messages, req.messages.size());
    return std::string("2");
  });
  Gateway g(transport, fast_gateway(), std::make_shared<ManualClock>());
  administer(g, model("m"), inv);
  EXPECT_EQ(max_messages, 1u);
}

TEST(Dimensional, NeutralIsFifty) {
  for (const char* f : {"big_five.json", "hexaco.json"}) {
    const auto inv = shipped(f);
    const auto r = score_inventory(uniform(inv, 3), inv);
    EXPECT_EQ(r.dimensions.size(), framework_dimensions(inv.framework).size());
    for (const auto& d : r.dimensions) EXPECT_EQ(*d.score, 50.0) << f << " " << d.dimension;
  }
}

TEST(Dimensional, BoundsAndReversal) {
  Inventory inv;
  inv.framework = Framework::BigFive;
  inv.items = {{"p1", "a", Framework::BigFive, "openness", Keyed::Positive},
               {"p2", "b", Framework::BigFive, "openness", Keyed::Positive},
               {"r1", "c", Framework::BigFive, "extraversion", Keyed::Positive},
               {"r2", "d", Framework::BigFive, "extraversion", Keyed::Reversed}};
  const auto r = score_dimensional({{"p1", 5, "", ""}, {"p2", 5, "", ""}, {"r1", 5, "", ""}, {"r2", 1, "", ""}}, inv);
  for (const auto& d : r.dimensions) {
    if (d.dimension == "openness" || d.dimension == "extraversion") {
      EXPECT_EQ(*d.score, 100.0);
    } else {
      EXPECT_FALSE(d.score) << d.dimension;
    }
  }
}

TEST(Mbti, NeutralTiesFlagged) {
  const auto inv = shipped("mbti.json");
  const auto r = score_mbti(uniform(inv, 3), inv);
  EXPECT_EQ(r.mbti_type, "ESTJ");
  for (const auto& d : r.dichotomies) {
    EXPECT_EQ(*d.strength, 50.0);
    EXPECT_TRUE(d.tie);
  }
}

TEST(Mbti, MaximalSecondPoles) {
  const auto inv = shipped("mbti.json");
  std::vector<ItemResponse> resp;
  for (const auto& item : inv.items) resp.push_back({item.item_id, item.keyed == Keyed::Positive ? 1 : 5, "", ""});
  const auto r = score_mbti(resp, inv);
  EXPECT_EQ(r.mbti_type, "INFP");
  for (const auto& d : r.dichotomies) {
    EXPECT_EQ(*d.strength, 100.0);
    EXPECT_FALSE(d.tie);
  }
}

TEST(Mbti, PartialLean) {
  Inventory inv;
  inv.framework = Framework::MBTI;
  for (const auto& dich : framework_dimensions(Framework::MBTI))
    inv.items.push_back({dich + "1", dich, Framework::MBTI, dich, Keyed::Positive});
  // 3.4 on a 1-5 scale is 60% toward the first pole.
  inv.items.push_back({"EI2", "EI b", Framework::MBTI, "EI", Keyed::Positive});
  const auto r = score_mbti({{"EI1", 4, "", ""}, {"EI2", 3, "", ""}, {"SN1", 3, "", ""}, {"TF1", 3, "", ""},
                             {"JP1", 3, "", ""}},
                            inv);
  EXPECT_EQ(r.mbti_type, "ESTJ");
  EXPECT_NEAR(*r.dichotomies[0].strength, 62.5, 1e-12);
  EXPECT_FALSE(r.dichotomies[0].tie);
  for (size_t i = 1; i < 4; ++i) EXPECT_TRUE(r.dichotomies[i].tie);
}

TEST(Mbti, MidpointFlipFlipsLetters) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> likert(1, 5);
  const auto inv = shipped("mbti.json");
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<ItemResponse> a, b;
    for (const auto& item : inv.items) {
      const int v = likert(rng);
      a.push_back({item.item_id, v, "", ""});
      b.push_back({item.item_id, 6 - v, "", ""});
    }
    const auto ra = score_mbti(a, inv), rb = score_mbti(b, inv);
    for (size_t i = 0; i < 4; ++i) {
      EXPECT_GE(*ra.dichotomies[i].strength, 50.0);
      EXPECT_LE(*ra.dichotomies[i].strength, 100.0);
      if (!ra.dichotomies[i].tie) {
        EXPECT_NE(ra.mbti_type[i], rb.mbti_type[i]);
      }
    }
  }
}

TEST(Enneagram, UniformIsEqualSplit) {
  const auto inv = shipped("enneagram.json");
  const auto r = score_enneagram(uniform(inv, 3), inv);
  ASSERT_TRUE(r.enneagram);
  double total = 0;
  for (const auto& p : r.enneagram->percentages) {
    EXPECT_NEAR(*p, 100.0 / 9, 1e-9);
    total += *p;
  }
  EXPECT_NEAR(total, 100.0, 0.01);
  EXPECT_EQ(*r.enneagram->primary, 1);
  EXPECT_TRUE(r.enneagram->tie);
}

TEST(Enneagram, DominantAndTiedTypes) {
  const auto inv = shipped("enneagram.json");
  std::vector<ItemResponse> resp;
  for (const auto& item : inv.items) resp.push_back({item.item_id, item.dimension == "4" ? 5 : 1, "", ""});
  auto r = score_enneagram(resp, inv);
  EXPECT_EQ(*r.enneagram->primary, 4);
  EXPECT_FALSE(r.enneagram->tie);

  for (size_t i = 0; i < inv.items.size(); ++i)
    if (inv.items[i].dimension == "7" || inv.items[i].dimension == "4") resp[i].value = 5;
  r = score_enneagram(resp, inv);
  EXPECT_EQ(*r.enneagram->primary, 4);
  EXPECT_TRUE(r.enneagram->tie);
  EXPECT_EQ(*r.enneagram->percentages[3], *r.enneagram->percentages[6]);
}

TEST(Enneagram, AllSkippedIsUndefined) {
  const auto inv = shipped("enneagram.json");
  std::vector<ItemResponse> resp;
  for (const auto& item : inv.items) resp.push_back({item.item_id, std::nullopt, "no", ""});
  const auto r = score_enneagram(resp, inv);
  EXPECT_FALSE(r.enneagram->primary);
}

TEST(Properties, ReversalInvolution) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 100; ++trial) EXPECT_TRUE(reversal_involution_holds(rng, random_inventory(rng)));
}

TEST(Properties, OrderInvariance) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> likert(1, 5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto inv = random_inventory(rng);
    std::vector<ItemResponse> resp;
    for (const auto& item : inv.items) resp.push_back({item.item_id, likert(rng), "", ""});
    auto shuffled = inv;
    std::shuffle(shuffled.items.begin(), shuffled.items.end(), rng);
    const auto x = scores_of(score_inventory(resp, inv)), y = scores_of(score_inventory(resp, shuffled));
    ASSERT_EQ(x.size(), y.size());
    for (size_t i = 0; i < x.size(); ++i) {
      ASSERT_EQ(x[i].has_value(), y[i].has_value());
      if (x[i]) {
        EXPECT_NEAR(*x[i], *y[i], 1e-9);
      }
    }
  }
}

TEST(Properties, EnneagramSumsAndArgmax) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> likert(1, 5);
  const auto inv = shipped("enneagram.json");
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<ItemResponse> resp;
    for (const auto& item : inv.items) resp.push_back({item.item_id, likert(rng), "", ""});
    const auto e = *score_enneagram(resp, inv).enneagram;
    double total = 0, best = 0;
    for (const auto& p : e.percentages) {
      total += *p;
      best = std::max(best, *p);
    }
    EXPECT_NEAR(total, 100.0, 0.01);
    EXPECT_EQ(*e.percentages[*e.primary - 1], best);
  }
}

TEST(Json, ResultRoundTrip) {
  for (const char* f : {"big_five.json", "mbti.json", "enneagram.json"}) {
    const auto inv = shipped(f);
    auto r = score_inventory(uniform(inv, 4), inv);
    r.model_id = "m";
    const auto back = personality_from_json(json::parse(to_json(r).dump()));
    EXPECT_EQ(to_json(back), to_json(r)) << f;
  }
}

TEST(Replay, DeterministicResult) {
  const auto inv = shipped("big_five.json");
  const auto m = model("m");
  ReplayArchive archive;
  int k = 0;
  for (const auto& item : inv.items) archive.add(m.model_id, build_inventory_prompt(item), std::to_string(1 + k++ % 5));
  auto once = [&] {
    Gateway g(replay_session(archive), fast_gateway(), std::make_shared<ManualClock>());
    auto r = score_inventory(administer(g, m, inv).responses, inv);
    r.administered_at = {};
    return to_json(r);
  };
  EXPECT_EQ(once(), once());
}
