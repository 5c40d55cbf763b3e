#pragma once
// Adapted personality inventories administered to a model one item at a time,
// scored as Big Five / HEXACO dimensions, MBTI type, or Enneagram type.

#include <algorithm>
#include <array>
#include <atomic>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "mhbench/common.hpp"
#include "mhbench/model_gateway.hpp"

namespace mhbench {

enum class Framework { BigFive, HEXACO, MBTI, Enneagram };

inline std::string_view to_string(Framework f) {
  switch (f) {
    case Framework::BigFive:
      return "big_five";
    case Framework::HEXACO:
      return "hexaco";
    case Framework::MBTI:
      return "mbti";
    case Framework::Enneagram:
      return "enneagram";
  }
  return "big_five";
}

inline std::optional<Framework> parse_framework(std::string_view s) {
  const std::string l = to_lower(s);
  if (l == "big_five" || l == "bigfive" || l == "big5") return Framework::BigFive;
  if (l == "hexaco") return Framework::HEXACO;
  if (l == "mbti") return Framework::MBTI;
  if (l == "enneagram") return Framework::Enneagram;
  return std::nullopt;
}

/// Axis labels in display order.
inline const std::vector<std::string>& framework_dimensions(Framework f) {
  static const std::vector<std::string> big_five{"openness", "conscientiousness", "extraversion", "agreeableness",
                                                 "neuroticism"};
  static const std::vector<std::string> hexaco{"honesty_humility", "emotionality",      "extraversion",
                                               "agreeableness",    "conscientiousness", "openness"};
  static const std::vector<std::string> mbti{"EI", "SN", "TF", "JP"};
  static const std::vector<std::string> enneagram{"1", "2", "3", "4", "5", "6", "7", "8", "9"};
  switch (f) {
    case Framework::BigFive:
      return big_five;
    case Framework::HEXACO:
      return hexaco;
    case Framework::MBTI:
      return mbti;
    case Framework::Enneagram:
      return enneagram;
  }
  return big_five;
}

enum class Keyed { Positive, Reversed };

inline constexpr int kLikertMin = 1;
inline constexpr int kLikertMax = 5;

/// Maps a response onto the item's keyed direction (x -> 6 - x when reversed).
inline int keyed_score(int response, Keyed keyed) {
  return keyed == Keyed::Positive ? response : (kLikertMin + kLikertMax) - response;
}

struct InventoryItem {
  std::string item_id;
  std::string text;
  Framework framework = Framework::BigFive;
  std::string dimension;
  Keyed keyed = Keyed::Positive;
};

struct ReferenceRange {
  double low = 0;
  double high = 100;
  std::string citation;
};

struct Inventory {
  std::string inventory_id;
  std::string version;
  Framework framework = Framework::BigFive;
  bool adapted = false;
  std::string source;
  std::vector<InventoryItem> items;
  std::map<std::string, ReferenceRange> reference_ranges;
};

namespace detail {

inline Inventory inventory_fields(const json& j) {
  Inventory inv;
  inv.inventory_id = j.at("inventory_id").get<std::string>();
  inv.version = j.at("version").get<std::string>();
  auto fw = parse_framework(j.at("framework").get<std::string>());
  if (!fw) throw InvalidInputError("inventory: unknown framework");
  inv.framework = *fw;
  inv.adapted = j.value("adapted", false);
  inv.source = j.value("source", "");
  const auto& dims = framework_dimensions(inv.framework);
  std::set<std::string> ids;
  for (const auto& ij : j.at("items")) {
    InventoryItem item;
    item.item_id = ij.at("item_id").get<std::string>();
    if (!ids.insert(item.item_id).second) throw InvalidInputError("inventory: duplicate item_id " + item.item_id);
    item.text = ij.at("text").get<std::string>();
    item.framework = inv.framework;
    item.dimension = ij.at("dimension").get<std::string>();
    if (std::find(dims.begin(), dims.end(), item.dimension) == dims.end()) {
      throw InvalidInputError("inventory: dimension '" + item.dimension + "' is not valid for " +
                              std::string(to_string(inv.framework)));
    }
    const std::string keyed = ij.value("keyed", "positive");
    if (keyed != "positive" && keyed != "reversed") throw InvalidInputError("inventory: keyed must be positive|reversed");
    item.keyed = keyed == "positive" ? Keyed::Positive : Keyed::Reversed;
    inv.items.push_back(std::move(item));
  }
  if (inv.items.empty()) throw InvalidInputError("inventory: no items");
  if (auto it = j.find("reference_ranges"); it != j.end()) {
    for (const auto& rj : *it) {
      ReferenceRange r{rj.at("low").get<double>(), rj.at("high").get<double>(), rj.value("citation", "")};
      // Ranges are shown only with a citation.
      if (r.citation.empty()) throw InvalidInputError("inventory: reference range without citation");
      inv.reference_ranges[rj.at("dimension").get<std::string>()] = std::move(r);
    }
  }
  return inv;
}

}  // namespace detail

inline Inventory inventory_from_json(const json& j) {
  try {
    return detail::inventory_fields(j);
  } catch (const json::exception& e) {
    throw InvalidInputError(std::string("inventory: ") + e.what());
  }
}

inline Inventory load_inventory(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  if (!json::accept(text)) throw InvalidInputError("inventory: " + path.string() + " is not valid JSON");
  return inventory_from_json(json::parse(text));
}

// ---------------------------------------------------------------------------
// Likert parsing

namespace detail {

inline std::vector<long> standalone_integers(std::string_view text) {
  std::vector<long> out;
  size_t i = 0;
  auto is_word = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_'; };
  while (i < text.size()) {
    if (std::isdigit(static_cast<unsigned char>(text[i])) && (i == 0 || !is_word(text[i - 1]))) {
      size_t j = i;
      while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
      const bool decimal = j + 1 < text.size() && text[j] == '.' && std::isdigit(static_cast<unsigned char>(text[j + 1]));
      if (!decimal && (j == text.size() || !std::isalpha(static_cast<unsigned char>(text[j])))) {
        out.push_back(std::stol(std::string(text.substr(i, std::min<size_t>(j - i, 9)))));
      }
      i = j;
    } else {
      ++i;
    }
  }
  return out;
}

}  // namespace detail

/// Accepts a bare integer 1-5, exactly one integer embedded in a phrase, or a
/// canonical anchor phrase. Anything else (including several numbers) is
/// treated as Skipped.
inline std::optional<int> parse_likert(std::string_view text) {
  const auto numbers = detail::standalone_integers(text);
  std::set<long> distinct(numbers.begin(), numbers.end());
  if (distinct.size() == 1) {
    const long v = *distinct.begin();
    if (v >= kLikertMin && v <= kLikertMax) return static_cast<int>(v);
    return std::nullopt;
  }
  if (distinct.size() > 1) return std::nullopt;

  const std::string l = to_lower(text);
  for (std::string_view neg : {"not agree", "don't agree", "do not agree", "not disagree", "don't disagree"}) {
    if (l.find(neg) != std::string::npos) return std::nullopt;
  }
  static const std::array<std::pair<std::string_view, int>, 7> kAnchors{{
      {"neither agree nor disagree", 3},
      {"strongly disagree", 1},
      {"strongly agree", 5},
      {"disagree", 2},
      {"agree", 4},
      {"neutral", 3},
      {"undecided", 3},
  }};
  for (const auto& [phrase, value] : kAnchors) {
    if (l.find(phrase) != std::string::npos) return value;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Administration

struct ItemResponse {
  std::string item_id;
  std::optional<int> value;  // nullopt = Skipped
  std::string raw_text;
  std::string transcript_ref;

  bool skipped() const { return !value.has_value(); }
};

struct AdministrationConfig {
  double temperature = 0.0;
  int max_output_tokens = 64;
  int workers = 1;
};

struct Administration {
  std::vector<ItemResponse> responses;
  std::vector<Transcript> transcripts;
  double coverage = 0.0;
  Timestamp administered_at{};
};

inline CompletionRequest build_inventory_prompt(const InventoryItem& item, const AdministrationConfig& config = {}) {
  CompletionRequest req;
  req.messages.push_back(
      {"user",
       "Read the statement below and say how well it describes you.\n\nStatement: " + item.text +
           "\n\nAnswer with a single number from 1 to 5, where 1 = strongly disagree, 2 = disagree, "
           "3 = neither agree nor disagree, 4 = agree, 5 = strongly agree."});
  req.temperature = config.temperature;
  req.max_output_tokens = config.max_output_tokens;
  return req;
}

inline double response_coverage(const std::vector<ItemResponse>& responses) {
  if (responses.empty()) return 0.0;
  const auto parsed = std::count_if(responses.begin(), responses.end(), [](const auto& r) { return !r.skipped(); });
  return static_cast<double>(parsed) / static_cast<double>(responses.size());
}

/// Each item goes out as its own single-message conversation.
inline Administration administer(Gateway& gateway, const ModelDescriptor& model, const Inventory& inventory,
                                 const AdministrationConfig& config = {}) {
  if (inventory.items.empty()) throw InvalidInputError("inventory has no items");
  Administration out;
  out.administered_at = now_utc();
  out.responses.resize(inventory.items.size());
  std::vector<std::optional<Transcript>> transcripts(inventory.items.size());
  std::atomic<size_t> next{0};
  std::atomic<bool> abort{false};
  std::exception_ptr fatal;
  std::mutex fatal_mu;
  std::atomic<size_t> failures{0};

  auto work = [&] {
    while (!abort) {
      const size_t i = next.fetch_add(1);
      if (i >= inventory.items.size()) return;
      const auto& item = inventory.items[i];
      ItemResponse& resp = out.responses[i];
      resp.item_id = item.item_id;
      try {
        Transcript t = gateway.complete(model, build_inventory_prompt(item, config));
        resp.raw_text = t.completion_text;
        resp.transcript_ref = t.fingerprint;
        resp.value = parse_likert(t.completion_text);
        transcripts[i] = std::move(t);
      } catch (const AuthenticationError&) {
        std::lock_guard lock(fatal_mu);
        if (!fatal) fatal = std::current_exception();
        abort = true;
      } catch (const GatewayError& e) {
        resp.raw_text = e.what();
        ++failures;
      }
    }
  };
  if (config.workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < config.workers; ++w) pool.emplace_back(work);
  }
  if (fatal) std::rethrow_exception(fatal);
  if (failures == inventory.items.size()) throw GatewayError("total gateway failure for " + model.model_id);
  for (auto& t : transcripts)
    if (t) out.transcripts.push_back(std::move(*t));
  out.coverage = response_coverage(out.responses);
  return out;
}

// ---------------------------------------------------------------------------
// Scoring

struct DimensionScore {
  std::string dimension;
  std::optional<double> score;  // [0, 100]; nullopt = Undefined
  size_t parsed_items = 0;
  std::optional<ReferenceRange> reference_range;
};

struct DichotomyScore {
  std::string dichotomy;  // "EI", "SN", "TF", "JP"
  char letter = '?';
  std::optional<double> strength;  // [50, 100] toward `letter`
  std::optional<double> first_pole_percent;
  bool tie = false;
};

struct EnneagramScore {
  std::optional<int> primary;  // 1..9
  std::array<std::optional<double>, 9> percentages{};
  bool tie = false;
};

struct PersonalityResult {
  std::string model_id;
  std::string inventory_id;
  std::string inventory_version;
  Framework framework = Framework::BigFive;
  std::vector<DimensionScore> dimensions;  // BigFive / HEXACO
  std::string mbti_type;                   // MBTI; '?' marks an undefined dichotomy
  std::vector<DichotomyScore> dichotomies;
  std::optional<EnneagramScore> enneagram;
  double response_coverage = 0.0;
  Timestamp administered_at{};
};

namespace detail {

/// dimension -> (sum of keyed scores, parsed count)
inline std::map<std::string, std::pair<double, size_t>> keyed_sums(const Inventory& inventory,
                                                                   const std::vector<ItemResponse>& responses) {
  std::map<std::string, const ItemResponse*> by_id;
  for (const auto& r : responses) by_id[r.item_id] = &r;
  std::map<std::string, std::pair<double, size_t>> sums;
  for (const auto& item : inventory.items) {
    auto it = by_id.find(item.item_id);
    if (it == by_id.end() || it->second->skipped()) continue;
    const int v = *it->second->value;
    if (v < kLikertMin || v > kLikertMax) throw InvalidInputError("response out of Likert range for " + item.item_id);
    auto& s = sums[item.dimension];
    s.first += keyed_score(v, item.keyed);
    s.second += 1;
  }
  return sums;
}

inline PersonalityResult result_shell(const Inventory& inventory, const std::vector<ItemResponse>& responses) {
  PersonalityResult r;
  r.inventory_id = inventory.inventory_id;
  r.inventory_version = inventory.version;
  r.framework = inventory.framework;
  r.response_coverage = response_coverage(responses);
  r.administered_at = now_utc();
  return r;
}

}  // namespace detail

/// Mean keyed score per dimension, mapped linearly from [1, 5] to [0, 100].
inline PersonalityResult score_dimensional(const std::vector<ItemResponse>& responses, const Inventory& inventory) {
  if (inventory.framework != Framework::BigFive && inventory.framework != Framework::HEXACO) {
    throw InvalidInputError("dimensional scoring needs a Big Five or HEXACO inventory");
  }
  auto result = detail::result_shell(inventory, responses);
  const auto sums = detail::keyed_sums(inventory, responses);
  for (const auto& dim : framework_dimensions(inventory.framework)) {
    DimensionScore ds;
    ds.dimension = dim;
    if (auto it = sums.find(dim); it != sums.end() && it->second.second > 0) {
      const double mean = it->second.first / static_cast<double>(it->second.second);
      ds.score = (mean - kLikertMin) / (kLikertMax - kLikertMin) * 100.0;
      ds.parsed_items = it->second.second;
    }
    if (auto it = inventory.reference_ranges.find(dim); it != inventory.reference_ranges.end()) {
      ds.reference_range = it->second;
    }
    result.dimensions.push_back(std::move(ds));
  }
  return result;
}

/// Items keyed Positive agree toward the first pole of their dichotomy
/// (E, S, T, J). Exact ties resolve to the first pole and are flagged.
inline PersonalityResult score_mbti(const std::vector<ItemResponse>& responses, const Inventory& inventory) {
  if (inventory.framework != Framework::MBTI) throw InvalidInputError("MBTI scoring needs an MBTI inventory");
  auto result = detail::result_shell(inventory, responses);
  const auto sums = detail::keyed_sums(inventory, responses);
  for (const auto& dich : framework_dimensions(Framework::MBTI)) {
    DichotomyScore ds;
    ds.dichotomy = dich;
    if (auto it = sums.find(dich); it != sums.end() && it->second.second > 0) {
      const double mean = it->second.first / static_cast<double>(it->second.second);
      const double first = (mean - kLikertMin) / (kLikertMax - kLikertMin) * 100.0;
      ds.first_pole_percent = first;
      ds.tie = first == 50.0;
      ds.letter = first >= 50.0 ? dich[0] : dich[1];
      ds.strength = std::max(first, 100.0 - first);
    }
    result.mbti_type.push_back(ds.letter);
    result.dichotomies.push_back(std::move(ds));
  }
  return result;
}

/// Per-type keyed means normalized to percentages; primary is the argmax,
/// lowest type number on ties. Types with no parsed item stay undefined.
inline PersonalityResult score_enneagram(const std::vector<ItemResponse>& responses, const Inventory& inventory) {
  if (inventory.framework != Framework::Enneagram) {
    throw InvalidInputError("Enneagram scoring needs an Enneagram inventory");
  }
  auto result = detail::result_shell(inventory, responses);
  const auto sums = detail::keyed_sums(inventory, responses);
  EnneagramScore es;
  std::array<std::optional<double>, 9> means{};
  double total = 0;
  for (int t = 1; t <= 9; ++t) {
    if (auto it = sums.find(std::to_string(t)); it != sums.end() && it->second.second > 0) {
      means[t - 1] = it->second.first / static_cast<double>(it->second.second);
      total += *means[t - 1];
    }
  }
  if (total > 0) {
    double best = -1;
    for (int t = 1; t <= 9; ++t) {
      if (!means[t - 1]) continue;
      es.percentages[t - 1] = *means[t - 1] / total * 100.0;
      if (*means[t - 1] > best) {
        best = *means[t - 1];
        es.primary = t;
        es.tie = false;
      } else if (*means[t - 1] == best) {
        es.tie = true;
      }
    }
  }
  result.enneagram = es;
  return result;
}

inline PersonalityResult score_inventory(const std::vector<ItemResponse>& responses, const Inventory& inventory) {
  switch (inventory.framework) {
    case Framework::BigFive:
    case Framework::HEXACO:
      return score_dimensional(responses, inventory);
    case Framework::MBTI:
      return score_mbti(responses, inventory);
    case Framework::Enneagram:
      return score_enneagram(responses, inventory);
  }
  throw InvalidInputError("unknown framework");
}

// ---------------------------------------------------------------------------

inline json to_json(const PersonalityResult& r) {
  json j{{"model_id", r.model_id},
         {"inventory_id", r.inventory_id},
         {"inventory_version", r.inventory_version},
         {"framework", to_string(r.framework)},
         {"response_coverage", r.response_coverage},
         {"administered_at", format_iso8601(r.administered_at)}};
  if (r.framework == Framework::BigFive || r.framework == Framework::HEXACO) {
    json dims = json::array();
    for (const auto& d : r.dimensions) {
      json dj{{"dimension", d.dimension}, {"score", to_json_or_null(d.score)}, {"parsed_items", d.parsed_items}};
      if (d.reference_range) {
        dj["reference_range"] = {{"low", d.reference_range->low},
                                 {"high", d.reference_range->high},
                                 {"citation", d.reference_range->citation}};
      }
      dims.push_back(std::move(dj));
    }
    j["dimensions"] = dims;
  } else if (r.framework == Framework::MBTI) {
    j["type"] = r.mbti_type;
    json dichs = json::array();
    for (const auto& d : r.dichotomies) {
      dichs.push_back({{"dichotomy", d.dichotomy},
                       {"letter", std::string(1, d.letter)},
                       {"strength", to_json_or_null(d.strength)},
                       {"first_pole_percent", to_json_or_null(d.first_pole_percent)},
                       {"tie", d.tie}});
    }
    j["dichotomies"] = dichs;
  } else if (r.enneagram) {
    json pct = json::object();
    for (int t = 1; t <= 9; ++t) pct[std::to_string(t)] = to_json_or_null(r.enneagram->percentages[t - 1]);
    j["primary_type"] = r.enneagram->primary ? json(*r.enneagram->primary) : json(nullptr);
    j["percentages"] = pct;
    j["tie"] = r.enneagram->tie;
  }
  return j;
}

inline PersonalityResult personality_from_json(const json& j) {
  PersonalityResult r;
  r.model_id = j.at("model_id").get<std::string>();
  r.inventory_id = j.value("inventory_id", "");
  r.inventory_version = j.value("inventory_version", "");
  auto fw = parse_framework(j.at("framework").get<std::string>());
  if (!fw) throw InvalidInputError("framework: unknown value");
  r.framework = *fw;
  r.response_coverage = j.value("response_coverage", 0.0);
  r.administered_at = parse_iso8601(j.value("administered_at", "")).value_or(Timestamp{});
  if (auto it = j.find("dimensions"); it != j.end()) {
    for (const auto& dj : *it) {
      DimensionScore d;
      d.dimension = dj.at("dimension").get<std::string>();
      d.score = optional_number(dj, "score");
      d.parsed_items = dj.value("parsed_items", size_t{0});
      if (auto rr = dj.find("reference_range"); rr != dj.end()) {
        d.reference_range = ReferenceRange{rr->at("low").get<double>(), rr->at("high").get<double>(),
                                           rr->value("citation", "")};
      }
      r.dimensions.push_back(std::move(d));
    }
  }
  r.mbti_type = j.value("type", "");
  if (auto it = j.find("dichotomies"); it != j.end()) {
    for (const auto& dj : *it) {
      DichotomyScore d;
      d.dichotomy = dj.at("dichotomy").get<std::string>();
      d.letter = dj.at("letter").get<std::string>().at(0);
      d.strength = optional_number(dj, "strength");
      d.first_pole_percent = optional_number(dj, "first_pole_percent");
      d.tie = dj.value("tie", false);
      r.dichotomies.push_back(std::move(d));
    }
  }
  if (auto it = j.find("percentages"); it != j.end()) {
    EnneagramScore es;
    for (int t = 1; t <= 9; ++t) es.percentages[t - 1] = optional_number(*it, std::to_string(t).c_str());
    if (auto p = j.find("primary_type"); p != j.end() && !p->is_null()) es.primary = p->get<int>();
    es.tie = j.value("tie", false);
    r.enneagram = es;
  }
  return r;
}

}  // namespace mhbench
