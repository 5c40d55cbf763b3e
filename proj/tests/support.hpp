#pragma once
// Shared fixtures, generators and brute-force oracles for the test binaries.

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "mhbench/mhbench.hpp"

namespace testing_support {

using namespace mhbench;

inline const std::filesystem::path kData = MHBENCH_DATA_DIR;
inline const std::filesystem::path kFixtures = MHBENCH_TEST_FIXTURES;

inline BenchmarkSuite single_item_suite() { return load_suite_or_throw(kFixtures / "single_item_suite"); }

inline std::filesystem::path temp_dir(const std::string& tag) {
  static std::mt19937_64 rng(std::random_device{}());
  auto dir = std::filesystem::temp_directory_path() / ("mhbench-" + tag + "-" + std::to_string(rng()));
  std::filesystem::create_directories(dir);
  return dir;
}

struct TempDir {
  explicit TempDir(const std::string& tag) : path(temp_dir(tag)) {}
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::filesystem::path path;
};

inline ModelDescriptor model(std::string id, ModelKind kind = ModelKind::BaseModel) {
  ModelDescriptor m;
  m.model_id = id;
  m.kind = kind;
  m.display_name = "Model " + id;
  m.provider_endpoint = "replay";
  m.version_label = "v1";
  if (kind == ModelKind::Tool) m.base_of = "base-x";
  return m;
}

/// Means drawn from a coarse grid so equal means (ties) occur now and then.
/// With `exact`, the suite has exactly `max_items` items, all validated.
inline BenchmarkSuite random_suite(std::mt19937_64& rng, size_t max_items = 50, size_t max_responses = 4,
                                   bool exact = false) {
  BenchmarkSuite s;
  s.suite_id = "rand";
  s.name = "random";
  s.version = "1";
  s.domain = "test";
  s.taxonomy = seed_taxonomy();
  std::uniform_int_distribution<size_t> n_items(1, max_items);
  std::uniform_int_distribution<size_t> n_resp(2, max_responses);
  std::uniform_int_distribution<int> grid(-12, 12);
  std::uniform_real_distribution<double> sd(0.0, 1.5);
  std::bernoulli_distribution coin(0.5), pending(0.1);
  const size_t count = exact ? max_items : n_items(rng);
  for (size_t i = 0; i < count; ++i) {
    BenchmarkItem item;
    item.item_id = "i" + std::to_string(i);
    item.stimulus = "stimulus [[" + item.item_id + "]]";
    item.status = !exact && pending(rng) ? ItemStatus::PendingExpertRatings : ItemStatus::Validated;
    const size_t nr = n_resp(rng);
    for (size_t r = 0; r < nr; ++r) {
      CandidateResponse c;
      c.key = "r" + std::to_string(r);
      c.text = "response [[" + item.item_id + ":" + c.key + "]]";
      if (item.is_validated()) {
        c.expert_mean = grid(rng) / 4.0;
        c.expert_sd = sd(rng);
        c.n_raters = 5;
      }
      item.responses.push_back(c);
    }
    for (const auto& t : s.taxonomy)
      if (coin(rng)) item.techniques.push_back(t.technique_id);
    std::sort(item.techniques.begin(), item.techniques.end());
    s.items.push_back(std::move(item));
  }
  return s;
}

/// Ratings for every validated pair; some unparsed, some on the same grid as
/// the expert means so prediction ties occur.
inline std::vector<ModelRating> random_ratings(std::mt19937_64& rng, const BenchmarkSuite& s, double parse_rate = 0.85) {
  std::bernoulli_distribution parsed(parse_rate), on_grid(0.5);
  std::uniform_int_distribution<int> grid(-12, 12);
  std::uniform_real_distribution<double> real(-3.0, 3.0);
  std::vector<ModelRating> out;
  for (const auto& item : s.items) {
    if (!item.is_validated()) continue;
    for (const auto& resp : item.responses) {
      ModelRating r;
      r.item_id = item.item_id;
      r.response_key = resp.key;
      r.attempts = 1;
      if (parsed(rng)) {
        r.parse_status = ParseStatus::Parsed;
        r.predicted_score = on_grid(rng) ? grid(rng) / 4.0 : real(rng);
        r.reasoning_trace = "trace for " + item.item_id + "/" + resp.key;
      }
      out.push_back(r);
    }
  }
  return out;
}

struct ReferenceScore {
  std::optional<double> rmse, mae, preference_accuracy;
  double coverage = 1.0;
  std::map<std::string, std::optional<double>> per_technique_rmse;
};

/// Naive recomputation: gathers every (item, response) error into flat lists
/// and enumerates every ordered pair of responses.
inline ReferenceScore reference_score(const std::vector<ModelRating>& ratings, const BenchmarkSuite& s) {
  auto lookup = [&](const std::string& item, const std::string& key) -> const ModelRating* {
    for (const auto& r : ratings)
      if (r.item_id == item && r.response_key == key) return &r;
    return nullptr;
  };
  std::vector<double> errors;
  size_t total = 0;
  std::map<std::string, std::vector<double>> by_tag;
  size_t pairs = 0, agree = 0;
  for (const auto& item : s.items) {
    if (!item.is_validated()) continue;
    for (const auto& tag : item.techniques) by_tag[tag];
    for (const auto& resp : item.responses) {
      const auto* r = lookup(item.item_id, resp.key);
      if (!r) continue;
      ++total;
      if (!r->parsed()) continue;
      const double e = *r->predicted_score - *resp.expert_mean;
      errors.push_back(e);
      for (const auto& tag : item.techniques) by_tag[tag].push_back(e);
    }
    for (const auto& x : item.responses) {
      for (const auto& y : item.responses) {
        if (&x == &y || !(*x.expert_mean > *y.expert_mean)) continue;  // x preferred over y
        const auto* rx = lookup(item.item_id, x.key);
        const auto* ry = lookup(item.item_id, y.key);
        if (!rx || !ry || !rx->parsed() || !ry->parsed()) continue;
        ++pairs;
        if (*rx->predicted_score > *ry->predicted_score) ++agree;
      }
    }
  }
  ReferenceScore out;
  auto rms = [](const std::vector<double>& v) {
    double s = 0;
    for (double e : v) s += e * e;
    return std::sqrt(s / static_cast<double>(v.size()));
  };
  if (!errors.empty()) {
    out.rmse = rms(errors);
    double a = 0;
    for (double e : errors) a += std::fabs(e);
    out.mae = a / static_cast<double>(errors.size());
  }
  if (pairs > 0) out.preference_accuracy = static_cast<double>(agree) / static_cast<double>(pairs);
  out.coverage = total == 0 ? 1.0 : static_cast<double>(errors.size()) / static_cast<double>(total);
  for (const auto& [tag, v] : by_tag) out.per_technique_rmse[tag] = v.empty() ? std::nullopt : std::optional(rms(v));
  return out;
}

/// Replay archive whose answer for every validated pair is `answer(item, response)`.
template <typename Answer>
ReplayArchive archive_for(const ModelDescriptor& m, const BenchmarkSuite& s, Answer answer, const RunConfig& config = {},
                          const TemplateRegistry& templates = TemplateRegistry{}) {
  ReplayArchive archive;
  for (const auto& item : s.items) {
    if (!item.is_validated()) continue;
    for (const auto& resp : item.responses) {
      archive.add(m.model_id,
                  build_rating_prompt(item, resp, s.scale, config.template_id, templates, config.temperature,
                                      config.max_output_tokens),
                  answer(item, resp));
    }
  }
  return archive;
}

inline ReplayArchive oracle_archive(const ModelDescriptor& m, const BenchmarkSuite& s, const RunConfig& config = {}) {
  return archive_for(m, s, [](const BenchmarkItem&, const CandidateResponse& r) {
    return "The response matches expert consensus.\nRATING: " + format_number(*r.expert_mean);
  }, config);
}

inline Inventory random_inventory(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> fw(0, 3), count(1, 6);
  std::bernoulli_distribution coin(0.5);
  Inventory inv;
  inv.inventory_id = "rand";
  inv.version = "1";
  inv.framework = static_cast<Framework>(fw(rng));
  int n = 0;
  for (const auto& dim : framework_dimensions(inv.framework)) {
    const int k = count(rng);
    for (int i = 0; i < k; ++i) {
      InventoryItem item;
      item.item_id = "it" + std::to_string(n++);
      item.text = "statement " + item.item_id;
      item.framework = inv.framework;
      item.dimension = dim;
      item.keyed = coin(rng) ? Keyed::Positive : Keyed::Reversed;
      inv.items.push_back(item);
    }
  }
  return inv;
}

/// Every score a result carries, in a fixed order, for equality checks.
inline std::vector<std::optional<double>> scores_of(const PersonalityResult& r) {
  std::vector<std::optional<double>> out;
  for (const auto& d : r.dimensions) out.push_back(d.score);
  for (const auto& d : r.dichotomies) out.push_back(d.first_pole_percent);
  if (r.enneagram)
    for (const auto& p : r.enneagram->percentages) out.push_back(p);
  return out;
}

/// Scores `inv` and a copy with every key flipped and every response x
/// replaced by 6 - x; the two must agree.
inline bool reversal_involution_holds(std::mt19937_64& rng, const Inventory& inv) {
  std::uniform_int_distribution<int> likert(1, 5);
  std::bernoulli_distribution skip(0.1);
  auto flipped = inv;
  for (auto& item : flipped.items) item.keyed = item.keyed == Keyed::Positive ? Keyed::Reversed : Keyed::Positive;
  std::vector<ItemResponse> a, b;
  for (const auto& item : inv.items) {
    const std::optional<int> v = skip(rng) ? std::nullopt : std::optional(likert(rng));
    a.push_back({item.item_id, v, "", ""});
    b.push_back({item.item_id, v ? std::optional(6 - *v) : std::nullopt, "", ""});
  }
  return scores_of(score_inventory(a, inv)) == scores_of(score_inventory(b, flipped));
}

inline GatewayConfig fast_gateway() {
  GatewayConfig g;
  g.rate_ceiling = 1000000;
  g.retry.initial_backoff = std::chrono::milliseconds(0);
  return g;
}

}  // namespace testing_support
