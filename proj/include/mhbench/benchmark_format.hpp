#pragma once
// Unified benchmark format: a stimulus plus expert-rated candidate responses,
// tagged with the adversarial techniques embedded in the item.
//
// On disk a suite is either a directory holding `manifest.json` and
// `items.jsonl`, or a single bundle file whose first record is
// `{"manifest": {...}}` followed by one item per line.

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "mhbench/common.hpp"

namespace mhbench {

struct RatingScale {
  double min = -3.0;
  double max = 3.0;

  bool contains(double v) const { return v >= min && v <= max; }
  double clamp(double v) const { return std::clamp(v, min, max); }
  bool operator==(const RatingScale&) const = default;
};

struct AdversarialTechnique {
  std::string technique_id;
  std::string description;
  bool operator==(const AdversarialTechnique&) const = default;
};

/// The four techniques every new taxonomy starts from. Suites may add more.
inline std::vector<AdversarialTechnique> seed_taxonomy() {
  return {
      {"information_gap", "Key clinical facts are withheld; a sound answer asks for them."},
      {"counterfactual_variation", "A minimally edited twin of another item whose correct rating differs."},
      {"distractor_information", "Salient but irrelevant details are included."},
      {"anchoring_bias", "An early cue invites premature commitment to one reading."},
  };
}

struct CandidateResponse {
  std::string key;
  std::string text;
  std::optional<double> expert_mean;
  std::optional<double> expert_sd;
  std::optional<int> n_raters;
  bool operator==(const CandidateResponse&) const = default;
};

enum class ItemStatus { Validated, PendingExpertRatings };

inline std::string_view to_string(ItemStatus s) {
  return s == ItemStatus::Validated ? "validated" : "pending_expert_ratings";
}

inline std::optional<ItemStatus> parse_item_status(std::string_view s) {
  if (s == "validated") return ItemStatus::Validated;
  if (s == "pending_expert_ratings") return ItemStatus::PendingExpertRatings;
  return std::nullopt;
}

struct BenchmarkItem {
  std::string item_id;
  std::string stimulus;
  std::vector<CandidateResponse> responses;
  std::vector<std::string> techniques;  // sorted, unique
  ItemStatus status = ItemStatus::Validated;

  bool is_validated() const { return status == ItemStatus::Validated; }
  bool has_technique(std::string_view id) const {
    return std::binary_search(techniques.begin(), techniques.end(), id);
  }
  bool operator==(const BenchmarkItem&) const = default;
};

struct BenchmarkSuite {
  std::string suite_id;
  std::string name;
  std::string version;
  std::string domain;
  RatingScale scale;
  std::vector<AdversarialTechnique> taxonomy;
  std::vector<BenchmarkItem> items;

  const BenchmarkItem* find_item(std::string_view item_id) const {
    for (const auto& item : items)
      if (item.item_id == item_id) return &item;
    return nullptr;
  }
  bool knows_technique(std::string_view id) const {
    return std::any_of(taxonomy.begin(), taxonomy.end(), [&](const auto& t) { return t.technique_id == id; });
  }
  bool operator==(const BenchmarkSuite&) const = default;
};

struct PreferencePair {
  std::string item_id;
  std::string stimulus;
  std::string chosen;
  std::string rejected;
  double margin = 0.0;
  bool operator==(const PreferencePair&) const = default;
};

// ---------------------------------------------------------------------------
// Diagnostics

enum class Severity { Error, Warning };

struct Diagnostic {
  Severity severity = Severity::Error;
  std::optional<size_t> line;  // line within the items stream, when known
  std::string item_id;
  std::string message;

  std::string render() const {
    std::string out = severity == Severity::Error ? "error" : "warning";
    if (line) out += ": line " + std::to_string(*line);
    out += ": " + message;
    return out;
  }
};

struct SuiteParseResult {
  std::optional<BenchmarkSuite> suite;
  std::vector<Diagnostic> diagnostics;

  size_t error_count() const {
    return static_cast<size_t>(std::count_if(diagnostics.begin(), diagnostics.end(),
                                             [](const auto& d) { return d.severity == Severity::Error; }));
  }
  bool ok() const { return suite.has_value() && error_count() == 0; }
};

/// Raised when a caller needs a suite and validation failed.
class SuiteValidationError : public InvalidInputError {
 public:
  explicit SuiteValidationError(std::vector<Diagnostic> diags)
      : InvalidInputError(summarize(diags)), diagnostics_(std::move(diags)) {}
  const std::vector<Diagnostic>& diagnostics() const { return diagnostics_; }

 private:
  static std::string summarize(const std::vector<Diagnostic>& diags) {
    std::string out = "invalid suite";
    for (const auto& d : diags)
      if (d.severity == Severity::Error) out += "\n  " + d.render();
    return out;
  }
  std::vector<Diagnostic> diagnostics_;
};

namespace detail {

inline json response_to_json(const CandidateResponse& r) {
  json j{{"key", r.key}, {"text", r.text}};
  if (r.expert_mean) j["expert_mean"] = *r.expert_mean;
  if (r.expert_sd) j["expert_sd"] = *r.expert_sd;
  if (r.n_raters) j["n_raters"] = *r.n_raters;
  return j;
}

// Collects field-level problems for one record instead of throwing on the first.
class FieldReader {
 public:
  FieldReader(const json& obj, std::optional<size_t> line, std::string item_id, std::vector<Diagnostic>& out)
      : obj_(obj), line_(line), item_id_(std::move(item_id)), out_(out) {}

  std::optional<std::string> string(const char* key, bool required = true) {
    auto it = obj_.find(key);
    if (it == obj_.end() || it->is_null()) {
      if (required) fail(std::string("missing field '") + key + "'");
      return std::nullopt;
    }
    if (!it->is_string()) {
      fail(std::string("field '") + key + "' must be a string");
      return std::nullopt;
    }
    return it->get<std::string>();
  }

  std::optional<double> number(const char* key, bool required = true) {
    auto it = obj_.find(key);
    if (it == obj_.end() || it->is_null()) {
      if (required) fail(std::string("missing field '") + key + "'");
      return std::nullopt;
    }
    if (!it->is_number()) {
      fail(std::string("field '") + key + "' must be a number");
      return std::nullopt;
    }
    return it->get<double>();
  }

  const json* array(const char* key, bool required = true) {
    auto it = obj_.find(key);
    if (it == obj_.end() || it->is_null()) {
      if (required) fail(std::string("missing field '") + key + "'");
      return nullptr;
    }
    if (!it->is_array()) {
      fail(std::string("field '") + key + "' must be an array");
      return nullptr;
    }
    return &*it;
  }

  void fail(std::string message) {
    if (!item_id_.empty()) message += " at item " + item_id_;
    out_.push_back({Severity::Error, line_, item_id_, std::move(message)});
  }

 private:
  const json& obj_;
  std::optional<size_t> line_;
  std::string item_id_;
  std::vector<Diagnostic>& out_;
};

inline std::optional<BenchmarkItem> item_from_json(const json& j, std::optional<size_t> line,
                                                   std::vector<Diagnostic>& diags) {
  if (!j.is_object()) {
    diags.push_back({Severity::Error, line, "", "malformed record: item must be an object"});
    return std::nullopt;
  }
  std::string id_hint = j.contains("item_id") && j["item_id"].is_string() ? j["item_id"].get<std::string>() : "";
  FieldReader fr(j, line, id_hint, diags);
  const size_t before = diags.size();

  BenchmarkItem item;
  item.item_id = fr.string("item_id").value_or("");
  item.stimulus = fr.string("stimulus").value_or("");
  if (auto status = fr.string("status", false)) {
    if (auto parsed = parse_item_status(*status)) {
      item.status = *parsed;
    } else {
      fr.fail("unknown status '" + *status + "'");
    }
  }
  if (const json* techs = fr.array("techniques", false)) {
    for (const auto& t : *techs) {
      if (!t.is_string()) {
        fr.fail("technique tags must be strings");
        continue;
      }
      item.techniques.push_back(t.get<std::string>());
    }
  }
  std::sort(item.techniques.begin(), item.techniques.end());
  item.techniques.erase(std::unique(item.techniques.begin(), item.techniques.end()), item.techniques.end());

  if (const json* responses = fr.array("responses")) {
    for (const auto& rj : *responses) {
      if (!rj.is_object()) {
        fr.fail("response must be an object");
        continue;
      }
      FieldReader rr(rj, line, id_hint, diags);
      CandidateResponse r;
      r.key = rr.string("key").value_or("");
      r.text = rr.string("text").value_or("");
      r.expert_mean = rr.number("expert_mean", false);
      r.expert_sd = rr.number("expert_sd", false);
      if (auto n = rr.number("n_raters", false)) {
        if (*n != std::floor(*n) || *n < 1) {
          rr.fail("n_raters must be a positive integer");
        } else {
          r.n_raters = static_cast<int>(*n);
        }
      }
      item.responses.push_back(std::move(r));
    }
  }
  if (diags.size() != before) return std::nullopt;
  return item;
}

inline std::optional<BenchmarkSuite> manifest_from_json(const json& j, std::vector<Diagnostic>& diags) {
  if (!j.is_object()) {
    diags.push_back({Severity::Error, std::nullopt, "", "manifest must be an object"});
    return std::nullopt;
  }
  std::vector<Diagnostic> local;
  FieldReader fr(j, std::nullopt, "", local);
  BenchmarkSuite suite;
  suite.suite_id = fr.string("suite_id").value_or("");
  suite.name = fr.string("name").value_or("");
  suite.version = fr.string("version").value_or("");
  suite.domain = fr.string("domain", false).value_or("");
  if (auto it = j.find("scale"); it != j.end() && it->is_object()) {
    FieldReader sr(*it, std::nullopt, "", local);
    auto lo = sr.number("min");
    auto hi = sr.number("max");
    if (lo && hi) suite.scale = {*lo, *hi};
  } else {
    fr.fail("missing field 'scale'");
  }
  if (const json* techs = fr.array("techniques", false)) {
    for (const auto& t : *techs) {
      FieldReader tr(t, std::nullopt, "", local);
      if (!t.is_object()) {
        tr.fail("technique entry must be an object");
        continue;
      }
      AdversarialTechnique tech;
      tech.technique_id = tr.string("technique_id").value_or("");
      tech.description = tr.string("description", false).value_or("");
      suite.taxonomy.push_back(std::move(tech));
    }
  } else if (!j.contains("techniques")) {
    suite.taxonomy = seed_taxonomy();
  }
  for (auto& d : local) d.message = "manifest: " + d.message;
  const bool ok = local.empty();
  diags.insert(diags.end(), local.begin(), local.end());
  if (!ok) return std::nullopt;
  return suite;
}

}  // namespace detail

/// Semantic checks shared by the parsers and by programmatic construction.
/// `lines[i]` is the source line of `suite.items[i]`, when known.
inline std::vector<Diagnostic> validate_suite(const BenchmarkSuite& suite,
                                              const std::vector<std::optional<size_t>>& lines = {}) {
  std::vector<Diagnostic> out;
  auto err = [&](std::optional<size_t> line, const std::string& item, std::string msg) {
    out.push_back({Severity::Error, line, item, std::move(msg)});
  };
  if (suite.suite_id.empty()) err(std::nullopt, "", "manifest: empty suite_id");
  if (suite.version.empty()) err(std::nullopt, "", "manifest: empty version");
  if (!(suite.scale.min < suite.scale.max)) {
    err(std::nullopt, "", "manifest: scale min must be below max");
  }
  std::set<std::string> tech_ids;
  for (const auto& t : suite.taxonomy) {
    if (t.technique_id.empty()) err(std::nullopt, "", "manifest: empty technique_id");
    else if (!tech_ids.insert(t.technique_id).second)
      err(std::nullopt, "", "manifest: duplicate technique_id " + t.technique_id);
  }
  if (suite.items.empty()) {
    out.push_back({Severity::Warning, std::nullopt, "", "empty suite"});
  }

  std::set<std::string> seen_items;
  const std::string scale_text = "[" + format_number(suite.scale.min) + ", " + format_number(suite.scale.max) + "]";
  for (size_t i = 0; i < suite.items.size(); ++i) {
    const auto& item = suite.items[i];
    const auto line = i < lines.size() ? lines[i] : std::nullopt;
    const std::string& id = item.item_id;
    if (id.empty()) err(line, id, "empty item_id");
    else if (!seen_items.insert(id).second) err(line, id, "duplicate item_id " + id);
    if (item.stimulus.empty()) err(line, id, "empty stimulus at item " + id);
    if (item.responses.size() < 2) err(line, id, "fewer than 2 responses at item " + id);
    for (const auto& tag : item.techniques) {
      if (!tech_ids.count(tag)) err(line, id, "unknown technique '" + tag + "' at item " + id);
    }
    std::set<std::string> keys;
    for (const auto& r : item.responses) {
      const std::string where = " at item " + id + " (response " + r.key + ")";
      if (r.key.empty()) err(line, id, "empty response key at item " + id);
      else if (!keys.insert(r.key).second) err(line, id, "duplicate response key " + r.key + " at item " + id);
      if (r.expert_sd && *r.expert_sd < 0) err(line, id, "negative expert_sd" + where);
      if (r.expert_mean && !suite.scale.contains(*r.expert_mean)) {
        err(line, id, "expert_mean " + format_number(*r.expert_mean) + " outside scale " + scale_text + where);
      }
      if (item.is_validated() && (!r.expert_mean || !r.expert_sd)) {
        err(line, id, "validated item missing expert statistics" + where);
      }
    }
  }
  return out;
}

namespace detail {

inline SuiteParseResult finish_parse(std::optional<BenchmarkSuite> manifest, std::vector<BenchmarkItem> items,
                                     std::vector<std::optional<size_t>> lines, std::vector<Diagnostic> diags) {
  SuiteParseResult result;
  if (manifest) {
    manifest->items = std::move(items);
    auto semantic = validate_suite(*manifest, lines);
    diags.insert(diags.end(), semantic.begin(), semantic.end());
  }
  // Line-numbered problems first, in source order; manifest problems lead.
  std::stable_sort(diags.begin(), diags.end(), [](const Diagnostic& a, const Diagnostic& b) {
    return a.line.value_or(0) < b.line.value_or(0);
  });
  result.diagnostics = std::move(diags);
  if (manifest && result.error_count() == 0) result.suite = std::move(manifest);
  return result;
}

inline void parse_items_into(const std::vector<JsonLine>& records, std::vector<BenchmarkItem>& items,
                             std::vector<std::optional<size_t>>& lines, std::vector<Diagnostic>& diags) {
  for (const auto& rec : records) {
    if (auto item = item_from_json(rec.value, rec.line_number, diags)) {
      items.push_back(std::move(*item));
      lines.push_back(rec.line_number);
    }
  }
}

}  // namespace detail

/// Directory form: manifest document plus line-delimited items.
inline SuiteParseResult parse_suite(std::string_view manifest_text, std::string_view items_text) {
  std::vector<Diagnostic> diags;
  std::optional<BenchmarkSuite> manifest;
  try {
    manifest = detail::manifest_from_json(json::parse(manifest_text), diags);
  } catch (const json::parse_error& e) {
    diags.push_back({Severity::Error, std::nullopt, "", std::string("manifest: malformed document: ") + e.what()});
  }
  auto records = parse_json_lines(items_text, [&](size_t line, const std::string& what) {
    diags.push_back({Severity::Error, line, "", "malformed record: " + what});
  });
  std::vector<BenchmarkItem> items;
  std::vector<std::optional<size_t>> lines;
  detail::parse_items_into(records, items, lines, diags);
  return detail::finish_parse(std::move(manifest), std::move(items), std::move(lines), std::move(diags));
}

/// Bundle form: first record `{"manifest": {...}}`, then one item per line.
inline SuiteParseResult parse_suite(std::string_view raw) {
  std::vector<Diagnostic> diags;
  auto records = parse_json_lines(raw, [&](size_t line, const std::string& what) {
    diags.push_back({Severity::Error, line, "", "malformed record: " + what});
  });
  std::optional<BenchmarkSuite> manifest;
  size_t first_item = 0;
  if (!records.empty() && records.front().value.is_object() && records.front().value.contains("manifest")) {
    manifest = detail::manifest_from_json(records.front().value["manifest"], diags);
    first_item = 1;
  } else {
    diags.push_back({Severity::Error, std::nullopt, "", "manifest: first record must be {\"manifest\": {...}}"});
  }
  std::vector<JsonLine> item_records(records.begin() + static_cast<std::ptrdiff_t>(first_item), records.end());
  std::vector<BenchmarkItem> items;
  std::vector<std::optional<size_t>> lines;
  detail::parse_items_into(item_records, items, lines, diags);
  return detail::finish_parse(std::move(manifest), std::move(items), std::move(lines), std::move(diags));
}

inline SuiteParseResult load_suite(const std::filesystem::path& path) {
  if (std::filesystem::is_directory(path)) {
    return parse_suite(read_file(path / "manifest.json"), read_file(path / "items.jsonl"));
  }
  return parse_suite(read_file(path));
}

/// Loads and requires a valid suite.
inline BenchmarkSuite load_suite_or_throw(const std::filesystem::path& path) {
  auto result = load_suite(path);
  if (!result.ok()) throw SuiteValidationError(std::move(result.diagnostics));
  return std::move(*result.suite);
}

inline json manifest_to_json(const BenchmarkSuite& suite) {
  json techs = json::array();
  for (const auto& t : suite.taxonomy) techs.push_back({{"technique_id", t.technique_id}, {"description", t.description}});
  return {{"suite_id", suite.suite_id},
          {"name", suite.name},
          {"version", suite.version},
          {"domain", suite.domain},
          {"scale", {{"min", suite.scale.min}, {"max", suite.scale.max}}},
          {"techniques", techs}};
}

inline json item_to_json(const BenchmarkItem& item) {
  json responses = json::array();
  for (const auto& r : item.responses) responses.push_back(detail::response_to_json(r));
  return {{"item_id", item.item_id},
          {"stimulus", item.stimulus},
          {"responses", responses},
          {"techniques", item.techniques},
          {"status", to_string(item.status)}};
}

inline json suite_to_json(const BenchmarkSuite& suite) {
  json j = manifest_to_json(suite);
  j["items"] = json::array();
  for (const auto& item : suite.items) j["items"].push_back(item_to_json(item));
  return j;
}

/// Inverse of suite_to_json; throws SuiteValidationError on any problem.
inline BenchmarkSuite suite_from_json(const json& j) {
  std::vector<Diagnostic> diags;
  auto manifest = detail::manifest_from_json(j, diags);
  std::vector<BenchmarkItem> items;
  std::vector<std::optional<size_t>> lines;
  if (auto it = j.find("items"); it != j.end() && it->is_array()) {
    for (const auto& ij : *it)
      if (auto item = detail::item_from_json(ij, std::nullopt, diags)) items.push_back(std::move(*item));
  }
  auto result = detail::finish_parse(std::move(manifest), std::move(items), std::move(lines), std::move(diags));
  if (!result.ok()) throw SuiteValidationError(std::move(result.diagnostics));
  return std::move(*result.suite);
}

inline std::string serialize_suite(const BenchmarkSuite& suite) {
  std::string out = json{{"manifest", manifest_to_json(suite)}}.dump() + "\n";
  for (const auto& item : suite.items) out += item_to_json(item).dump() + "\n";
  return out;
}

inline void write_suite_directory(const BenchmarkSuite& suite, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_file(dir / "manifest.json", manifest_to_json(suite).dump(2) + "\n");
  std::string items;
  for (const auto& item : suite.items) items += item_to_json(item).dump() + "\n";
  write_file(dir / "items.jsonl", items);
}

// ---------------------------------------------------------------------------
// Derived data

/// One pair per unordered response pair of each validated item whose expert
/// means differ by more than `min_margin`; the higher mean is `chosen`.
inline std::vector<PreferencePair> extract_preference_pairs(const BenchmarkSuite& suite, double min_margin = 0.0) {
  if (min_margin < 0) throw InvalidInputError("min_margin must be nonnegative");
  std::vector<PreferencePair> pairs;
  for (const auto& item : suite.items) {
    if (!item.is_validated()) continue;
    const auto& rs = item.responses;
    for (size_t a = 0; a < rs.size(); ++a) {
      for (size_t b = a + 1; b < rs.size(); ++b) {
        if (!rs[a].expert_mean || !rs[b].expert_mean) continue;
        const double delta = *rs[a].expert_mean - *rs[b].expert_mean;
        if (std::fabs(delta) <= min_margin || delta == 0.0) continue;
        const auto& hi = delta > 0 ? rs[a] : rs[b];
        const auto& lo = delta > 0 ? rs[b] : rs[a];
        pairs.push_back({item.item_id, item.stimulus, hi.text, lo.text, *hi.expert_mean - *lo.expert_mean});
      }
    }
  }
  return pairs;
}

inline std::string export_preference_pairs(const std::vector<PreferencePair>& pairs) {
  std::string out;
  for (const auto& p : pairs) {
    out += json{{"stimulus", p.stimulus}, {"chosen", p.chosen}, {"rejected", p.rejected}, {"margin", p.margin}}.dump();
    out += "\n";
  }
  return out;
}

inline std::string technique_filter_suffix(std::string_view technique_id) {
  return "+technique=" + std::string(technique_id);
}

/// Sub-suite holding exactly the items tagged with `technique_id`.
inline BenchmarkSuite filter_by_technique(const BenchmarkSuite& suite, std::string_view technique_id) {
  if (!suite.knows_technique(technique_id)) {
    throw InvalidInputError("unknown technique_id '" + std::string(technique_id) + "'");
  }
  BenchmarkSuite out = suite;
  out.items.clear();
  for (const auto& item : suite.items)
    if (item.has_technique(technique_id)) out.items.push_back(item);
  const std::string suffix = technique_filter_suffix(technique_id);
  if (!out.version.ends_with(suffix)) out.version += suffix;
  return out;
}

}  // namespace mhbench
