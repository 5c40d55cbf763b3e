#pragma once
// Per-question and per-technique breakdowns of run errors, plus substring
// search over stored reasoning traces.

#include <algorithm>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "mhbench/benchmark_format.hpp"
#include "mhbench/evaluation_engine.hpp"

namespace mhbench {

class SuiteVersionMismatchError : public ConflictError {
 public:
  using ConflictError::ConflictError;
};

struct ResponseBreakdown {
  std::string response_key;
  double expert_mean = 0.0;
  std::optional<double> predicted;  // nullopt: Unscored
  std::optional<double> squared_error;
  std::string reasoning_trace;
  std::string transcript_ref;
};

struct QuestionBreakdownRow {
  std::string item_id;
  std::vector<std::string> techniques;
  std::vector<ResponseBreakdown> responses;
  std::optional<double> squared_error;  // mean over parsed responses; nullopt = Unscored row
  size_t parsed_count = 0;

  bool unscored() const { return !squared_error.has_value(); }
};

struct TechniqueBreakdown {
  std::string technique_id;
  size_t item_count = 0;
  std::optional<double> rmse;
  std::optional<double> mean_error_delta;  // technique rmse minus pooled overall rmse
  size_t parsed_count = 0;
};

namespace detail {

inline void require_suite_match(const RunRecord& run, const BenchmarkSuite& suite) {
  if (run.suite_id != suite.suite_id || run.suite_version != suite.version) {
    throw SuiteVersionMismatchError("run " + run.run_id + " targets " + run.suite_id + "@" + run.suite_version +
                                    ", not " + suite.suite_id + "@" + suite.version);
  }
}

}  // namespace detail

/// One row per validated item, worst squared error first. Ties keep suite
/// order; rows with no parsed rating come last.
inline std::vector<QuestionBreakdownRow> question_breakdown(const RunRecord& run, const BenchmarkSuite& suite) {
  detail::require_suite_match(run, suite);
  std::map<std::pair<std::string, std::string>, const ModelRating*> index;
  for (const auto& r : run.ratings) index[{r.item_id, r.response_key}] = &r;

  std::vector<QuestionBreakdownRow> rows;
  for (const auto& item : suite.items) {
    if (!item.is_validated()) continue;
    QuestionBreakdownRow row;
    row.item_id = item.item_id;
    row.techniques = item.techniques;
    double sum = 0;
    for (const auto& resp : item.responses) {
      ResponseBreakdown rb;
      rb.response_key = resp.key;
      rb.expert_mean = *resp.expert_mean;
      if (auto it = index.find({item.item_id, resp.key}); it != index.end()) {
        const ModelRating& r = *it->second;
        rb.reasoning_trace = r.reasoning_trace;
        rb.transcript_ref = r.transcript_ref;
        if (r.parsed()) {
          rb.predicted = r.predicted_score;
          const double e = *r.predicted_score - rb.expert_mean;
          rb.squared_error = e * e;
          sum += e * e;
          ++row.parsed_count;
        }
      }
      row.responses.push_back(std::move(rb));
    }
    if (row.parsed_count > 0) row.squared_error = sum / static_cast<double>(row.parsed_count);
    rows.push_back(std::move(row));
  }
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    if (a.unscored() != b.unscored()) return !a.unscored();
    if (a.unscored()) return false;
    return *a.squared_error > *b.squared_error;
  });
  return rows;
}

/// Pools squared errors over every tagged (item, response, run) triple.
/// Techniques that tag no item are omitted.
inline std::vector<TechniqueBreakdown> technique_aggregate(const std::vector<RunRecord>& runs,
                                                           const BenchmarkSuite& suite) {
  for (const auto& run : runs) detail::require_suite_match(run, suite);

  double all_sq = 0;
  size_t all_n = 0;
  std::map<std::string, std::pair<double, size_t>> acc;
  for (const auto& run : runs) {
    for (const auto& r : run.ratings) {
      if (!r.parsed()) continue;
      const auto* item = suite.find_item(r.item_id);
      if (!item || !item->is_validated()) continue;
      auto resp = std::find_if(item->responses.begin(), item->responses.end(),
                               [&](const auto& c) { return c.key == r.response_key; });
      if (resp == item->responses.end()) continue;
      const double e = *r.predicted_score - *resp->expert_mean;
      all_sq += e * e;
      ++all_n;
      for (const auto& tag : item->techniques) {
        acc[tag].first += e * e;
        acc[tag].second += 1;
      }
    }
  }
  const std::optional<double> overall =
      all_n > 0 ? std::optional(std::sqrt(all_sq / static_cast<double>(all_n))) : std::nullopt;

  std::vector<TechniqueBreakdown> out;
  for (const auto& tech : suite.taxonomy) {
    TechniqueBreakdown tb;
    tb.technique_id = tech.technique_id;
    tb.item_count = static_cast<size_t>(std::count_if(suite.items.begin(), suite.items.end(),
                                                      [&](const auto& i) { return i.has_technique(tech.technique_id); }));
    if (tb.item_count == 0) continue;
    if (auto it = acc.find(tech.technique_id); it != acc.end() && it->second.second > 0) {
      tb.parsed_count = it->second.second;
      tb.rmse = std::sqrt(it->second.first / static_cast<double>(it->second.second));
      if (overall) tb.mean_error_delta = *tb.rmse - *overall;
    }
    out.push_back(std::move(tb));
  }
  return out;
}

struct TraceHit {
  std::string run_id;
  std::string item_id;
  std::string response_key;
  bool operator==(const TraceHit&) const = default;
  auto operator<=>(const TraceHit&) const = default;
};

/// Case-insensitive substring match over parsed ratings' traces.
inline std::vector<TraceHit> trace_search(const std::vector<RunRecord>& runs, std::string_view query) {
  const std::string needle = to_lower(query);
  std::vector<TraceHit> hits;
  for (const auto& run : runs) {
    for (const auto& r : run.ratings) {
      if (!r.parsed()) continue;
      if (to_lower(r.reasoning_trace).find(needle) != std::string::npos) {
        hits.push_back({run.run_id, r.item_id, r.response_key});
      }
    }
  }
  std::sort(hits.begin(), hits.end());
  return hits;
}

/// Seam for trace-level text analysis (embeddings, lexical features, ...).
/// No analyzer ships with the library.
class TraceAnalyzer {
 public:
  virtual ~TraceAnalyzer() = default;
  virtual std::map<std::string, double> analyze(std::string_view trace) = 0;
};

struct TraceFeatures {
  TraceHit where;
  std::map<std::string, double> features;
};

inline std::vector<TraceFeatures> analyze_traces(const std::vector<RunRecord>& runs, TraceAnalyzer& analyzer) {
  std::vector<TraceFeatures> out;
  for (const auto& run : runs)
    for (const auto& r : run.ratings)
      if (r.parsed()) out.push_back({{run.run_id, r.item_id, r.response_key}, analyzer.analyze(r.reasoning_trace)});
  return out;
}

// ---------------------------------------------------------------------------
// Export

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string csv_number(const std::optional<double>& v) { return v ? format_number(*v) : ""; }

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

/// One line per (item, response); the row-level squared error repeats.
inline std::string question_breakdown_csv(const std::vector<QuestionBreakdownRow>& rows) {
  std::string out = "item_id,techniques,row_squared_error,response_key,expert_mean,predicted,squared_error,status\n";
  for (const auto& row : rows) {
    for (const auto& r : row.responses) {
      out += csv_field(row.item_id) + "," + csv_field(join(row.techniques, ";")) + "," + csv_number(row.squared_error) +
             "," + csv_field(r.response_key) + "," + format_number(r.expert_mean) + "," + csv_number(r.predicted) + "," +
             csv_number(r.squared_error) + "," + (r.predicted ? "parsed" : "unscored") + "\n";
    }
  }
  return out;
}

inline std::string technique_aggregate_csv(const std::vector<TechniqueBreakdown>& rows) {
  std::string out = "technique_id,item_count,parsed_count,rmse,mean_error_delta\n";
  for (const auto& t : rows) {
    out += csv_field(t.technique_id) + "," + std::to_string(t.item_count) + "," + std::to_string(t.parsed_count) + "," +
           csv_number(t.rmse) + "," + csv_number(t.mean_error_delta) + "\n";
  }
  return out;
}

inline json to_json(const QuestionBreakdownRow& row) {
  json responses = json::array();
  for (const auto& r : row.responses) {
    responses.push_back({{"response_key", r.response_key},
                         {"expert_mean", r.expert_mean},
                         {"predicted", to_json_or_null(r.predicted)},
                         {"squared_error", to_json_or_null(r.squared_error)},
                         {"reasoning_trace", r.reasoning_trace},
                         {"transcript_ref", r.transcript_ref}});
  }
  return {{"item_id", row.item_id},
          {"techniques", row.techniques},
          {"squared_error", to_json_or_null(row.squared_error)},
          {"unscored", row.unscored()},
          {"responses", responses}};
}

inline json to_json(const TechniqueBreakdown& t) {
  return {{"technique_id", t.technique_id},
          {"item_count", t.item_count},
          {"parsed_count", t.parsed_count},
          {"rmse", to_json_or_null(t.rmse)},
          {"mean_error_delta", to_json_or_null(t.mean_error_delta)}};
}

}  // namespace mhbench
