#pragma once
// Administers benchmark items to a model one candidate response at a time,
// asking for step-by-step reasoning followed by a `RATING: <number>` line,
// and scores the parsed ratings against expert means.

#include <atomic>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "mhbench/benchmark_format.hpp"
#include "mhbench/common.hpp"
#include "mhbench/model_gateway.hpp"

namespace mhbench {

// ---------------------------------------------------------------------------
// Prompt templates

inline constexpr std::string_view kDefaultTemplateId = "cot_single_v1";

inline constexpr std::string_view kDefaultTemplateText =
    "You are helping evaluate responses in a mental health context.\n"
    "\n"
    "Stimulus:\n"
    "{stimulus}\n"
    "\n"
    "Candidate response:\n"
    "{response}\n"
    "\n"
    "Rate how appropriate the candidate response is, from {scale_min} (highly inappropriate) "
    "to {scale_max} (highly appropriate).\n"
    "First reason step by step about the stimulus and the response.\n"
    "Then end with a final line of the form:\n"
    "RATING: <number between {scale_min} and {scale_max}>\n";

class TemplateRegistry {
 public:
  TemplateRegistry() { add(std::string(kDefaultTemplateId), std::string(kDefaultTemplateText)); }

  void add(std::string id, std::string text) {
    if (text.find("{stimulus}") == std::string::npos || text.find("{response}") == std::string::npos) {
      throw InvalidInputError("template " + id + " must contain {stimulus} and {response}");
    }
    templates_[std::move(id)] = std::move(text);
  }

  /// Registers every `*.txt` file in `dir` under its file stem.
  void load_directory(const std::filesystem::path& dir) {
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (entry.path().extension() == ".txt") add(entry.path().stem().string(), read_file(entry.path()));
    }
  }

  const std::string& get(std::string_view id) const {
    auto it = templates_.find(std::string(id));
    if (it == templates_.end()) throw NotFoundError("unknown prompt template '" + std::string(id) + "'");
    return it->second;
  }

  bool contains(std::string_view id) const { return templates_.count(std::string(id)) > 0; }

 private:
  std::map<std::string, std::string> templates_;
};

inline std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(tmpl.size() + 256);
  size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const size_t close = tmpl.find('}', i);
      if (close != std::string_view::npos) {
        auto it = values.find(std::string(tmpl.substr(i + 1, close - i - 1)));
        if (it != values.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(tmpl[i++]);
  }
  return out;
}

inline CompletionRequest build_rating_prompt(const BenchmarkItem& item, const CandidateResponse& response,
                                             const RatingScale& scale, std::string_view template_id,
                                             const TemplateRegistry& templates = TemplateRegistry{},
                                             double temperature = 0.0, int max_output_tokens = 1024) {
  const std::string text = render_template(templates.get(template_id), {{"stimulus", item.stimulus},
                                                                          {"response", response.text},
                                                                          {"scale_min", format_number(scale.min)},
                                                                          {"scale_max", format_number(scale.max)}});
  CompletionRequest req;
  req.messages.push_back({"user", text});
  req.temperature = temperature;
  req.max_output_tokens = max_output_tokens;
  return req;
}

inline std::string format_reminder(const RatingScale& scale) {
  return "Your previous answer did not end with a usable rating. Reply again and end with a final line "
         "of the form RATING: <number between " +
         format_number(scale.min) + " and " + format_number(scale.max) + ">";
}

// ---------------------------------------------------------------------------
// Rating extraction

struct ParsedRating {
  double score = 0.0;
  std::string reasoning_trace;
  bool clamped = false;
};

/// Takes the number after the last `RATING:` marker (case-insensitive).
/// Everything before the marker is the reasoning trace. Returns nullopt when
/// no marker is followed by a number.
inline std::optional<ParsedRating> parse_rating(std::string_view completion, const RatingScale& scale) {
  const std::string lowered = to_lower(completion);
  static constexpr std::string_view kMarker = "rating:";
  size_t pos = lowered.rfind(kMarker);
  while (pos != std::string::npos) {
    std::string_view rest = std::string_view(completion).substr(pos + kMarker.size());
    while (!rest.empty() && (rest.front() == ' ' || rest.front() == '\t' || rest.front() == '*')) rest.remove_prefix(1);
    if (!rest.empty() && rest.front() == '+') rest.remove_prefix(1);
    double value = 0;
    auto [end, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), value);
    if (ec == std::errc() && std::isfinite(value)) {
      ParsedRating out;
      out.reasoning_trace = std::string(trim(completion.substr(0, pos)));
      out.score = scale.clamp(value);
      out.clamped = out.score != value;
      return out;
    }
    if (pos == 0) break;
    pos = lowered.rfind(kMarker, pos - 1);
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Run records

enum class ParseStatus { Parsed, ParseFailed };

struct ModelRating {
  std::string item_id;
  std::string response_key;
  std::optional<double> predicted_score;  // present iff Parsed
  std::string reasoning_trace;
  std::string transcript_ref;  // fingerprint of the final exchange, empty if none completed
  ParseStatus parse_status = ParseStatus::ParseFailed;
  bool clamped = false;
  int attempts = 0;
  std::string error;  // gateway error text when no exchange completed

  bool parsed() const { return parse_status == ParseStatus::Parsed; }
  bool operator==(const ModelRating&) const = default;
};

struct BenchmarkScore {
  std::optional<double> rmse;  // nullopt: no parsed pairs (Undefined)
  std::optional<double> mae;
  std::optional<double> preference_accuracy;  // nullopt: no eligible response pairs
  double coverage = 1.0;
  size_t parsed_count = 0;
  size_t total_count = 0;
  size_t clamped_count = 0;
  size_t preference_pairs = 0;
  std::map<std::string, double> per_item_error;  // item_id -> mean squared error
  std::map<std::string, std::optional<double>> per_technique_rmse;

  bool defined() const { return rmse.has_value(); }
  bool operator==(const BenchmarkScore&) const = default;
};

struct RunConfig {
  double temperature = 0.0;
  int retry_budget = 2;  // re-asks after an unparsable answer
  int gateway_attempts = 3;
  std::string template_id = std::string(kDefaultTemplateId);
  int max_output_tokens = 1024;
  int workers = 1;

  bool operator==(const RunConfig&) const = default;
};

struct RunRecord {
  std::string run_id;
  std::string model_id;
  std::string suite_id;
  std::string suite_version;
  Timestamp started_at{};
  Timestamp finished_at{};
  RunConfig config;
  std::vector<ModelRating> ratings;
  std::vector<Transcript> transcripts;
  BenchmarkScore score;
};

// ---------------------------------------------------------------------------
// Scoring

namespace detail {

inline std::map<std::pair<std::string, std::string>, const ModelRating*> index_ratings(
    const std::vector<ModelRating>& ratings, const BenchmarkSuite& suite) {
  std::map<std::pair<std::string, std::string>, const ModelRating*> index;
  for (const auto& r : ratings) {
    const auto* item = suite.find_item(r.item_id);
    if (!item) throw InvalidInputError("rating references unknown item " + r.item_id);
    const bool known_key = std::any_of(item->responses.begin(), item->responses.end(),
                                       [&](const auto& c) { return c.key == r.response_key; });
    if (!known_key) throw InvalidInputError("rating references unknown response " + r.item_id + "/" + r.response_key);
    if (r.parsed() != r.predicted_score.has_value()) {
      throw InvalidInputError("rating " + r.item_id + "/" + r.response_key + " has inconsistent parse status");
    }
    if (!index.emplace(std::make_pair(r.item_id, r.response_key), &r).second) {
      throw InvalidInputError("duplicate rating for " + r.item_id + "/" + r.response_key);
    }
  }
  return index;
}

}  // namespace detail

/// Single pass over the suite's validated (item, response) pairs.
inline BenchmarkScore score_run(const std::vector<ModelRating>& ratings, const BenchmarkSuite& suite) {
  const auto index = detail::index_ratings(ratings, suite);
  BenchmarkScore score;
  double sq_sum = 0, abs_sum = 0;
  size_t agree = 0;
  std::map<std::string, std::pair<double, size_t>> technique_acc;

  for (const auto& item : suite.items) {
    if (!item.is_validated()) continue;
    for (const auto& tag : item.techniques) technique_acc.try_emplace(tag, 0.0, 0);
    double item_sq = 0;
    size_t item_n = 0;
    std::vector<std::pair<double, double>> scored;  // (predicted, expert) for pairs
    for (const auto& resp : item.responses) {
      auto it = index.find({item.item_id, resp.key});
      if (it == index.end()) continue;
      const ModelRating& r = *it->second;
      ++score.total_count;
      if (!r.parsed()) continue;
      ++score.parsed_count;
      if (r.clamped) ++score.clamped_count;
      const double err = *r.predicted_score - *resp.expert_mean;
      sq_sum += err * err;
      abs_sum += std::fabs(err);
      item_sq += err * err;
      ++item_n;
      for (const auto& tag : item.techniques) {
        technique_acc[tag].first += err * err;
        technique_acc[tag].second += 1;
      }
    }
    if (item_n > 0) score.per_item_error[item.item_id] = item_sq / static_cast<double>(item_n);

    for (size_t a = 0; a < item.responses.size(); ++a) {
      for (size_t b = a + 1; b < item.responses.size(); ++b) {
        const auto& ra = item.responses[a];
        const auto& rb = item.responses[b];
        const double expert_delta = *ra.expert_mean - *rb.expert_mean;
        if (expert_delta == 0.0) continue;
        auto ia = index.find({item.item_id, ra.key});
        auto ib = index.find({item.item_id, rb.key});
        if (ia == index.end() || ib == index.end() || !ia->second->parsed() || !ib->second->parsed()) continue;
        const double predicted_delta = *ia->second->predicted_score - *ib->second->predicted_score;
        ++score.preference_pairs;
        if ((predicted_delta > 0) == (expert_delta > 0) && predicted_delta != 0.0) ++agree;
      }
    }
  }

  if (score.parsed_count > 0) {
    const double n = static_cast<double>(score.parsed_count);
    score.rmse = std::sqrt(sq_sum / n);
    score.mae = abs_sum / n;
  }
  if (score.preference_pairs > 0) {
    score.preference_accuracy = static_cast<double>(agree) / static_cast<double>(score.preference_pairs);
  }
  score.coverage = score.total_count == 0
                       ? 1.0
                       : static_cast<double>(score.parsed_count) / static_cast<double>(score.total_count);
  for (const auto& [tag, acc] : technique_acc) {
    score.per_technique_rmse[tag] =
        acc.second > 0 ? std::optional<double>(std::sqrt(acc.first / static_cast<double>(acc.second))) : std::nullopt;
  }
  return score;
}

// ---------------------------------------------------------------------------
// Serialization

inline std::string_view to_string(ParseStatus s) { return s == ParseStatus::Parsed ? "parsed" : "parse_failed"; }

inline json to_json(const RunConfig& c) {
  return {{"temperature", c.temperature},         {"retry_budget", c.retry_budget},
          {"gateway_attempts", c.gateway_attempts}, {"template_id", c.template_id},
          {"max_output_tokens", c.max_output_tokens}, {"workers", c.workers}};
}

inline RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  c.temperature = j.value("temperature", c.temperature);
  c.retry_budget = j.value("retry_budget", c.retry_budget);
  c.gateway_attempts = j.value("gateway_attempts", c.gateway_attempts);
  c.template_id = j.value("template_id", c.template_id);
  c.max_output_tokens = j.value("max_output_tokens", c.max_output_tokens);
  c.workers = j.value("workers", c.workers);
  if (c.temperature < 0) throw InvalidInputError("config.temperature must be nonnegative");
  if (c.retry_budget < 0) throw InvalidInputError("config.retry_budget must be nonnegative");
  return c;
}

inline json to_json(const ModelRating& r) {
  return {{"item_id", r.item_id},
          {"response_key", r.response_key},
          {"predicted_score", to_json_or_null(r.predicted_score)},
          {"reasoning_trace", r.reasoning_trace},
          {"transcript_ref", r.transcript_ref},
          {"parse_status", to_string(r.parse_status)},
          {"clamped", r.clamped},
          {"attempts", r.attempts},
          {"error", r.error}};
}

inline ModelRating rating_from_json(const json& j) {
  ModelRating r;
  r.item_id = j.at("item_id").get<std::string>();
  r.response_key = j.at("response_key").get<std::string>();
  r.predicted_score = optional_number(j, "predicted_score");
  r.reasoning_trace = j.value("reasoning_trace", "");
  r.transcript_ref = j.value("transcript_ref", "");
  const std::string status = j.at("parse_status").get<std::string>();
  if (status != "parsed" && status != "parse_failed") throw InvalidInputError("parse_status: unknown value " + status);
  r.parse_status = status == "parsed" ? ParseStatus::Parsed : ParseStatus::ParseFailed;
  r.clamped = j.value("clamped", false);
  r.attempts = j.value("attempts", 0);
  r.error = j.value("error", "");
  return r;
}

inline json to_json(const BenchmarkScore& s) {
  json techniques = json::object();
  for (const auto& [k, v] : s.per_technique_rmse) techniques[k] = to_json_or_null(v);
  return {{"rmse", to_json_or_null(s.rmse)},
          {"mae", to_json_or_null(s.mae)},
          {"preference_accuracy", to_json_or_null(s.preference_accuracy)},
          {"coverage", s.coverage},
          {"parsed_count", s.parsed_count},
          {"total_count", s.total_count},
          {"clamped_count", s.clamped_count},
          {"preference_pairs", s.preference_pairs},
          {"per_item_error", s.per_item_error},
          {"per_technique_rmse", techniques}};
}

inline BenchmarkScore score_from_json(const json& j) {
  BenchmarkScore s;
  s.rmse = optional_number(j, "rmse");
  s.mae = optional_number(j, "mae");
  s.preference_accuracy = optional_number(j, "preference_accuracy");
  s.coverage = j.at("coverage").get<double>();
  s.parsed_count = j.value("parsed_count", size_t{0});
  s.total_count = j.value("total_count", size_t{0});
  s.clamped_count = j.value("clamped_count", size_t{0});
  s.preference_pairs = j.value("preference_pairs", size_t{0});
  s.per_item_error = j.value("per_item_error", std::map<std::string, double>{});
  if (auto it = j.find("per_technique_rmse"); it != j.end()) {
    for (const auto& [k, v] : it->items()) s.per_technique_rmse[k] = v.is_null() ? std::nullopt : std::optional(v.get<double>());
  }
  return s;
}

inline json to_json(const RunRecord& run) {
  json ratings = json::array();
  for (const auto& r : run.ratings) ratings.push_back(to_json(r));
  json transcripts = json::array();
  for (const auto& t : run.transcripts) transcripts.push_back(to_json(t));
  return {{"run_id", run.run_id},
          {"model_id", run.model_id},
          {"suite_id", run.suite_id},
          {"suite_version", run.suite_version},
          {"started_at", format_iso8601(run.started_at)},
          {"finished_at", format_iso8601(run.finished_at)},
          {"config", to_json(run.config)},
          {"ratings", ratings},
          {"transcripts", transcripts},
          {"score", to_json(run.score)}};
}

inline Timestamp require_timestamp(const json& j, const char* key) {
  auto t = parse_iso8601(j.at(key).get<std::string>());
  if (!t) throw InvalidInputError(std::string(key) + ": expected ISO-8601 UTC timestamp");
  return *t;
}

inline RunRecord run_from_json(const json& j) {
  RunRecord run;
  run.run_id = j.at("run_id").get<std::string>();
  run.model_id = j.at("model_id").get<std::string>();
  run.suite_id = j.at("suite_id").get<std::string>();
  run.suite_version = j.at("suite_version").get<std::string>();
  run.started_at = require_timestamp(j, "started_at");
  run.finished_at = require_timestamp(j, "finished_at");
  run.config = run_config_from_json(j.value("config", json::object()));
  for (const auto& r : j.at("ratings")) run.ratings.push_back(rating_from_json(r));
  if (auto it = j.find("transcripts"); it != j.end()) {
    for (const auto& t : *it) run.transcripts.push_back(transcript_from_json(t));
  }
  run.score = score_from_json(j.at("score"));
  if (run.run_id.empty()) throw InvalidInputError("run_id: must be nonempty");
  return run;
}

// ---------------------------------------------------------------------------
// Evaluation

inline std::string make_run_id(std::string_view model_id, std::string_view suite_id, Timestamp at) {
  static std::atomic<unsigned> counter{0};
  std::string stamp = format_iso8601(at);
  stamp.erase(std::remove_if(stamp.begin(), stamp.end(), [](char c) { return c == '-' || c == ':'; }), stamp.end());
  std::random_device rd;
  const unsigned salt = (rd() ^ (counter.fetch_add(1) * 2654435761u)) & 0xFFFFu;
  char hex[8];
  std::snprintf(hex, sizeof hex, "%04x", salt);
  return std::string(model_id) + "-" + std::string(suite_id) + "-" + stamp + "-" + hex;
}

/// Rates every validated (item, response) pair once, re-asking up to
/// `config.retry_budget` times after an unparsable answer. Gateway failures
/// on individual pairs lower coverage; an authentication failure, or failure
/// of every pair, aborts the run.
inline RunRecord evaluate(Gateway& gateway, const ModelDescriptor& model, const BenchmarkSuite& suite,
                          const RunConfig& config, const TemplateRegistry& templates = TemplateRegistry{},
                          std::optional<std::string> run_id = std::nullopt) {
  if (!templates.contains(config.template_id)) {
    throw NotFoundError("unknown prompt template '" + config.template_id + "'");
  }
  struct Task {
    const BenchmarkItem* item;
    const CandidateResponse* response;
  };
  std::vector<Task> tasks;
  for (const auto& item : suite.items) {
    if (!item.is_validated()) continue;
    for (const auto& resp : item.responses) tasks.push_back({&item, &resp});
  }

  RunRecord run;
  run.started_at = now_utc();
  run.run_id = run_id ? *run_id : make_run_id(model.model_id, suite.suite_id, run.started_at);
  run.model_id = model.model_id;
  run.suite_id = suite.suite_id;
  run.suite_version = suite.version;
  run.config = config;

  std::vector<ModelRating> ratings(tasks.size());
  std::vector<std::vector<Transcript>> transcripts(tasks.size());
  std::atomic<size_t> next{0};
  std::atomic<bool> abort{false};
  std::exception_ptr fatal;
  std::mutex fatal_mu;

  auto work = [&] {
    while (!abort.load()) {
      const size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      const Task& task = tasks[i];
      ModelRating& rating = ratings[i];
      rating.item_id = task.item->item_id;
      rating.response_key = task.response->key;
      CompletionRequest request = build_rating_prompt(*task.item, *task.response, suite.scale, config.template_id,
                                                      templates, config.temperature, config.max_output_tokens);
      try {
        for (int attempt = 0; attempt <= config.retry_budget; ++attempt) {
          Transcript t = gateway.complete(model, request);
          rating.attempts = attempt + 1;
          rating.transcript_ref = t.fingerprint;
          auto parsed = parse_rating(t.completion_text, suite.scale);
          const std::string completion = t.completion_text;
          transcripts[i].push_back(std::move(t));
          if (parsed) {
            rating.parse_status = ParseStatus::Parsed;
            rating.predicted_score = parsed->score;
            rating.reasoning_trace = std::move(parsed->reasoning_trace);
            rating.clamped = parsed->clamped;
            break;
          }
          rating.reasoning_trace = completion;
          request.messages.push_back({"assistant", completion});
          request.messages.push_back({"user", format_reminder(suite.scale)});
        }
      } catch (const AuthenticationError&) {
        std::lock_guard lock(fatal_mu);
        if (!fatal) fatal = std::current_exception();
        abort = true;
      } catch (const GatewayError& e) {
        rating.error = e.what();
      }
    }
  };

  const int workers = std::clamp(config.workers, 1, std::max(1, gateway.config().rate_ceiling));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  if (fatal) std::rethrow_exception(fatal);

  const bool all_failed = !tasks.empty() && std::all_of(ratings.begin(), ratings.end(),
                                                         [](const auto& r) { return r.attempts == 0; });
  if (all_failed) throw GatewayError("total gateway failure for " + model.model_id + ": " + ratings.front().error);

  run.ratings = std::move(ratings);
  for (auto& ts : transcripts)
    for (auto& t : ts) run.transcripts.push_back(std::move(t));
  run.score = score_run(run.ratings, suite);
  run.finished_at = now_utc();
  return run;
}

}  // namespace mhbench
