#pragma once
// Read/write API over a Store, independent of any HTTP library. The body
// builders are shared with the CLI so structured CLI output and API bodies
// come from one place.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mhbench/platform_store.hpp"
#include "mhbench/reasoning_analysis.hpp"

namespace mhbench::api {

inline constexpr std::string_view kSchemaVersion = "1";

// ---------------------------------------------------------------------------
// Bodies

inline json models_body(const StoreState& s) {
  json out = json::array();
  for (const auto& m : s.models) out.push_back(to_json(m));
  return out;
}

inline json profile_body(const StoreState& s, const std::string& model_id) {
  return profile_to_json(model_id, *s.profiles.catalog, get_profile(s.profiles, model_id));
}

/// Latest result per framework, in framework order.
inline json personality_body(const StoreState& s, const std::string& model_id) {
  if (!s.find_model(model_id)) throw NotFoundError("unknown model " + model_id);
  std::map<int, const PersonalityResult*> latest;
  for (const auto& r : s.personality) {
    if (r.model_id != model_id) continue;
    auto& slot = latest[static_cast<int>(r.framework)];
    if (!slot || r.administered_at >= slot->administered_at) slot = &r;
  }
  json results = json::array();
  for (const auto& [fw, r] : latest) results.push_back(to_json(*r));
  return {{"model_id", model_id}, {"results", results}};
}

inline json leaderboard_body(const StoreState& s, ModelKind kind, std::optional<std::string> sort_suite = std::nullopt,
                             bool ascending = true) {
  return to_json(compute_leaderboard(s, kind, std::move(sort_suite), ascending));
}

inline json benchmarks_body(const StoreState& s) {
  json out = json::array();
  for (const auto& sid : s.suite_order) {
    const auto& versions = s.suites.at(sid);
    const auto& newest = versions.back();
    json vs = json::array();
    for (const auto& v : versions) vs.push_back(v->version);
    const auto validated = std::count_if(newest->items.begin(), newest->items.end(),
                                         [](const auto& i) { return i.is_validated(); });
    out.push_back({{"suite_id", sid},
                   {"name", newest->name},
                   {"domain", newest->domain},
                   {"version", newest->version},
                   {"versions", vs},
                   {"item_count", newest->items.size()},
                   {"validated_item_count", validated},
                   {"techniques", manifest_to_json(*newest)["techniques"]}});
  }
  return out;
}

/// Per-question breakdown for one run (default: the latest run at the newest
/// version) and technique aggregates pooled over every run at that version.
inline json benchmark_detail_body(const StoreState& s, const std::string& suite_id,
                                  std::optional<std::string> run_id = std::nullopt,
                                  std::optional<std::string> technique = std::nullopt) {
  const auto suite = s.newest_suite(suite_id);
  if (!suite) throw NotFoundError("unknown suite " + suite_id);
  std::vector<RunRecord> runs;
  const RunRecord* selected = nullptr;
  for (const auto& sr : s.runs) {
    if (sr.run->suite_id == suite_id && sr.run->suite_version == suite->version) runs.push_back(*sr.run);
  }
  if (run_id) {
    auto run = s.find_run(*run_id);
    if (!run || run->suite_id != suite_id) throw NotFoundError("unknown run " + *run_id + " for suite " + suite_id);
    for (const auto& r : runs)
      if (r.run_id == *run_id) selected = &r;
    if (!selected) throw ConflictError("run " + *run_id + " is not at the newest suite version");
  } else {
    for (const auto& r : runs)
      if (!selected || r.finished_at >= selected->finished_at) selected = &r;
  }
  if (technique && !suite->knows_technique(*technique)) throw InvalidInputError("technique: unknown " + *technique);

  json run_list = json::array();
  for (const auto& r : runs) {
    run_list.push_back({{"run_id", r.run_id},
                        {"model_id", r.model_id},
                        {"finished_at", format_iso8601(r.finished_at)},
                        {"rmse", to_json_or_null(r.score.rmse)},
                        {"coverage", r.score.coverage}});
  }
  json rows = json::array();
  if (selected) {
    for (const auto& row : question_breakdown(*selected, *suite)) {
      if (technique && std::find(row.techniques.begin(), row.techniques.end(), *technique) == row.techniques.end()) {
        continue;
      }
      rows.push_back(to_json(row));
    }
  }
  json techs = json::array();
  for (const auto& t : technique_aggregate(runs, *suite)) techs.push_back(to_json(t));
  return {{"suite_id", suite_id},
          {"name", suite->name},
          {"version", suite->version},
          {"runs", run_list},
          {"selected_run_id", selected ? json(selected->run_id) : json(nullptr)},
          {"question_breakdown", rows},
          {"technique_aggregates", techs}};
}

inline json compare_body(const StoreState& s, const std::vector<std::string>& ids) {
  return comparison_to_json(compare_profiles(s.profiles, ids), *s.profiles.catalog);
}

inline json run_body(const StoreState& s, const std::string& run_id) {
  auto run = s.find_run(run_id);
  if (!run) throw NotFoundError("unknown run " + run_id);
  return to_json(*run);
}

inline json schedules_body(const StoreState& s) {
  json out = json::array();
  for (const auto& [id, sch] : s.schedules) out.push_back(to_json(sch));
  return out;
}

// ---------------------------------------------------------------------------
// Routing

struct Request {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::map<std::string, std::string> headers;  // lower-case names
  std::string body;
};

struct Response {
  int status = 200;
  json body;
  uint64_t snapshot_version = 0;
};

struct FieldError {
  std::string field;
  std::string message;
};

/// "field: message" -> {field, message}; anything else is attributed to body.
inline FieldError split_field_error(std::string_view what) {
  const size_t colon = what.find(": ");
  if (colon != std::string_view::npos && colon > 0 &&
      what.substr(0, colon).find(' ') == std::string_view::npos) {
    return {std::string(what.substr(0, colon)), std::string(what.substr(colon + 2))};
  }
  // nlohmann: "[json.exception.out_of_range.403] key 'x' not found"
  const size_t key = what.find("key '");
  if (key != std::string_view::npos) {
    const size_t end = what.find('\'', key + 5);
    if (end != std::string_view::npos) return {std::string(what.substr(key + 5, end - key - 5)), "missing"};
  }
  return {"body", std::string(what)};
}

inline json error_body(std::string_view code, std::string_view message, std::vector<FieldError> fields = {}) {
  json f = json::array();
  for (const auto& e : fields) f.push_back({{"field", e.field}, {"message", e.message}});
  return {{"error", {{"code", code}, {"message", message}, {"fields", f}}}};
}

class ApiService {
 public:
  ApiService(Store& store, std::optional<std::string> write_token = std::nullopt,
             std::function<Timestamp()> clock = now_utc)
      : store_(store), write_token_(std::move(write_token)), clock_(std::move(clock)) {}

  Response handle(const Request& req) const {
    Response res;
    try {
      if (req.method == "GET") {
        const auto snap = store_.snapshot();
        res.snapshot_version = snap->version;
        res.body = get(*snap, req);
      } else if (req.method == "POST") {
        authorize(req);
        res = post(req);
        res.snapshot_version = store_.snapshot()->version;
      } else {
        res.status = 405;
        res.body = error_body("method_not_allowed", "only GET and POST are supported");
      }
    } catch (const NotFoundError& e) {
      res.status = 404;
      res.body = error_body("not_found", e.what());
    } catch (const SuiteValidationError& e) {
      res.status = 400;
      std::vector<FieldError> fields;
      for (const auto& d : e.diagnostics()) fields.push_back({"items", d.render()});
      res.body = error_body("invalid", "invalid suite", fields);
    } catch (const InvalidInputError& e) {
      res.status = 400;
      res.body = error_body("invalid", e.what(), {split_field_error(e.what())});
    } catch (const ConflictError& e) {
      res.status = 409;
      res.body = error_body("conflict", e.what());
    } catch (const Unauthorized& e) {
      res.status = 401;
      res.body = error_body("unauthorized", e.what());
    } catch (const json::exception& e) {
      res.status = 400;
      res.body = error_body("invalid", e.what(), {split_field_error(e.what())});
    } catch (const StorageError& e) {
      res.status = 500;
      res.body = error_body("storage", e.what());
    }
    if (res.snapshot_version == 0) res.snapshot_version = store_.snapshot()->version;
    return res;
  }

 private:
  struct Unauthorized : Error {
    using Error::Error;
  };

  static std::vector<std::string> segments(const std::string& path) {
    std::vector<std::string> out;
    for (auto& s : split(path, '/'))
      if (!s.empty()) out.push_back(std::move(s));
    return out;
  }

  static std::optional<std::string> query(const Request& req, const char* key) {
    auto it = req.query.find(key);
    if (it == req.query.end() || it->second.empty()) return std::nullopt;
    return it->second;
  }

  void authorize(const Request& req) const {
    if (!write_token_) return;
    auto it = req.headers.find("authorization");
    if (it == req.headers.end() || it->second != "Bearer " + *write_token_) {
      throw Unauthorized("write endpoints require the configured bearer token");
    }
  }

  json get(const StoreState& s, const Request& req) const {
    const auto seg = segments(req.path);
    if (seg.size() == 1 && seg[0] == "models") return models_body(s);
    if (seg.size() == 3 && seg[0] == "models" && seg[2] == "profile") return profile_body(s, seg[1]);
    if (seg.size() == 3 && seg[0] == "models" && seg[2] == "personality") return personality_body(s, seg[1]);
    if (seg.size() == 1 && seg[0] == "leaderboard") {
      auto kind = parse_model_kind(query(req, "kind").value_or("base"));
      if (!kind) throw InvalidInputError("kind: expected base or tool");
      const std::string dir = query(req, "dir").value_or("asc");
      if (dir != "asc" && dir != "desc") throw InvalidInputError("dir: expected asc or desc");
      return leaderboard_body(s, *kind, query(req, "sort"), dir == "asc");
    }
    if (seg.size() == 1 && seg[0] == "benchmarks") return benchmarks_body(s);
    if (seg.size() == 2 && seg[0] == "benchmarks") {
      return benchmark_detail_body(s, seg[1], query(req, "run"), query(req, "technique"));
    }
    if (seg.size() == 1 && seg[0] == "compare") {
      std::vector<std::string> ids;
      for (auto& id : split(query(req, "ids").value_or(""), ','))
        if (!id.empty()) ids.push_back(std::move(id));
      return compare_body(s, ids);
    }
    if (seg.size() == 2 && seg[0] == "runs") return run_body(s, seg[1]);
    if (seg.size() == 1 && seg[0] == "schedules") return schedules_body(s);
    if (seg.size() == 1 && seg[0] == "health") return {{"status", "ok"}, {"schema_version", kSchemaVersion}};
    throw NotFoundError("no route for GET " + req.path);
  }

  Response post(const Request& req) const {
    const auto seg = segments(req.path);
    json body;
    try {
      body = req.body.empty() ? json::object() : json::parse(req.body);
    } catch (const json::parse_error& e) {
      throw InvalidInputError(std::string("body: malformed JSON: ") + e.what());
    }
    Response res;
    res.status = 201;
    if (seg.size() == 1 && seg[0] == "runs") {
      res.body = {{"run_id", store_.persist_run(run_from_json(body))}};
    } else if (seg.size() == 1 && seg[0] == "profile-answers") {
      res.body = {{"answer_id", store_.record_profile_answer(profile_answer_from_json(body), clock_())}};
    } else if (seg.size() == 1 && seg[0] == "schedules") {
      Schedule sch = schedule_from_json(body);
      store_.upsert_schedule(sch);
      res.body = to_json(store_.snapshot()->schedules.at(sch.schedule_id));
    } else if (seg.size() == 3 && seg[0] == "schedules" && (seg[2] == "enable" || seg[2] == "disable")) {
      store_.set_schedule_enabled(seg[1], seg[2] == "enable");
      res.status = 200;
      res.body = to_json(store_.snapshot()->schedules.at(seg[1]));
    } else {
      throw NotFoundError("no route for POST " + req.path);
    }
    return res;
  }

  Store& store_;
  std::optional<std::string> write_token_;
  std::function<Timestamp()> clock_;
};

}  // namespace mhbench::api
