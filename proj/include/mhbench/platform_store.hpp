#pragma once
// Append-only persistence for models, suites, runs, profile answers,
// personality results and schedules. Each entity type has its own
// line-delimited log in the store directory; the in-memory state is rebuilt by
// replaying the logs and published to readers as immutable snapshots.

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "mhbench/benchmark_format.hpp"
#include "mhbench/common.hpp"
#include "mhbench/conversational_dynamics.hpp"
#include "mhbench/evaluation_engine.hpp"
#include "mhbench/model_gateway.hpp"
#include "mhbench/technical_profile.hpp"

namespace mhbench {

struct Schedule {
  std::string schedule_id;
  std::string model_id;
  std::string suite_id;
  std::chrono::seconds cadence{0};
  RunConfig config;
  bool enabled = true;
  std::optional<Timestamp> last_fired;
  std::optional<Timestamp> last_failed_attempt;
  std::string last_error;
  int failed_attempts = 0;
  std::vector<std::string> run_ids;

  bool due(Timestamp now) const { return enabled && (!last_fired || *last_fired + cadence <= now); }
};

inline json to_json(const Schedule& s) {
  return {{"schedule_id", s.schedule_id},
          {"model_id", s.model_id},
          {"suite_id", s.suite_id},
          {"cadence_seconds", s.cadence.count()},
          {"config", to_json(s.config)},
          {"enabled", s.enabled},
          {"last_fired", s.last_fired ? json(format_iso8601(*s.last_fired)) : json(nullptr)},
          {"last_failed_attempt", s.last_failed_attempt ? json(format_iso8601(*s.last_failed_attempt)) : json(nullptr)},
          {"last_error", s.last_error},
          {"failed_attempts", s.failed_attempts},
          {"run_ids", s.run_ids}};
}

/// Parses the writable fields of a schedule definition.
inline Schedule schedule_from_json(const json& j) {
  if (!j.is_object()) throw InvalidInputError("body: expected an object");
  Schedule s;
  for (const char* key : {"schedule_id", "model_id", "suite_id"}) {
    if (!j.contains(key) || !j[key].is_string() || j[key].get<std::string>().empty()) {
      throw InvalidInputError(std::string(key) + ": expected nonempty string");
    }
  }
  s.schedule_id = j["schedule_id"].get<std::string>();
  s.model_id = j["model_id"].get<std::string>();
  s.suite_id = j["suite_id"].get<std::string>();
  if (!j.contains("cadence_seconds") || !j["cadence_seconds"].is_number_integer() ||
      j["cadence_seconds"].get<long long>() <= 0) {
    throw InvalidInputError("cadence_seconds: expected positive integer");
  }
  s.cadence = std::chrono::seconds(j["cadence_seconds"].get<long long>());
  s.config = run_config_from_json(j.value("config", json::object()));
  s.enabled = j.value("enabled", true);
  return s;
}

struct StoredRun {
  std::shared_ptr<const RunRecord> run;
  std::string canonical;  // serialized form, used for idempotence checks
  size_t sequence = 0;    // persist order
};

/// Everything a reader needs, immutable once published.
struct StoreState {
  uint64_t version = 0;  // number of applied log records
  std::vector<ModelDescriptor> models;
  std::vector<std::string> suite_order;  // suite ids in first-registration order
  std::map<std::string, std::vector<std::shared_ptr<const BenchmarkSuite>>> suites;  // versions, oldest first
  std::vector<StoredRun> runs;
  std::map<std::string, size_t> run_index;
  ProfileBook profiles;
  std::vector<PersonalityResult> personality;
  std::map<std::string, Schedule> schedules;

  const ModelDescriptor* find_model(std::string_view id) const {
    for (const auto& m : models)
      if (m.model_id == id) return &m;
    return nullptr;
  }
  std::shared_ptr<const BenchmarkSuite> newest_suite(std::string_view suite_id) const {
    auto it = suites.find(std::string(suite_id));
    if (it == suites.end() || it->second.empty()) return nullptr;
    return it->second.back();
  }
  std::shared_ptr<const BenchmarkSuite> find_suite(std::string_view suite_id, std::string_view version) const {
    auto it = suites.find(std::string(suite_id));
    if (it == suites.end()) return nullptr;
    for (const auto& s : it->second)
      if (s->version == version) return s;
    return nullptr;
  }
  std::shared_ptr<const RunRecord> find_run(std::string_view run_id) const {
    auto it = run_index.find(std::string(run_id));
    return it == run_index.end() ? nullptr : runs[it->second].run;
  }
};

namespace detail {

inline void append_durable(const std::filesystem::path& path, std::string line) {
  line.push_back('\n');
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw StorageError("cannot open " + path.string() + " for append");
  size_t written = 0;
  while (written < line.size()) {
    const ssize_t n = ::write(fd, line.data() + written, line.size() - written);
    if (n < 0) {
      ::close(fd);
      throw StorageError("write to " + path.string() + " failed");
    }
    written += static_cast<size_t>(n);
  }
  if (::fsync(fd) != 0) {
    ::close(fd);
    throw StorageError("fsync of " + path.string() + " failed");
  }
  ::close(fd);
}

/// Reads a log, dropping a torn final record left by an interrupted append.
inline std::vector<JsonLine> read_log(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return {};
  std::string text = read_file(path);
  if (!text.empty() && text.back() != '\n') {
    const size_t cut = text.rfind('\n');
    const std::string tail = text.substr(cut == std::string::npos ? 0 : cut + 1);
    const bool torn = !json::accept(tail);
    if (torn) {
      text.resize(cut == std::string::npos ? 0 : cut + 1);
      std::filesystem::resize_file(path, text.size());
    } else {
      text.push_back('\n');
      std::ofstream(path, std::ios::app) << '\n';
    }
  }
  return parse_json_lines_strict(text, path.string());
}

}  // namespace detail

class Store {
 public:
  static constexpr const char* kModelsLog = "models.jsonl";
  static constexpr const char* kSuitesLog = "suites.jsonl";
  static constexpr const char* kRunsLog = "runs.jsonl";
  static constexpr const char* kAnswersLog = "profile_answers.jsonl";
  static constexpr const char* kPersonalityLog = "personality.jsonl";
  static constexpr const char* kSchedulesLog = "schedules.jsonl";

  /// Opens (creating if needed) the store at `dir`. A `catalog.json` inside
  /// the directory overrides `default_catalog`.
  Store(std::filesystem::path dir, std::shared_ptr<const ProfileCatalog> default_catalog)
      : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
    auto state = std::make_shared<StoreState>();
    if (std::filesystem::exists(dir_ / "catalog.json")) {
      state->profiles.catalog = std::make_shared<const ProfileCatalog>(load_catalog(dir_ / "catalog.json"));
    } else {
      state->profiles.catalog = default_catalog ? std::move(default_catalog)
                                                : std::make_shared<const ProfileCatalog>();
    }
    replay(*state);
    snapshot_ = std::move(state);
  }

  const std::filesystem::path& directory() const { return dir_; }

  std::shared_ptr<const StoreState> snapshot() const {
    std::lock_guard lock(publish_mu_);
    return snapshot_;
  }

  // -- writes ---------------------------------------------------------------

  void register_model(const ModelDescriptor& model) {
    validate_descriptor(model);
    write([&](StoreState& s) -> std::optional<std::pair<const char*, json>> {
      if (const auto* existing = s.find_model(model.model_id)) {
        if (*existing == model) return std::nullopt;
        throw ConflictError("model " + model.model_id + " already registered with different fields");
      }
      if (model.base_of) {
        const auto* base = s.find_model(*model.base_of);
        if (!base || base->kind != ModelKind::BaseModel) {
          throw InvalidInputError("base_of: " + *model.base_of + " is not a registered base model");
        }
      }
      return std::make_pair(kModelsLog, to_json(model));
    });
  }

  /// Suite versions are immutable: re-registering identical content is a
  /// no-op, changed content under an existing version is a conflict.
  void register_suite(const BenchmarkSuite& suite) {
    auto diags = validate_suite(suite);
    if (std::any_of(diags.begin(), diags.end(), [](const auto& d) { return d.severity == Severity::Error; })) {
      throw SuiteValidationError(std::move(diags));
    }
    write([&](StoreState& s) -> std::optional<std::pair<const char*, json>> {
      if (auto existing = s.find_suite(suite.suite_id, suite.version)) {
        if (*existing == suite) return std::nullopt;
        throw ConflictError("suite " + suite.suite_id + "@" + suite.version +
                            " already registered with different items; publish a new version");
      }
      return std::make_pair(kSuitesLog, suite_to_json(suite));
    });
  }

  /// Idempotent on run_id. The score must match a recomputation from the
  /// ratings and the registered suite version.
  std::string persist_run(const RunRecord& run) {
    const std::string canonical = to_json(run).dump();
    write([&](StoreState& s) -> std::optional<std::pair<const char*, json>> {
      if (auto it = s.run_index.find(run.run_id); it != s.run_index.end()) {
        if (s.runs[it->second].canonical == canonical) return std::nullopt;
        throw ConflictError("run " + run.run_id + " already stored with different content");
      }
      if (!s.find_model(run.model_id)) throw NotFoundError("model_id: unknown model " + run.model_id);
      auto suite = s.find_suite(run.suite_id, run.suite_version);
      if (!suite) throw NotFoundError("suite_id: unknown suite " + run.suite_id + "@" + run.suite_version);
      const BenchmarkScore recomputed = score_run(run.ratings, *suite);
      if (!scores_agree(recomputed, run.score)) {
        throw InvalidInputError("score: does not match recomputation from ratings");
      }
      return std::make_pair(kRunsLog, json::parse(canonical));
    });
    return run.run_id;
  }

  std::string record_profile_answer(ProfileAnswer answer, Timestamp now = now_utc()) {
    std::string id;
    write([&](StoreState& s) -> std::optional<std::pair<const char*, json>> {
      check_answer(s.profiles, answer, now);
      answer.answer_id = next_answer_id(s.profiles);
      id = answer.answer_id;
      return std::make_pair(kAnswersLog, to_json(answer));
    });
    return id;
  }

  void record_personality(const PersonalityResult& result) {
    write([&](StoreState& s) -> std::optional<std::pair<const char*, json>> {
      if (!s.find_model(result.model_id)) throw NotFoundError("model_id: unknown model " + result.model_id);
      return std::make_pair(kPersonalityLog, to_json(result));
    });
  }

  void upsert_schedule(const Schedule& schedule) {
    write([&](StoreState& s) -> std::optional<std::pair<const char*, json>> {
      if (schedule.cadence.count() <= 0) throw InvalidInputError("cadence_seconds: must be positive");
      if (!s.find_model(schedule.model_id)) throw NotFoundError("model_id: unknown model " + schedule.model_id);
      if (!s.newest_suite(schedule.suite_id)) throw NotFoundError("suite_id: unknown suite " + schedule.suite_id);
      return std::make_pair(kSchedulesLog, json{{"event", "upsert"}, {"schedule", to_json(schedule)}});
    });
  }

  void set_schedule_enabled(const std::string& schedule_id, bool enabled) {
    schedule_event(schedule_id, {{"event", enabled ? "enable" : "disable"}});
  }

  void mark_schedule_fired(const std::string& schedule_id, Timestamp at, const std::string& run_id) {
    schedule_event(schedule_id, {{"event", "fired"}, {"at", format_iso8601(at)}, {"run_id", run_id}});
  }

  void mark_schedule_failed(const std::string& schedule_id, Timestamp at, const std::string& error) {
    schedule_event(schedule_id, {{"event", "failed_attempt"}, {"at", format_iso8601(at)}, {"error", error}});
  }

  uintmax_t log_bytes(const char* log) const {
    const auto p = dir_ / log;
    return std::filesystem::exists(p) ? std::filesystem::file_size(p) : 0;
  }

 private:
  static bool scores_agree(const BenchmarkScore& a, const BenchmarkScore& b) {
    auto near = [](const std::optional<double>& x, const std::optional<double>& y) {
      if (x.has_value() != y.has_value()) return false;
      return !x || std::fabs(*x - *y) <= 1e-9 * std::max(1.0, std::fabs(*x));
    };
    return near(a.rmse, b.rmse) && near(a.mae, b.mae) && near(a.preference_accuracy, b.preference_accuracy) &&
           std::fabs(a.coverage - b.coverage) <= 1e-12 && a.parsed_count == b.parsed_count &&
           a.total_count == b.total_count;
  }

  void schedule_event(const std::string& schedule_id, json event) {
    event["schedule_id"] = schedule_id;
    write([&](StoreState& s) -> std::optional<std::pair<const char*, json>> {
      if (!s.schedules.count(schedule_id)) throw NotFoundError("unknown schedule " + schedule_id);
      return std::make_pair(kSchedulesLog, event);
    });
  }

  /// Validates against a private copy, appends durably, then publishes.
  template <typename Fn>
  void write(Fn&& prepare) {
    std::lock_guard writer(write_mu_);
    auto next = std::make_shared<StoreState>(*snapshot());
    auto record = prepare(*next);
    if (!record) return;
    detail::append_durable(dir_ / record->first, record->second.dump());
    apply(*next, record->first, record->second);
    std::lock_guard lock(publish_mu_);
    snapshot_ = std::move(next);
  }

  static void apply(StoreState& s, std::string_view log, const json& j) {
    ++s.version;
    if (log == kModelsLog) {
      auto m = model_from_json(j);
      s.profiles.subjects.insert(m.model_id);
      s.models.push_back(std::move(m));
    } else if (log == kSuitesLog) {
      auto suite = std::make_shared<const BenchmarkSuite>(suite_from_json(j));
      if (!s.suites.count(suite->suite_id)) s.suite_order.push_back(suite->suite_id);
      s.suites[suite->suite_id].push_back(std::move(suite));
    } else if (log == kRunsLog) {
      auto run = std::make_shared<const RunRecord>(run_from_json(j));
      s.run_index[run->run_id] = s.runs.size();
      s.runs.push_back({run, j.dump(), s.runs.size()});
    } else if (log == kAnswersLog) {
      s.profiles.answers.push_back(profile_answer_from_json(j));
    } else if (log == kPersonalityLog) {
      s.personality.push_back(personality_from_json(j));
    } else if (log == kSchedulesLog) {
      apply_schedule_event(s, j);
    }
  }

  static void apply_schedule_event(StoreState& s, const json& j) {
    const std::string event = j.at("event").get<std::string>();
    if (event == "upsert") {
      Schedule def = schedule_from_json(j.at("schedule"));
      auto it = s.schedules.find(def.schedule_id);
      if (it != s.schedules.end()) {
        // Firing history survives a redefinition.
        def.last_fired = it->second.last_fired;
        def.last_failed_attempt = it->second.last_failed_attempt;
        def.last_error = it->second.last_error;
        def.failed_attempts = it->second.failed_attempts;
        def.run_ids = it->second.run_ids;
      }
      s.schedules[def.schedule_id] = std::move(def);
      return;
    }
    Schedule& sch = s.schedules.at(j.at("schedule_id").get<std::string>());
    if (event == "enable" || event == "disable") {
      sch.enabled = event == "enable";
    } else if (event == "fired") {
      sch.last_fired = parse_iso8601(j.at("at").get<std::string>());
      sch.run_ids.push_back(j.at("run_id").get<std::string>());
      sch.last_error.clear();
    } else if (event == "failed_attempt") {
      sch.last_failed_attempt = parse_iso8601(j.at("at").get<std::string>());
      sch.last_error = j.value("error", "");
      ++sch.failed_attempts;
    } else {
      throw StorageError("unknown schedule event " + event);
    }
  }

  void replay(StoreState& s) {
    for (const char* log : {kModelsLog, kSuitesLog, kRunsLog, kAnswersLog, kPersonalityLog, kSchedulesLog}) {
      for (const auto& rec : detail::read_log(dir_ / log)) {
        try {
          apply(s, log, rec.value);
        } catch (const std::exception& e) {
          throw StorageError(std::string(log) + ":" + std::to_string(rec.line_number) + ": " + e.what());
        }
      }
    }
  }

  std::filesystem::path dir_;
  std::mutex write_mu_;
  mutable std::mutex publish_mu_;
  std::shared_ptr<const StoreState> snapshot_;
};

// ---------------------------------------------------------------------------
// Leaderboard

struct LeaderboardColumn {
  std::string suite_id;
  std::string name;
  std::string version;  // newest registered version
  bool operator==(const LeaderboardColumn&) const = default;
};

struct LeaderboardCell {
  std::optional<double> rmse;
  double coverage = 0;
  std::string run_id;
  Timestamp run_at{};
  bool operator==(const LeaderboardCell&) const = default;
};

struct LeaderboardRow {
  std::string model_id;
  std::string display_name;
  std::optional<std::string> base_of;
  std::vector<std::optional<LeaderboardCell>> cells;  // nullopt = Missing
  bool operator==(const LeaderboardRow&) const = default;
};

struct LeaderboardView {
  ModelKind kind = ModelKind::BaseModel;
  std::vector<LeaderboardColumn> columns;
  std::vector<LeaderboardRow> rows;
  std::string sort_suite;  // empty when there are no columns
  bool ascending = true;
  bool operator==(const LeaderboardView&) const = default;
};

/// Rows are models of `kind`; columns are registered suites. Each cell is the
/// latest run at the suite's newest version. There is no aggregate column.
inline LeaderboardView compute_leaderboard(const StoreState& state, ModelKind kind,
                                           std::optional<std::string> sort_suite = std::nullopt,
                                           bool ascending = true) {
  LeaderboardView view;
  view.kind = kind;
  view.ascending = ascending;
  for (const auto& sid : state.suite_order) {
    const auto newest = state.newest_suite(sid);
    view.columns.push_back({sid, newest->name, newest->version});
  }
  for (const auto& m : state.models) {
    if (m.kind != kind) continue;
    LeaderboardRow row{m.model_id, m.display_name, m.base_of, {}};
    for (const auto& col : view.columns) {
      const StoredRun* best = nullptr;
      for (const auto& sr : state.runs) {
        const auto& r = *sr.run;
        if (r.model_id != m.model_id || r.suite_id != col.suite_id || r.suite_version != col.version) continue;
        if (!best || r.finished_at >= best->run->finished_at) best = &sr;
      }
      if (best) {
        row.cells.push_back(LeaderboardCell{best->run->score.rmse, best->run->score.coverage, best->run->run_id,
                                            best->run->finished_at});
      } else {
        row.cells.push_back(std::nullopt);
      }
    }
    view.rows.push_back(std::move(row));
  }
  if (view.columns.empty()) return view;

  size_t col = 0;
  if (sort_suite) {
    auto it = std::find_if(view.columns.begin(), view.columns.end(),
                           [&](const auto& c) { return c.suite_id == *sort_suite; });
    if (it == view.columns.end()) throw InvalidInputError("sort: unknown suite " + *sort_suite);
    col = static_cast<size_t>(it - view.columns.begin());
  }
  view.sort_suite = view.columns[col].suite_id;
  std::stable_sort(view.rows.begin(), view.rows.end(), [&](const LeaderboardRow& a, const LeaderboardRow& b) {
    const auto& ca = a.cells[col];
    const auto& cb = b.cells[col];
    const bool ha = ca && ca->rmse;
    const bool hb = cb && cb->rmse;
    if (ha != hb) return ha;  // Missing / undefined last in either direction
    if (!ha) return false;
    return ascending ? *ca->rmse < *cb->rmse : *ca->rmse > *cb->rmse;
  });
  return view;
}

inline json to_json(const LeaderboardView& v) {
  json cols = json::array();
  for (const auto& c : v.columns) cols.push_back({{"suite_id", c.suite_id}, {"name", c.name}, {"version", c.version}});
  json rows = json::array();
  for (const auto& r : v.rows) {
    json cells = json::array();
    for (const auto& c : r.cells) {
      if (!c) {
        cells.push_back(nullptr);
        continue;
      }
      cells.push_back({{"rmse", to_json_or_null(c->rmse)},
                       {"coverage", c->coverage},
                       {"run_id", c->run_id},
                       {"run_at", format_iso8601(c->run_at)}});
    }
    rows.push_back({{"model_id", r.model_id},
                    {"display_name", r.display_name},
                    {"base_of", r.base_of ? json(*r.base_of) : json(nullptr)},
                    {"cells", cells}});
  }
  return {{"kind", to_string(v.kind)},
          {"columns", cols},
          {"rows", rows},
          {"sort", {{"suite_id", v.sort_suite}, {"direction", v.ascending ? "asc" : "desc"}}}};
}

inline LeaderboardView leaderboard_from_json(const json& j) {
  LeaderboardView v;
  v.kind = parse_model_kind(j.at("kind").get<std::string>()).value();
  for (const auto& c : j.at("columns"))
    v.columns.push_back({c.at("suite_id"), c.at("name"), c.at("version")});
  for (const auto& rj : j.at("rows")) {
    LeaderboardRow r;
    r.model_id = rj.at("model_id");
    r.display_name = rj.at("display_name");
    if (!rj.at("base_of").is_null()) r.base_of = rj.at("base_of").get<std::string>();
    for (const auto& cj : rj.at("cells")) {
      if (cj.is_null()) {
        r.cells.push_back(std::nullopt);
        continue;
      }
      r.cells.push_back(LeaderboardCell{optional_number(cj, "rmse"), cj.at("coverage").get<double>(),
                                        cj.at("run_id").get<std::string>(),
                                        parse_iso8601(cj.at("run_at").get<std::string>()).value()});
    }
    v.rows.push_back(std::move(r));
  }
  v.sort_suite = j.at("sort").at("suite_id");
  v.ascending = j.at("sort").at("direction") == "asc";
  return v;
}

// ---------------------------------------------------------------------------
// Scheduling

struct ScheduleTickResult {
  std::vector<std::string> started_run_ids;
  std::vector<std::string> failed_schedule_ids;
};

/// Starts one run for every enabled schedule whose cadence has elapsed. A
/// failed attempt is recorded and left due, so the next tick retries it.
inline ScheduleTickResult fire_due_schedules(Timestamp now, Store& store, Gateway& gateway,
                                             const TemplateRegistry& templates = TemplateRegistry{}) {
  ScheduleTickResult result;
  const auto state = store.snapshot();
  for (const auto& [id, schedule] : state->schedules) {
    if (!schedule.due(now)) continue;
    try {
      const auto* model = state->find_model(schedule.model_id);
      const auto suite = state->newest_suite(schedule.suite_id);
      if (!model || !suite) throw NotFoundError("schedule " + id + " references a missing model or suite");
      RunRecord run = evaluate(gateway, *model, *suite, schedule.config, templates,
                               make_run_id(model->model_id, suite->suite_id, now));
      store.persist_run(run);
      store.mark_schedule_fired(id, now, run.run_id);
      result.started_run_ids.push_back(run.run_id);
    } catch (const GatewayError& e) {
      store.mark_schedule_failed(id, now, e.what());
      result.failed_schedule_ids.push_back(id);
    } catch (const NotFoundError& e) {
      store.mark_schedule_failed(id, now, e.what());
      result.failed_schedule_ids.push_back(id);
    }
  }
  return result;
}

}  // namespace mhbench
