// mhbench: operator CLI for suites, evaluation runs, profiles, personality
// inventories, leaderboards and the HTTP service.

#include <csignal>
#include <cstdio>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mhbench/http_server.hpp"
#include "mhbench/http_transport.hpp"
#include "mhbench/mhbench.hpp"

using namespace mhbench;

namespace {

enum Exit : int {
  kOk = 0,
  kFailed = 1,  // validation failed, comparison rejected, ...
  kUsage = 2,
  kNotFound = 3,
  kInvalid = 4,
  kConflict = 5,
  kGateway = 6,
  kStorage = 7,
};

const std::filesystem::path kDefaultData = MHBENCH_DATA_DIR;

struct Globals {
  std::string store_dir = "mhbench-store";
  std::string catalog = (kDefaultData / "catalog" / "profile_catalog.json").string();
  std::string templates_dir;
  std::string format = "text";
  int rate_ceiling = 60;
  bool structured() const { return format == "json"; }
};

Store open_store(const Globals& g) {
  auto catalog = std::make_shared<const ProfileCatalog>(load_catalog(g.catalog));
  return Store(g.store_dir, std::move(catalog));
}

TemplateRegistry templates(const Globals& g) {
  TemplateRegistry reg;
  if (!g.templates_dir.empty()) reg.load_directory(g.templates_dir);
  return reg;
}

std::shared_ptr<ChatTransport> transport_for(const std::string& replay) {
  if (!replay.empty()) return replay_session(ReplayArchive::load(replay));
  return std::make_shared<HttpChatTransport>();
}

GatewayConfig gateway_config(const Globals& g, int attempts) {
  GatewayConfig cfg;
  cfg.retry.max_attempts = attempts;
  cfg.rate_ceiling = g.rate_ceiling;
  return cfg;
}

std::string cell(const std::optional<double>& v, int digits = 3) { return v ? format_fixed(*v, digits) : "-"; }

void print_json(const json& j) { std::cout << j.dump(2) << "\n"; }

// ---------------------------------------------------------------------------

int cmd_validate(const Globals& g, const std::string& path) {
  const auto result = load_suite(path);
  for (const auto& d : result.diagnostics) std::cerr << d.render() << "\n";
  if (g.structured()) {
    json diags = json::array();
    for (const auto& d : result.diagnostics) diags.push_back(d.render());
    print_json({{"valid", result.ok()}, {"diagnostics", diags},
                {"items", result.suite ? json(result.suite->items.size()) : json(nullptr)}});
  } else if (result.ok()) {
    std::cout << result.suite->suite_id << "@" << result.suite->version << ": " << result.suite->items.size()
              << " items, valid\n";
  }
  return result.ok() ? kOk : kFailed;
}

int cmd_pairs(const std::string& path, double min_margin) {
  std::cout << export_preference_pairs(extract_preference_pairs(load_suite_or_throw(path), min_margin));
  return kOk;
}

struct RunArgs {
  std::string model_id;
  std::string suite;
  std::string replay;
  std::string record;
  RunConfig config;
  bool persist = true;
};

void print_score(const RunRecord& run) {
  const auto& s = run.score;
  std::cout << "run " << run.run_id << "\n"
            << "  model     " << run.model_id << "\n"
            << "  suite     " << run.suite_id << "@" << run.suite_version << "\n"
            << "  rmse      " << cell(s.rmse) << "\n"
            << "  mae       " << cell(s.mae) << "\n"
            << "  pref_acc  " << cell(s.preference_accuracy) << " (" << s.preference_pairs << " pairs)\n"
            << "  coverage  " << format_fixed(s.coverage, 3) << " (" << s.parsed_count << "/" << s.total_count
            << ", " << s.clamped_count << " clamped)\n";
  for (const auto& [tag, v] : s.per_technique_rmse) std::cout << "  rmse[" << tag << "] " << cell(v) << "\n";
}

int cmd_run(const Globals& g, RunArgs args) {
  Store store = open_store(g);
  const auto state = store.snapshot();
  const auto* model = state->find_model(args.model_id);
  if (!model) throw NotFoundError("model " + args.model_id + " is not registered (use `models add`)");
  const auto suite = load_suite_or_throw(args.suite);
  if (args.persist) store.register_suite(suite);

  auto transport = transport_for(args.replay);
  std::shared_ptr<RecordingTransport> recorder;
  if (!args.record.empty()) {
    recorder = std::make_shared<RecordingTransport>(transport);
    transport = recorder;
  }
  Gateway gateway(transport, gateway_config(g, args.config.gateway_attempts));
  const RunRecord run = evaluate(gateway, *model, suite, args.config, templates(g));
  if (recorder) recorder->archive().save(args.record);
  if (args.persist) store.persist_run(run);

  if (g.structured()) {
    print_json({{"run_id", run.run_id}, {"score", to_json(run.score)}});
  } else {
    print_score(run);
  }
  return kOk;
}

int cmd_breakdown(const Globals& g, const std::string& run_id, const std::string& technique, bool csv) {
  Store store = open_store(g);
  const auto state = store.snapshot();
  const auto run = state->find_run(run_id);
  if (!run) throw NotFoundError("unknown run " + run_id);
  auto suite = state->find_suite(run->suite_id, run->suite_version);
  if (!suite) throw NotFoundError("suite " + run->suite_id + "@" + run->suite_version + " is not registered");
  auto rows = question_breakdown(*run, *suite);
  if (!technique.empty()) {
    if (!suite->knows_technique(technique)) throw InvalidInputError("technique: unknown " + technique);
    std::erase_if(rows, [&](const auto& r) {
      return std::find(r.techniques.begin(), r.techniques.end(), technique) == r.techniques.end();
    });
  }
  const auto techs = technique_aggregate({*run}, *suite);
  if (csv) {
    std::cout << question_breakdown_csv(rows);
  } else if (g.structured()) {
    json jr = json::array(), jt = json::array();
    for (const auto& r : rows) jr.push_back(to_json(r));
    for (const auto& t : techs) jt.push_back(to_json(t));
    print_json({{"run_id", run_id}, {"question_breakdown", jr}, {"technique_aggregates", jt}});
  } else {
    std::printf("%-16s %-10s %-8s %s\n", "item", "sq_error", "parsed", "techniques");
    for (const auto& r : rows) {
      std::printf("%-16s %-10s %-8s %s\n", r.item_id.c_str(), cell(r.squared_error).c_str(),
                  (std::to_string(r.parsed_count) + "/" + std::to_string(r.responses.size())).c_str(),
                  join(r.techniques, ",").c_str());
    }
    std::cout << "\n";
    std::printf("%-26s %-6s %-8s %s\n", "technique", "items", "rmse", "delta");
    for (const auto& t : techs) {
      std::printf("%-26s %-6zu %-8s %s\n", t.technique_id.c_str(), t.item_count, cell(t.rmse).c_str(),
                  cell(t.mean_error_delta).c_str());
    }
  }
  return kOk;
}

// -- models / suites --------------------------------------------------------

int cmd_models_add(const Globals& g, ModelDescriptor m, const std::string& kind) {
  auto k = parse_model_kind(kind);
  if (!k) throw InvalidInputError("kind: expected base or tool");
  m.kind = *k;
  if (m.display_name.empty()) m.display_name = m.model_id;
  Store store = open_store(g);
  store.register_model(m);
  std::cout << "registered " << m.model_id << "\n";
  return kOk;
}

int cmd_models_list(const Globals& g) {
  Store store = open_store(g);
  const auto state = store.snapshot();
  if (g.structured()) {
    print_json(api::models_body(*state));
    return kOk;
  }
  for (const auto& m : state->models) {
    std::cout << m.model_id << "\t" << to_string(m.kind) << "\t" << m.display_name;
    if (m.base_of) std::cout << "\t(base: " << *m.base_of << ")";
    std::cout << "\n";
  }
  return kOk;
}

int cmd_suites_register(const Globals& g, const std::string& path) {
  Store store = open_store(g);
  const auto suite = load_suite_or_throw(path);
  store.register_suite(suite);
  std::cout << "registered " << suite.suite_id << "@" << suite.version << "\n";
  return kOk;
}

int cmd_suites_list(const Globals& g) {
  Store store = open_store(g);
  const auto body = api::benchmarks_body(*store.snapshot());
  if (g.structured()) {
    print_json(body);
    return kOk;
  }
  for (const auto& s : body) {
    std::cout << s["suite_id"].get<std::string>() << "@" << s["version"].get<std::string>() << "\t"
              << s["validated_item_count"] << "/" << s["item_count"] << " validated\t" << s["name"].get<std::string>()
              << "\n";
  }
  return kOk;
}

// -- profile ----------------------------------------------------------------

struct AnswerArgs {
  std::string model_id;
  std::string question_id;
  std::string value;
  std::string source_kind = "official_docs";
  std::string reference;
  std::string verified_at;
};

int cmd_profile_answer(const Globals& g, const AnswerArgs& a) {
  Store store = open_store(g);
  const auto* q = store.snapshot()->profiles.catalog->find(a.question_id);
  if (!q) throw NotFoundError("unknown question " + a.question_id);
  ProfileAnswer ans;
  ans.question_id = a.question_id;
  ans.subject_model_id = a.model_id;
  if (q->answer_type == AnswerType::Binary) {
    const std::string v = to_lower(a.value);
    if (v == "true" || v == "yes") {
      ans.value = true;
    } else if (v == "false" || v == "no") {
      ans.value = false;
    } else {
      throw InvalidInputError("type mismatch: question " + q->question_id + " expects a binary answer");
    }
  } else {
    double d = 0;
    auto [end, ec] = std::from_chars(a.value.data(), a.value.data() + a.value.size(), d);
    if (ec != std::errc() || end != a.value.data() + a.value.size()) {
      throw InvalidInputError("type mismatch: question " + q->question_id + " expects a numeric (" + q->unit +
                              ") answer");
    }
    ans.value = d;
  }
  auto kind = parse_source_kind(a.source_kind);
  if (!kind) throw InvalidInputError("source.kind: expected official_docs, terms_of_service or direct_testing");
  ans.source = {*kind, a.reference};
  if (a.verified_at.empty()) {
    ans.verified_at = now_utc();
  } else {
    auto t = parse_iso8601(a.verified_at);
    if (!t) throw InvalidInputError("verified_at: expected ISO-8601 UTC");
    ans.verified_at = *t;
  }
  std::cout << store.record_profile_answer(ans) << "\n";
  return kOk;
}

int cmd_profile_show(const Globals& g, const std::string& model_id) {
  Store store = open_store(g);
  const auto state = store.snapshot();
  const auto entries = get_profile(state->profiles, model_id);
  if (g.structured()) {
    print_json(profile_to_json(model_id, *state->profiles.catalog, entries));
    return kOk;
  }
  size_t answered = 0;
  for (const auto& e : entries) {
    if (!e.answer) continue;
    ++answered;
    std::cout << e.question->question_id << "\t" << e.question->text << "\t"
              << render_value(*e.question, e.answer->value) << "\t" << to_string(e.answer->source.kind) << "\n";
  }
  std::cout << answered << " answered, " << entries.size() - answered << " unanswered (catalog "
            << state->profiles.catalog->version << ")\n";
  return kOk;
}

int cmd_profile_compare(const Globals& g, const std::vector<std::string>& ids) {
  check_compare_count(ids.size());
  Store store = open_store(g);
  const auto state = store.snapshot();
  const auto table = compare_profiles(state->profiles, ids);
  if (g.structured()) {
    print_json(comparison_to_json(table, *state->profiles.catalog));
    return kOk;
  }
  std::cout << "question";
  for (const auto& s : ids) std::cout << "\t" << s;
  std::cout << "\n";
  for (const auto& row : table.rows) {
    if (!row.differs) continue;
    std::cout << row.question->question_id;
    for (const auto& a : row.answers) std::cout << "\t" << (a ? render_value(*row.question, a->value) : "-");
    std::cout << "\n";
  }
  return kOk;
}

int cmd_profile_export(const Globals& g, const std::vector<std::string>& ids, const std::string& out) {
  Store store = open_store(g);
  const auto state = store.snapshot();
  std::string report;
  if (ids.size() == 1) {
    report = export_report(state->profiles, ids[0]);
  } else {
    report = export_report(compare_profiles(state->profiles, ids), *state->profiles.catalog);
  }
  if (out.empty()) {
    std::cout << report;
  } else {
    write_file(out, report);
  }
  return kOk;
}

int cmd_profile_history(const Globals& g, const std::string& model_id, const std::string& question_id) {
  Store store = open_store(g);
  const auto state = store.snapshot();
  const auto* q = state->profiles.catalog->find(question_id);
  if (!q) throw NotFoundError("unknown question " + question_id);
  const auto history = answer_history(state->profiles, model_id, question_id);
  if (g.structured()) {
    json arr = json::array();
    for (const auto& a : history) arr.push_back(to_json(a));
    print_json(arr);
    return kOk;
  }
  for (const auto& a : history) {
    std::cout << a.answer_id << "\t" << format_iso8601(a.verified_at) << "\t" << render_value(*q, a.value) << "\t"
              << to_string(a.source.kind) << "\t" << a.source.reference << "\n";
  }
  return kOk;
}

// -- personality --------------------------------------------------------------

int cmd_personality(const Globals& g, const std::string& model_id, const std::string& framework,
                    std::string inventory_path, const std::string& replay, const std::string& record, int workers) {
  auto fw = parse_framework(framework);
  if (!fw) throw InvalidInputError("framework: expected big_five, hexaco, mbti or enneagram");
  if (inventory_path.empty()) inventory_path = (kDefaultData / "inventories" / (std::string(to_string(*fw)) + ".json")).string();
  const auto inventory = load_inventory(inventory_path);
  if (inventory.framework != *fw) throw InvalidInputError("inventory: framework does not match --framework");

  Store store = open_store(g);
  const auto* model = store.snapshot()->find_model(model_id);
  if (!model) throw NotFoundError("model " + model_id + " is not registered (use `models add`)");
  auto transport = transport_for(replay);
  std::shared_ptr<RecordingTransport> recorder;
  if (!record.empty()) {
    recorder = std::make_shared<RecordingTransport>(transport);
    transport = recorder;
  }
  Gateway gateway(transport, gateway_config(g, 3));
  AdministrationConfig cfg;
  cfg.workers = workers;
  const auto administration = administer(gateway, *model, inventory, cfg);
  if (recorder) recorder->archive().save(record);
  auto result = score_inventory(administration.responses, inventory);
  result.model_id = model_id;
  result.administered_at = administration.administered_at;
  store.record_personality(result);

  if (g.structured()) {
    print_json(to_json(result));
    return kOk;
  }
  std::cout << model_id << " / " << inventory.inventory_id << " (coverage " << format_fixed(result.response_coverage, 3)
            << ")\n";
  for (const auto& d : result.dimensions) std::cout << "  " << d.dimension << "\t" << cell(d.score, 1) << "\n";
  if (!result.dichotomies.empty()) {
    std::cout << "  type " << result.mbti_type << "\n";
    for (const auto& d : result.dichotomies)
      std::cout << "  " << d.dichotomy << "\t" << d.letter << " " << cell(d.strength, 1) << (d.tie ? " (tie)" : "")
                << "\n";
  }
  if (result.enneagram) {
    const auto& e = *result.enneagram;
    std::cout << "  primary " << (e.primary ? std::to_string(*e.primary) : "-") << (e.tie ? " (tie)" : "") << "\n";
    for (int t = 0; t < 9; ++t) std::cout << "  type " << t + 1 << "\t" << cell(e.percentages[t], 2) << "%\n";
  }
  return kOk;
}

// -- leaderboard / schedules / serve -----------------------------------------

int cmd_leaderboard(const Globals& g, const std::string& kind, const std::string& sort, bool desc) {
  auto k = parse_model_kind(kind);
  if (!k) throw InvalidInputError("kind: expected base or tool");
  Store store = open_store(g);
  const auto view =
      compute_leaderboard(*store.snapshot(), *k, sort.empty() ? std::nullopt : std::optional(sort), !desc);
  if (g.structured()) {
    print_json(to_json(view));
    return kOk;
  }
  if (view.columns.empty()) {
    std::cout << "no benchmark suites registered\n";
    return kOk;
  }
  std::printf("%-24s", "model");
  for (const auto& c : view.columns) std::printf(" %-22s", (c.suite_id + "@" + c.version).c_str());
  std::printf("\n");
  for (const auto& row : view.rows) {
    std::printf("%-24s", row.model_id.c_str());
    for (const auto& c : row.cells) {
      const std::string text = c ? cell(c->rmse) + " (cov " + format_fixed(c->coverage, 2) + ")" : "missing";
      std::printf(" %-22s", text.c_str());
    }
    std::printf("\n");
  }
  std::cout << "sorted by rmse on " << view.sort_suite << (view.ascending ? " ascending" : " descending") << "\n";
  return kOk;
}

int cmd_schedules_add(const Globals& g, Schedule s, long long cadence_seconds) {
  s.cadence = std::chrono::seconds(cadence_seconds);
  Store store = open_store(g);
  store.upsert_schedule(s);
  std::cout << "scheduled " << s.schedule_id << "\n";
  return kOk;
}

int cmd_schedules_list(const Globals& g) {
  Store store = open_store(g);
  const auto state = store.snapshot();
  if (g.structured()) {
    print_json(api::schedules_body(*state));
    return kOk;
  }
  for (const auto& [id, s] : state->schedules) {
    std::cout << id << "\t" << s.model_id << " x " << s.suite_id << "\tevery " << s.cadence.count() << "s\t"
              << (s.enabled ? "enabled" : "disabled") << "\tlast fired "
              << (s.last_fired ? format_iso8601(*s.last_fired) : "never") << "\n";
  }
  return kOk;
}

int cmd_schedules_tick(const Globals& g, const std::string& replay) {
  Store store = open_store(g);
  Gateway gateway(transport_for(replay), gateway_config(g, 3));
  const auto result = fire_due_schedules(now_utc(), store, gateway, templates(g));
  for (const auto& id : result.started_run_ids) std::cout << "started " << id << "\n";
  for (const auto& id : result.failed_schedule_ids) std::cout << "failed " << id << "\n";
  return result.failed_schedule_ids.empty() ? kOk : kGateway;
}

std::atomic<HttpService*> g_service{nullptr};

extern "C" void on_signal(int) {
  if (auto* s = g_service.load()) s->stop();
}

int cmd_serve(const Globals& g, const std::string& bind, const std::string& static_dir, int tick_seconds,
              const std::string& replay) {
  Store store = open_store(g);
  std::optional<std::string> token;
  if (const char* t = std::getenv("MHBENCH_WRITE_TOKEN"); t && *t) token = t;
  api::ApiService api(store, token);
  HttpService http(api);
  if (!static_dir.empty() && !http.mount_static(static_dir)) {
    throw InvalidInputError("static: cannot serve " + static_dir);
  }
  const auto colon = bind.rfind(':');
  if (colon == std::string::npos) throw InvalidInputError("bind: expected host:port");
  const std::string host = bind.substr(0, colon);
  const int port = std::stoi(bind.substr(colon + 1));
  const int bound = http.bind(host, port);
  if (bound < 0) throw StorageError("cannot bind " + bind);

  Gateway gateway(transport_for(replay), gateway_config(g, 3));
  const TemplateRegistry reg = templates(g);
  std::unique_ptr<TickLoop> ticker;
  if (tick_seconds > 0) {
    ticker = std::make_unique<TickLoop>(std::chrono::seconds(tick_seconds), [&] {
      try {
        fire_due_schedules(now_utc(), store, gateway, reg);
      } catch (const std::exception& e) {
        std::cerr << "scheduler: " << e.what() << "\n";
      }
    });
  }
  g_service = &http;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cout << "listening on " << host << ":" << bound << std::endl;
  http.listen_after_bind();
  g_service = nullptr;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mental-health LLM evaluation toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML/INI file with option defaults");
  Globals g;
  app.add_option("--store", g.store_dir, "Store directory")->envname("MHBENCH_STORE");
  app.add_option("--catalog", g.catalog, "Profile question catalog")->envname("MHBENCH_CATALOG");
  app.add_option("--templates", g.templates_dir, "Directory of extra prompt templates (*.txt)");
  app.add_option("--format", g.format, "Output format")->check(CLI::IsMember({"text", "json"}));
  app.add_option("--rate-ceiling", g.rate_ceiling, "Requests per model per minute")->check(CLI::PositiveNumber);

  std::function<int()> action;

  std::string suite_path;
  auto* validate = app.add_subcommand("validate", "Check a suite; exit 0 iff valid");
  validate->add_option("suite", suite_path)->required();
  validate->callback([&] { action = [&] { return cmd_validate(g, suite_path); }; });

  double min_margin = 0;
  auto* pairs = app.add_subcommand("pairs", "Emit preference pairs as JSON lines");
  pairs->add_option("suite", suite_path)->required();
  pairs->add_option("--min-margin", min_margin);
  pairs->callback([&] { action = [&] { return cmd_pairs(suite_path, min_margin); }; });

  RunArgs run_args;
  bool no_persist = false;
  auto* run = app.add_subcommand("run", "Evaluate a model on a suite and persist the run");
  run->add_option("--model", run_args.model_id)->required();
  run->add_option("--suite", run_args.suite)->required();
  run->add_option("--replay", run_args.replay, "Replay archive instead of live endpoint");
  run->add_option("--record", run_args.record, "Write a replay archive of this run");
  run->add_option("--temperature", run_args.config.temperature);
  run->add_option("--template", run_args.config.template_id);
  run->add_option("--retry-budget", run_args.config.retry_budget)->check(CLI::NonNegativeNumber);
  run->add_option("--attempts", run_args.config.gateway_attempts)->check(CLI::PositiveNumber);
  run->add_option("--max-tokens", run_args.config.max_output_tokens)->check(CLI::PositiveNumber);
  run->add_option("--workers", run_args.config.workers)->check(CLI::PositiveNumber);
  run->add_flag("--no-persist", no_persist);
  run->callback([&] {
    run_args.persist = !no_persist;
    action = [&] { return cmd_run(g, run_args); };
  });

  std::string run_id, technique;
  bool csv = false;
  auto* breakdown = app.add_subcommand("breakdown", "Per-question and per-technique error breakdown");
  breakdown->add_option("run_id", run_id)->required();
  breakdown->add_option("--technique", technique);
  breakdown->add_flag("--csv", csv);
  breakdown->callback([&] { action = [&] { return cmd_breakdown(g, run_id, technique, csv); }; });

  auto* models = app.add_subcommand("models", "Model registry");
  models->require_subcommand(1);
  ModelDescriptor md;
  std::string kind = "base", base_of;
  auto* models_add = models->add_subcommand("add");
  models_add->add_option("--id", md.model_id)->required();
  models_add->add_option("--kind", kind)->check(CLI::IsMember({"base", "tool"}));
  models_add->add_option("--name", md.display_name);
  models_add->add_option("--endpoint", md.provider_endpoint)->required();
  models_add->add_option("--version", md.version_label);
  models_add->add_option("--base-of", base_of);
  models_add->callback([&] {
    if (!base_of.empty()) md.base_of = base_of;
    action = [&] { return cmd_models_add(g, md, kind); };
  });
  models->add_subcommand("list")->callback([&] { action = [&] { return cmd_models_list(g); }; });

  auto* suites = app.add_subcommand("suites", "Suite registry");
  suites->require_subcommand(1);
  auto* suites_register = suites->add_subcommand("register");
  suites_register->add_option("suite", suite_path)->required();
  suites_register->callback([&] { action = [&] { return cmd_suites_register(g, suite_path); }; });
  suites->add_subcommand("list")->callback([&] { action = [&] { return cmd_suites_list(g); }; });

  auto* profile = app.add_subcommand("profile", "Technical profiles");
  profile->require_subcommand(1);
  AnswerArgs answer;
  auto* p_answer = profile->add_subcommand("answer", "Record one verified answer");
  p_answer->add_option("--model", answer.model_id)->required();
  p_answer->add_option("--question", answer.question_id)->required();
  p_answer->add_option("--value", answer.value)->required();
  p_answer->add_option("--source-kind", answer.source_kind);
  p_answer->add_option("--reference", answer.reference)->required();
  p_answer->add_option("--verified-at", answer.verified_at);
  p_answer->callback([&] { action = [&] { return cmd_profile_answer(g, answer); }; });
  std::string subject, question, out_path;
  std::vector<std::string> subjects;
  auto* p_show = profile->add_subcommand("show");
  p_show->add_option("model", subject)->required();
  p_show->callback([&] { action = [&] { return cmd_profile_show(g, subject); }; });
  auto* p_compare = profile->add_subcommand("compare");
  p_compare->add_option("models", subjects)->required();
  p_compare->callback([&] { action = [&] { return cmd_profile_compare(g, subjects); }; });
  auto* p_export = profile->add_subcommand("export", "Markdown report for one model or a comparison");
  p_export->add_option("models", subjects)->required();
  p_export->add_option("--out", out_path);
  p_export->callback([&] { action = [&] { return cmd_profile_export(g, subjects, out_path); }; });
  auto* p_history = profile->add_subcommand("history");
  p_history->add_option("model", subject)->required();
  p_history->add_option("question", question)->required();
  p_history->callback([&] { action = [&] { return cmd_profile_history(g, subject, question); }; });

  std::string framework, inventory, replay, record;
  int workers = 1;
  auto* personality = app.add_subcommand("personality", "Administer and score a personality inventory");
  personality->add_option("--model", subject)->required();
  personality->add_option("--framework", framework)->required();
  personality->add_option("--inventory", inventory);
  personality->add_option("--replay", replay);
  personality->add_option("--record", record);
  personality->add_option("--workers", workers)->check(CLI::PositiveNumber);
  personality->callback([&] {
    action = [&] { return cmd_personality(g, subject, framework, inventory, replay, record, workers); };
  });

  std::string sort;
  bool desc = false;
  auto* leaderboard = app.add_subcommand("leaderboard", "Per-suite RMSE grid");
  leaderboard->add_option("--kind", kind)->check(CLI::IsMember({"base", "tool"}));
  leaderboard->add_option("--sort", sort, "Suite id to sort by");
  leaderboard->add_flag("--desc", desc);
  leaderboard->callback([&] { action = [&] { return cmd_leaderboard(g, kind, sort, desc); }; });

  auto* schedules = app.add_subcommand("schedules", "Recurring evaluation runs");
  schedules->require_subcommand(1);
  Schedule sched;
  long long cadence = 0;
  auto* s_add = schedules->add_subcommand("add");
  s_add->add_option("--id", sched.schedule_id)->required();
  s_add->add_option("--model", sched.model_id)->required();
  s_add->add_option("--suite", sched.suite_id)->required();
  s_add->add_option("--every", cadence, "Cadence in seconds")->required()->check(CLI::PositiveNumber);
  s_add->callback([&] { action = [&] { return cmd_schedules_add(g, sched, cadence); }; });
  schedules->add_subcommand("list")->callback([&] { action = [&] { return cmd_schedules_list(g); }; });
  auto* s_tick = schedules->add_subcommand("tick", "Fire every due schedule once");
  s_tick->add_option("--replay", replay);
  s_tick->callback([&] { action = [&] { return cmd_schedules_tick(g, replay); }; });

  std::string bind = "127.0.0.1:8080", static_dir;
  int tick = 60;
  auto* serve = app.add_subcommand("serve", "Run the HTTP API");
  serve->add_option("--bind", bind)->envname("MHBENCH_BIND");
  serve->add_option("--static", static_dir, "Dashboard assets served under /ui");
  serve->add_option("--tick", tick, "Scheduler poll interval in seconds (0 disables)")->check(CLI::NonNegativeNumber);
  serve->add_option("--replay", replay, "Serve scheduled runs from a replay archive");
  serve->callback([&] { action = [&] { return cmd_serve(g, bind, static_dir, tick, replay); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    return action();
  } catch (const SuiteValidationError& e) {
    for (const auto& d : e.diagnostics()) std::cerr << d.render() << "\n";
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const NotFoundError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNotFound;
  } catch (const InvalidInputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const ConflictError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConflict;
  } catch (const GatewayError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kGateway;
  } catch (const StorageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kStorage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailed;
  }
}
