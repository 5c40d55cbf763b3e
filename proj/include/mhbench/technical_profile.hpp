#pragma once
// Dual-level (base model / tool) catalog of binary and numeric profile
// questions with sourced, timestamped answers. Answers are append-only: a new
// answer supersedes, never overwrites, and the latest verified_at is shown.

#include <algorithm>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "mhbench/common.hpp"
#include "mhbench/model_gateway.hpp"

namespace mhbench {

enum class AnswerType { Binary, Numeric };

struct ProfileQuestion {
  std::string question_id;
  ModelKind level = ModelKind::BaseModel;
  std::string category;
  AnswerType answer_type = AnswerType::Binary;
  std::string unit;  // Numeric only
  std::string text;
  int criticality_rank = 1;
  std::string provenance;  // "retained" | "new"
};

struct ProfileCatalog {
  std::string version;
  std::vector<ProfileQuestion> questions;

  const ProfileQuestion* find(std::string_view id) const {
    for (const auto& q : questions)
      if (q.question_id == id) return &q;
    return nullptr;
  }

  std::map<std::string, size_t> provenance_counts() const {
    std::map<std::string, size_t> out;
    for (const auto& q : questions) ++out[q.provenance];
    return out;
  }

  /// Questions ordered by criticality rank, catalog order breaking ties.
  std::vector<const ProfileQuestion*> display_order() const {
    std::vector<const ProfileQuestion*> out;
    for (const auto& q : questions) out.push_back(&q);
    std::stable_sort(out.begin(), out.end(),
                     [](const auto* a, const auto* b) { return a->criticality_rank < b->criticality_rank; });
    return out;
  }
};

inline ProfileCatalog catalog_from_json(const json& j) {
  ProfileCatalog cat;
  cat.version = j.at("version").get<std::string>();
  std::set<std::string> ids;
  for (const auto& qj : j.at("questions")) {
    ProfileQuestion q;
    q.question_id = qj.at("question_id").get<std::string>();
    if (!ids.insert(q.question_id).second) throw InvalidInputError("catalog: duplicate question_id " + q.question_id);
    auto level = parse_model_kind(qj.at("level").get<std::string>());
    if (!level) throw InvalidInputError("catalog: bad level for " + q.question_id);
    q.level = *level;
    q.category = qj.value("category", "");
    const std::string type = qj.at("answer_type").get<std::string>();
    if (type == "binary") {
      q.answer_type = AnswerType::Binary;
    } else if (type == "numeric") {
      q.answer_type = AnswerType::Numeric;
      q.unit = qj.value("unit", "");
      if (q.unit.empty()) throw InvalidInputError("catalog: numeric question " + q.question_id + " needs a unit");
    } else {
      throw InvalidInputError("catalog: bad answer_type for " + q.question_id);
    }
    q.text = qj.at("text").get<std::string>();
    q.criticality_rank = qj.value("criticality_rank", 1);
    if (q.criticality_rank < 1) throw InvalidInputError("catalog: criticality_rank must be positive");
    q.provenance = qj.value("provenance", "");
    cat.questions.push_back(std::move(q));
  }
  return cat;
}

inline ProfileCatalog load_catalog(const std::filesystem::path& path) {
  return catalog_from_json(json::parse(read_file(path)));
}

// ---------------------------------------------------------------------------

using AnswerValue = std::variant<bool, double>;

enum class SourceKind { OfficialDocs, TermsOfService, DirectTesting };

inline std::string_view to_string(SourceKind k) {
  switch (k) {
    case SourceKind::OfficialDocs:
      return "official_docs";
    case SourceKind::TermsOfService:
      return "terms_of_service";
    case SourceKind::DirectTesting:
      return "direct_testing";
  }
  return "official_docs";
}

inline std::optional<SourceKind> parse_source_kind(std::string_view s) {
  if (s == "official_docs") return SourceKind::OfficialDocs;
  if (s == "terms_of_service") return SourceKind::TermsOfService;
  if (s == "direct_testing") return SourceKind::DirectTesting;
  return std::nullopt;
}

struct AnswerSource {
  SourceKind kind = SourceKind::OfficialDocs;
  std::string reference;
  bool operator==(const AnswerSource&) const = default;
};

struct ProfileAnswer {
  std::string answer_id;  // assigned on record
  std::string question_id;
  std::string subject_model_id;
  AnswerValue value;
  AnswerSource source;
  Timestamp verified_at{};

  bool operator==(const ProfileAnswer&) const = default;
};

inline json to_json(const AnswerValue& v) {
  return std::holds_alternative<bool>(v) ? json(std::get<bool>(v)) : json(std::get<double>(v));
}

inline json to_json(const ProfileAnswer& a) {
  return {{"answer_id", a.answer_id},
          {"question_id", a.question_id},
          {"subject_model_id", a.subject_model_id},
          {"value", to_json(a.value)},
          {"source", {{"kind", to_string(a.source.kind)}, {"reference", a.source.reference}}},
          {"verified_at", format_iso8601(a.verified_at)}};
}

/// Field-level validation; the message names the offending field.
inline ProfileAnswer profile_answer_from_json(const json& j) {
  if (!j.is_object()) throw InvalidInputError("body: expected an object");
  auto need = [&](const char* key) -> const json& {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) throw InvalidInputError(std::string(key) + ": missing");
    return *it;
  };
  ProfileAnswer a;
  a.answer_id = j.value("answer_id", "");
  const json& qid = need("question_id");
  const json& sid = need("subject_model_id");
  if (!qid.is_string()) throw InvalidInputError("question_id: expected string");
  if (!sid.is_string()) throw InvalidInputError("subject_model_id: expected string");
  a.question_id = qid.get<std::string>();
  a.subject_model_id = sid.get<std::string>();
  const json& value = need("value");
  if (value.is_boolean()) a.value = value.get<bool>();
  else if (value.is_number()) a.value = value.get<double>();
  else throw InvalidInputError("value: expected boolean or number");
  const json& source = need("source");
  if (!source.is_object() || !source.contains("kind") || !source["kind"].is_string()) {
    throw InvalidInputError("source.kind: missing");
  }
  auto kind = parse_source_kind(source["kind"].get<std::string>());
  if (!kind) throw InvalidInputError("source.kind: expected official_docs, terms_of_service or direct_testing");
  a.source.kind = *kind;
  a.source.reference = source.value("reference", "");
  const json& when = need("verified_at");
  auto ts = when.is_string() ? parse_iso8601(when.get<std::string>()) : std::nullopt;
  if (!ts) throw InvalidInputError("verified_at: expected ISO-8601 UTC timestamp");
  a.verified_at = *ts;
  return a;
}

// ---------------------------------------------------------------------------

/// Catalog, known subjects and the full answer history. A plain value, so
/// readers can hold a consistent copy while a writer appends.
struct ProfileBook {
  std::shared_ptr<const ProfileCatalog> catalog;
  std::set<std::string> subjects;
  std::vector<ProfileAnswer> answers;  // append order
};

/// Throws on unknown question/subject, type mismatch, future timestamp or an
/// empty source reference.
inline void check_answer(const ProfileBook& book, const ProfileAnswer& answer, Timestamp now) {
  const ProfileQuestion* q = book.catalog->find(answer.question_id);
  if (!q) throw NotFoundError("unknown question " + answer.question_id);
  if (!book.subjects.count(answer.subject_model_id)) {
    throw NotFoundError("unknown subject " + answer.subject_model_id);
  }
  const bool is_bool = std::holds_alternative<bool>(answer.value);
  if (is_bool != (q->answer_type == AnswerType::Binary)) {
    throw InvalidInputError("type mismatch: question " + q->question_id + " expects a " +
                            (q->answer_type == AnswerType::Binary ? "binary" : "numeric (" + q->unit + ")") +
                            " answer");
  }
  if (answer.verified_at > now) throw InvalidInputError("verified_at is in the future");
  if (trim(answer.source.reference).empty()) throw InvalidInputError("source.reference must be nonempty");
}

inline std::string next_answer_id(const ProfileBook& book) {
  return "ans-" + std::to_string(book.answers.size() + 1);
}

/// Appends to the in-memory history and returns the stored answer id.
inline std::string record_answer(ProfileBook& book, ProfileAnswer answer, Timestamp now = now_utc()) {
  check_answer(book, answer, now);
  answer.answer_id = next_answer_id(book);
  book.answers.push_back(std::move(answer));
  return book.answers.back().answer_id;
}

struct ProfileEntry {
  const ProfileQuestion* question = nullptr;
  std::optional<ProfileAnswer> answer;  // nullopt = Unanswered
};

namespace detail {

inline std::map<std::string, const ProfileAnswer*> latest_answers(const ProfileBook& book, std::string_view subject) {
  std::map<std::string, const ProfileAnswer*> latest;
  for (const auto& a : book.answers) {
    if (a.subject_model_id != subject) continue;
    auto& slot = latest[a.question_id];
    if (!slot || a.verified_at >= slot->verified_at) slot = &a;
  }
  return latest;
}

}  // namespace detail

inline std::vector<ProfileEntry> get_profile(const ProfileBook& book, std::string_view subject) {
  if (!book.subjects.count(std::string(subject))) throw NotFoundError("unknown subject " + std::string(subject));
  const auto latest = detail::latest_answers(book, subject);
  std::vector<ProfileEntry> out;
  for (const auto* q : book.catalog->display_order()) {
    ProfileEntry e{q, std::nullopt};
    if (auto it = latest.find(q->question_id); it != latest.end()) e.answer = *it->second;
    out.push_back(std::move(e));
  }
  return out;
}

/// Every recorded answer for (subject, question) in verified_at order.
inline std::vector<ProfileAnswer> answer_history(const ProfileBook& book, std::string_view subject,
                                                 std::string_view question_id) {
  std::vector<ProfileAnswer> out;
  for (const auto& a : book.answers)
    if (a.subject_model_id == subject && a.question_id == question_id) out.push_back(a);
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.verified_at < b.verified_at; });
  return out;
}

inline constexpr size_t kMaxCompareSubjects = 3;

struct ComparisonRow {
  const ProfileQuestion* question = nullptr;
  std::vector<std::optional<ProfileAnswer>> answers;  // one per subject
  bool differs = false;
};

struct ComparisonTable {
  std::vector<std::string> subjects;
  std::vector<ComparisonRow> rows;
};

inline void check_compare_count(size_t n) {
  if (n > kMaxCompareSubjects) {
    throw InvalidInputError("comparison supports at most 3 subjects, got " + std::to_string(n));
  }
  if (n < 2) throw InvalidInputError("comparison needs at least 2 subjects, got " + std::to_string(n));
}

/// `differs` is true unless every subject answered with the same value, or
/// nobody answered at all.
inline ComparisonTable compare_profiles(const ProfileBook& book, const std::vector<std::string>& subject_ids) {
  check_compare_count(subject_ids.size());
  std::vector<std::vector<ProfileEntry>> profiles;
  for (const auto& id : subject_ids) profiles.push_back(get_profile(book, id));

  ComparisonTable table;
  table.subjects = subject_ids;
  for (size_t qi = 0; qi < profiles.front().size(); ++qi) {
    ComparisonRow row;
    row.question = profiles.front()[qi].question;
    size_t answered = 0;
    for (const auto& p : profiles) {
      row.answers.push_back(p[qi].answer);
      answered += p[qi].answer.has_value();
    }
    if (answered > 0 && answered < row.answers.size()) {
      row.differs = true;
    } else if (answered == row.answers.size()) {
      row.differs = std::any_of(row.answers.begin() + 1, row.answers.end(),
                                [&](const auto& a) { return a->value != row.answers.front()->value; });
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

// ---------------------------------------------------------------------------
// Rendering

inline std::string render_value(const ProfileQuestion& q, const AnswerValue& v) {
  if (std::holds_alternative<bool>(v)) return std::get<bool>(v) ? "Yes" : "No";
  return format_number(std::get<double>(v)) + " " + q.unit;
}

inline json to_json(const ProfileQuestion& q) {
  return {{"question_id", q.question_id},
          {"level", to_string(q.level)},
          {"category", q.category},
          {"answer_type", q.answer_type == AnswerType::Binary ? "binary" : "numeric"},
          {"unit", q.unit},
          {"text", q.text},
          {"criticality_rank", q.criticality_rank},
          {"provenance", q.provenance}};
}

inline json profile_to_json(std::string_view subject, const ProfileCatalog& catalog,
                            const std::vector<ProfileEntry>& entries) {
  json rows = json::array();
  for (const auto& e : entries) {
    rows.push_back({{"question", to_json(*e.question)},
                    {"status", e.answer ? "answered" : "unanswered"},
                    {"answer", e.answer ? to_json(*e.answer) : json(nullptr)}});
  }
  return {{"subject_model_id", subject}, {"catalog_version", catalog.version}, {"entries", rows}};
}

inline json comparison_to_json(const ComparisonTable& table, const ProfileCatalog& catalog) {
  json rows = json::array();
  for (const auto& row : table.rows) {
    json answers = json::array();
    for (const auto& a : row.answers) answers.push_back(a ? to_json(*a) : json(nullptr));
    rows.push_back({{"question", to_json(*row.question)}, {"answers", answers}, {"differs", row.differs}});
  }
  return {{"subjects", table.subjects}, {"catalog_version", catalog.version}, {"rows", rows}};
}

namespace detail {

inline std::string md_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '|') out += "\\|";
    else if (c == '\n') out += ' ';
    else out += c;
  }
  return out;
}

inline std::string answer_cell(const ProfileQuestion& q, const std::optional<ProfileAnswer>& a) {
  if (!a) return "Unanswered";
  return md_escape(render_value(q, a->value)) + " (" + std::string(to_string(a->source.kind)) + ": " +
         md_escape(a->source.reference) + "; verified " + format_iso8601(a->verified_at) + ")";
}

inline void append_level_sections(std::string& out, const ProfileCatalog& catalog,
                                  const std::vector<std::string>& subjects,
                                  const std::function<std::optional<ProfileAnswer>(size_t, const ProfileQuestion&)>& cell,
                                  const std::function<bool(const ProfileQuestion&)>& differs) {
  const bool comparison = subjects.size() > 1;
  for (ModelKind level : {ModelKind::BaseModel, ModelKind::Tool}) {
    out += level == ModelKind::BaseModel ? "\n## Base model characteristics\n\n" : "\n## Tool characteristics\n\n";
    out += "| Rank | ID | Category | Question |";
    for (const auto& s : subjects) out += " " + md_escape(s) + " |";
    if (comparison) out += " Differs |";
    out += "\n|---|---|---|---|";
    for (size_t i = 0; i < subjects.size(); ++i) out += "---|";
    if (comparison) out += "---|";
    out += "\n";
    for (const auto* q : catalog.display_order()) {
      if (q->level != level) continue;
      out += "| " + std::to_string(q->criticality_rank) + " | " + md_escape(q->question_id) + " | " +
             md_escape(q->category) + " | " + md_escape(q->text) + " |";
      for (size_t i = 0; i < subjects.size(); ++i) out += " " + answer_cell(*q, cell(i, *q)) + " |";
      if (comparison) out += differs(*q) ? " yes |" : " no |";
      out += "\n";
    }
  }
}

}  // namespace detail

/// Markdown report for one subject. No generation time is embedded, so the
/// bytes depend only on the catalog and the answers.
inline std::string export_report(const ProfileBook& book, std::string_view subject) {
  const auto entries = get_profile(book, subject);
  std::map<std::string, std::optional<ProfileAnswer>> by_id;
  size_t unanswered = 0;
  for (const auto& e : entries) {
    by_id[e.question->question_id] = e.answer;
    unanswered += !e.answer;
  }
  std::string out = "# Technical profile report\n\n";
  out += "- Subject: " + std::string(subject) + "\n";
  out += "- Catalog version: " + book.catalog->version + "\n";
  out += "- Entries: " + std::to_string(entries.size()) + "\n";
  out += "- Unanswered: " + std::to_string(unanswered) + "\n";
  detail::append_level_sections(
      out, *book.catalog, {std::string(subject)},
      [&](size_t, const ProfileQuestion& q) { return by_id.at(q.question_id); },
      [](const ProfileQuestion&) { return false; });
  return out;
}

inline std::string export_report(const ComparisonTable& table, const ProfileCatalog& catalog) {
  std::map<std::string, const ComparisonRow*> by_id;
  size_t differing = 0;
  for (const auto& row : table.rows) {
    by_id[row.question->question_id] = &row;
    differing += row.differs;
  }
  std::string out = "# Technical profile comparison report\n\n";
  std::string subjects;
  for (const auto& s : table.subjects) subjects += (subjects.empty() ? "" : ", ") + s;
  out += "- Subjects: " + subjects + "\n";
  out += "- Catalog version: " + catalog.version + "\n";
  out += "- Entries: " + std::to_string(table.rows.size()) + "\n";
  out += "- Differing entries: " + std::to_string(differing) + "\n";
  detail::append_level_sections(
      out, catalog, table.subjects,
      [&](size_t i, const ProfileQuestion& q) { return by_id.at(q.question_id)->answers[i]; },
      [&](const ProfileQuestion& q) { return by_id.at(q.question_id)->differs; });
  return out;
}

}  // namespace mhbench
