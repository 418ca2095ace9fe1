#include "dmsw/records.hpp"

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <unordered_map>

#include "dmsw/csv.hpp"
#include "dmsw/error.hpp"

namespace dmsw {

namespace {

const std::vector<std::string> kStudentsHeader = {"student_id", "label"};
const std::vector<std::string> kScoresHeader = {"student_id", "subject",  "period",    "raw_score",
                                                "max_score",  "rank",     "class_size"};
const std::vector<std::string> kEventsHeader = {"student_id", "period", "category",
                                                "subtype",    "count",  "description"};

std::string at(const std::string& path, std::size_t line) { return path + ":" + std::to_string(line); }

void check_period(int period, int periods, const std::string& where) {
  if (period < 1 || period > periods) {
    throw DataError(where + ": period out of range (" + std::to_string(period) + " not in 1.." +
                    std::to_string(periods) + ")");
  }
}

}  // namespace

std::string_view to_string(Category category) {
  switch (category) {
    case Category::Activity: return "activity";
    case Category::Punishment: return "punishment";
    case Category::Reward: return "reward";
    case Category::Absence: return "absence";
  }
  return "activity";
}

Category parse_category(std::string_view text) {
  for (auto c : {Category::Activity, Category::Punishment, Category::Reward, Category::Absence}) {
    if (to_string(c) == text) return c;
  }
  throw DataError("unknown category `" + std::string(text) + "`");
}

std::vector<std::string> default_subjects() { return {"Chinese", "Mathematics", "English"}; }

const ExamEntry* StudentRecord::exam(std::string_view subject, int period) const {
  for (const auto& e : exams) {
    if (e.period == period && e.subject == subject) return &e;
  }
  return nullptr;
}

std::vector<BehaviorEvent> StudentRecord::events_in(int period) const {
  std::vector<BehaviorEvent> out;
  for (const auto& e : events) {
    if (e.period == period) out.push_back(e);
  }
  return out;
}

int StudentRecord::count(Category category, int period) const {
  int total = 0;
  for (const auto& e : events) {
    if (e.period == period && e.category == category) total += e.count;
  }
  return total;
}

const StudentRecord* Cohort::find(std::string_view student_id) const {
  for (const auto& s : students) {
    if (s.student_id == student_id) return &s;
  }
  return nullptr;
}

std::size_t Cohort::event_count() const {
  std::size_t n = 0;
  for (const auto& s : students) n += s.events.size();
  return n;
}

void validate(const Cohort& cohort) {
  if (cohort.periods < 1) throw DataError("periods must be positive");
  std::set<std::string> ids;
  std::set<std::string> subjects(cohort.subjects.begin(), cohort.subjects.end());
  for (const auto& s : cohort.students) {
    if (!ids.insert(s.student_id).second) throw DataError("duplicate student_id `" + s.student_id + "`");
    if (s.label && *s.label != 0 && *s.label != 1) throw DataError("label must be 0 or 1");
    std::set<std::pair<std::string, int>> cells;
    for (const auto& e : s.exams) {
      const std::string where = "student " + s.student_id;
      if (e.student_id != s.student_id) throw DataError(where + ": exam belongs to another student");
      if (!subjects.count(e.subject)) throw DataError(where + ": unknown subject `" + e.subject + "`");
      check_period(e.period, cohort.periods, where);
      if (!cells.insert({e.subject, e.period}).second) {
        throw DataError(where + ": duplicate (student, subject, period) " + e.subject + "/" +
                        std::to_string(e.period));
      }
      if (!(e.max_score > 0.0)) throw DataError(where + ": max_score must be positive");
      if (e.raw_score < 0.0 || e.raw_score > e.max_score) throw DataError(where + ": raw_score outside [0, max_score]");
      if (e.rank < 1) throw DataError(where + ": rank must be >= 1");
      if (e.rank > e.class_size) throw DataError(where + ": rank > class_size");
    }
    for (const auto& ev : s.events) {
      const std::string where = "student " + s.student_id;
      if (ev.student_id != s.student_id) throw DataError(where + ": event belongs to another student");
      check_period(ev.period, cohort.periods, where);
      if (ev.count < 0) throw DataError(where + ": negative event count");
    }
  }
}

Cohort load_cohort(const std::string& students_path, const std::string& scores_path,
                   const std::string& events_path, int periods, std::vector<std::string> subjects) {
  if (periods < 1) throw UsageError("periods must be positive");
  for (const auto& p : {students_path, scores_path, events_path}) {
    if (!std::filesystem::exists(p)) throw DataError("missing file: " + p);
  }
  Cohort cohort;
  cohort.periods = periods;
  cohort.subjects = std::move(subjects);
  std::unordered_map<std::string, std::size_t> index;

  for (const auto& row : csv::read_table(students_path, kStudentsHeader)) {
    const std::string where = at(students_path, row.line);
    StudentRecord rec;
    rec.student_id = row.fields[0];
    if (rec.student_id.empty()) throw DataError(where + ": malformed row: empty student_id");
    const auto& label = row.fields[1];
    if (label == "0") rec.label = 0;
    else if (label == "1") rec.label = 1;
    else if (!label.empty()) throw DataError(where + ": malformed row: label must be 0, 1 or empty");
    if (!index.emplace(rec.student_id, cohort.students.size()).second) {
      throw DataError(where + ": duplicate student_id `" + rec.student_id + "`");
    }
    cohort.students.push_back(std::move(rec));
  }

  auto student_at = [&](const std::string& id, const std::string& where) -> StudentRecord& {
    auto it = index.find(id);
    if (it == index.end()) throw DataError(where + ": unknown student `" + id + "`");
    return cohort.students[it->second];
  };

  const std::set<std::string> known_subjects(cohort.subjects.begin(), cohort.subjects.end());
  for (const auto& row : csv::read_table(scores_path, kScoresHeader)) {
    const std::string where = at(scores_path, row.line);
    const auto& f = row.fields;
    ExamEntry e;
    e.student_id = f[0];
    e.subject = f[1];
    if (!known_subjects.count(e.subject)) throw DataError(where + ": unknown subject `" + e.subject + "`");
    e.period = static_cast<int>(csv::parse_int(f[2], where));
    check_period(e.period, periods, where);
    e.raw_score = csv::parse_double(f[3], where);
    e.max_score = csv::parse_double(f[4], where);
    e.rank = static_cast<int>(csv::parse_int(f[5], where));
    e.class_size = static_cast<int>(csv::parse_int(f[6], where));
    if (!(e.max_score > 0.0)) throw DataError(where + ": max_score must be positive");
    if (e.raw_score < 0.0 || e.raw_score > e.max_score) throw DataError(where + ": raw_score outside [0, max_score]");
    if (e.rank < 1) throw DataError(where + ": rank must be >= 1");
    if (e.rank > e.class_size) throw DataError(where + ": rank > class_size");
    auto& rec = student_at(e.student_id, where);
    if (rec.exam(e.subject, e.period)) {
      throw DataError(where + ": duplicate (student, subject, period) " + e.student_id + "/" + e.subject + "/" +
                      std::to_string(e.period));
    }
    rec.exams.push_back(std::move(e));
  }

  for (const auto& row : csv::read_table(events_path, kEventsHeader)) {
    const std::string where = at(events_path, row.line);
    const auto& f = row.fields;
    BehaviorEvent ev;
    ev.student_id = f[0];
    ev.period = static_cast<int>(csv::parse_int(f[1], where));
    check_period(ev.period, periods, where);
    try {
      ev.category = parse_category(f[2]);
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
    ev.subtype = f[3];
    ev.count = static_cast<int>(csv::parse_int(f[4], where));
    if (ev.count < 0) throw DataError(where + ": negative event count");
    ev.description = f[5];
    student_at(ev.student_id, where).events.push_back(std::move(ev));
  }
  return cohort;
}

Cohort load_cohort_dir(const std::string& dir, int periods, std::vector<std::string> subjects) {
  const std::filesystem::path base(dir);
  return load_cohort((base / kStudentsFile).string(), (base / kScoresFile).string(),
                     (base / kEventsFile).string(), periods, std::move(subjects));
}

void write_cohort(const Cohort& cohort, const std::string& dir) {
  const std::filesystem::path base(dir);
  std::filesystem::create_directories(base);
  auto open = [&](std::string_view name) {
    std::ofstream out(base / name, std::ios::binary);
    if (!out) throw DataError("cannot write " + (base / name).string());
    return out;
  };
  {
    auto out = open(kStudentsFile);
    csv::write_row(out, kStudentsHeader);
    for (const auto& s : cohort.students) {
      csv::write_row(out, {s.student_id, s.label ? std::to_string(*s.label) : std::string()});
    }
  }
  {
    auto out = open(kScoresFile);
    csv::write_row(out, kScoresHeader);
    for (const auto& s : cohort.students) {
      for (const auto& e : s.exams) {
        csv::write_row(out, {e.student_id, e.subject, std::to_string(e.period), csv::format_double(e.raw_score),
                             csv::format_double(e.max_score), std::to_string(e.rank), std::to_string(e.class_size)});
      }
    }
  }
  {
    auto out = open(kEventsFile);
    csv::write_row(out, kEventsHeader);
    for (const auto& s : cohort.students) {
      for (const auto& ev : s.events) {
        csv::write_row(out, {ev.student_id, std::to_string(ev.period), std::string(to_string(ev.category)),
                             ev.subtype, std::to_string(ev.count), ev.description});
      }
    }
  }
}

PeriodSummary summarize_period(const std::string& student_id, int period, std::span<const BehaviorEvent> events) {
  for (const auto& ev : events) {
    if (ev.student_id != student_id) throw DataError("summarize_period: mixed student_ids");
    if (ev.period != period) throw DataError("summarize_period: mixed periods");
  }

  struct Clause {
    int total = 0;
    std::set<std::string> reasons;
  };
  std::map<Category, Clause> clauses;
  for (const auto& ev : events) {
    if (ev.count == 0) continue;
    auto& clause = clauses[ev.category];
    clause.total += ev.count;
    std::string item = ev.subtype;
    if (!ev.description.empty()) item = item.empty() ? ev.description : item + " (" + ev.description + ")";
    if (!item.empty()) clause.reasons.insert(item);
  }

  auto join = [](const std::set<std::string>& items) {
    std::string out;
    for (const auto& s : items) out += (out.empty() ? "" : ", ") + s;
    return out;
  };

  std::vector<std::string> parts;
  struct Template {
    Category category;
    const char* head;
    const char* tail;
    const char* reasons;
  };
  static constexpr std::array<Template, 4> kOrder = {{
      {Category::Absence, "the student was absent ", " times", ", the reasons including "},
      {Category::Reward, "received ", " rewards", " for reasons such as "},
      {Category::Punishment, "faced ", " punishments", " for reasons such as "},
      {Category::Activity, "participated in ", " activities", ", including "},
  }};
  for (const auto& t : kOrder) {
    auto it = clauses.find(t.category);
    if (it == clauses.end() || it->second.total == 0) continue;
    std::string part = t.head + std::to_string(it->second.total) + t.tail;
    if (!it->second.reasons.empty()) part += t.reasons + join(it->second.reasons);
    parts.push_back(std::move(part));
  }

  PeriodSummary summary{student_id, period, {}};
  if (parts.empty()) {
    summary.text = std::string(kEmptyPeriodText);
    return summary;
  }
  summary.text = "During this period, ";
  for (std::size_t i = 0; i < parts.size(); ++i) summary.text += (i ? "; " : "") + parts[i];
  summary.text += ".";
  return summary;
}

}  // namespace dmsw
