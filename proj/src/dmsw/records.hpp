#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dmsw {

enum class Category { Activity, Punishment, Reward, Absence };

std::string_view to_string(Category category);
// Throws DataError("unknown category ...") on anything but the four labels.
Category parse_category(std::string_view text);

struct BehaviorEvent {
  std::string student_id;
  int period = 1;
  Category category = Category::Activity;
  std::string subtype;
  int count = 0;
  std::string description;

  bool operator==(const BehaviorEvent&) const = default;
};

struct ExamEntry {
  std::string student_id;
  std::string subject;
  int period = 1;
  double raw_score = 0.0;
  double max_score = 100.0;
  int rank = 1;
  int class_size = 1;

  bool operator==(const ExamEntry&) const = default;
};

struct StudentRecord {
  std::string student_id;
  std::vector<ExamEntry> exams;
  std::vector<BehaviorEvent> events;
  std::optional<int> label;  // 1 = dropped out within the following year

  // nullptr when the exam cell is absent.
  const ExamEntry* exam(std::string_view subject, int period) const;
  std::vector<BehaviorEvent> events_in(int period) const;
  // Sum of event counts of one category in one period.
  int count(Category category, int period) const;

  bool operator==(const StudentRecord&) const = default;
};

struct Cohort {
  std::vector<StudentRecord> students;
  int periods = 6;
  std::vector<std::string> subjects;

  const StudentRecord* find(std::string_view student_id) const;
  std::size_t event_count() const;

  bool operator==(const Cohort&) const = default;
};

struct PeriodSummary {
  std::string student_id;
  int period = 1;
  std::string text;
};

inline constexpr int kDefaultPeriods = 6;
std::vector<std::string> default_subjects();

inline constexpr std::string_view kStudentsFile = "students.csv";
inline constexpr std::string_view kScoresFile = "scores.csv";
inline constexpr std::string_view kEventsFile = "events.csv";

// Loads and validates the three cohort CSVs. Errors carry the file and line.
Cohort load_cohort(const std::string& students_path, const std::string& scores_path,
                   const std::string& events_path, int periods,
                   std::vector<std::string> subjects = default_subjects());

Cohort load_cohort_dir(const std::string& dir, int periods,
                       std::vector<std::string> subjects = default_subjects());

void write_cohort(const Cohort& cohort, const std::string& dir);

// Throws DataError on the first violated invariant.
void validate(const Cohort& cohort);

inline constexpr std::string_view kEmptyPeriodText = "During this period, no behaviors were recorded.";

// Renders one period paragraph: absences, rewards, punishments, activities,
// each clause listing its distinct reasons in lexicographic order. The result
// depends only on the event multiset.
PeriodSummary summarize_period(const std::string& student_id, int period,
                               std::span<const BehaviorEvent> events);

}  // namespace dmsw
