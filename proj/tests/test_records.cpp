#include <doctest.h>

#include <algorithm>
#include <random>

#include "dmsw/csv.hpp"
#include "dmsw/error.hpp"
#include "dmsw/records.hpp"
#include "support.hpp"

using namespace dmsw;

namespace {

const std::string kStudentsHeader = "student_id,label\n";
const std::string kScoresHeader = "student_id,subject,period,raw_score,max_score,rank,class_size\n";
const std::string kEventsHeader = "student_id,period,category,subtype,count,description\n";

std::filesystem::path cohort_dir(const std::string& students, const std::string& scores, const std::string& events) {
  auto dir = testing::temp_dir("records");
  testing::write_file(dir / "students.csv", kStudentsHeader + students);
  testing::write_file(dir / "scores.csv", kScoresHeader + scores);
  testing::write_file(dir / "events.csv", kEventsHeader + events);
  return dir;
}

std::string load_error(const std::filesystem::path& dir) {
  try {
    load_cohort_dir(dir.string(), 6);
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("csv parser handles quotes, embedded commas and newlines") {
  const auto rows = csv::parse("a,b\n\"x, y\",\"he said \"\"hi\"\"\"\n\"multi\nline\",z\n", "t");
  REQUIRE(rows.size() == 3);
  CHECK(rows[1].fields == std::vector<std::string>{"x, y", "he said \"hi\""});
  CHECK(rows[2].fields == std::vector<std::string>{"multi\nline", "z"});
  CHECK(rows[2].line == 3);
  CHECK(csv::escape("plain") == "plain");
  CHECK(csv::escape("a,b") == "\"a,b\"");
  CHECK(csv::escape("q\"") == "\"q\"\"\"");
  CHECK_THROWS_AS(csv::parse("\"unterminated\n", "t"), DataError);
}

TEST_CASE("format_double round-trips") {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 200; ++i) {
    const double v = u(gen);
    CHECK(csv::parse_double(csv::format_double(v), "t") == v);
  }
}

TEST_CASE("empty events file with one valid student") {
  const auto dir = cohort_dir("S1,0\n", "S1,Chinese,1,50,100,1,1\n", "");
  const Cohort c = load_cohort_dir(dir.string(), 6);
  CHECK(c.students.size() == 1);
  CHECK(c.event_count() == 0);
  CHECK(c.students[0].exams.size() == 1);
}

TEST_CASE("load errors name the problem") {
  CHECK(load_error(cohort_dir("S1,0\n", "", "S1,7,absence,sick leave,1,\n")).find("period out of range") !=
        std::string::npos);
  CHECK(load_error(cohort_dir("S1,0\n", "", "S1,1,holiday,x,1,\n")).find("unknown category") != std::string::npos);
  CHECK(load_error(cohort_dir("S1,0\n", "S1,Art,1,50,100,1,1\n", "")).find("unknown subject") != std::string::npos);
  CHECK(load_error(cohort_dir("S1,0\n", "S1,Chinese,1,50,100,1,1\nS1,Chinese,1,60,100,1,1\n", ""))
            .find("duplicate") != std::string::npos);
  CHECK(load_error(cohort_dir("S1,0\n", "S1,Chinese,1,50,100,5,3\n", "")).find("rank") != std::string::npos);
  CHECK(load_error(cohort_dir("S1,0\n", "S1,Chinese,1,50\n", "")).find("scores.csv:2") != std::string::npos);
  CHECK(load_error(cohort_dir("S1,2\n", "", "")).find("label") != std::string::npos);
  CHECK(load_error(cohort_dir("S1,0\n", "", "S9,1,absence,sick leave,1,\n")).find("S9") != std::string::npos);

  auto dir = cohort_dir("S1,0\n", "", "");
  std::filesystem::remove(dir / "scores.csv");
  CHECK(load_error(dir).find("scores.csv") != std::string::npos);
}

TEST_CASE("three-student fixture matches hand counts") {
  const Cohort c = load_cohort_dir(testing::fixture("three"), 6);
  REQUIRE(c.students.size() == 3);
  const auto* a1 = c.find("A1");
  const auto* a2 = c.find("A2");
  const auto* a3 = c.find("A3");
  REQUIRE((a1 && a2 && a3));
  // Rows per student in events.csv: A1 3, A2 5, A3 0.
  CHECK(a1->events.size() == 3);
  CHECK(a2->events.size() == 5);
  CHECK(a3->events.empty());
  CHECK(a2->count(Category::Absence, 5) == 7);
  CHECK(a2->count(Category::Punishment, 6) == 2);
  CHECK(a1->label == 0);
  CHECK(a2->label == 1);
  CHECK_FALSE(a3->label.has_value());
  CHECK(a2->exam("Mathematics", 2) == nullptr);
  CHECK(a3->exams.size() == 12);
  CHECK(a2->events_in(6).back().description == "late to class\ntwice");
  CHECK(c.event_count() == 8);
}

TEST_CASE("write then load reproduces the cohort") {
  const Cohort c = load_cohort_dir(testing::fixture("three"), 6);
  const auto dir = testing::temp_dir("roundtrip");
  write_cohort(c, dir.string());
  const Cohort back = load_cohort_dir(dir.string(), 6);
  CHECK(back == c);
}

TEST_CASE("every event belongs to exactly one student") {
  const Cohort c = load_cohort_dir(testing::fixture("three"), 6);
  for (const auto& s : c.students) {
    for (const auto& e : s.events) CHECK(e.student_id == s.student_id);
  }
}

TEST_CASE("summarize_period template") {
  CHECK(summarize_period("S", 1, {}).text == kEmptyPeriodText);

  std::vector<BehaviorEvent> events = {
      {"S", 2, Category::Absence, "sick leave", 2, ""},
      {"S", 2, Category::Reward, "merit", 1, ""},
  };
  const auto text = summarize_period("S", 2, events).text;
  CHECK(text.find("absent 2 times") != std::string::npos);
  CHECK(text.find("received 1 rewards") != std::string::npos);
  CHECK(text.find("absent") < text.find("received"));
  CHECK(text.rfind("During this period, ", 0) == 0);

  std::vector<BehaviorEvent> mixed = {{"S", 2, Category::Absence, "sick leave", 1, ""},
                                      {"T", 2, Category::Absence, "sick leave", 1, ""}};
  CHECK_THROWS_AS(summarize_period("S", 2, mixed), DataError);
}

TEST_CASE("summarize_period clause order is absences, rewards, punishments, activities") {
  std::vector<BehaviorEvent> events = {
      {"S", 1, Category::Activity, "music club", 1, ""},
      {"S", 1, Category::Punishment, "minor offense", 1, "late"},
      {"S", 1, Category::Reward, "merit", 2, ""},
      {"S", 1, Category::Absence, "sick leave", 3, ""},
  };
  const auto text = summarize_period("S", 1, events).text;
  const auto a = text.find("absent"), r = text.find("rewards"), p = text.find("punishments"), act = text.find("activities");
  REQUIRE(act != std::string::npos);
  CHECK((a < r && r < p && p < act));
}

TEST_CASE("summarize_period is permutation invariant") {
  std::vector<BehaviorEvent> events = {
      {"S", 3, Category::Absence, "sick leave", 2, ""},      {"S", 3, Category::Absence, "parental leave", 1, "trip"},
      {"S", 3, Category::Reward, "merit", 1, "science"},     {"S", 3, Category::Reward, "good behavior", 2, ""},
      {"S", 3, Category::Punishment, "minor offense", 1, ""}, {"S", 3, Category::Activity, "music club", 1, ""},
      {"S", 3, Category::Activity, "sports day", 1, ""},
  };
  const auto reference = summarize_period("S", 3, events).text;
  std::mt19937_64 gen(11);
  for (int i = 0; i < 50; ++i) {
    std::shuffle(events.begin(), events.end(), gen);
    CHECK(summarize_period("S", 3, events).text == reference);
  }
}
