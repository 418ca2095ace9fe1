#include <doctest.h>

#include <map>

#include "dmsw/analyze.hpp"
#include "dmsw/error.hpp"
#include "dmsw/synth.hpp"
#include "support.hpp"

using namespace dmsw;

namespace {

int dropouts(const Cohort& c) {
  int n = 0;
  for (const auto& s : c.students) n += s.label.value_or(0);
  return n;
}

}  // namespace

TEST_CASE("default cohort") {
  SynthConfig cfg;
  cfg.seed = 42;
  const auto synth = generate_cohort(cfg);
  CHECK(synth.cohort.students.size() == 1000);
  CHECK(dropouts(synth.cohort) == 122);
  CHECK_NOTHROW(validate(synth.cohort));
  for (const auto& s : synth.cohort.students) CHECK(s.label.has_value());

  std::map<Pattern, int> by_pattern, dropped;
  for (std::size_t i = 0; i < synth.patterns.size(); ++i) {
    ++by_pattern[synth.patterns[i].pattern];
    dropped[synth.patterns[i].pattern] += *synth.cohort.students[i].label;
  }
  CHECK(by_pattern[Pattern::AbsenteeSpikeDecline] == 100);
  CHECK(by_pattern[Pattern::StableControl] == 590);
  CHECK(dropped[Pattern::StableControl] == 0);
  // Most dropouts come from the spike and shock patterns.
  CHECK(dropped[Pattern::AbsenteeSpikeDecline] + dropped[Pattern::PunishmentShockDecline] > 61);
  CHECK(dropped[Pattern::RewardMitigated] < by_pattern[Pattern::RewardMitigated] / 2);

  const auto stats = cohort_stats(synth.cohort, builtin_rules());
  bool found = false;
  for (const auto& row : stats.rows) {
    if (row.label.rfind("R1", 0) == 0) {
      found = true;
      CHECK(row.rate > stats.base_rate);
    }
  }
  CHECK(found);
}

TEST_CASE("zero dropout rate") {
  SynthConfig cfg;
  cfg.n_students = 300;
  cfg.dropout_rate = 0.0;
  cfg.seed = 3;
  const auto synth = generate_cohort(cfg);
  CHECK(dropouts(synth.cohort) == 0);
}

TEST_CASE("generation is deterministic") {
  SynthConfig cfg;
  cfg.n_students = 150;
  cfg.seed = 9;
  const auto a = testing::temp_dir("synth_a"), b = testing::temp_dir("synth_b");
  const auto ga = generate_cohort(cfg), gb = generate_cohort(cfg);
  write_cohort(ga.cohort, a.string());
  write_cohort(gb.cohort, b.string());
  write_patterns(ga.patterns, (a / kPatternsFile).string());
  write_patterns(gb.patterns, (b / kPatternsFile).string());
  for (const char* f : {"students.csv", "scores.csv", "events.csv", "patterns.csv"}) {
    CHECK(testing::read_file(a / f) == testing::read_file(b / f));
  }
  cfg.seed = 10;
  write_cohort(generate_cohort(cfg).cohort, b.string());
  CHECK(testing::read_file(a / "scores.csv") != testing::read_file(b / "scores.csv"));
}

TEST_CASE("generated files load back") {
  SynthConfig cfg;
  cfg.n_students = 80;
  cfg.seed = 11;
  const auto synth = generate_cohort(cfg);
  const auto dir = testing::temp_dir("synth_load");
  write_cohort(synth.cohort, dir.string());
  CHECK(load_cohort_dir(dir.string(), 6) == synth.cohort);
}

TEST_CASE("infeasible mixes are rejected") {
  SynthConfig cfg;
  cfg.n_students = 200;
  cfg.mix = {0.0, 0.0, 0.0, 0.8, 0.2};
  CHECK_THROWS_AS(generate_cohort(cfg), UsageError);
  cfg.mix = {0.1, 0.05, 0.06, 0.59, 0.10};
  CHECK_THROWS_AS(generate_cohort(cfg), UsageError);
  cfg.mix = {0.10, 0.05, 0.06, 0.59, 0.20};
  cfg.dropout_rate = 1.5;
  CHECK_THROWS_AS(generate_cohort(cfg), UsageError);
}
