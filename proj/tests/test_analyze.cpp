#include <doctest.h>

#include <map>

#include "dmsw/analyze.hpp"
#include "dmsw/error.hpp"
#include "dmsw/rng.hpp"
#include "dmsw/synth.hpp"
#include "support.hpp"

using namespace dmsw;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

const ConditionRow* row(const CohortStatsReport& r, const std::string& prefix, const std::string& suffix = "") {
  for (const auto& c : r.rows) {
    if (c.label.rfind(prefix, 0) == 0 && (suffix.empty() || c.label.size() >= suffix.size()) &&
        c.label.compare(c.label.size() - suffix.size(), suffix.size(), suffix) == 0) {
      return &c;
    }
  }
  return nullptr;
}

}  // namespace

TEST_CASE("classification_metrics") {
  const std::vector<int> truth = {1, 1, 1, 1, 1, 0, 0, 0, 0, 0};
  const std::vector<int> pred = {1, 1, 1, 0, 0, 1, 0, 0, 0, 0};
  const auto m = classification_metrics(pred, truth);
  CHECK(m.tp == 3);
  CHECK(m.fp == 1);
  CHECK(m.fn == 2);
  CHECK(m.tn == 4);
  CHECK(m.precision == doctest::Approx(0.75));
  CHECK(m.recall == doctest::Approx(0.6));
  CHECK(m.f1 == doctest::Approx(2.0 / 3.0));
  CHECK(m.accuracy == doctest::Approx(0.7));

  const auto perfect = classification_metrics(truth, truth);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.f1 == 1.0);
  const auto none = classification_metrics(std::vector<int>(10, 0), truth);
  CHECK(none.precision == 0.0);
  CHECK(none.recall == 0.0);
  CHECK(none.f1 == 0.0);
  CHECK_THROWS_AS(classification_metrics(std::vector<int>{}, std::vector<int>{}), DataError);
}

TEST_CASE("ols_fit exact line") {
  Eigen::MatrixXd x(3, 1);
  x << 1, 2, 3;
  Eigen::VectorXd y(3);
  y << 2, 4, 6;
  // N = k + 2 is the smallest size with residual degrees of freedom.
  const auto r = ols_fit(x, y);
  CHECK(r.coef[1] == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(std::abs(r.coef[0]) < 1e-9);
  CHECK(r.r_squared == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(r.names.front() == "const");
}

TEST_CASE("ols_fit matches a closed form on a 3-point problem") {
  Eigen::MatrixXd x(3, 1);
  x << 0, 1, 3;
  Eigen::VectorXd y(3);
  y << 1, 2, 2;
  const auto r = ols_fit(x, y);
  // xbar = 4/3, ybar = 5/3; Sxx = 14/3, Sxy = 4/3.
  const double slope = (4.0 / 3.0) / (14.0 / 3.0);
  const double icept = 5.0 / 3.0 - slope * 4.0 / 3.0;
  CHECK(std::abs(r.coef[1] - slope) < 1e-9);
  CHECK(std::abs(r.coef[0] - icept) < 1e-9);
  double rss = 0, tss = 0;
  for (int i = 0; i < 3; ++i) {
    rss += std::pow(y[i] - icept - slope * x(i, 0), 2);
    tss += std::pow(y[i] - 5.0 / 3.0, 2);
  }
  const double s2 = rss / 1.0;
  CHECK(std::abs(r.std_err[1] - std::sqrt(s2 / (14.0 / 3.0))) < 1e-9);
  CHECK(std::abs(r.r_squared - (1 - rss / tss)) < 1e-9);
  CHECK(std::abs(r.t_stat[1] - slope / std::sqrt(s2 / (14.0 / 3.0))) < 1e-9);
  // One degree of freedom: t is Cauchy, two-sided p = 1 - 2 atan(|t|) / pi.
  CHECK(std::abs(r.p_value[1] - (1 - 2 * std::atan(std::abs(r.t_stat[1])) / M_PI)) < 1e-9);
}

TEST_CASE("ols_fit noise and exact linear data") {
  Rng rng(12);
  Eigen::MatrixXd x(200, 1);
  Eigen::VectorXd y(200);
  for (int i = 0; i < 200; ++i) {
    x(i, 0) = rng.normal();
    y[i] = rng.normal();
  }
  const auto noise = ols_fit(x, y);
  CHECK(noise.r_squared < 0.2);
  CHECK(noise.adj_r_squared <= noise.r_squared);
  CHECK((noise.r_squared >= 0 && noise.r_squared <= 1));

  const Eigen::MatrixXd x3 = random_matrix(50, 3, 13);
  const Eigen::VectorXd exact = 1.0 + x3.col(0).array() * 2 - x3.col(2).array() * 0.5;
  const auto fit = ols_fit(x3, exact);
  CHECK(std::abs(fit.r_squared - 1.0) < 1e-9);
  CHECK(fit.f_p_value < 1e-12);
}

TEST_CASE("ols_fit errors") {
  Eigen::MatrixXd x = random_matrix(20, 3, 14);
  x.col(2) = x.col(0);
  const Eigen::VectorXd y = random_matrix(20, 1, 15).col(0);
  try {
    ols_fit(x, y, true, {"a", "b", "c"});
    FAIL("expected rank deficiency");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("rank deficient") != std::string::npos);
    CHECK(std::string(e.what()).find("c") != std::string::npos);
  }
  CHECK(dependent_columns(x, true) == std::vector<int>{2});
  CHECK_THROWS_AS(ols_fit(random_matrix(3, 2, 1), Eigen::VectorXd::Zero(3)), DataError);
}

TEST_CASE("distribution tails") {
  CHECK(student_t_two_sided_p(0.0, 10) == doctest::Approx(1.0));
  CHECK(student_t_two_sided_p(2.228138851986, 10) == doctest::Approx(0.05).epsilon(1e-8));
  CHECK(f_upper_p(4.964602743730, 1, 10) == doctest::Approx(0.05).epsilon(1e-8));
  CHECK(f_upper_p(0.0, 3, 10) == doctest::Approx(1.0));
}

TEST_CASE("grouped_ols_report") {
  const auto layout = feature_layout(6, WindowConfig{});
  const int n = 400;
  const Eigen::MatrixXd f = random_matrix(n, 25, 21);
  Rng rng(22);
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) {
    const double s = f.row(i).head(5).sum() + 0.3 * rng.normal();
    labels[i] = s > 0 ? 1 : 0;
  }
  const auto g = grouped_ols_report(f, layout, labels);
  REQUIRE(g.groups.size() == 9);
  const std::vector<int> sizes = {5, 4, 4, 3, 3, 2, 2, 1, 1};
  std::size_t total = 0;
  for (std::size_t i = 0; i < 9; ++i) {
    CHECK(g.groups[i].members.size() == static_cast<std::size_t>(sizes[i]));
    total += g.groups[i].members.size();
  }
  CHECK(total == 25);
  CHECK(g.groups[0].label == "Window Size 1, 1st order (x1 - x5)");
  CHECK(g.groups[0].window == 1);
  CHECK(g.groups[1].order == 2);
  for (std::size_t i = 1; i < 9; ++i) CHECK(std::abs(g.groups[0].mean_coef) > std::abs(g.groups[i].mean_coef));

  // A singleton group carries its coordinate's own statistics.
  const auto& last = g.groups.back();
  const int coord = last.members[0];
  CHECK(last.mean_coef == g.fit.coef[coord + 1]);
  CHECK(last.mean_p_value == g.fit.p_value[coord + 1]);
  CHECK(g.fit.f_p_value < 1e-10);
}

TEST_CASE("grouped_ols_report drops aliased sign columns") {
  const auto layout = feature_layout(6, WindowConfig{});
  Eigen::MatrixXd f = random_matrix(200, 25, 31);
  f.col(20).setOnes();
  std::vector<int> labels(200);
  for (int i = 0; i < 200; ++i) labels[i] = f(i, 3) > 0;
  const auto g = grouped_ols_report(f, layout, labels);
  CHECK(g.aliased_columns == std::vector<int>{20});
  int aliased = 0;
  for (const auto& row : g.groups) aliased += row.aliased;
  CHECK(aliased == 1);
  CHECK(g.fit.k == 24);
}

TEST_CASE("cohort_stats on the hand-built fixture") {
  const Cohort c = load_cohort_dir(testing::fixture("stats10"), 3, {"Chinese"});
  const auto r = cohort_stats(c, builtin_rules());
  CHECK(r.labeled == 9);
  CHECK(r.unlabeled_excluded == 1);
  CHECK(r.base_rate == doctest::Approx(5.0 / 9.0));

  const auto* r1 = row(r, "R1");
  REQUIRE(r1);
  CHECK(r1->population == 4);
  CHECK(r1->dropouts == 3);
  CHECK(r1->rate == doctest::Approx(0.75));
  CHECK(r1->change == doctest::Approx(0.75 - 5.0 / 9.0));

  const auto* comp = row(r, "R2", "academic competition");
  REQUIRE(comp);
  CHECK(comp->population == 1);
  CHECK(comp->rate == 1.0);
  const auto* good = row(r, "R2", "good behavior");
  REQUIRE(good);
  CHECK(good->rate == 0.0);
  CHECK(good->change == doctest::Approx(-0.75));
  const auto* none = row(r, "R2", "no rewards");
  REQUIRE(none);
  CHECK(none->population == 2);
  CHECK(none->rate == 1.0);
  CHECK(row(r, "R2", "academic attitude") == nullptr);

  const auto* r3 = row(r, "R3 severe punishment", "punishment");
  REQUIRE(r3);
  CHECK(r3->population == 2);
  CHECK(r3->rate == 0.5);
  REQUIRE(row(r, "R3", "dishonesty"));
  CHECK(row(r, "R3", "dishonesty")->rate == 1.0);
  REQUIRE(row(r, "R3", "type: academic"));
  CHECK(row(r, "R3", "type: academic")->rate == 0.0);
  CHECK(row(r, "R3", "misbehavior") == nullptr);
  CHECK(row(r, "R3", "infringement") == nullptr);
  CHECK(r.omitted.size() == 3);
}

TEST_CASE("cohort_stats with no matching students") {
  Cohort c = load_cohort_dir(testing::fixture("stats10"), 3, {"Chinese"});
  for (auto& s : c.students) s.events.clear();
  const auto r = cohort_stats(c, builtin_rules());
  CHECK(r.rows.empty());
  CHECK(r.omitted.size() == builtin_rules().size());
  CHECK(r.base_rate == doctest::Approx(5.0 / 9.0));
}

TEST_CASE("cohort_stats rates agree with a recount on a synthetic cohort") {
  SynthConfig cfg;
  cfg.n_students = 400;
  cfg.seed = 5;
  const auto synth = generate_cohort(cfg);
  const auto rules = builtin_rules();
  const auto r = cohort_stats(synth.cohort, rules);
  std::map<std::string, std::pair<int, int>> counts;
  for (const auto& s : synth.cohort.students) {
    const auto d = derive_student(s, synth.cohort, StatsRuleConfig{});
    for (const auto& rule : rules) {
      if (!rule.predicate(d)) continue;
      ++counts[rule.label].first;
      counts[rule.label].second += *s.label;
    }
  }
  for (const auto& c : r.rows) {
    CHECK(c.population == counts[c.label].first);
    CHECK(c.rate == static_cast<double>(counts[c.label].second) / counts[c.label].first);
  }
  const auto* r1 = row(r, "R1");
  REQUIRE(r1);
  CHECK(r1->rate > r.base_rate);
}

TEST_CASE("logistic regression baseline") {
  Rng rng(40);
  Eigen::MatrixXd x(60, 2);
  std::vector<int> y(60);
  for (int i = 0; i < 60; ++i) {
    y[i] = i % 2;
    x(i, 0) = (y[i] ? 2.0 : -2.0) + 0.5 * rng.normal();
    x(i, 1) = rng.normal();
  }
  const Eigen::MatrixXd train = x.topRows(40), test = x.bottomRows(20);
  const std::vector<int> ytr(y.begin(), y.begin() + 40), yte(y.begin() + 40, y.end());
  CHECK(baseline_logreg(train, ytr, test, yte, LogRegConfig{}, 1).accuracy == 1.0);

  LogRegConfig zero;
  zero.iterations = 0;
  const auto model = fit_logreg(train, ytr, zero, 1);
  const auto p = logreg_probability(model, test);
  for (Eigen::Index i = 0; i < p.size(); ++i) CHECK(p[i] == 0.5);

  CHECK_THROWS_AS(fit_logreg(train, std::vector<int>(40, 0), LogRegConfig{}, 1), DataError);
}
