#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "dmsw/features.hpp"
#include "dmsw/preprocess.hpp"
#include "dmsw/records.hpp"

namespace dmsw {

struct MetricsReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int tp = 0, fp = 0, tn = 0, fn = 0;
};

// Positive class = dropout (1). Precision, recall and F1 are 0 when their
// denominators vanish.
MetricsReport classification_metrics(std::span<const int> predicted, std::span<const int> truth);

struct OlsReport {
  std::vector<std::string> names;  // "const" first when an intercept is fitted
  Eigen::VectorXd coef;
  Eigen::VectorXd std_err;
  Eigen::VectorXd t_stat;
  Eigen::VectorXd p_value;
  double r_squared = 0.0;
  double adj_r_squared = 0.0;
  double f_statistic = 0.0;
  double f_p_value = 1.0;
  int n = 0;
  int k = 0;  // regressors, excluding the intercept
};

// Least squares through a Householder QR of the design matrix. Throws
// DataError("rank deficient ...") naming the first column that depends on
// the ones before it, or when N <= k + 1.
OlsReport ols_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, bool add_intercept = true,
                  std::vector<std::string> names = {});

// Indices (into x's columns) that are linear combinations of earlier columns,
// with an implicit leading constant column when `with_intercept`.
std::vector<int> dependent_columns(const Eigen::MatrixXd& x, bool with_intercept);

double student_t_two_sided_p(double t, double dof);
double f_upper_p(double f, double dof1, double dof2);

struct GroupedOlsRow {
  Source source = Source::Fused;
  int window = 0;
  int order = 1;
  std::string label;               // e.g. "Window Size 1, 1st order (x1 - x5)"
  std::vector<int> members;        // 0-based feature coordinates
  int aliased = 0;                 // members dropped from the fit as dependent
  double mean_coef = 0.0;
  double mean_std_err = 0.0;
  double mean_p_value = 0.0;
};

struct GroupedOlsReport {
  OlsReport fit;
  std::vector<GroupedOlsRow> groups;
  std::vector<int> aliased_columns;
};

// Regresses the label on every coordinate of F, then averages the statistics
// within each (window size, order) group, first- then second-order per size.
// Coordinates that are linear combinations of earlier ones (e.g. constant
// sign features) are left out of the fit and counted as aliased.
GroupedOlsReport grouped_ols_report(const Eigen::MatrixXd& f, const std::vector<FeatureIndex>& index_map,
                                    std::span<const int> labels);

// Per-student quantities the cohort rules are written against.
struct StudentDerived {
  std::string student_id;
  std::optional<int> label;
  std::vector<int> absences;          // per period
  std::vector<double> mean_score;     // mean relative score per period (NaN if none)
  bool absentee_spike_decline = false;
  std::set<std::string> reward_types;       // lowercased reward subtypes
  int reward_count = 0;
  bool severe_punishment = false;
  std::set<std::string> punishment_types;   // matched reason keywords
};

struct StatsRuleConfig {
  int absence_increase = 5;   // strictly more than this many extra absences
  int max_gap = 2;            // ... within one or two periods
  double decline = 0.30;      // relative drop in mean relative score (>=)
  int window_width = 1;       // periods averaged before and after the change
};

StudentDerived derive_student(const StudentRecord& record, const Cohort& cohort, const StatsRuleConfig& cfg);

struct Rule {
  std::string label;
  std::string reference;  // label of the reference condition, "" = base rate
  std::function<bool(const StudentDerived&)> predicate;
};

inline const std::vector<std::string> kRewardTypes = {"academic competition", "academic attitude", "good behavior"};
inline const std::vector<std::string> kPunishmentTypes = {"academic", "misbehavior", "dishonesty", "infringement"};

// R1 absentee spike with decline; R2 R1 refined by reward type (or none);
// R3 severe punishment, overall and by reason type.
std::vector<Rule> builtin_rules();

struct ConditionRow {
  std::string label;
  std::string reference;
  int population = 0;
  int dropouts = 0;
  double rate = 0.0;
  double change = 0.0;  // rate minus the reference rate
};

struct CohortStatsReport {
  double base_rate = 0.0;
  int labeled = 0;
  int dropouts = 0;
  int unlabeled_excluded = 0;
  std::vector<ConditionRow> rows;
  std::vector<std::string> omitted;  // conditions with no members
};

CohortStatsReport cohort_stats(const Cohort& cohort, const std::vector<Rule>& rules, const StatsRuleConfig& cfg = {});

struct LogRegConfig {
  double lr = 0.5;
  int iterations = 1000;
  double l2 = 1e-3;
  bool smote = true;
  int smote_k = 5;
};

struct LogRegModel {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;
  Eigen::VectorXd weights;
  double bias = 0.0;
};

// L2-regularised logistic regression on standardised inputs, full-batch
// gradient descent from zero weights.
LogRegModel fit_logreg(const Eigen::MatrixXd& x, std::span<const int> y, const LogRegConfig& cfg, std::uint64_t seed);
Eigen::VectorXd logreg_probability(const LogRegModel& model, const Eigen::MatrixXd& x);

MetricsReport baseline_logreg(const Eigen::MatrixXd& train_x, std::span<const int> train_y,
                              const Eigen::MatrixXd& test_x, std::span<const int> test_y, const LogRegConfig& cfg,
                              std::uint64_t seed);

}  // namespace dmsw
