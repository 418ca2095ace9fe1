#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dmsw/records.hpp"

namespace dmsw {

struct CompositeWeights {
  double omega1 = 0.5;  // Z-score weight
  double omega2 = 0.5;  // rank weight
};

// Throws UsageError unless both weights lie in [0,1] and sum to 1.
CompositeWeights make_weights(double omega1, double omega2);

// 100 * raw / max.
double relative_score(double raw, double max);

// 1 - (rank-1)/(total-1); 1 when total == 1.
double rank_term(int rank, int total);

// omega1 * Z + omega2 * rank_term, with Z := 0 when sd == 0.
double composite_value(double score, double mean, double sd, int rank, int total, const CompositeWeights& w);

inline constexpr int kEntriesPerSubject = 3;  // relative score, rank term, composite

// Per (subject, period) relative-score moments plus cohort means of each
// numeric entry, used for Z-scores and for imputing absent exam cells.
struct ScoreStats {
  int periods = 0;
  std::vector<std::string> subjects;
  CompositeWeights weights;
  // Indexed [subject][period-1].
  std::vector<std::vector<double>> score_mean;
  std::vector<std::vector<double>> score_sd;
  std::vector<std::vector<int>> observed;
  // Indexed [subject][period-1][entry].
  std::vector<std::vector<std::array<double, kEntriesPerSubject>>> entry_mean;
};

ScoreStats compute_score_stats(const Cohort& cohort, const CompositeWeights& weights);

struct NumericPeriodVector {
  Eigen::VectorXd values;       // kEntriesPerSubject per subject, subject-major
  std::vector<bool> imputed;    // one flag per subject
};

NumericPeriodVector numeric_period_vector(const StudentRecord& record, int period, const ScoreStats& stats);

struct LabeledVectorSet {
  Eigen::MatrixXd rows;
  std::vector<int> labels;
  std::vector<std::string> columns;  // optional coordinate names
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Per-class seeded shuffle, round(n_class * test_fraction) of each class to
// test. Indices are returned in ascending order.
Split stratified_split(std::span<const int> labels, double test_fraction, std::uint64_t seed);

struct SyntheticRow {
  std::size_t base = 0;      // row index into the input set
  std::size_t neighbor = 0;  // row index into the input set
  double u = 0.0;            // interpolation weight in [0,1]
};

struct SmoteResult {
  LabeledVectorSet set;  // original rows verbatim, then synthetic rows
  std::vector<SyntheticRow> synthetic;
  int minority_label = 1;
  int k_used = 0;
};

// Oversamples the minority class until both classes have equal counts. The
// j-th synthetic row interpolates minority row j mod n_minority towards one of
// its k nearest minority neighbours, drawn from the (seed, j) substream.
SmoteResult smote_balance(const LabeledVectorSet& train, int k, std::uint64_t seed);

// Applies a SMOTE recipe to another representation of the same rows.
Eigen::MatrixXd apply_synthetic(const Eigen::MatrixXd& rows, std::span<const SyntheticRow> synthetic);

}  // namespace dmsw
