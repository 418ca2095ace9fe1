#pragma once

#include <json.hpp>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dmsw/analyze.hpp"
#include "dmsw/checkpoint.hpp"
#include "dmsw/config.hpp"
#include "dmsw/embed.hpp"
#include "dmsw/train.hpp"

namespace dmsw {

// Everything the model-based commands share: inputs for every student, the
// labeled subset, one stratified split and the pretrained autoencoder.
struct Prepared {
  Cohort cohort;
  ScoreStats stats;
  std::optional<PrecomputedEmbeddings> precomputed;
  std::vector<StudentInputs> inputs;  // cohort order
  std::vector<std::size_t> labeled;   // indices into inputs
  std::vector<int> labels;            // parallel to labeled
  Split split;                        // indices into labeled
  AutoencoderFit autoencoder;         // pretrained on training-split rows

  std::vector<const StudentInputs*> rows(const std::vector<std::size_t>& labeled_positions) const;
  std::vector<const StudentInputs*> train_rows() const { return rows(split.train); }
  std::vector<const StudentInputs*> test_rows() const { return rows(split.test); }
  std::vector<const StudentInputs*> labeled_rows() const;
  std::vector<int> labels_at(const std::vector<std::size_t>& labeled_positions) const;
};

Cohort load_run_cohort(const RunConfig& cfg);
Prepared prepare(Cohort cohort, const RunConfig& cfg);

// Numeric period vectors flattened period-major, one row per student.
Eigen::MatrixXd flatten_numeric(const std::vector<const StudentInputs*>& students);

// F from the freshly initialised pipeline (pretrained encoder, seeded
// refiners); used by the OLS diagnostics and the full-F baseline.
Eigen::MatrixXd initial_features(const Prepared& prep, const RunConfig& cfg,
                                 const std::vector<const StudentInputs*>& students,
                                 std::vector<FeatureIndex>* index_map = nullptr);

struct TrainOutcome {
  TrainResult result;
  MetricsReport test;
  SavedModel model;
};
TrainOutcome train_prepared(const Prepared& prep, const RunConfig& cfg);

struct EvaluateOutcome {
  MetricsReport dmsw;
  MetricsReport dmsw_no_distinction;  // identical config with lambda = 0
  MetricsReport logreg_num;
  MetricsReport logreg_bi;
  LossBreakdown final_loss;
  LossBreakdown final_loss_no_distinction;
  GroupedOlsReport ols;
  std::vector<std::string> test_ids;
  std::vector<std::string> baseline_test_ids;
};
EvaluateOutcome evaluate_prepared(const Prepared& prep, const RunConfig& cfg);

GroupedOlsReport ols_prepared(const Prepared& prep, const RunConfig& cfg);

struct AblationCell {
  Placement placement = Placement::PostFusion;
  std::vector<int> sizes;
  double lambda = 0.0;
  std::optional<MetricsReport> metrics;
  std::string error;
};

struct ComboAverage {
  Placement placement = Placement::PostFusion;
  double lambda = 0.0;
  int combo_size = 0;
  int cells = 0;
  double mean_accuracy = 0.0;
  double mean_f1 = 0.0;
};

struct AblationTable {
  std::vector<AblationCell> cells;
  std::vector<ComboAverage> averages;
  double post_fusion_mean_f1 = 0.0;
  double pre_fusion_mean_f1 = 0.0;
};

// Window sizes the combo grid is built from: ablation_sizes, or the presets
// small = 1, medium = 3, large = 6 if P >= 7 else P - 1 (deduplicated and
// limited to valid sizes).
std::vector<int> ablation_base_sizes(const RunConfig& cfg);
// Every nonempty subset, by size then lexicographically.
std::vector<std::vector<int>> window_combos(const std::vector<int>& sizes);
AblationTable ablation_prepared(const Prepared& prep, const RunConfig& cfg);

// Small batch: the first gradcheck_students labeled students of `data`, or a
// seeded synthetic cohort of that size when no data directory is given.
GradCheckReport gradcheck_run(const RunConfig& cfg);
inline constexpr double kGradCheckTolerance = 1e-4;

struct Report {
  std::string command;
  std::string stem;  // <command>_seed<seed>_<config hash>
  nlohmann::json document;
  std::string text;
  std::string numeric_failure;  // nonempty when the command's check failed
};

// Runs a subcommand end to end, writing its data outputs; the report itself
// is returned for the caller to persist.
Report run_command(std::string_view command, const RunConfig& cfg);
void write_report(const Report& report, const std::string& dir);

}  // namespace dmsw
