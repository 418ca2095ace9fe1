#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dmsw/embed.hpp"
#include "dmsw/features.hpp"
#include "dmsw/nn.hpp"
#include "dmsw/preprocess.hpp"

namespace dmsw {

enum class DistinctionSign { Intent, Literal };
enum class SmoteSpace { Features, Embeddings };

std::string_view to_string(DistinctionSign sign);
std::string_view to_string(SmoteSpace space);
DistinctionSign parse_distinction_sign(std::string_view text);
SmoteSpace parse_smote_space(std::string_view text);

struct TrainConfig {
  WindowConfig window;
  double lambda = 0.5;
  double percentile_q = 0.85;
  DistinctionSign distinction_sign = DistinctionSign::Intent;
  double lr = 0.3;
  int epochs = 200;
  int refiner_hidden = 32;
  int refiner_out = 32;
  int classifier_hidden = 16;
  bool freeze_autoencoder = false;
  bool smote = true;
  int smote_k = 5;
  SmoteSpace smote_space = SmoteSpace::Features;
  double decision_threshold = 0.5;
  double prob_clamp = 1e-7;
  std::uint64_t seed = 0;
  // When false the distinction term is never evaluated (plain BCE training).
  bool distinction_enabled = true;
};

// Two-layer perceptron on F: rectified hidden layer, one sigmoid output.
struct Classifier {
  Dense hidden;
  Dense output;  // 1 x hidden
};

struct ModelParams {
  RefinerParams text_refiner;
  RefinerParams num_refiner;
  AutoencoderParams autoencoder;  // encoder is fine-tuned unless frozen
  Classifier classifier;
  TrainConfig config;
  int periods = 0;
  std::vector<FeatureIndex> index_map;

  // Trainable tensors in a fixed order: text refiner, numeric refiner,
  // encoder, classifier.
  ParamViews views();
};

ModelParams init_model(const AutoencoderParams& ae, int text_dim, int periods, const TrainConfig& cfg);

struct ModelGrad {
  RefinerGrad text_refiner;
  RefinerGrad num_refiner;
  DenseGrad encoder;
  DenseGrad classifier_hidden;
  DenseGrad classifier_output;

  ParamViews views();  // same order as ModelParams::views()
};

// -(1/N) sum[y log p + (1-y) log(1-p)] with p clamped to [eps, 1-eps].
double bce_loss(std::span<const double> p, std::span<const int> y, double eps = 1e-7);

// Maps features to change magnitudes in [0,1]: (1-f)/2 for cosine-valued
// coordinates, min(|f|/2, 1) for delta coordinates. Raw pooled coordinates
// are dropped, so the result has one column per sliding coordinate.
Eigen::MatrixXd change_magnitudes(const Eigen::MatrixXd& f, const std::vector<FeatureIndex>& index_map,
                                  SecondOrderMode mode);

// Nearest-rank percentile: the ceil(q*K)-th smallest value (1-based).
double percentile_threshold(std::span<const double> column, double q = 0.85);
Eigen::VectorXd percentile_thresholds(const Eigen::MatrixXd& m, double q);

// Delta_ij = max(0, m_ij - delta_j); the loss averages s_i * Delta_ij over all
// N*M entries with s_i = (1 - 2 y_i) in intent mode and (2 y_i - 1) in literal
// mode.
double distinction_loss(const Eigen::MatrixXd& m, const Eigen::VectorXd& delta, std::span<const int> y,
                        DistinctionSign sign);

struct LossBreakdown {
  double l_bce = 0.0;
  double l_distinction = 0.0;
  double l_total = 0.0;
  Eigen::VectorXd delta_thresholds;
};

LossBreakdown combine_losses(double l_bce, double l_distinction, double lambda, Eigen::VectorXd delta = {});

// Loss of the classifier on precomputed feature rows.
LossBreakdown total_loss(const Eigen::MatrixXd& f, std::span<const int> y, const ModelParams& params);

Eigen::VectorXd classifier_forward(const Classifier& clf, const Eigen::MatrixXd& f);

struct Prediction {
  double probability = 0.5;
  int label = 1;
};

Prediction predict(const ModelParams& params, const Eigen::VectorXd& f);

// Inputs of a training batch: real students plus an optional SMOTE recipe
// whose synthetic rows are re-interpolated from live features each pass.
struct Batch {
  std::vector<const StudentInputs*> students;
  std::vector<int> labels;  // real then synthetic
  std::vector<SyntheticRow> synthetic;
  SmoteSpace smote_space = SmoteSpace::Features;
  int periods = 0;
  Eigen::MatrixXd text_stack;     // students*P x d_t
  Eigen::MatrixXd numeric_stack;  // students*P x d_n, unstandardised

  std::size_t size() const { return students.size() + synthetic.size(); }
};

Batch make_batch(const std::vector<const StudentInputs*>& students);

// Stage outputs of the embedding path supplied by the caller; a missing stage
// is recomputed from its predecessor. Forward only.
struct StageCache {
  const Eigen::MatrixXd* text_pre = nullptr;     // text refiner hidden, before ReLU
  const Eigen::MatrixXd* text_out = nullptr;
  const Eigen::MatrixXd* encoder_pre = nullptr;  // autoencoder encoder, before ReLU
  const Eigen::MatrixXd* numeric_pre = nullptr;  // numeric refiner hidden, before ReLU
  const Eigen::MatrixXd* numeric_out = nullptr;
};

struct EvalOptions {
  const StageCache* stages = nullptr;
  const Eigen::VectorXd* fixed_delta = nullptr;
  const Eigen::MatrixXd* fixed_hinge = nullptr;  // 1 where the hinge is active
  bool record_kinks = false;
};

struct Evaluation {
  LossBreakdown loss;
  Eigen::VectorXd probability;  // per batch row
  Eigen::MatrixXd features;     // batch rows x len(F)
  Eigen::MatrixXd hinge;        // active hinge mask used
  std::vector<signed char> kinks;  // activation pattern, when requested
};

// Forward pass over the whole batch, plus the backward pass when `grad` is
// non-null. The percentile thresholds are constants in the gradient.
Evaluation evaluate(const ModelParams& params, const Batch& batch, const EvalOptions& options, ModelGrad* grad);

// Feature rows for students under the model's current embedding path.
Eigen::MatrixXd model_features(const ModelParams& params, const std::vector<const StudentInputs*>& students);

std::vector<Prediction> predict_students(const ModelParams& params, const std::vector<const StudentInputs*>& students);

struct EpochRecord {
  int epoch = 0;
  LossBreakdown loss;
  double train_accuracy = 0.0;
  std::optional<double> val_bce;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochRecord> history;
  std::size_t synthetic_rows = 0;
};

// Full-batch gradient descent over refiners, (optionally) the encoder and the
// classifier. SMOTE, when enabled, balances the training rows once, from the
// features at initialisation.
TrainResult train_model(const std::vector<const StudentInputs*>& train, const std::vector<const StudentInputs*>& val,
                        const AutoencoderParams& ae, const TrainConfig& cfg);

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates whose perturbation crosses a kink
};

// Central differences (step 1e-5) against the analytic gradient of L_total
// over every trainable coordinate. Thresholds and hinge masks are held at
// their unperturbed values; coordinates whose +-step changes any rectifier,
// sign or clamp pattern are skipped. Relative error is
// |a - n| / max(|a|, |n|, floor).
GradCheckReport gradient_check(const ModelParams& params, const Batch& batch, double step = 1e-5,
                               double floor = 1e-6);

}  // namespace dmsw
