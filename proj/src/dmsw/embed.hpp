#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dmsw/nn.hpp"
#include "dmsw/preprocess.hpp"
#include "dmsw/records.hpp"

namespace dmsw {

struct TextEmbedderConfig {
  int dim = 64;
  std::uint64_t hash_seed = 0;
};

// Lowercased runs of ASCII letters/digits; bytes >= 0x80 count as word
// characters so UTF-8 text is kept together.
std::vector<std::string> tokenize(std::string_view text);

struct TokenSlot {
  int bucket = 0;
  int sign = 1;
};
TokenSlot hash_token(std::string_view token, const TextEmbedderConfig& cfg);

// Signed feature hashing followed by L2 normalisation; zero vector for text
// without tokens.
Eigen::VectorXd embed_text_hash(std::string_view text, const TextEmbedderConfig& cfg);
inline Eigen::VectorXd embed_text_hash(const PeriodSummary& summary, const TextEmbedderConfig& cfg) {
  return embed_text_hash(summary.text, cfg);
}

using PrecomputedEmbeddings = std::map<std::pair<std::string, int>, Eigen::VectorXd>;

// Reads embeddings.csv (`student_id,period,v0..v{d-1}`) and checks that every
// (student, period) of `cohort` is present.
PrecomputedEmbeddings load_precomputed_embeddings(const std::string& path, int expected_dim, const Cohort& cohort);

void write_precomputed_embeddings(const PrecomputedEmbeddings& embeddings, const std::string& path);

struct AutoencoderParams {
  Eigen::VectorXd mean;   // column standardisation
  Eigen::VectorXd scale;  // 1 for constant columns
  Dense encoder;          // input -> latent, rectified
  Dense decoder;          // latent -> input, linear

  int latent_dim() const { return static_cast<int>(encoder.out_dim()); }
  int input_dim() const { return static_cast<int>(encoder.in_dim()); }
};

struct AutoencoderFit {
  AutoencoderParams params;
  std::vector<double> loss_curve;  // epochs + 1 entries, index 0 = initial
};

AutoencoderParams init_autoencoder(const Eigen::MatrixXd& x, int latent_dim, std::uint64_t seed);

// Mean squared reconstruction error over standardised entries.
double autoencoder_loss(const AutoencoderParams& params, const Eigen::MatrixXd& x);

struct AutoencoderGrad {
  DenseGrad encoder;
  DenseGrad decoder;
};
AutoencoderGrad autoencoder_gradient(const AutoencoderParams& params, const Eigen::MatrixXd& x);

// Full-batch gradient descent on the reconstruction error.
AutoencoderFit autoencoder_train(const Eigen::MatrixXd& x, int latent_dim, int epochs, double lr,
                                 std::uint64_t seed);

Eigen::MatrixXd standardize(const AutoencoderParams& params, const Eigen::MatrixXd& x);

// relu(encoder(standardize(row))).
Eigen::VectorXd encode_numeric(const AutoencoderParams& params, const Eigen::VectorXd& row);

struct RefinerParams {
  Dense hidden;  // rectified
  Dense output;  // linear

  int in_dim() const { return static_cast<int>(hidden.in_dim()); }
  int out_dim() const { return static_cast<int>(output.out_dim()); }
};

RefinerParams init_refiner(int in_dim, int hidden_dim, int out_dim, std::uint64_t seed);

Eigen::VectorXd refine(const RefinerParams& params, const Eigen::VectorXd& vec);
Eigen::MatrixXd refine_batch(const RefinerParams& params, const Eigen::MatrixXd& rows);

struct RefinerGrad {
  DenseGrad hidden;
  DenseGrad output;
};
// Backward pass for a batch given dL/d(output); optionally returns dL/d(input).
RefinerGrad refine_backward(const RefinerParams& params, const Eigen::MatrixXd& rows, const Eigen::MatrixXd& d_out,
                            Eigen::MatrixXd* d_in);

// Raw per-period inputs of one student: hashed (or precomputed) text
// embeddings and numeric period vectors, one row per period.
struct StudentInputs {
  std::string student_id;
  std::optional<int> label;
  Eigen::MatrixXd text;     // P x d_t
  Eigen::MatrixXd numeric;  // P x d_n
  std::vector<bool> imputed;  // any subject imputed, per period
};

struct TextSource {
  TextEmbedderConfig hash;
  const PrecomputedEmbeddings* precomputed = nullptr;  // used when set
};

std::vector<StudentInputs> prepare_inputs(const Cohort& cohort, const ScoreStats& stats, const TextSource& text);

struct EmbeddingSequence {
  std::string student_id;
  Eigen::MatrixXd text;  // P x d_t'
  Eigen::MatrixXd num;   // P x d_n'
};

std::vector<EmbeddingSequence> build_sequences(const std::vector<StudentInputs>& inputs, const AutoencoderParams& ae,
                                               const RefinerParams& text_refiner, const RefinerParams& num_refiner);

// Stacks every student's numeric rows into one matrix (the autoencoder's
// training set).
Eigen::MatrixXd stack_numeric(const std::vector<StudentInputs>& inputs);

}  // namespace dmsw
