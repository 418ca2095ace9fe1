#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "dmsw/embed.hpp"

namespace dmsw {

enum class SecondOrderMode { Cosine, Delta };
enum class Placement { PostFusion, PreFusion };

std::string_view to_string(SecondOrderMode mode);
std::string_view to_string(Placement placement);
SecondOrderMode parse_second_order_mode(std::string_view text);
Placement parse_placement(std::string_view text);

struct WindowConfig {
  std::vector<int> window_sizes;  // empty = every size 1..P-1
  SecondOrderMode second_order_mode = SecondOrderMode::Cosine;
  Placement placement = Placement::PostFusion;
  bool include_raw = false;        // append the period-mean of the fused rows
  double zero_norm_cosine = 0.0;   // cosine assigned when either vector is zero
};

// Sorted, de-duplicated window sizes for P periods; throws UsageError when a
// size falls outside [1, P-1] or the result is empty.
std::vector<int> resolve_window_sizes(const WindowConfig& cfg, int periods);

enum class Source { Fused, Text, Numeric, Raw };

struct FeatureIndex {
  int window = 0;    // a; 0 for raw pooled coordinates
  int order = 1;     // 1, 2, or 0 for raw
  int position = 1;  // 1-based i within the block (raw: dimension index)
  Source source = Source::Fused;

  bool operator==(const FeatureIndex&) const = default;
};

std::string column_name(const FeatureIndex& index);

// First-order blocks for each size ascending (length P-a), then second-order
// blocks (length P-a-1, only when positive). Pre-fusion repeats the layout for
// the text then the numeric modality.
std::vector<FeatureIndex> feature_layout(int periods, const WindowConfig& cfg, int fused_dim = 0);

// Number of sliding coordinates for one modality.
int sliding_length(int periods, const std::vector<int>& sizes);

struct FusedSequence {
  std::string student_id;
  Eigen::MatrixXd v;  // P x (d_t' + d_n')
};

FusedSequence fuse(const EmbeddingSequence& seq);

double cosine_sim(const Eigen::Ref<const Eigen::VectorXd>& u, const Eigen::Ref<const Eigen::VectorXd>& v,
                  double zero_value = 0.0);

// D_a[i] = cos(V[i], V[i+a]), i = 0..P-a-1.
Eigen::VectorXd first_order_features(const Eigen::MatrixXd& v, int a, double zero_value = 0.0);

// Cosine mode: sign(D[i] * D[i+1]); delta mode: D[i+1] - D[i].
Eigen::VectorXd second_order_features(const Eigen::VectorXd& d, SecondOrderMode mode);

// First- then second-order blocks of one sequence matrix.
Eigen::VectorXd sliding_blocks(const Eigen::MatrixXd& v, const std::vector<int>& sizes, SecondOrderMode mode,
                               double zero_value);

// Back-propagates dL/d(blocks) to dL/dV for `sliding_blocks`.
Eigen::MatrixXd sliding_blocks_backward(const Eigen::MatrixXd& v, const std::vector<int>& sizes, SecondOrderMode mode,
                                        double zero_value, const Eigen::Ref<const Eigen::VectorXd>& d_blocks);

struct SlidingFeatures {
  std::string student_id;
  Eigen::VectorXd f;
  std::vector<FeatureIndex> index_map;
};

std::vector<SlidingFeatures> extract_features(const std::vector<EmbeddingSequence>& seqs, const WindowConfig& cfg);

// Writes features.csv: `student_id,label,<column per index_map>`.
void write_features_csv(const std::string& path, const std::vector<SlidingFeatures>& features,
                        const std::vector<std::optional<int>>& labels);

}  // namespace dmsw
