#include "dmsw/features.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "dmsw/csv.hpp"
#include "dmsw/error.hpp"

namespace dmsw {

std::string_view to_string(SecondOrderMode mode) { return mode == SecondOrderMode::Cosine ? "cosine" : "delta"; }

std::string_view to_string(Placement placement) {
  return placement == Placement::PostFusion ? "post_fusion" : "pre_fusion";
}

SecondOrderMode parse_second_order_mode(std::string_view text) {
  if (text == "cosine") return SecondOrderMode::Cosine;
  if (text == "delta") return SecondOrderMode::Delta;
  throw UsageError("second_order_mode must be cosine or delta");
}

Placement parse_placement(std::string_view text) {
  if (text == "post_fusion") return Placement::PostFusion;
  if (text == "pre_fusion") return Placement::PreFusion;
  throw UsageError("placement must be post_fusion or pre_fusion");
}

std::vector<int> resolve_window_sizes(const WindowConfig& cfg, int periods) {
  if (periods < 2) throw UsageError("sliding windows need at least 2 periods");
  std::vector<int> sizes = cfg.window_sizes;
  if (sizes.empty()) {
    for (int a = 1; a < periods; ++a) sizes.push_back(a);
  }
  std::sort(sizes.begin(), sizes.end());
  sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());
  for (int a : sizes) {
    if (a < 1 || a > periods - 1) {
      throw UsageError("window size " + std::to_string(a) + " outside [1, " + std::to_string(periods - 1) + "]");
    }
  }
  return sizes;
}

std::string column_name(const FeatureIndex& index) {
  if (index.source == Source::Raw) return "raw_" + std::to_string(index.position);
  const char* prefix = index.source == Source::Text ? "ft_" : index.source == Source::Numeric ? "fn_" : "f_";
  return prefix + std::to_string(index.window) + "_" + std::to_string(index.order) + "_" +
         std::to_string(index.position);
}

int sliding_length(int periods, const std::vector<int>& sizes) {
  int n = 0;
  for (int a : sizes) n += (periods - a) + std::max(0, periods - a - 1);
  return n;
}

std::vector<FeatureIndex> feature_layout(int periods, const WindowConfig& cfg, int fused_dim) {
  const auto sizes = resolve_window_sizes(cfg, periods);
  std::vector<FeatureIndex> layout;
  auto emit = [&](Source source) {
    for (int a : sizes) {
      for (int i = 1; i <= periods - a; ++i) layout.push_back({a, 1, i, source});
    }
    for (int a : sizes) {
      for (int i = 1; i <= periods - a - 1; ++i) layout.push_back({a, 2, i, source});
    }
  };
  if (cfg.placement == Placement::PostFusion) {
    emit(Source::Fused);
  } else {
    emit(Source::Text);
    emit(Source::Numeric);
  }
  if (cfg.include_raw) {
    for (int k = 0; k < fused_dim; ++k) layout.push_back({0, 0, k, Source::Raw});
  }
  return layout;
}

FusedSequence fuse(const EmbeddingSequence& seq) {
  if (seq.text.rows() != seq.num.rows()) throw DataError("fuse: modality row counts differ");
  FusedSequence out{seq.student_id, Eigen::MatrixXd(seq.text.rows(), seq.text.cols() + seq.num.cols())};
  out.v << seq.text, seq.num;
  return out;
}

double cosine_sim(const Eigen::Ref<const Eigen::VectorXd>& u, const Eigen::Ref<const Eigen::VectorXd>& v,
                  double zero_value) {
  if (u.size() != v.size()) throw DataError("cosine_sim: dimension mismatch");
  // Plain index-order sums: the result does not depend on SIMD width.
  double dot = 0.0, uu = 0.0, vv = 0.0;
  for (Eigen::Index k = 0; k < u.size(); ++k) {
    dot += u[k] * v[k];
    uu += u[k] * u[k];
    vv += v[k] * v[k];
  }
  if (uu == 0.0 || vv == 0.0) return zero_value;
  return dot / (std::sqrt(uu) * std::sqrt(vv));
}

Eigen::VectorXd first_order_features(const Eigen::MatrixXd& v, int a, double zero_value) {
  const auto p = static_cast<int>(v.rows());
  if (a < 1 || a > p - 1) throw UsageError("window size " + std::to_string(a) + " out of range");
  Eigen::VectorXd d(p - a);
  for (int i = 0; i < p - a; ++i) d[i] = cosine_sim(v.row(i).transpose(), v.row(i + a).transpose(), zero_value);
  return d;
}

Eigen::VectorXd second_order_features(const Eigen::VectorXd& d, SecondOrderMode mode) {
  if (d.size() < 2) return Eigen::VectorXd(0);
  Eigen::VectorXd g(d.size() - 1);
  for (Eigen::Index i = 0; i + 1 < d.size(); ++i) {
    if (mode == SecondOrderMode::Cosine) {
      // Cosine of two scalars is the sign of their product.
      const double prod = d[i] * d[i + 1];
      g[i] = prod > 0.0 ? 1.0 : prod < 0.0 ? -1.0 : 0.0;
    } else {
      g[i] = d[i + 1] - d[i];
    }
  }
  return g;
}

Eigen::VectorXd sliding_blocks(const Eigen::MatrixXd& v, const std::vector<int>& sizes, SecondOrderMode mode,
                               double zero_value) {
  const auto p = static_cast<int>(v.rows());
  Eigen::VectorXd out(sliding_length(p, sizes));
  std::vector<Eigen::VectorXd> first;
  first.reserve(sizes.size());
  Eigen::Index at = 0;
  for (int a : sizes) {
    first.push_back(first_order_features(v, a, zero_value));
    out.segment(at, first.back().size()) = first.back();
    at += first.back().size();
  }
  for (const auto& d : first) {
    const auto g = second_order_features(d, mode);
    out.segment(at, g.size()) = g;
    at += g.size();
  }
  return out;
}

namespace {

// Adds dc * dcos/du and dc * dcos/dv into the rows of dv_out.
void cosine_backward(const Eigen::MatrixXd& v, int i, int j, double dc, Eigen::MatrixXd& dv_out) {
  const auto u = v.row(i);
  const auto w = v.row(j);
  const double nu = u.norm();
  const double nw = w.norm();
  if (nu == 0.0 || nw == 0.0 || dc == 0.0) return;
  const double c = u.dot(w) / (nu * nw);
  dv_out.row(i) += dc * (w / (nu * nw) - c * u / (nu * nu));
  dv_out.row(j) += dc * (u / (nu * nw) - c * w / (nw * nw));
}

}  // namespace

Eigen::MatrixXd sliding_blocks_backward(const Eigen::MatrixXd& v, const std::vector<int>& sizes, SecondOrderMode mode,
                                        double zero_value, const Eigen::Ref<const Eigen::VectorXd>& d_blocks) {
  (void)zero_value;  // constant branch, no gradient
  const auto p = static_cast<int>(v.rows());
  // Gradient w.r.t. each first-order block, starting from its direct slot.
  std::vector<Eigen::VectorXd> d_first;
  Eigen::Index at = 0;
  for (int a : sizes) {
    d_first.push_back(d_blocks.segment(at, p - a));
    at += p - a;
  }
  for (std::size_t s = 0; s < sizes.size(); ++s) {
    const int len = p - sizes[s] - 1;
    if (len <= 0) continue;
    if (mode == SecondOrderMode::Delta) {
      for (int i = 0; i < len; ++i) {
        const double g = d_blocks[at + i];
        d_first[s][i + 1] += g;
        d_first[s][i] -= g;
      }
    }
    // Cosine mode: piecewise-constant sign, zero gradient.
    at += len;
  }
  Eigen::MatrixXd dv = Eigen::MatrixXd::Zero(v.rows(), v.cols());
  for (std::size_t s = 0; s < sizes.size(); ++s) {
    const int a = sizes[s];
    for (int i = 0; i < p - a; ++i) cosine_backward(v, i, i + a, d_first[s][i], dv);
  }
  return dv;
}

std::vector<SlidingFeatures> extract_features(const std::vector<EmbeddingSequence>& seqs, const WindowConfig& cfg) {
  std::vector<SlidingFeatures> out;
  out.reserve(seqs.size());
  for (const auto& seq : seqs) {
    const auto fused = fuse(seq);
    const int p = static_cast<int>(fused.v.rows());
    const auto sizes = resolve_window_sizes(cfg, p);
    SlidingFeatures sf;
    sf.student_id = seq.student_id;
    sf.index_map = feature_layout(p, cfg, static_cast<int>(fused.v.cols()));
    sf.f.resize(static_cast<Eigen::Index>(sf.index_map.size()));
    Eigen::Index at = 0;
    auto put = [&](const Eigen::VectorXd& block) {
      sf.f.segment(at, block.size()) = block;
      at += block.size();
    };
    if (cfg.placement == Placement::PostFusion) {
      put(sliding_blocks(fused.v, sizes, cfg.second_order_mode, cfg.zero_norm_cosine));
    } else {
      put(sliding_blocks(seq.text, sizes, cfg.second_order_mode, cfg.zero_norm_cosine));
      put(sliding_blocks(seq.num, sizes, cfg.second_order_mode, cfg.zero_norm_cosine));
    }
    if (cfg.include_raw) put(fused.v.colwise().mean().transpose());
    out.push_back(std::move(sf));
  }
  return out;
}

void write_features_csv(const std::string& path, const std::vector<SlidingFeatures>& features,
                        const std::vector<std::optional<int>>& labels) {
  if (labels.size() != features.size()) throw DataError("write_features_csv: label count mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  std::vector<std::string> header = {"student_id", "label"};
  if (!features.empty()) {
    for (const auto& idx : features.front().index_map) header.push_back(column_name(idx));
  }
  csv::write_row(out, header);
  for (std::size_t i = 0; i < features.size(); ++i) {
    std::vector<std::string> row = {features[i].student_id, labels[i] ? std::to_string(*labels[i]) : ""};
    for (Eigen::Index j = 0; j < features[i].f.size(); ++j) row.push_back(csv::format_double(features[i].f[j]));
    csv::write_row(out, row);
  }
}

}  // namespace dmsw
