#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <vector>

namespace dmsw {

// Affine layer y = W x + b, applied row-wise to batches (rows are samples).
struct Dense {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out

  Eigen::Index in_dim() const { return weight.cols(); }
  Eigen::Index out_dim() const { return weight.rows(); }

  bool operator==(const Dense& other) const { return weight == other.weight && bias == other.bias; }
};

// Glorot-uniform weights in (-s, s), s = sqrt(6 / (fan_in + fan_out)); zero bias.
Dense glorot_dense(Eigen::Index in, Eigen::Index out, std::uint64_t seed);

Eigen::MatrixXd affine(const Dense& layer, const Eigen::MatrixXd& x);

struct DenseGrad {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
};

// Given dL/dy for a batch, returns parameter gradients and, if requested,
// dL/dx.
DenseGrad affine_backward(const Dense& layer, const Eigen::MatrixXd& x, const Eigen::MatrixXd& dy,
                          Eigen::MatrixXd* dx);

inline Eigen::MatrixXd relu(const Eigen::MatrixXd& x) { return x.cwiseMax(0.0); }

// Zeroes dy where the pre-activation was not positive.
inline Eigen::MatrixXd relu_backward(const Eigen::MatrixXd& pre, const Eigen::MatrixXd& dy) {
  return (pre.array() > 0.0).select(dy, 0.0);
}

// Views over the raw storage of parameter tensors, in a fixed order.
using ParamViews = std::vector<std::span<double>>;

inline void append_views(ParamViews& views, Dense& layer) {
  views.emplace_back(layer.weight.data(), static_cast<std::size_t>(layer.weight.size()));
  views.emplace_back(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
}

inline void append_views(ParamViews& views, DenseGrad& grad) {
  views.emplace_back(grad.weight.data(), static_cast<std::size_t>(grad.weight.size()));
  views.emplace_back(grad.bias.data(), static_cast<std::size_t>(grad.bias.size()));
}

inline void sgd_step(Dense& layer, const DenseGrad& grad, double lr) {
  layer.weight -= lr * grad.weight;
  layer.bias -= lr * grad.bias;
}

}  // namespace dmsw
