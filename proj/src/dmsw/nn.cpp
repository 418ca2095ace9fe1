#include "dmsw/nn.hpp"

#include <cmath>

#include "dmsw/rng.hpp"

namespace dmsw {

Dense glorot_dense(Eigen::Index in, Eigen::Index out, std::uint64_t seed) {
  Rng rng(seed);
  const double s = std::sqrt(6.0 / static_cast<double>(in + out));
  Dense layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
  // Row-major fill order so the draw sequence matches the serialized layout.
  for (Eigen::Index r = 0; r < out; ++r) {
    for (Eigen::Index c = 0; c < in; ++c) layer.weight(r, c) = rng.uniform(-s, s);
  }
  return layer;
}

Eigen::MatrixXd affine(const Dense& layer, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd y = x * layer.weight.transpose();
  y.rowwise() += layer.bias.transpose();
  return y;
}

DenseGrad affine_backward(const Dense& layer, const Eigen::MatrixXd& x, const Eigen::MatrixXd& dy,
                          Eigen::MatrixXd* dx) {
  DenseGrad g{dy.transpose() * x, dy.colwise().sum().transpose()};
  if (dx) *dx = dy * layer.weight;
  return g;
}

}  // namespace dmsw
