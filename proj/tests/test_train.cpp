#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "dmsw/error.hpp"
#include "dmsw/rng.hpp"
#include "dmsw/train.hpp"

using namespace dmsw;

namespace {

// Positives alternate between two orthogonal text directions; negatives keep
// one direction, so first-order text similarity separates the classes.
std::vector<StudentInputs> toy_inputs(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<StudentInputs> out;
  for (int i = 0; i < n; ++i) {
    StudentInputs s;
    s.student_id = "T" + std::to_string(i);
    s.label = i % 3 == 0 ? 1 : 0;
    s.text = Eigen::MatrixXd::Zero(6, 8);
    s.numeric.resize(6, 4);
    for (int p = 0; p < 6; ++p) {
      const int slot = (*s.label == 1 && p % 2 == 1) ? 1 : 0;
      s.text(p, slot) = 1.0;
      for (int k = 2; k < 8; ++k) s.text(p, k) = 0.05 * rng.normal();
      for (int k = 0; k < 4; ++k) s.numeric(p, k) = rng.normal();
    }
    s.imputed.assign(6, false);
    out.push_back(s);
  }
  return out;
}

std::vector<const StudentInputs*> pointers(const std::vector<StudentInputs>& v) {
  std::vector<const StudentInputs*> out;
  for (const auto& s : v) out.push_back(&s);
  return out;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.refiner_hidden = 6;
  cfg.refiner_out = 5;
  cfg.classifier_hidden = 6;
  cfg.epochs = 40;
  cfg.seed = 17;
  return cfg;
}

}  // namespace

TEST_CASE("bce_loss") {
  const std::vector<double> one = {1 - 1e-7};
  const std::vector<int> y1 = {1};
  CHECK(bce_loss(one, y1) == doctest::Approx(1e-7).epsilon(1e-3));
  const std::vector<double> half = {0.5};
  CHECK(bce_loss(half, y1) == doctest::Approx(std::log(2.0)));
  const std::vector<double> p = {0.9, 0.1};
  const std::vector<int> y = {1, 0};
  CHECK(bce_loss(p, y) == doctest::Approx(0.105361).epsilon(1e-5));
  // Clamping keeps the loss finite.
  const std::vector<double> zero = {0.0};
  CHECK(std::isfinite(bce_loss(zero, y1)));
  CHECK_THROWS_AS(bce_loss(std::vector<double>{}, std::vector<int>{}), DataError);

  // Permutation invariance.
  Rng rng(2);
  std::vector<double> pp(30);
  std::vector<int> yy(30);
  for (int i = 0; i < 30; ++i) {
    pp[i] = rng.uniform(0.01, 0.99);
    yy[i] = rng.uniform() < 0.5;
  }
  const double base = bce_loss(pp, yy);
  std::vector<int> order(30);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(std::span<int>(order));
  std::vector<double> p2;
  std::vector<int> y2;
  for (int i : order) {
    p2.push_back(pp[i]);
    y2.push_back(yy[i]);
  }
  CHECK(bce_loss(p2, y2) == doctest::Approx(base).epsilon(1e-14));
}

TEST_CASE("change_magnitudes") {
  const auto layout = feature_layout(3, WindowConfig{});  // (1,1,1) (1,1,2) (2,1,1) (1,2,1)
  REQUIRE(layout.size() == 4);
  Eigen::MatrixXd f(1, 4);
  f << 1.0, -1.0, 0.0, -1.0;
  const auto m = change_magnitudes(f, layout, SecondOrderMode::Cosine);
  CHECK(m(0, 0) == 0.0);
  CHECK(m(0, 1) == 1.0);
  CHECK(m(0, 2) == 0.5);
  CHECK(m(0, 3) == 1.0);
  Eigen::MatrixXd g(1, 4);
  g << 1.0, 1.0, 1.0, -0.6;
  CHECK(change_magnitudes(g, layout, SecondOrderMode::Delta)(0, 3) == doctest::Approx(0.3));
  g(0, 3) = 3.0;
  CHECK(change_magnitudes(g, layout, SecondOrderMode::Delta)(0, 3) == 1.0);
}

TEST_CASE("percentile_threshold") {
  std::vector<double> col(100);
  std::iota(col.begin(), col.end(), 1.0);
  std::reverse(col.begin(), col.end());
  CHECK(percentile_threshold(col, 0.85) == 85.0);
  CHECK(percentile_threshold(std::vector<double>{4.2}, 0.85) == 4.2);
  CHECK(percentile_threshold(std::vector<double>(7, 0.3), 0.85) == 0.3);
  CHECK_THROWS_AS(percentile_threshold(std::vector<double>{}, 0.85), DataError);
}

TEST_CASE("distinction_loss") {
  Eigen::MatrixXd m(2, 1);
  m << 0.9, 0.1;
  Eigen::VectorXd delta(1);
  delta << 0.5;
  const std::vector<int> y = {1, 0};
  CHECK(distinction_loss(m, delta, y, DistinctionSign::Intent) == doctest::Approx(-0.2));
  CHECK(distinction_loss(m, delta, y, DistinctionSign::Literal) == doctest::Approx(0.2));

  Eigen::VectorXd high(1);
  high << 0.95;
  CHECK(distinction_loss(m, high, y, DistinctionSign::Intent) == 0.0);

  Rng rng(5);
  Eigen::MatrixXd r(20, 6);
  for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = rng.uniform();
  const auto d = percentile_thresholds(r, 0.85);
  const std::vector<int> zeros(20, 0);
  CHECK(distinction_loss(r, d, zeros, DistinctionSign::Intent) >= 0.0);
  CHECK_THROWS_AS(distinction_loss(r, Eigen::VectorXd::Zero(5), zeros, DistinctionSign::Intent), DataError);

  // Permutation invariance over students and features.
  std::vector<int> labels(20);
  for (auto& l : labels) l = rng.uniform() < 0.4;
  const double base = distinction_loss(r, d, labels, DistinctionSign::Intent);
  const Eigen::MatrixXd flipped = r.colwise().reverse().rowwise().reverse();
  std::vector<int> rev_labels(labels.rbegin(), labels.rend());
  const Eigen::VectorXd rev_d = d.reverse();
  CHECK(distinction_loss(flipped, rev_d, rev_labels, DistinctionSign::Intent) == doctest::Approx(base));

  // Raising a supra-threshold magnitude lowers the loss for y=1 and raises it for y=0.
  for (int i = 0; i < 20; ++i) {
    for (int j = 0; j < 6; ++j) {
      Eigen::MatrixXd bumped = r;
      bumped(i, j) = std::max(r(i, j), d[j]) + 0.01;
      Eigen::MatrixXd bumped2 = bumped;
      bumped2(i, j) += 0.01;
      const double a = distinction_loss(bumped, d, labels, DistinctionSign::Intent);
      const double b = distinction_loss(bumped2, d, labels, DistinctionSign::Intent);
      if (labels[i] == 1) CHECK(b < a);
      else CHECK(b > a);
    }
  }
}

TEST_CASE("combine_losses") {
  CHECK(combine_losses(0.6, -0.2, 0.5).l_total == doctest::Approx(0.5));
  CHECK(combine_losses(0.6, -0.2, 0.0).l_total == 0.6);
  CHECK(combine_losses(0.6, 0.0, 0.5).l_total == 0.6);
}

TEST_CASE("predict") {
  const auto inputs = toy_inputs(6, 1);
  const auto ae = init_autoencoder(stack_numeric(inputs), 3, 1);
  auto params = init_model(ae, 8, 6, small_config());
  const auto dim = params.classifier.hidden.in_dim();
  REQUIRE(dim == 25);
  Rng rng(4);
  Eigen::VectorXd f(dim);
  for (Eigen::Index i = 0; i < dim; ++i) f[i] = rng.normal();

  // Independent forward pass.
  double logit = params.classifier.output.bias[0];
  for (Eigen::Index h = 0; h < params.classifier.hidden.out_dim(); ++h) {
    double z = params.classifier.hidden.bias[h];
    for (Eigen::Index i = 0; i < dim; ++i) z += params.classifier.hidden.weight(h, i) * f[i];
    logit += params.classifier.output.weight(0, h) * std::max(z, 0.0);
  }
  CHECK(predict(params, f).probability == doctest::Approx(1.0 / (1.0 + std::exp(-logit))).epsilon(1e-12));

  // Monotone in the output bias (hence the logit).
  double last = 0.0;
  for (double b = -5; b <= 5; b += 0.5) {
    params.classifier.output.bias[0] = b;
    const double p = predict(params, f).probability;
    CHECK(p > last);
    last = p;
  }

  params.classifier.hidden.weight.setZero();
  params.classifier.hidden.bias.setZero();
  params.classifier.output.weight.setZero();
  params.classifier.output.bias.setZero();
  CHECK(predict(params, f).probability == 0.5);
  CHECK(predict(params, f).label == 1);
  CHECK_THROWS_AS(predict(params, Eigen::VectorXd::Zero(3)), DataError);
}

TEST_CASE("train_model") {
  const auto inputs = toy_inputs(30, 3);
  const auto train = pointers(inputs);
  const auto ae = init_autoencoder(stack_numeric(inputs), 3, 2);

  SUBCASE("zero epochs returns the initialization") {
    auto cfg = small_config();
    cfg.epochs = 0;
    const auto r = train_model(train, {}, ae, cfg);
    CHECK(r.history.empty());
    auto init = init_model(ae, 8, 6, cfg);
    auto a = r.params;
    const auto va = a.views(), vb = init.views();
    REQUIRE(va.size() == vb.size());
    for (std::size_t t = 0; t < va.size(); ++t) CHECK(std::equal(va[t].begin(), va[t].end(), vb[t].begin()));
  }
  SUBCASE("separable toy set reaches full training accuracy") {
    auto cfg = small_config();
    cfg.epochs = 200;
    const auto r = train_model(train, {}, ae, cfg);
    CHECK(r.history.back().train_accuracy == 1.0);
    CHECK(r.synthetic_rows == 10);
  }
  SUBCASE("same seed gives a bit-identical history") {
    const auto a = train_model(train, train, ae, small_config());
    const auto b = train_model(train, train, ae, small_config());
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t e = 0; e < a.history.size(); ++e) {
      CHECK(a.history[e].loss.l_total == b.history[e].loss.l_total);
      CHECK(a.history[e].val_bce == b.history[e].val_bce);
    }
  }
  SUBCASE("loss identity holds every epoch") {
    const auto cfg = small_config();
    for (const auto& rec : train_model(train, {}, ae, cfg).history) {
      CHECK(rec.loss.l_total == rec.loss.l_bce + cfg.lambda * rec.loss.l_distinction);
      CHECK(rec.loss.delta_thresholds.size() == 25);
    }
  }
  SUBCASE("lambda zero reproduces plain BCE training") {
    auto cfg = small_config();
    cfg.lambda = 0.0;
    auto plain = cfg;
    plain.distinction_enabled = false;
    const auto a = train_model(train, {}, ae, cfg);
    const auto b = train_model(train, {}, ae, plain);
    for (std::size_t e = 0; e < a.history.size(); ++e) CHECK(a.history[e].loss.l_total == b.history[e].loss.l_bce);
    auto pa = a.params, pb = b.params;
    const auto va = pa.views(), vb = pb.views();
    for (std::size_t t = 0; t < va.size(); ++t) CHECK(std::equal(va[t].begin(), va[t].end(), vb[t].begin()));
  }
  SUBCASE("errors") {
    std::vector<StudentInputs> one_class(inputs.begin() + 1, inputs.begin() + 3);
    CHECK_THROWS_AS(train_model(pointers(one_class), {}, ae, small_config()), DataError);
    CHECK_THROWS_AS(train_model({}, {}, ae, small_config()), DataError);
  }
}

TEST_CASE("gradient_check") {
  const auto inputs = toy_inputs(9, 7);
  const auto ae = init_autoencoder(stack_numeric(inputs), 3, 3);
  for (double lambda : {0.0, 0.5}) {
    auto cfg = small_config();
    cfg.lambda = lambda;
    const auto params = init_model(ae, 8, 6, cfg);
    const auto report = gradient_check(params, make_batch(pointers(inputs)));
    CHECK(report.checked > 0);
    CHECK(report.max_relative_error <= 1e-4);
  }
  // Saturated, correct predictions: both gradients vanish.
  auto cfg = small_config();
  cfg.lambda = 0.0;
  auto params = init_model(ae, 8, 6, cfg);
  params.classifier.hidden.weight.setZero();
  params.classifier.output.weight.setZero();
  params.classifier.output.bias[0] = -40.0;
  std::vector<StudentInputs> negatives;
  for (const auto& s : inputs) if (*s.label == 0) negatives.push_back(s);
  const auto batch = make_batch(pointers(negatives));
  ModelGrad g;
  evaluate(params, batch, {}, &g);
  double biggest = 0.0;
  for (auto v : g.views()) for (double x : v) biggest = std::max(biggest, std::abs(x));
  CHECK(biggest < 1e-12);
  CHECK(gradient_check(params, batch).max_relative_error <= 1e-4);
}

TEST_CASE("stage cache reproduces the full forward pass") {
  const auto inputs = toy_inputs(9, 11);
  const auto ae = init_autoencoder(stack_numeric(inputs), 3, 5);
  auto cfg = small_config();
  cfg.lambda = 0.5;
  const auto params = init_model(ae, 8, 6, cfg);
  const auto batch = make_batch(pointers(inputs));

  const Eigen::MatrixXd ht_pre = affine(params.text_refiner.hidden, batch.text_stack);
  const Eigen::MatrixXd ot = affine(params.text_refiner.output, relu(ht_pre));
  const Eigen::MatrixXd zs = standardize(params.autoencoder, batch.numeric_stack);
  const Eigen::MatrixXd e_pre = affine(params.autoencoder.encoder, zs);
  const Eigen::MatrixXd hn_pre = affine(params.num_refiner.hidden, relu(e_pre));
  const Eigen::MatrixXd on = affine(params.num_refiner.output, relu(hn_pre));
  const StageCache full{&ht_pre, &ot, &e_pre, &hn_pre, &on};

  EvalOptions plain;
  plain.record_kinks = true;
  EvalOptions cached = plain;
  cached.stages = &full;
  const auto a = evaluate(params, batch, plain, nullptr);
  const auto b = evaluate(params, batch, cached, nullptr);
  CHECK(a.loss.l_total == b.loss.l_total);
  CHECK(a.kinks == b.kinks);
  ModelGrad g;
  CHECK_THROWS_AS(evaluate(params, batch, cached, &g), std::logic_error);

  // A moved weight shifts one pre-activation column; downstream stages recompute.
  const double h = 1e-3;
  auto moved_params = params;
  moved_params.text_refiner.hidden.weight(2, 4) += h;
  Eigen::MatrixXd moved = ht_pre;
  moved.col(2) += h * batch.text_stack.col(4);
  StageCache partial = full;
  partial.text_pre = &moved;
  partial.text_out = nullptr;
  EvalOptions shifted = plain;
  shifted.stages = &partial;
  const auto c = evaluate(moved_params, batch, plain, nullptr);
  const auto d = evaluate(params, batch, shifted, nullptr);
  CHECK(c.loss.l_total != a.loss.l_total);
  CHECK(std::abs(c.loss.l_total - d.loss.l_total) < 1e-13);
}
