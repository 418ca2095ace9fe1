#include <doctest.h>

#include <map>
#include <set>

#include "dmsw/error.hpp"
#include "dmsw/features.hpp"
#include "dmsw/rng.hpp"

using namespace dmsw;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

double naive_cos(const Eigen::MatrixXd& v, int i, int j) {
  double dot = 0, a = 0, b = 0;
  for (Eigen::Index k = 0; k < v.cols(); ++k) {
    dot += v(i, k) * v(j, k);
    a += v(i, k) * v(i, k);
    b += v(j, k) * v(j, k);
  }
  return (a == 0 || b == 0) ? 0.0 : dot / (std::sqrt(a) * std::sqrt(b));
}

}  // namespace

TEST_CASE("fuse") {
  EmbeddingSequence s{"S", random_matrix(6, 32, 1), random_matrix(6, 32, 2)};
  const auto f = fuse(s);
  CHECK(f.v.rows() == 6);
  CHECK(f.v.cols() == 64);
  CHECK(f.v.row(0).head(32) == s.text.row(0));
  CHECK(f.v.row(0).tail(32) == s.num.row(0));
  s.text.setZero();
  CHECK(fuse(s).v.rightCols(32) == s.num);
  CHECK(fuse(s).v.leftCols(32).isZero());
  s.num = random_matrix(5, 32, 3);
  CHECK_THROWS_AS(fuse(s), DataError);
}

TEST_CASE("cosine_sim") {
  Eigen::VectorXd u(3), v(3);
  u << 1, 2, 3;
  v << 4, 5, 6;
  CHECK(cosine_sim(u, u) == doctest::Approx(1.0));
  CHECK(cosine_sim(u, v) == doctest::Approx(32.0 / (std::sqrt(14.0) * std::sqrt(77.0))));
  CHECK(cosine_sim(u, v) == doctest::Approx(0.974632).epsilon(1e-6));
  Eigen::VectorXd e1(2), e2(2);
  e1 << 1, 0;
  e2 << 0, 1;
  CHECK(cosine_sim(e1, e2) == 0.0);
  CHECK(cosine_sim(Eigen::VectorXd::Zero(3), u) == 0.0);
  CHECK(cosine_sim(Eigen::VectorXd::Zero(3), u, 1.0) == 1.0);
  CHECK_THROWS_AS(cosine_sim(u, e1), DataError);
}

TEST_CASE("first_order_features") {
  Eigen::MatrixXd constant = Eigen::MatrixXd::Ones(6, 4);
  for (int a = 1; a <= 5; ++a) {
    const auto d = first_order_features(constant, a);
    CHECK(d.size() == 6 - a);
    for (Eigen::Index i = 0; i < d.size(); ++i) CHECK(d[i] == doctest::Approx(1.0));
  }
  Eigen::MatrixXd alt(6, 2);
  for (int i = 0; i < 6; ++i) alt.row(i) << (i % 2 == 0), (i % 2 == 1);
  CHECK(first_order_features(alt, 1).isZero());
  CHECK_THROWS_AS(first_order_features(alt, 6), UsageError);
  CHECK_THROWS_AS(first_order_features(alt, 0), UsageError);

  // Reversing time reverses each first-order block.
  const auto v = random_matrix(7, 5, 4);
  const Eigen::MatrixXd rev = v.colwise().reverse();
  for (int a = 1; a <= 6; ++a) {
    const auto d = first_order_features(v, a), r = first_order_features(rev, a);
    for (Eigen::Index i = 0; i < d.size(); ++i) CHECK(r[d.size() - 1 - i] == doctest::Approx(d[i]));
  }
}

TEST_CASE("second_order_features") {
  Eigen::VectorXd pos(4);
  pos << 0.1, 0.5, 0.9, 0.2;
  CHECK(second_order_features(pos, SecondOrderMode::Cosine) == Eigen::VectorXd::Ones(3));
  CHECK(second_order_features(Eigen::VectorXd::Constant(4, 0.3), SecondOrderMode::Delta).isZero());
  Eigen::VectorXd d(3);
  d << 0.8, -0.2, 0.5;
  const auto c = second_order_features(d, SecondOrderMode::Cosine);
  CHECK(c[0] == -1.0);
  CHECK(c[1] == -1.0);
  const auto delta = second_order_features(d, SecondOrderMode::Delta);
  CHECK(delta[0] == doctest::Approx(-1.0));
  CHECK(delta[1] == doctest::Approx(0.7));
  Eigen::VectorXd z(2);
  z << 0.0, 0.4;
  CHECK(second_order_features(z, SecondOrderMode::Cosine)[0] == 0.0);
  CHECK(second_order_features(Eigen::VectorXd::Ones(1), SecondOrderMode::Cosine).size() == 0);
}

TEST_CASE("layout for six periods") {
  WindowConfig cfg;
  const auto layout = feature_layout(6, cfg);
  REQUIRE(layout.size() == 25);
  std::map<std::pair<int, int>, int> groups;
  for (const auto& ix : layout) ++groups[{ix.window, ix.order}];
  const std::vector<int> first = {5, 4, 3, 2, 1}, second = {4, 3, 2, 1};
  for (int a = 1; a <= 5; ++a) CHECK(groups[{a, 1}] == first[a - 1]);
  for (int a = 1; a <= 4; ++a) CHECK(groups[{a, 2}] == second[a - 1]);
  CHECK(groups.count({5, 2}) == 0);
  // Block order: all first-order sizes ascending, then second-order sizes ascending.
  CHECK(layout[0] == FeatureIndex{1, 1, 1, Source::Fused});
  CHECK(layout[14] == FeatureIndex{5, 1, 1, Source::Fused});
  CHECK(layout[15] == FeatureIndex{1, 2, 1, Source::Fused});
  CHECK(layout[24] == FeatureIndex{4, 2, 1, Source::Fused});
  std::set<std::string> names;
  for (const auto& ix : layout) names.insert(column_name(ix));
  CHECK(names.size() == 25);

  cfg.placement = Placement::PreFusion;
  const auto pre = feature_layout(6, cfg);
  CHECK(pre.size() == 50);
  CHECK(pre[0].source == Source::Text);
  CHECK(pre[25].source == Source::Numeric);
}

TEST_CASE("length formula holds exhaustively for P up to 12") {
  for (int p = 2; p <= 12; ++p) {
    const int sizes = p - 1;
    for (int mask = 1; mask < (1 << sizes); ++mask) {
      WindowConfig cfg;
      int expected = 0;
      for (int a = 1; a <= sizes; ++a) {
        if (!(mask & (1 << (a - 1)))) continue;
        cfg.window_sizes.push_back(a);
        expected += p - a;
        if (p - a >= 2) expected += p - a - 1;
      }
      const auto layout = feature_layout(p, cfg);
      REQUIRE(static_cast<int>(layout.size()) == expected);
      const auto v = random_matrix(p, 3, static_cast<std::uint64_t>(mask));
      REQUIRE(sliding_blocks(v, cfg.window_sizes, SecondOrderMode::Cosine, 0.0).size() == expected);
    }
  }
}

TEST_CASE("window size validation") {
  WindowConfig cfg;
  cfg.window_sizes = {3, 1, 3};
  CHECK(resolve_window_sizes(cfg, 6) == std::vector<int>{1, 3});
  cfg.window_sizes = {6};
  CHECK_THROWS_AS(resolve_window_sizes(cfg, 6), UsageError);
  cfg.window_sizes = {0};
  CHECK_THROWS_AS(resolve_window_sizes(cfg, 6), UsageError);
  CHECK_THROWS_AS(feature_layout(1, WindowConfig{}), UsageError);
}

TEST_CASE("extract_features matches a naive double loop") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    EmbeddingSequence s{"S", random_matrix(6, 4, seed), random_matrix(6, 3, seed + 1000)};
    for (auto mode : {SecondOrderMode::Cosine, SecondOrderMode::Delta}) {
      WindowConfig cfg;
      cfg.second_order_mode = mode;
      const auto f = extract_features({s}, cfg)[0];
      const auto v = fuse(s).v;
      std::vector<double> oracle;
      std::vector<std::vector<double>> d(6);
      for (int a = 1; a <= 5; ++a) {
        for (int i = 0; i + a < 6; ++i) {
          d[a].push_back(naive_cos(v, i, i + a));
          oracle.push_back(d[a].back());
        }
      }
      for (int a = 1; a <= 5; ++a) {
        for (std::size_t i = 0; i + 1 < d[a].size(); ++i) {
          const double x = d[a][i], y = d[a][i + 1];
          oracle.push_back(mode == SecondOrderMode::Delta ? y - x : (x * y > 0) - (x * y < 0));
        }
      }
      REQUIRE(f.f.size() == static_cast<Eigen::Index>(oracle.size()));
      for (std::size_t k = 0; k < oracle.size(); ++k) CHECK(f.f[k] == doctest::Approx(oracle[k]).epsilon(1e-12));
    }
  }
}

TEST_CASE("cosine-mode features are scale invariant") {
  EmbeddingSequence s{"S", random_matrix(6, 4, 9), random_matrix(6, 4, 10)};
  const auto base = extract_features({s}, WindowConfig{})[0].f;
  for (double c : {0.01, 3.0, 250.0}) {
    EmbeddingSequence scaled{"S", s.text * c, s.num * c};
    const auto f = extract_features({scaled}, WindowConfig{})[0].f;
    CHECK((f - base).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("pre-fusion concatenates text then numeric blocks") {
  EmbeddingSequence s{"S", random_matrix(6, 4, 11), random_matrix(6, 3, 12)};
  WindowConfig cfg;
  cfg.placement = Placement::PreFusion;
  const auto f = extract_features({s}, cfg)[0];
  REQUIRE(f.f.size() == 50);
  CHECK(f.f.head(25) == sliding_blocks(s.text, {1, 2, 3, 4, 5}, SecondOrderMode::Cosine, 0.0));
  CHECK(f.f.tail(25) == sliding_blocks(s.num, {1, 2, 3, 4, 5}, SecondOrderMode::Cosine, 0.0));
  CHECK(f.index_map.size() == 50);
}

TEST_CASE("include_raw appends the pooled fused row") {
  EmbeddingSequence s{"S", random_matrix(6, 2, 13), random_matrix(6, 2, 14)};
  WindowConfig cfg;
  cfg.include_raw = true;
  const auto f = extract_features({s}, cfg)[0];
  REQUIRE(f.f.size() == 29);
  const Eigen::VectorXd pooled = fuse(s).v.colwise().mean().transpose();
  CHECK((f.f.tail(4) - pooled).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(f.index_map.back().source == Source::Raw);
}

TEST_CASE("sliding_blocks_backward matches finite differences in delta mode") {
  const std::vector<int> sizes = {1, 2, 3, 4, 5};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Eigen::MatrixXd v = random_matrix(6, 4, seed + 20);
    const Eigen::VectorXd w = random_matrix(25, 1, seed + 40).col(0);
    const Eigen::MatrixXd g = sliding_blocks_backward(v, sizes, SecondOrderMode::Delta, 0.0, w);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const double keep = v.data()[i], h = 1e-6;
      v.data()[i] = keep + h;
      const double up = w.dot(sliding_blocks(v, sizes, SecondOrderMode::Delta, 0.0));
      v.data()[i] = keep - h;
      const double down = w.dot(sliding_blocks(v, sizes, SecondOrderMode::Delta, 0.0));
      v.data()[i] = keep;
      CHECK(g.data()[i] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-5));
    }
  }
}
