#include "dmsw/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dmsw/error.hpp"
#include "dmsw/rng.hpp"

namespace dmsw {

CompositeWeights make_weights(double omega1, double omega2) {
  if (omega1 < 0.0 || omega1 > 1.0 || omega2 < 0.0 || omega2 > 1.0) {
    throw UsageError("omega1 and omega2 must lie in [0,1]");
  }
  if (std::abs(omega1 + omega2 - 1.0) > 1e-9) throw UsageError("omega1 + omega2 must equal 1");
  return {omega1, omega2};
}

double relative_score(double raw, double max) {
  if (!(max > 0.0)) throw DataError("relative_score: max must be positive");
  if (raw < 0.0 || raw > max) throw DataError("relative_score: raw outside [0, max]");
  return 100.0 * raw / max;
}

double rank_term(int rank, int total) {
  if (rank < 1 || rank > total) throw DataError("rank out of range");
  if (total == 1) return 1.0;
  return 1.0 - static_cast<double>(rank - 1) / static_cast<double>(total - 1);
}

double composite_value(double score, double mean, double sd, int rank, int total, const CompositeWeights& w) {
  const double z = sd > 0.0 ? (score - mean) / sd : 0.0;
  return w.omega1 * z + w.omega2 * rank_term(rank, total);
}

namespace {

std::array<double, kEntriesPerSubject> entries_of(const ExamEntry& e, double mean, double sd,
                                                  const CompositeWeights& w) {
  const double rel = relative_score(e.raw_score, e.max_score);
  return {rel, rank_term(e.rank, e.class_size), composite_value(rel, mean, sd, e.rank, e.class_size, w)};
}

}  // namespace

ScoreStats compute_score_stats(const Cohort& cohort, const CompositeWeights& weights) {
  ScoreStats stats;
  stats.periods = cohort.periods;
  stats.subjects = cohort.subjects;
  stats.weights = weights;
  const std::size_t ns = cohort.subjects.size();
  const auto np = static_cast<std::size_t>(cohort.periods);
  stats.score_mean.assign(ns, std::vector<double>(np, 0.0));
  stats.score_sd.assign(ns, std::vector<double>(np, 0.0));
  stats.observed.assign(ns, std::vector<int>(np, 0));
  stats.entry_mean.assign(ns, std::vector<std::array<double, kEntriesPerSubject>>(np, {0.0, 0.0, 0.0}));

  for (std::size_t s = 0; s < ns; ++s) {
    for (std::size_t p = 0; p < np; ++p) {
      std::vector<double> scores;
      for (const auto& rec : cohort.students) {
        if (const auto* e = rec.exam(cohort.subjects[s], static_cast<int>(p) + 1)) {
          scores.push_back(relative_score(e->raw_score, e->max_score));
        }
      }
      stats.observed[s][p] = static_cast<int>(scores.size());
      if (scores.empty()) continue;
      const double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
      double ss = 0.0;
      for (double x : scores) ss += (x - mean) * (x - mean);
      stats.score_mean[s][p] = mean;
      stats.score_sd[s][p] = std::sqrt(ss / static_cast<double>(scores.size()));

      std::array<double, kEntriesPerSubject> sum{0.0, 0.0, 0.0};
      for (const auto& rec : cohort.students) {
        if (const auto* e = rec.exam(cohort.subjects[s], static_cast<int>(p) + 1)) {
          const auto v = entries_of(*e, mean, stats.score_sd[s][p], weights);
          for (int k = 0; k < kEntriesPerSubject; ++k) sum[k] += v[k];
        }
      }
      for (int k = 0; k < kEntriesPerSubject; ++k) {
        stats.entry_mean[s][p][k] = sum[k] / static_cast<double>(scores.size());
      }
    }
  }
  return stats;
}

NumericPeriodVector numeric_period_vector(const StudentRecord& record, int period, const ScoreStats& stats) {
  if (period < 1 || period > stats.periods) throw DataError("period out of range");
  const std::size_t ns = stats.subjects.size();
  NumericPeriodVector out;
  out.values = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ns * kEntriesPerSubject));
  out.imputed.assign(ns, false);

  auto entries_at = [&](std::size_t s, int p) -> std::optional<std::array<double, kEntriesPerSubject>> {
    const auto* e = record.exam(stats.subjects[s], p);
    if (!e) return std::nullopt;
    const auto pi = static_cast<std::size_t>(p - 1);
    return entries_of(*e, stats.score_mean[s][pi], stats.score_sd[s][pi], stats.weights);
  };

  for (std::size_t s = 0; s < ns; ++s) {
    std::array<double, kEntriesPerSubject> v{0.0, 0.0, 0.0};
    if (auto direct = entries_at(s, period)) {
      v = *direct;
    } else {
      out.imputed[s] = true;
      int seen = 0;
      for (int p = 1; p <= stats.periods; ++p) {
        if (p == period) continue;
        if (auto other = entries_at(s, p)) {
          for (int k = 0; k < kEntriesPerSubject; ++k) v[k] += (*other)[k];
          ++seen;
        }
      }
      if (seen > 0) {
        for (auto& x : v) x /= seen;
      } else if (stats.observed[s][static_cast<std::size_t>(period - 1)] > 0) {
        v = stats.entry_mean[s][static_cast<std::size_t>(period - 1)];
      } else {
        // No cohort observation in this cell either: average the subject's
        // observed cells.
        int cells = 0;
        for (int p = 0; p < stats.periods; ++p) {
          if (stats.observed[s][static_cast<std::size_t>(p)] == 0) continue;
          for (int k = 0; k < kEntriesPerSubject; ++k) v[k] += stats.entry_mean[s][static_cast<std::size_t>(p)][k];
          ++cells;
        }
        if (cells > 0) for (auto& x : v) x /= cells;
      }
    }
    for (int k = 0; k < kEntriesPerSubject; ++k) {
      out.values[static_cast<Eigen::Index>(s * kEntriesPerSubject + k)] = v[k];
    }
  }
  return out;
}

Split stratified_split(std::span<const int> labels, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw UsageError("test_fraction must lie in (0,1)");
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw DataError("stratified_split: labels must be binary");
    by_class[labels[i]].push_back(i);
  }
  for (int c = 0; c < 2; ++c) {
    if (by_class[c].empty()) throw DataError("stratified_split: class " + std::to_string(c) + " has zero members");
  }
  Split split;
  for (int c = 0; c < 2; ++c) {
    auto& members = by_class[c];
    Rng rng = Rng::substream(seed, static_cast<std::uint64_t>(c));
    rng.shuffle(std::span<std::size_t>(members));
    const auto n_test =
        static_cast<std::size_t>(std::llround(static_cast<double>(members.size()) * test_fraction));
    split.test.insert(split.test.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_test));
    split.train.insert(split.train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_test), members.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

SmoteResult smote_balance(const LabeledVectorSet& train, int k, std::uint64_t seed) {
  if (train.rows.rows() != static_cast<Eigen::Index>(train.labels.size())) {
    throw DataError("smote_balance: rows and labels differ in length");
  }
  if (k < 1) throw UsageError("smote_k must be >= 1");
  std::vector<std::size_t> members[2];
  for (std::size_t i = 0; i < train.labels.size(); ++i) members[train.labels[i] == 1 ? 1 : 0].push_back(i);

  SmoteResult result;
  result.set = train;
  if (members[0].size() == members[1].size()) {
    result.minority_label = 1;
    return result;
  }
  const int minority = members[1].size() < members[0].size() ? 1 : 0;
  const auto& minor = members[minority];
  const std::size_t n_major = members[1 - minority].size();
  if (minor.size() < 2) throw DataError("smote_balance: minority class has fewer than 2 members");
  result.minority_label = minority;
  result.k_used = std::min<int>(k, static_cast<int>(minor.size()) - 1);

  const std::size_t needed = n_major - minor.size();
  const std::size_t bases = std::min(needed, minor.size());

  // k nearest minority neighbours for each base that will be used.
  std::vector<std::vector<std::size_t>> neighbours(bases);
  for (std::size_t b = 0; b < bases; ++b) {
    const auto self = minor[b];
    std::vector<std::pair<double, std::size_t>> dist;
    dist.reserve(minor.size() - 1);
    for (auto other : minor) {
      if (other == self) continue;
      dist.emplace_back((train.rows.row(static_cast<Eigen::Index>(self)) -
                         train.rows.row(static_cast<Eigen::Index>(other)))
                            .squaredNorm(),
                        other);
    }
    const auto kk = static_cast<std::size_t>(result.k_used);
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(kk), dist.end());
    for (std::size_t i = 0; i < kk; ++i) neighbours[b].push_back(dist[i].second);
  }

  result.synthetic.reserve(needed);
  for (std::size_t j = 0; j < needed; ++j) {
    Rng rng = Rng::substream(seed, j);
    const std::size_t b = j % minor.size();
    const auto& nn = neighbours[b];
    SyntheticRow row;
    row.base = minor[b];
    row.neighbor = nn[rng.below(nn.size())];
    row.u = rng.uniform();
    result.synthetic.push_back(row);
  }

  result.set.rows = apply_synthetic(train.rows, result.synthetic);
  result.set.labels.insert(result.set.labels.end(), needed, minority);
  return result;
}

Eigen::MatrixXd apply_synthetic(const Eigen::MatrixXd& rows, std::span<const SyntheticRow> synthetic) {
  Eigen::MatrixXd out(rows.rows() + static_cast<Eigen::Index>(synthetic.size()), rows.cols());
  out.topRows(rows.rows()) = rows;
  for (std::size_t j = 0; j < synthetic.size(); ++j) {
    const auto& s = synthetic[j];
    const auto x = rows.row(static_cast<Eigen::Index>(s.base));
    const auto nn = rows.row(static_cast<Eigen::Index>(s.neighbor));
    out.row(rows.rows() + static_cast<Eigen::Index>(j)) = x + s.u * (nn - x);
  }
  return out;
}

}  // namespace dmsw
