#include "dmsw/analyze.hpp"

#include <algorithm>
#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <cctype>
#include <cmath>
#include <limits>
#include <map>

#include "dmsw/error.hpp"

namespace dmsw {

MetricsReport classification_metrics(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.empty()) throw DataError("classification_metrics: empty input");
  if (predicted.size() != truth.size()) throw DataError("classification_metrics: length mismatch");
  MetricsReport r;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const bool p = predicted[i] == 1;
    const bool t = truth[i] == 1;
    if (p && t) ++r.tp;
    else if (p && !t) ++r.fp;
    else if (!p && t) ++r.fn;
    else ++r.tn;
  }
  const auto n = static_cast<double>(predicted.size());
  r.accuracy = (r.tp + r.tn) / n;
  r.precision = r.tp + r.fp > 0 ? static_cast<double>(r.tp) / (r.tp + r.fp) : 0.0;
  r.recall = r.tp + r.fn > 0 ? static_cast<double>(r.tp) / (r.tp + r.fn) : 0.0;
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

double student_t_two_sided_p(double t, double dof) {
  if (std::isnan(t)) return std::numeric_limits<double>::quiet_NaN();
  if (std::isinf(t)) return 0.0;
  boost::math::students_t dist(dof);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

double f_upper_p(double f, double dof1, double dof2) {
  if (std::isnan(f)) return std::numeric_limits<double>::quiet_NaN();
  if (std::isinf(f)) return 0.0;
  if (f <= 0.0) return 1.0;
  boost::math::fisher_f dist(dof1, dof2);
  return boost::math::cdf(boost::math::complement(dist, f));
}

namespace {

Eigen::MatrixXd design(const Eigen::MatrixXd& x, bool add_intercept) {
  if (!add_intercept) return x;
  Eigen::MatrixXd d(x.rows(), x.cols() + 1);
  d.col(0).setOnes();
  d.rightCols(x.cols()) = x;
  return d;
}

constexpr double kRankTolerance = 1e-10;

int numeric_rank(const Eigen::MatrixXd& m) {
  if (m.cols() == 0) return 0;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(m);
  qr.setThreshold(kRankTolerance);
  return static_cast<int>(qr.rank());
}

}  // namespace

std::vector<int> dependent_columns(const Eigen::MatrixXd& x, bool with_intercept) {
  std::vector<int> dependent;
  // Grow a basis column by column; a column that does not raise the rank is
  // dependent on the columns kept so far.
  Eigen::MatrixXd kept(x.rows(), 0);
  if (with_intercept) kept = Eigen::MatrixXd::Ones(x.rows(), 1);
  int rank = numeric_rank(kept);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    Eigen::MatrixXd trial(x.rows(), kept.cols() + 1);
    trial << kept, x.col(j);
    const int r = numeric_rank(trial);
    if (r > rank) {
      kept = std::move(trial);
      rank = r;
    } else {
      dependent.push_back(static_cast<int>(j));
    }
  }
  return dependent;
}

OlsReport ols_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, bool add_intercept,
                  std::vector<std::string> names) {
  const auto n = static_cast<int>(x.rows());
  const auto k = static_cast<int>(x.cols());
  if (y.size() != x.rows()) throw DataError("ols_fit: X and y differ in length");
  const int params = k + (add_intercept ? 1 : 0);
  if (n <= params) throw DataError("ols_fit: need N > k + 1 observations");
  if (!x.allFinite() || !y.allFinite()) throw NumericError("ols_fit: non-finite input");
  if (names.empty()) {
    for (int j = 0; j < k; ++j) names.push_back("x" + std::to_string(j + 1));
  }
  const Eigen::MatrixXd d = design(x, add_intercept);
  if (numeric_rank(d) < params) {
    const auto dep = dependent_columns(x, add_intercept);
    const std::string col = dep.empty() ? "?" : names[static_cast<std::size_t>(dep.front())];
    throw DataError("ols_fit: rank deficient design matrix (column `" + col + "` is linearly dependent)");
  }

  OlsReport r;
  r.n = n;
  r.k = k;
  if (add_intercept) r.names.push_back("const");
  r.names.insert(r.names.end(), names.begin(), names.end());

  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(d);
  r.coef = qr.solve(y);
  const Eigen::MatrixXd rmat = qr.matrixQR().topRows(params).triangularView<Eigen::Upper>();
  const Eigen::MatrixXd r_inv =
      rmat.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(params, params));
  const Eigen::VectorXd xtx_inv_diag = (r_inv * r_inv.transpose()).diagonal();

  const Eigen::VectorXd resid = y - d * r.coef;
  const double rss = resid.squaredNorm();
  const double dof = static_cast<double>(n - params);
  const double s2 = rss / dof;
  const double tss = add_intercept ? (y.array() - y.mean()).square().sum() : y.squaredNorm();

  r.std_err = (s2 * xtx_inv_diag.array()).sqrt().matrix();
  r.t_stat.resize(params);
  r.p_value.resize(params);
  for (int j = 0; j < params; ++j) {
    const double se = r.std_err[j];
    const double b = r.coef[j];
    double t;
    if (se > 0.0) t = b / se;
    else t = b == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), b);
    r.t_stat[j] = t;
    r.p_value[j] = student_t_two_sided_p(t, dof);
  }
  r.r_squared = tss > 0.0 ? std::clamp(1.0 - rss / tss, 0.0, 1.0) : 1.0;
  const double dof_model = add_intercept ? static_cast<double>(n - 1) : static_cast<double>(n);
  r.adj_r_squared = 1.0 - (1.0 - r.r_squared) * dof_model / dof;
  if (k > 0) {
    const double explained = (tss - rss) / k;
    r.f_statistic = s2 > 0.0 ? explained / s2 : std::numeric_limits<double>::infinity();
    r.f_p_value = f_upper_p(r.f_statistic, k, dof);
  }
  return r;
}

GroupedOlsReport grouped_ols_report(const Eigen::MatrixXd& f, const std::vector<FeatureIndex>& index_map,
                                    std::span<const int> labels) {
  if (f.cols() != static_cast<Eigen::Index>(index_map.size())) {
    throw DataError("grouped_ols_report: feature width does not match the index map");
  }
  GroupedOlsReport out;
  out.aliased_columns = dependent_columns(f, true);
  std::vector<int> kept;
  for (int j = 0; j < static_cast<int>(f.cols()); ++j) {
    if (!std::binary_search(out.aliased_columns.begin(), out.aliased_columns.end(), j)) kept.push_back(j);
  }
  Eigen::MatrixXd x(f.rows(), static_cast<Eigen::Index>(kept.size()));
  std::vector<std::string> names;
  for (std::size_t c = 0; c < kept.size(); ++c) {
    x.col(static_cast<Eigen::Index>(c)) = f.col(kept[c]);
    names.push_back("x" + std::to_string(kept[c] + 1));
  }
  Eigen::VectorXd y(static_cast<Eigen::Index>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) y[static_cast<Eigen::Index>(i)] = labels[i];
  out.fit = ols_fit(x, y, true, names);

  // Position of each feature coordinate inside the fitted coefficient vector.
  std::vector<int> fit_pos(index_map.size(), -1);
  for (std::size_t c = 0; c < kept.size(); ++c) fit_pos[static_cast<std::size_t>(kept[c])] = static_cast<int>(c) + 1;

  // Group order: per source, per window size, first then second order; raw last.
  std::map<std::tuple<int, int, int>, std::vector<int>> groups;
  for (std::size_t j = 0; j < index_map.size(); ++j) {
    const auto& idx = index_map[j];
    groups[{static_cast<int>(idx.source), idx.window, idx.order == 0 ? 3 : idx.order}].push_back(static_cast<int>(j));
  }
  for (const auto& [key, members] : groups) {
    GroupedOlsRow row;
    row.source = static_cast<Source>(std::get<0>(key));
    row.window = std::get<1>(key);
    row.order = std::get<2>(key) == 3 ? 0 : std::get<2>(key);
    row.members = members;
    const auto lo = *std::min_element(members.begin(), members.end()) + 1;
    const auto hi = *std::max_element(members.begin(), members.end()) + 1;
    const std::string range = lo == hi ? "x" + std::to_string(lo) : "x" + std::to_string(lo) + " - x" + std::to_string(hi);
    std::string prefix = row.source == Source::Text ? "Text, " : row.source == Source::Numeric ? "Numeric, " : "";
    if (row.source == Source::Raw) {
      row.label = "Pooled embedding (" + range + ")";
    } else {
      row.label = prefix + "Window Size " + std::to_string(row.window) + ", " + (row.order == 1 ? "1st" : "2nd") +
                  " order (" + range + ")";
    }
    int used = 0;
    for (int j : members) {
      const int pos = fit_pos[static_cast<std::size_t>(j)];
      if (pos < 0) {
        ++row.aliased;
        continue;
      }
      row.mean_coef += out.fit.coef[pos];
      row.mean_std_err += out.fit.std_err[pos];
      row.mean_p_value += out.fit.p_value[pos];
      ++used;
    }
    if (used > 0) {
      row.mean_coef /= used;
      row.mean_std_err /= used;
      row.mean_p_value /= used;
    } else {
      row.mean_coef = row.mean_std_err = row.mean_p_value = std::numeric_limits<double>::quiet_NaN();
    }
    out.groups.push_back(std::move(row));
  }
  return out;
}

namespace {

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

double window_mean(const std::vector<double>& scores, int first, int last) {
  double sum = 0.0;
  int n = 0;
  for (int p = std::max(first, 1); p <= std::min<int>(last, static_cast<int>(scores.size())); ++p) {
    const double v = scores[static_cast<std::size_t>(p - 1)];
    if (std::isnan(v)) continue;
    sum += v;
    ++n;
  }
  return n ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

StudentDerived derive_student(const StudentRecord& record, const Cohort& cohort, const StatsRuleConfig& cfg) {
  StudentDerived d;
  d.student_id = record.student_id;
  d.label = record.label;
  const int periods = cohort.periods;
  d.absences.assign(static_cast<std::size_t>(periods), 0);
  d.mean_score.assign(static_cast<std::size_t>(periods), std::numeric_limits<double>::quiet_NaN());
  for (int p = 1; p <= periods; ++p) {
    d.absences[static_cast<std::size_t>(p - 1)] = record.count(Category::Absence, p);
    double sum = 0.0;
    int n = 0;
    for (const auto& subject : cohort.subjects) {
      if (const auto* e = record.exam(subject, p)) {
        sum += relative_score(e->raw_score, e->max_score);
        ++n;
      }
    }
    if (n) d.mean_score[static_cast<std::size_t>(p - 1)] = sum / n;
  }

  for (int p = 1; p <= periods && !d.absentee_spike_decline; ++p) {
    for (int gap = 1; gap <= cfg.max_gap; ++gap) {
      const int s = p + gap;
      if (s > periods) break;
      if (d.absences[static_cast<std::size_t>(s - 1)] - d.absences[static_cast<std::size_t>(p - 1)] <=
          cfg.absence_increase) {
        continue;
      }
      const double before = window_mean(d.mean_score, p - cfg.window_width + 1, p);
      const double after = window_mean(d.mean_score, s, s + cfg.window_width - 1);
      if (std::isnan(before) || std::isnan(after) || before <= 0.0) continue;
      if ((before - after) / before >= cfg.decline) {
        d.absentee_spike_decline = true;
        break;
      }
    }
  }

  for (const auto& ev : record.events) {
    if (ev.count == 0) continue;
    if (ev.category == Category::Reward) {
      d.reward_types.insert(lower(ev.subtype));
      d.reward_count += ev.count;
    } else if (ev.category == Category::Punishment) {
      const std::string text = lower(ev.subtype + " " + ev.description);
      if (lower(ev.subtype).find("severe") == std::string::npos) continue;
      d.severe_punishment = true;
      for (const auto& type : kPunishmentTypes) {
        if (text.find(type) != std::string::npos) d.punishment_types.insert(type);
      }
    }
  }
  return d;
}

std::vector<Rule> builtin_rules() {
  std::vector<Rule> rules;
  const std::string r1 = "R1 absentee spike + academic decline";
  rules.push_back({r1, "", [](const StudentDerived& d) { return d.absentee_spike_decline; }});
  for (const auto& type : kRewardTypes) {
    rules.push_back({"R2 " + r1 + " | reward: " + type, r1, [type](const StudentDerived& d) {
                       return d.absentee_spike_decline && d.reward_types.count(type) > 0;
                     }});
  }
  rules.push_back({"R2 " + r1 + " | no rewards", r1,
                   [](const StudentDerived& d) { return d.absentee_spike_decline && d.reward_count == 0; }});
  const std::string r3 = "R3 severe punishment";
  rules.push_back({r3, "", [](const StudentDerived& d) { return d.severe_punishment; }});
  for (const auto& type : kPunishmentTypes) {
    rules.push_back({r3 + " | type: " + type, r3, [type](const StudentDerived& d) {
                       return d.severe_punishment && d.punishment_types.count(type) > 0;
                     }});
  }
  return rules;
}

CohortStatsReport cohort_stats(const Cohort& cohort, const std::vector<Rule>& rules, const StatsRuleConfig& cfg) {
  CohortStatsReport report;
  std::vector<StudentDerived> derived;
  for (const auto& rec : cohort.students) {
    if (!rec.label) {
      ++report.unlabeled_excluded;
      continue;
    }
    derived.push_back(derive_student(rec, cohort, cfg));
    ++report.labeled;
    report.dropouts += *rec.label;
  }
  if (report.labeled == 0) throw DataError("cohort_stats: no labeled students");
  report.base_rate = static_cast<double>(report.dropouts) / report.labeled;

  std::map<std::string, double> rates;
  for (const auto& rule : rules) {
    ConditionRow row;
    row.label = rule.label;
    row.reference = rule.reference;
    for (const auto& d : derived) {
      if (!rule.predicate(d)) continue;
      ++row.population;
      row.dropouts += *d.label;
    }
    if (row.population == 0) {
      report.omitted.push_back(rule.label);
      continue;
    }
    row.rate = static_cast<double>(row.dropouts) / row.population;
    auto ref = rates.find(rule.reference);
    const double ref_rate = (rule.reference.empty() || ref == rates.end()) ? report.base_rate : ref->second;
    row.change = row.rate - ref_rate;
    rates[rule.label] = row.rate;
    report.rows.push_back(std::move(row));
  }
  return report;
}

LogRegModel fit_logreg(const Eigen::MatrixXd& x, std::span<const int> y, const LogRegConfig& cfg, std::uint64_t seed) {
  if (x.rows() != static_cast<Eigen::Index>(y.size()) || x.rows() == 0) throw DataError("logreg: shape mismatch");
  const auto positives = std::count(y.begin(), y.end(), 1);
  if (positives == 0 || positives == static_cast<long>(y.size())) {
    throw DataError("logreg: training set has a single class");
  }
  LogRegModel model;
  model.mean = x.colwise().mean().transpose();
  model.scale = Eigen::VectorXd::Ones(x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double sd = std::sqrt((x.col(j).array() - model.mean[j]).square().mean());
    if (sd > 0.0) model.scale[j] = sd;
  }
  Eigen::MatrixXd z = (x.rowwise() - model.mean.transpose()).array().rowwise() / model.scale.transpose().array();
  std::vector<int> labels(y.begin(), y.end());
  if (cfg.smote) {
    LabeledVectorSet set{z, labels, {}};
    auto balanced = smote_balance(set, cfg.smote_k, seed);
    z = std::move(balanced.set.rows);
    labels = std::move(balanced.set.labels);
  }
  Eigen::VectorXd target(static_cast<Eigen::Index>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) target[static_cast<Eigen::Index>(i)] = labels[i];

  model.weights = Eigen::VectorXd::Zero(x.cols());
  const double n = static_cast<double>(z.rows());
  for (int it = 0; it < cfg.iterations; ++it) {
    const Eigen::VectorXd logits = (z * model.weights).array() + model.bias;
    const Eigen::VectorXd p = logits.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    const Eigen::VectorXd err = p - target;
    model.weights -= cfg.lr * ((z.transpose() * err) / n + cfg.l2 * model.weights);
    model.bias -= cfg.lr * err.mean();
  }
  return model;
}

Eigen::VectorXd logreg_probability(const LogRegModel& model, const Eigen::MatrixXd& x) {
  if (x.cols() != model.weights.size()) throw DataError("logreg: dimension mismatch");
  const Eigen::MatrixXd z = (x.rowwise() - model.mean.transpose()).array().rowwise() / model.scale.transpose().array();
  const Eigen::VectorXd logits = (z * model.weights).array() + model.bias;
  return logits.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

MetricsReport baseline_logreg(const Eigen::MatrixXd& train_x, std::span<const int> train_y,
                              const Eigen::MatrixXd& test_x, std::span<const int> test_y, const LogRegConfig& cfg,
                              std::uint64_t seed) {
  const auto model = fit_logreg(train_x, train_y, cfg, seed);
  const Eigen::VectorXd p = logreg_probability(model, test_x);
  std::vector<int> pred(static_cast<std::size_t>(p.size()));
  for (Eigen::Index i = 0; i < p.size(); ++i) pred[static_cast<std::size_t>(i)] = p[i] >= 0.5 ? 1 : 0;
  return classification_metrics(pred, test_y);
}

}  // namespace dmsw
