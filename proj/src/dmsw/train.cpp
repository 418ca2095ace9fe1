#include "dmsw/train.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dmsw/error.hpp"
#include "dmsw/rng.hpp"

namespace dmsw {

std::string_view to_string(DistinctionSign sign) { return sign == DistinctionSign::Intent ? "intent" : "literal"; }
std::string_view to_string(SmoteSpace space) { return space == SmoteSpace::Features ? "features" : "embeddings"; }

DistinctionSign parse_distinction_sign(std::string_view text) {
  if (text == "intent") return DistinctionSign::Intent;
  if (text == "literal") return DistinctionSign::Literal;
  throw UsageError("distinction_sign must be intent or literal");
}

SmoteSpace parse_smote_space(std::string_view text) {
  if (text == "features") return SmoteSpace::Features;
  if (text == "embeddings") return SmoteSpace::Embeddings;
  throw UsageError("smote_space must be features or embeddings");
}

ParamViews ModelParams::views() {
  ParamViews v;
  append_views(v, text_refiner.hidden);
  append_views(v, text_refiner.output);
  append_views(v, num_refiner.hidden);
  append_views(v, num_refiner.output);
  append_views(v, autoencoder.encoder);
  append_views(v, classifier.hidden);
  append_views(v, classifier.output);
  return v;
}

ParamViews ModelGrad::views() {
  ParamViews v;
  append_views(v, text_refiner.hidden);
  append_views(v, text_refiner.output);
  append_views(v, num_refiner.hidden);
  append_views(v, num_refiner.output);
  append_views(v, encoder);
  append_views(v, classifier_hidden);
  append_views(v, classifier_output);
  return v;
}

ModelParams init_model(const AutoencoderParams& ae, int text_dim, int periods, const TrainConfig& cfg) {
  ModelParams m;
  m.config = cfg;
  m.periods = periods;
  m.autoencoder = ae;
  m.text_refiner = init_refiner(text_dim, cfg.refiner_hidden, cfg.refiner_out, Rng::substream(cfg.seed, 10).next());
  m.num_refiner =
      init_refiner(ae.latent_dim(), cfg.refiner_hidden, cfg.refiner_out, Rng::substream(cfg.seed, 11).next());
  m.index_map = feature_layout(periods, cfg.window, 2 * cfg.refiner_out);
  const auto m_dim = static_cast<Eigen::Index>(m.index_map.size());
  m.classifier.hidden = glorot_dense(m_dim, cfg.classifier_hidden, Rng::substream(cfg.seed, 12).next());
  m.classifier.output = glorot_dense(cfg.classifier_hidden, 1, Rng::substream(cfg.seed, 13).next());
  return m;
}

double bce_loss(std::span<const double> p, std::span<const int> y, double eps) {
  if (p.empty()) throw DataError("bce_loss: empty batch");
  if (p.size() != y.size()) throw DataError("bce_loss: length mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pc = std::clamp(p[i], eps, 1.0 - eps);
    sum += y[i] ? std::log(pc) : std::log(1.0 - pc);
  }
  return -sum / static_cast<double>(p.size());
}

namespace {

std::size_t sliding_count(const std::vector<FeatureIndex>& index_map) {
  return static_cast<std::size_t>(std::count_if(index_map.begin(), index_map.end(),
                                                [](const FeatureIndex& f) { return f.source != Source::Raw; }));
}

bool is_delta_coordinate(const FeatureIndex& idx, SecondOrderMode mode) {
  return idx.order == 2 && mode == SecondOrderMode::Delta;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

Eigen::MatrixXd change_magnitudes(const Eigen::MatrixXd& f, const std::vector<FeatureIndex>& index_map,
                                  SecondOrderMode mode) {
  if (f.cols() != static_cast<Eigen::Index>(index_map.size())) {
    throw DataError("change_magnitudes: feature width does not match the index map");
  }
  Eigen::MatrixXd m(f.rows(), static_cast<Eigen::Index>(sliding_count(index_map)));
  Eigen::Index col = 0;
  for (std::size_t j = 0; j < index_map.size(); ++j) {
    if (index_map[j].source == Source::Raw) continue;
    const auto src = f.col(static_cast<Eigen::Index>(j));
    if (is_delta_coordinate(index_map[j], mode)) {
      m.col(col) = (src.array().abs() / 2.0).min(1.0).matrix();
    } else {
      m.col(col) = ((1.0 - src.array()) / 2.0).matrix();
    }
    ++col;
  }
  return m;
}

double percentile_threshold(std::span<const double> column, double q) {
  if (column.empty()) throw DataError("percentile_threshold: empty column");
  std::vector<double> sorted(column.begin(), column.end());
  const auto k = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(q * k));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(rank - 1), sorted.end());
  return sorted[rank - 1];
}

Eigen::VectorXd percentile_thresholds(const Eigen::MatrixXd& m, double q) {
  Eigen::VectorXd delta(m.cols());
  std::vector<double> column(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) column[static_cast<std::size_t>(i)] = m(i, j);
    delta[j] = percentile_threshold(column, q);
  }
  return delta;
}

namespace {

double label_sign(int y, DistinctionSign sign) {
  const double intent = 1.0 - 2.0 * y;  // +1 for y = 0, -1 for y = 1
  return sign == DistinctionSign::Intent ? intent : -intent;
}

}  // namespace

double distinction_loss(const Eigen::MatrixXd& m, const Eigen::VectorXd& delta, std::span<const int> y,
                        DistinctionSign sign) {
  if (m.rows() != static_cast<Eigen::Index>(y.size()) || m.cols() != delta.size()) {
    throw DataError("distinction_loss: shape mismatch");
  }
  if (m.size() == 0) return 0.0;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    double row = 0.0;
    for (Eigen::Index j = 0; j < m.cols(); ++j) row += std::max(0.0, m(i, j) - delta[j]);
    sum += label_sign(y[static_cast<std::size_t>(i)], sign) * row;
  }
  return sum / static_cast<double>(m.size());
}

LossBreakdown combine_losses(double l_bce, double l_distinction, double lambda, Eigen::VectorXd delta) {
  return {l_bce, l_distinction, l_bce + lambda * l_distinction, std::move(delta)};
}

Eigen::VectorXd classifier_forward(const Classifier& clf, const Eigen::MatrixXd& f) {
  const Eigen::MatrixXd z = affine(clf.output, relu(affine(clf.hidden, f)));
  return z.col(0).unaryExpr([](double v) { return sigmoid(v); });
}

LossBreakdown total_loss(const Eigen::MatrixXd& f, std::span<const int> y, const ModelParams& params) {
  const auto& cfg = params.config;
  const Eigen::VectorXd p = classifier_forward(params.classifier, f);
  const double l_bce = bce_loss(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())), y,
                                cfg.prob_clamp);
  if (!cfg.distinction_enabled) return combine_losses(l_bce, 0.0, cfg.lambda);
  const Eigen::MatrixXd m = change_magnitudes(f, params.index_map, cfg.window.second_order_mode);
  Eigen::VectorXd delta = percentile_thresholds(m, cfg.percentile_q);
  const double l_dist = distinction_loss(m, delta, y, cfg.distinction_sign);
  return combine_losses(l_bce, l_dist, cfg.lambda, std::move(delta));
}

Prediction predict(const ModelParams& params, const Eigen::VectorXd& f) {
  if (f.size() != params.classifier.hidden.in_dim()) throw DataError("predict: feature dimension mismatch");
  const Eigen::MatrixXd row = f.transpose();
  const double p = classifier_forward(params.classifier, row)[0];
  return {p, p >= params.config.decision_threshold ? 1 : 0};
}

Batch make_batch(const std::vector<const StudentInputs*>& students) {
  Batch b;
  b.students = students;
  if (students.empty()) return b;
  b.periods = static_cast<int>(students.front()->text.rows());
  const auto p = static_cast<Eigen::Index>(b.periods);
  const auto n = static_cast<Eigen::Index>(students.size());
  b.text_stack.resize(n * p, students.front()->text.cols());
  b.numeric_stack.resize(n * p, students.front()->numeric.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto* s = students[static_cast<std::size_t>(i)];
    if (s->text.rows() != p || s->numeric.rows() != p) throw DataError("make_batch: inconsistent period count");
    b.text_stack.middleRows(i * p, p) = s->text;
    b.numeric_stack.middleRows(i * p, p) = s->numeric;
    b.labels.push_back(s->label.value_or(0));
  }
  return b;
}

namespace {

void append_kinks(std::vector<signed char>& out, const Eigen::MatrixXd& pre) {
  for (Eigen::Index i = 0; i < pre.size(); ++i) out.push_back(pre.data()[i] > 0.0 ? 1 : 0);
}

// Rows of `stack` for sequence r; synthetic sequences interpolate two real ones.
Eigen::MatrixXd sequence_rows(const Eigen::MatrixXd& stack, const Batch& batch, std::size_t r) {
  const auto p = static_cast<Eigen::Index>(batch.periods);
  const std::size_t n = batch.students.size();
  if (r < n) return stack.middleRows(static_cast<Eigen::Index>(r) * p, p);
  const auto& s = batch.synthetic[r - n];
  const Eigen::MatrixXd x = stack.middleRows(static_cast<Eigen::Index>(s.base) * p, p);
  const Eigen::MatrixXd nn = stack.middleRows(static_cast<Eigen::Index>(s.neighbor) * p, p);
  return x + s.u * (nn - x);
}

}  // namespace

Evaluation evaluate(const ModelParams& params, const Batch& batch, const EvalOptions& options, ModelGrad* grad) {
  const auto& cfg = params.config;
  const auto& win = cfg.window;
  const std::size_t n = batch.students.size();
  const std::size_t total = batch.size();
  if (n == 0) throw DataError("evaluate: empty batch");
  const auto p = static_cast<Eigen::Index>(batch.periods);
  const auto sizes = resolve_window_sizes(win, batch.periods);
  const bool embed_smote = batch.smote_space == SmoteSpace::Embeddings;
  const std::size_t n_seq = embed_smote ? total : n;

  // Embedding path. Intermediates (zs, ht, e, hn) stay empty when a cached
  // later stage makes them unnecessary; the backward pass never sees a cache.
  const StageCache none;
  const StageCache& cache = options.stages ? *options.stages : none;
  if (grad && options.stages) throw std::logic_error("evaluate: stage cache is forward only");
  auto stage = [](const Eigen::MatrixXd* given, Eigen::MatrixXd& own, auto&& compute) -> const Eigen::MatrixXd& {
    if (given) return *given;
    own = compute();
    return own;
  };
  Eigen::MatrixXd zs, ht, e, hn, ht_pre_own, ot_own, e_pre_own, hn_pre_own, on_own;
  const Eigen::MatrixXd& ht_pre =
      stage(cache.text_pre, ht_pre_own, [&] { return affine(params.text_refiner.hidden, batch.text_stack); });
  const Eigen::MatrixXd& ot = stage(cache.text_out, ot_own, [&] {
    ht = relu(ht_pre);
    return affine(params.text_refiner.output, ht);
  });
  const Eigen::MatrixXd& e_pre = stage(cache.encoder_pre, e_pre_own, [&] {
    zs = standardize(params.autoencoder, batch.numeric_stack);
    return affine(params.autoencoder.encoder, zs);
  });
  const Eigen::MatrixXd& hn_pre = stage(cache.numeric_pre, hn_pre_own, [&] {
    e = relu(e_pre);
    return affine(params.num_refiner.hidden, e);
  });
  const Eigen::MatrixXd& on = stage(cache.numeric_out, on_own, [&] {
    hn = relu(hn_pre);
    return affine(params.num_refiner.output, hn);
  });

  const auto m_total = static_cast<Eigen::Index>(params.index_map.size());
  const auto m_slide = static_cast<Eigen::Index>(sliding_count(params.index_map));
  const auto block_len = static_cast<Eigen::Index>(sliding_length(batch.periods, sizes));
  const Eigen::Index d_t = ot.cols();
  const Eigen::Index d_n = on.cols();

  Evaluation ev;
  ev.features.resize(static_cast<Eigen::Index>(total), m_total);
  std::vector<Eigen::MatrixXd> seq_t(n_seq), seq_n(n_seq);
  for (std::size_t r = 0; r < n_seq; ++r) {
    seq_t[r] = sequence_rows(ot, batch, r);
    seq_n[r] = sequence_rows(on, batch, r);
    Eigen::MatrixXd fused(p, d_t + d_n);
    fused << seq_t[r], seq_n[r];
    auto row = ev.features.row(static_cast<Eigen::Index>(r));
    if (win.placement == Placement::PostFusion) {
      row.head(block_len) = sliding_blocks(fused, sizes, win.second_order_mode, win.zero_norm_cosine).transpose();
    } else {
      row.head(block_len) = sliding_blocks(seq_t[r], sizes, win.second_order_mode, win.zero_norm_cosine).transpose();
      row.segment(block_len, block_len) =
          sliding_blocks(seq_n[r], sizes, win.second_order_mode, win.zero_norm_cosine).transpose();
    }
    if (win.include_raw) row.tail(d_t + d_n) = fused.colwise().mean();
  }
  if (!embed_smote) {
    for (std::size_t j = 0; j < batch.synthetic.size(); ++j) {
      const auto& s = batch.synthetic[j];
      const Eigen::RowVectorXd x = ev.features.row(static_cast<Eigen::Index>(s.base));
      const Eigen::RowVectorXd nn = ev.features.row(static_cast<Eigen::Index>(s.neighbor));
      ev.features.row(static_cast<Eigen::Index>(n + j)) = x + s.u * (nn - x);
    }
  }

  // Classifier and losses.
  const Eigen::MatrixXd c_pre = affine(params.classifier.hidden, ev.features);
  const Eigen::MatrixXd c = relu(c_pre);
  const Eigen::MatrixXd z = affine(params.classifier.output, c);
  ev.probability = z.col(0).unaryExpr([](double v) { return sigmoid(v); });
  const std::span<const int> y(batch.labels);
  const double l_bce = bce_loss(
      std::span<const double>(ev.probability.data(), static_cast<std::size_t>(ev.probability.size())), y,
      cfg.prob_clamp);

  double l_dist = 0.0;
  Eigen::MatrixXd m;
  Eigen::VectorXd delta;
  const auto bsz = static_cast<double>(total);
  if (cfg.distinction_enabled) {
    m = change_magnitudes(ev.features, params.index_map, win.second_order_mode);
    delta = options.fixed_delta ? *options.fixed_delta : percentile_thresholds(m, cfg.percentile_q);
    if (options.fixed_hinge) {
      ev.hinge = *options.fixed_hinge;
    } else {
      ev.hinge.resize(m.rows(), m.cols());
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        ev.hinge.col(j) = (m.col(j).array() > delta[j]).cast<double>().matrix();
      }
    }
    double sum = 0.0;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      double row = 0.0;
      for (Eigen::Index j = 0; j < m.cols(); ++j) row += ev.hinge(i, j) * (m(i, j) - delta[j]);
      sum += label_sign(batch.labels[static_cast<std::size_t>(i)], cfg.distinction_sign) * row;
    }
    l_dist = sum / (bsz * static_cast<double>(m_slide));
  }
  ev.loss = combine_losses(l_bce, l_dist, cfg.lambda, delta);

  if (options.record_kinks) {
    ev.kinks.reserve(static_cast<std::size_t>(ht_pre.size() + e_pre.size() + hn_pre.size() + c_pre.size() +
                                              ev.probability.size() + ev.features.size()));
    append_kinks(ev.kinks, ht_pre);
    append_kinks(ev.kinks, e_pre);
    append_kinks(ev.kinks, hn_pre);
    append_kinks(ev.kinks, c_pre);
    for (Eigen::Index i = 0; i < ev.probability.size(); ++i) {
      const double pi = ev.probability[i];
      ev.kinks.push_back(pi < cfg.prob_clamp ? -1 : pi > 1.0 - cfg.prob_clamp ? 1 : 0);
    }
    for (std::size_t j = 0; j < params.index_map.size(); ++j) {
      if (params.index_map[j].order != 2) continue;
      for (Eigen::Index i = 0; i < ev.features.rows(); ++i) {
        const double v = ev.features(i, static_cast<Eigen::Index>(j));
        ev.kinks.push_back(v > 0.0 ? 1 : v < 0.0 ? -1 : 0);
      }
    }
  }

  if (!grad) return ev;

  // dL/dz for the sigmoid output; clamped probabilities have zero slope.
  Eigen::MatrixXd dz(static_cast<Eigen::Index>(total), 1);
  for (std::size_t i = 0; i < total; ++i) {
    const double pi = ev.probability[static_cast<Eigen::Index>(i)];
    const bool clamped = pi < cfg.prob_clamp || pi > 1.0 - cfg.prob_clamp;
    dz(static_cast<Eigen::Index>(i), 0) = clamped ? 0.0 : (pi - batch.labels[i]) / bsz;
  }
  Eigen::MatrixXd dc;
  grad->classifier_output = affine_backward(params.classifier.output, c, dz, &dc);
  Eigen::MatrixXd df;
  grad->classifier_hidden = affine_backward(params.classifier.hidden, ev.features, relu_backward(c_pre, dc), &df);

  if (cfg.distinction_enabled && cfg.lambda != 0.0) {
    const double scale = cfg.lambda / (bsz * static_cast<double>(m_slide));
    Eigen::Index col = 0;
    for (std::size_t j = 0; j < params.index_map.size(); ++j) {
      const auto& idx = params.index_map[j];
      if (idx.source == Source::Raw) continue;
      const bool delta_coord = is_delta_coordinate(idx, win.second_order_mode);
      for (Eigen::Index i = 0; i < df.rows(); ++i) {
        if (ev.hinge(i, col) == 0.0) continue;
        const double f = ev.features(i, static_cast<Eigen::Index>(j));
        double dm_df = -0.5;
        if (delta_coord) dm_df = f > 0.0 ? 0.5 : f < 0.0 ? -0.5 : 0.0;
        df(i, static_cast<Eigen::Index>(j)) +=
            scale * label_sign(batch.labels[static_cast<std::size_t>(i)], cfg.distinction_sign) * ev.hinge(i, col) *
            dm_df;
      }
      ++col;
    }
  }

  if (!embed_smote) {
    for (std::size_t j = 0; j < batch.synthetic.size(); ++j) {
      const auto& s = batch.synthetic[j];
      const Eigen::RowVectorXd g = df.row(static_cast<Eigen::Index>(n + j));
      df.row(static_cast<Eigen::Index>(s.base)) += (1.0 - s.u) * g;
      df.row(static_cast<Eigen::Index>(s.neighbor)) += s.u * g;
    }
  }

  Eigen::MatrixXd dseq_t = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_seq) * p, d_t);
  Eigen::MatrixXd dseq_n = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_seq) * p, d_n);
  for (std::size_t r = 0; r < n_seq; ++r) {
    const auto ri = static_cast<Eigen::Index>(r);
    const Eigen::VectorXd drow = df.row(ri).transpose();
    Eigen::MatrixXd d_t_rows, d_n_rows;
    if (win.placement == Placement::PostFusion) {
      Eigen::MatrixXd fused(p, d_t + d_n);
      fused << seq_t[r], seq_n[r];
      const Eigen::MatrixXd dv =
          sliding_blocks_backward(fused, sizes, win.second_order_mode, win.zero_norm_cosine, drow.head(block_len));
      d_t_rows = dv.leftCols(d_t);
      d_n_rows = dv.rightCols(d_n);
    } else {
      d_t_rows = sliding_blocks_backward(seq_t[r], sizes, win.second_order_mode, win.zero_norm_cosine,
                                         drow.head(block_len));
      d_n_rows = sliding_blocks_backward(seq_n[r], sizes, win.second_order_mode, win.zero_norm_cosine,
                                         drow.segment(block_len, block_len));
    }
    if (win.include_raw) {
      const Eigen::RowVectorXd d_pool = drow.tail(d_t + d_n).transpose() / static_cast<double>(p);
      d_t_rows.rowwise() += d_pool.head(d_t);
      d_n_rows.rowwise() += d_pool.tail(d_n);
    }
    dseq_t.middleRows(ri * p, p) = d_t_rows;
    dseq_n.middleRows(ri * p, p) = d_n_rows;
  }

  Eigen::MatrixXd d_ot = dseq_t.topRows(static_cast<Eigen::Index>(n) * p);
  Eigen::MatrixXd d_on = dseq_n.topRows(static_cast<Eigen::Index>(n) * p);
  if (embed_smote) {
    for (std::size_t j = 0; j < batch.synthetic.size(); ++j) {
      const auto& s = batch.synthetic[j];
      const auto src = static_cast<Eigen::Index>(n + j) * p;
      d_ot.middleRows(static_cast<Eigen::Index>(s.base) * p, p) += (1.0 - s.u) * dseq_t.middleRows(src, p);
      d_ot.middleRows(static_cast<Eigen::Index>(s.neighbor) * p, p) += s.u * dseq_t.middleRows(src, p);
      d_on.middleRows(static_cast<Eigen::Index>(s.base) * p, p) += (1.0 - s.u) * dseq_n.middleRows(src, p);
      d_on.middleRows(static_cast<Eigen::Index>(s.neighbor) * p, p) += s.u * dseq_n.middleRows(src, p);
    }
  }

  Eigen::MatrixXd d_ht;
  grad->text_refiner.output = affine_backward(params.text_refiner.output, ht, d_ot, &d_ht);
  grad->text_refiner.hidden =
      affine_backward(params.text_refiner.hidden, batch.text_stack, relu_backward(ht_pre, d_ht), nullptr);
  Eigen::MatrixXd d_hn, d_e;
  grad->num_refiner.output = affine_backward(params.num_refiner.output, hn, d_on, &d_hn);
  grad->num_refiner.hidden = affine_backward(params.num_refiner.hidden, e, relu_backward(hn_pre, d_hn), &d_e);
  if (cfg.freeze_autoencoder) {
    grad->encoder = {Eigen::MatrixXd::Zero(params.autoencoder.encoder.weight.rows(),
                                           params.autoencoder.encoder.weight.cols()),
                     Eigen::VectorXd::Zero(params.autoencoder.encoder.bias.size())};
  } else {
    grad->encoder = affine_backward(params.autoencoder.encoder, zs, relu_backward(e_pre, d_e), nullptr);
  }
  return ev;
}

Eigen::MatrixXd model_features(const ModelParams& params, const std::vector<const StudentInputs*>& students) {
  const Batch batch = make_batch(students);
  ModelParams copy_free = params;
  copy_free.config.distinction_enabled = false;
  return evaluate(copy_free, batch, {}, nullptr).features;
}

std::vector<Prediction> predict_students(const ModelParams& params, const std::vector<const StudentInputs*>& students) {
  std::vector<Prediction> out;
  if (students.empty()) return out;
  const Eigen::MatrixXd f = model_features(params, students);
  const Eigen::VectorXd p = classifier_forward(params.classifier, f);
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    out.push_back({p[i], p[i] >= params.config.decision_threshold ? 1 : 0});
  }
  return out;
}

namespace {

void apply_step(ModelParams& params, const ModelGrad& g, double lr) {
  sgd_step(params.text_refiner.hidden, g.text_refiner.hidden, lr);
  sgd_step(params.text_refiner.output, g.text_refiner.output, lr);
  sgd_step(params.num_refiner.hidden, g.num_refiner.hidden, lr);
  sgd_step(params.num_refiner.output, g.num_refiner.output, lr);
  if (!params.config.freeze_autoencoder) sgd_step(params.autoencoder.encoder, g.encoder, lr);
  sgd_step(params.classifier.hidden, g.classifier_hidden, lr);
  sgd_step(params.classifier.output, g.classifier_output, lr);
}

}  // namespace

TrainResult train_model(const std::vector<const StudentInputs*>& train, const std::vector<const StudentInputs*>& val,
                        const AutoencoderParams& ae, const TrainConfig& cfg) {
  if (train.empty()) throw DataError("train_model: empty training set");
  if (cfg.epochs < 0) throw UsageError("epochs must be >= 0");
  int positives = 0;
  for (const auto* s : train) {
    if (!s->label) throw DataError("train_model: unlabeled student `" + s->student_id + "` in training set");
    positives += *s->label;
  }
  if (positives == 0 || positives == static_cast<int>(train.size())) {
    throw DataError("train_model: training set must contain both classes");
  }

  TrainResult result;
  result.params = init_model(ae, static_cast<int>(train.front()->text.cols()),
                             static_cast<int>(train.front()->text.rows()), cfg);
  auto& params = result.params;
  Batch batch = make_batch(train);
  batch.smote_space = cfg.smote_space;

  if (cfg.smote) {
    LabeledVectorSet set;
    set.labels = batch.labels;
    if (cfg.smote_space == SmoteSpace::Features) {
      set.rows = model_features(params, train);
    } else {
      // Flattened fused sequences.
      const auto seqs = build_sequences(
          [&] {
            std::vector<StudentInputs> copy;
            for (const auto* s : train) copy.push_back(*s);
            return copy;
          }(),
          params.autoencoder, params.text_refiner, params.num_refiner);
      const auto p = seqs.front().text.rows();
      const auto d = seqs.front().text.cols() + seqs.front().num.cols();
      set.rows.resize(static_cast<Eigen::Index>(seqs.size()), p * d);
      for (std::size_t i = 0; i < seqs.size(); ++i) {
        const Eigen::MatrixXd v = fuse(seqs[i]).v;
        for (Eigen::Index r = 0; r < p; ++r) set.rows.row(static_cast<Eigen::Index>(i)).segment(r * d, d) = v.row(r);
      }
    }
    const auto smote = smote_balance(set, cfg.smote_k, Rng::substream(cfg.seed, 20).next());
    batch.synthetic = smote.synthetic;
    batch.labels = smote.set.labels;
    result.synthetic_rows = smote.synthetic.size();
  }

  const Batch val_batch = make_batch(val);
  std::vector<int> val_labels;
  for (const auto* s : val) val_labels.push_back(s->label.value_or(0));

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    ModelGrad g;
    const auto ev = evaluate(params, batch, {}, &g);
    if (!std::isfinite(ev.loss.l_total)) {
      throw NumericError("train_model: non-finite loss at epoch " + std::to_string(epoch));
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = ev.loss;
    int correct = 0;
    for (std::size_t i = 0; i < train.size(); ++i) {
      const int pred = ev.probability[static_cast<Eigen::Index>(i)] >= cfg.decision_threshold ? 1 : 0;
      correct += pred == batch.labels[i];
    }
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(train.size());
    if (!val.empty()) {
      const Eigen::MatrixXd vf = evaluate([&] {
                                            ModelParams q = params;
                                            q.config.distinction_enabled = false;
                                            return q;
                                          }(),
                                          val_batch, {}, nullptr)
                                     .features;
      const Eigen::VectorXd vp = classifier_forward(params.classifier, vf);
      rec.val_bce = bce_loss(std::span<const double>(vp.data(), static_cast<std::size_t>(vp.size())), val_labels,
                             cfg.prob_clamp);
    }
    result.history.push_back(std::move(rec));
    apply_step(params, g, cfg.lr);
  }
  return result;
}

GradCheckReport gradient_check(const ModelParams& params, const Batch& batch, double step, double floor) {
  ModelParams work = params;
  ModelGrad grad;
  EvalOptions base_opts;
  base_opts.record_kinks = true;
  const auto base = evaluate(work, batch, base_opts, &grad);

  // Unperturbed stages, computed exactly as evaluate does. Perturbing one
  // weight W(r, c) of a layer y = x W^T + b moves only column r of y, by
  // step * x(:, c); stages downstream of it in the same modality are
  // recomputed and everything else is reused.
  const Eigen::MatrixXd ht_pre = affine(work.text_refiner.hidden, batch.text_stack);
  const Eigen::MatrixXd ht = relu(ht_pre);
  const Eigen::MatrixXd ot = affine(work.text_refiner.output, ht);
  const Eigen::MatrixXd zs = standardize(work.autoencoder, batch.numeric_stack);
  const Eigen::MatrixXd e_pre = affine(work.autoencoder.encoder, zs);
  const Eigen::MatrixXd e = relu(e_pre);
  const Eigen::MatrixXd hn_pre = affine(work.num_refiner.hidden, e);
  const Eigen::MatrixXd hn = relu(hn_pre);
  const Eigen::MatrixXd on = affine(work.num_refiner.output, hn);
  const StageCache base_stages{&ht_pre, &ot, &e_pre, &hn_pre, &on};

  struct Layer {
    const Dense* dense;
    const Eigen::MatrixXd* input;
    const Eigen::MatrixXd* output;
    const Eigen::MatrixXd* StageCache::*slot;
    std::vector<const Eigen::MatrixXd* StageCache::*> downstream;
  };
  // Same order as ModelParams::views(), one entry per weight/bias pair.
  const std::vector<Layer> layers = {
      {&work.text_refiner.hidden, &batch.text_stack, &ht_pre, &StageCache::text_pre, {&StageCache::text_out}},
      {&work.text_refiner.output, &ht, &ot, &StageCache::text_out, {}},
      {&work.num_refiner.hidden, &e, &hn_pre, &StageCache::numeric_pre, {&StageCache::numeric_out}},
      {&work.num_refiner.output, &hn, &on, &StageCache::numeric_out, {}},
      {&work.autoencoder.encoder, &zs, &e_pre, &StageCache::encoder_pre,
       {&StageCache::numeric_pre, &StageCache::numeric_out}},
  };

  EvalOptions opts;
  opts.fixed_delta = &base.loss.delta_thresholds;
  opts.fixed_hinge = &base.hinge;
  opts.record_kinks = true;
  if (!work.config.distinction_enabled) {
    opts.fixed_delta = nullptr;
    opts.fixed_hinge = nullptr;
  }

  auto views = work.views();
  auto gviews = grad.views();
  // Encoder tensors sit at positions 8 and 9 of the view list.
  constexpr std::size_t kEncoderWeight = 8;
  constexpr std::size_t kEncoderBias = 9;

  GradCheckReport report;
  Eigen::MatrixXd moved;
  for (std::size_t t = 0; t < views.size(); ++t) {
    if (work.config.freeze_autoencoder && (t == kEncoderWeight || t == kEncoderBias)) continue;
    const Layer* layer = t / 2 < layers.size() ? &layers[t / 2] : nullptr;
    const bool is_bias = t % 2 == 1;
    StageCache stages = base_stages;
    if (layer) {
      stages.*(layer->slot) = &moved;
      for (auto slot : layer->downstream) stages.*slot = nullptr;
    }
    opts.stages = &stages;

    auto shifted = [&](std::size_t i, double h) {
      if (!layer) {
        views[t][i] += h;
        return evaluate(work, batch, opts, nullptr);
      }
      moved = *layer->output;
      if (is_bias) {
        moved.col(static_cast<Eigen::Index>(i)).array() += h;
      } else {
        const auto rows = layer->dense->weight.rows();
        const auto r = static_cast<Eigen::Index>(i) % rows;
        const auto c = static_cast<Eigen::Index>(i) / rows;
        moved.col(r) += h * layer->input->col(c);
      }
      return evaluate(work, batch, opts, nullptr);
    };

    for (std::size_t i = 0; i < views[t].size(); ++i) {
      const double orig = views[t][i];
      const auto plus = shifted(i, step);
      views[t][i] = orig;
      const auto minus = shifted(i, -step);
      views[t][i] = orig;
      if (plus.kinks != base.kinks || minus.kinks != base.kinks) {
        ++report.skipped;
        continue;
      }
      const double numeric = (plus.loss.l_total - minus.loss.l_total) / (2.0 * step);
      const double analytic = gviews[t][i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
      report.max_relative_error = std::max(report.max_relative_error, std::abs(analytic - numeric) / denom);
      ++report.checked;
    }
  }
  return report;
}

}  // namespace dmsw
