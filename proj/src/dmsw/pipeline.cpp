#include "dmsw/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "dmsw/csv.hpp"
#include "dmsw/error.hpp"
#include "dmsw/rng.hpp"
#include "dmsw/synth.hpp"

namespace dmsw {

using nlohmann::json;

namespace {

enum SeedStream : std::uint64_t { kSplitStream = 1, kAutoencoderStream = 3, kBaselineStream = 4 };

std::uint64_t stream_seed(const RunConfig& cfg, std::uint64_t stream) { return Rng::substream(cfg.seed, stream).next(); }

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string fixed(double v, int digits = 4) {
  if (!std::isfinite(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

std::string join(const std::vector<int>& v, const char* sep = ",") {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + std::to_string(v[i]);
  return out;
}

}  // namespace

std::vector<const StudentInputs*> Prepared::rows(const std::vector<std::size_t>& labeled_positions) const {
  std::vector<const StudentInputs*> out;
  out.reserve(labeled_positions.size());
  for (auto i : labeled_positions) out.push_back(&inputs[labeled[i]]);
  return out;
}

std::vector<const StudentInputs*> Prepared::labeled_rows() const {
  std::vector<const StudentInputs*> out;
  for (auto i : labeled) out.push_back(&inputs[i]);
  return out;
}

std::vector<int> Prepared::labels_at(const std::vector<std::size_t>& labeled_positions) const {
  std::vector<int> out;
  for (auto i : labeled_positions) out.push_back(labels[i]);
  return out;
}

Cohort load_run_cohort(const RunConfig& cfg) {
  if (cfg.data.empty()) throw UsageError("no cohort directory given (set data)");
  return load_cohort_dir(cfg.data, cfg.periods, cfg.subjects);
}

Prepared prepare(Cohort cohort, const RunConfig& cfg) {
  Prepared prep;
  prep.cohort = std::move(cohort);
  prep.stats = compute_score_stats(prep.cohort, make_weights(cfg.omega1, cfg.omega2));
  TextSource text;
  text.hash = {cfg.text_dim, cfg.hash_seed};
  if (!cfg.text_embeddings.empty()) {
    prep.precomputed = load_precomputed_embeddings(cfg.text_embeddings, cfg.text_dim, prep.cohort);
    text.precomputed = &*prep.precomputed;
  }
  prep.inputs = prepare_inputs(prep.cohort, prep.stats, text);
  for (std::size_t i = 0; i < prep.inputs.size(); ++i) {
    if (prep.inputs[i].label) {
      prep.labeled.push_back(i);
      prep.labels.push_back(*prep.inputs[i].label);
    }
  }
  if (prep.labeled.size() < 2) throw DataError("need at least two labeled students");
  prep.split = stratified_split(prep.labels, cfg.test_fraction, stream_seed(cfg, kSplitStream));
  if (prep.split.train.empty()) throw DataError("training split is empty");

  std::vector<StudentInputs> train_inputs;
  for (auto i : prep.split.train) train_inputs.push_back(prep.inputs[prep.labeled[i]]);
  prep.autoencoder = autoencoder_train(stack_numeric(train_inputs), cfg.latent_dim, cfg.ae_epochs, cfg.ae_lr,
                                       stream_seed(cfg, kAutoencoderStream));
  return prep;
}

Eigen::MatrixXd flatten_numeric(const std::vector<const StudentInputs*>& students) {
  if (students.empty()) return {};
  const auto& first = students.front()->numeric;
  Eigen::MatrixXd x(static_cast<Eigen::Index>(students.size()), first.size());
  for (std::size_t i = 0; i < students.size(); ++i) {
    const auto& n = students[i]->numeric;
    for (Eigen::Index p = 0; p < n.rows(); ++p) x.row(static_cast<Eigen::Index>(i)).segment(p * n.cols(), n.cols()) = n.row(p);
  }
  return x;
}

Eigen::MatrixXd initial_features(const Prepared& prep, const RunConfig& cfg,
                                 const std::vector<const StudentInputs*>& students,
                                 std::vector<FeatureIndex>* index_map) {
  const ModelParams params = init_model(prep.autoencoder.params, cfg.text_dim, cfg.periods, train_config(cfg));
  if (index_map != nullptr) *index_map = params.index_map;
  return model_features(params, students);
}

TrainOutcome train_prepared(const Prepared& prep, const RunConfig& cfg) {
  TrainOutcome out;
  const auto train = prep.train_rows();
  const auto test = prep.test_rows();
  out.result = train_model(train, test, prep.autoencoder.params, train_config(cfg));
  std::vector<int> predicted;
  for (const auto& p : predict_students(out.result.params, test)) predicted.push_back(p.label);
  if (!test.empty()) out.test = classification_metrics(predicted, prep.labels_at(prep.split.test));
  out.model.config = cfg;
  out.model.stats = prep.stats;
  out.model.params = out.result.params;
  return out;
}

namespace {

MetricsReport test_metrics(const ModelParams& params, const Prepared& prep) {
  std::vector<int> predicted;
  for (const auto& p : predict_students(params, prep.test_rows())) predicted.push_back(p.label);
  return classification_metrics(predicted, prep.labels_at(prep.split.test));
}

std::vector<std::string> ids_of(const std::vector<const StudentInputs*>& rows) {
  std::vector<std::string> ids;
  for (const auto* s : rows) ids.push_back(s->student_id);
  return ids;
}

}  // namespace

EvaluateOutcome evaluate_prepared(const Prepared& prep, const RunConfig& cfg) {
  if (prep.split.test.empty()) throw DataError("test split is empty");
  EvaluateOutcome out;
  const auto train = prep.train_rows();
  const auto test = prep.test_rows();
  const auto y_train = prep.labels_at(prep.split.train);
  const auto y_test = prep.labels_at(prep.split.test);
  const TrainConfig tc = train_config(cfg);

  const auto full = train_model(train, {}, prep.autoencoder.params, tc);
  out.dmsw = test_metrics(full.params, prep);
  out.final_loss = full.history.empty() ? LossBreakdown{} : full.history.back().loss;

  TrainConfig plain = tc;
  plain.lambda = 0.0;
  const auto ablated = train_model(train, {}, prep.autoencoder.params, plain);
  out.dmsw_no_distinction = test_metrics(ablated.params, prep);
  out.final_loss_no_distinction = ablated.history.empty() ? LossBreakdown{} : ablated.history.back().loss;

  const auto baseline_seed = stream_seed(cfg, kBaselineStream);
  LogRegConfig lr = cfg.logreg;
  lr.smote = tc.smote;
  lr.smote_k = tc.smote_k;
  out.logreg_num = baseline_logreg(flatten_numeric(train), y_train, flatten_numeric(test), y_test, lr, baseline_seed);
  out.logreg_bi = baseline_logreg(initial_features(prep, cfg, train), y_train, initial_features(prep, cfg, test), y_test,
                                  lr, baseline_seed);
  out.ols = ols_prepared(prep, cfg);
  out.test_ids = ids_of(test);
  out.baseline_test_ids = ids_of(test);
  return out;
}

GroupedOlsReport ols_prepared(const Prepared& prep, const RunConfig& cfg) {
  std::vector<FeatureIndex> index_map;
  const Eigen::MatrixXd f = initial_features(prep, cfg, prep.labeled_rows(), &index_map);
  return grouped_ols_report(f, index_map, prep.labels);
}

std::vector<int> ablation_base_sizes(const RunConfig& cfg) {
  std::vector<int> sizes = cfg.ablation_sizes;
  if (sizes.empty()) sizes = {1, 3, cfg.periods >= 7 ? 6 : cfg.periods - 1};
  std::set<int> unique;
  for (int a : sizes) {
    if (a >= 1 && a < cfg.periods) unique.insert(a);
  }
  return {unique.begin(), unique.end()};
}

std::vector<std::vector<int>> window_combos(const std::vector<int>& sizes) {
  std::vector<std::vector<int>> combos;
  const std::size_t n = sizes.size();
  for (std::size_t k = 1; k <= n; ++k) {
    std::vector<bool> pick(n, false);
    std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(k), true);
    do {
      std::vector<int> combo;
      for (std::size_t i = 0; i < n; ++i) {
        if (pick[i]) combo.push_back(sizes[i]);
      }
      combos.push_back(combo);
    } while (std::prev_permutation(pick.begin(), pick.end()));
  }
  return combos;
}

AblationTable ablation_prepared(const Prepared& prep, const RunConfig& cfg) {
  AblationTable table;
  const auto combos = window_combos(ablation_base_sizes(cfg));
  const auto train = prep.train_rows();
  for (Placement placement : {Placement::PostFusion, Placement::PreFusion}) {
    for (const auto& combo : combos) {
      for (double lambda : cfg.ablation_lambdas) {
        AblationCell cell{placement, combo, lambda, std::nullopt, {}};
        try {
          RunConfig cell_cfg = cfg;
          cell_cfg.train.window.placement = placement;
          cell_cfg.train.window.window_sizes = combo;
          cell_cfg.train.lambda = lambda;
          const auto result = train_model(train, {}, prep.autoencoder.params, train_config(cell_cfg));
          cell.metrics = test_metrics(result.params, prep);
        } catch (const Error& e) {
          cell.error = e.what();
        }
        table.cells.push_back(std::move(cell));
      }
    }
  }
  std::map<std::tuple<int, double, int>, ComboAverage> averages;
  double sum[2] = {0.0, 0.0};
  int count[2] = {0, 0};
  for (const auto& cell : table.cells) {
    if (!cell.metrics) continue;
    const int pl = cell.placement == Placement::PostFusion ? 0 : 1;
    auto& avg = averages[{pl, cell.lambda, static_cast<int>(cell.sizes.size())}];
    avg.placement = cell.placement;
    avg.lambda = cell.lambda;
    avg.combo_size = static_cast<int>(cell.sizes.size());
    ++avg.cells;
    avg.mean_accuracy += cell.metrics->accuracy;
    avg.mean_f1 += cell.metrics->f1;
    sum[pl] += cell.metrics->f1;
    ++count[pl];
  }
  for (auto& [key, avg] : averages) {
    avg.mean_accuracy /= avg.cells;
    avg.mean_f1 /= avg.cells;
    table.averages.push_back(avg);
  }
  table.post_fusion_mean_f1 = count[0] ? sum[0] / count[0] : std::nan("");
  table.pre_fusion_mean_f1 = count[1] ? sum[1] / count[1] : std::nan("");
  return table;
}

GradCheckReport gradcheck_run(const RunConfig& cfg) {
  Cohort cohort;
  if (cfg.data.empty()) {
    SynthConfig sc = synth_config(cfg);
    sc.n_students = cfg.gradcheck_students;
    cohort = generate_cohort(sc).cohort;
  } else {
    cohort = load_run_cohort(cfg);
  }
  const auto stats = compute_score_stats(cohort, make_weights(cfg.omega1, cfg.omega2));
  TextSource text;
  text.hash = {cfg.text_dim, cfg.hash_seed};
  std::optional<PrecomputedEmbeddings> precomputed;
  if (!cfg.text_embeddings.empty()) {
    precomputed = load_precomputed_embeddings(cfg.text_embeddings, cfg.text_dim, cohort);
    text.precomputed = &*precomputed;
  }
  auto inputs = prepare_inputs(cohort, stats, text);
  std::vector<StudentInputs> batch_inputs;
  for (auto& s : inputs) {
    if (s.label && static_cast<int>(batch_inputs.size()) < cfg.gradcheck_students) batch_inputs.push_back(std::move(s));
  }
  if (batch_inputs.size() < 2) throw DataError("gradcheck needs at least two labeled students");
  const auto ae = autoencoder_train(stack_numeric(batch_inputs), cfg.latent_dim, std::min(cfg.ae_epochs, 50), cfg.ae_lr,
                                    stream_seed(cfg, kAutoencoderStream));
  const ModelParams params = init_model(ae.params, cfg.text_dim, cfg.periods, train_config(cfg));
  std::vector<const StudentInputs*> rows;
  for (const auto& s : batch_inputs) rows.push_back(&s);
  return gradient_check(params, make_batch(rows));
}

// ---------------------------------------------------------------------------
// Reports

namespace {

json metrics_json(const MetricsReport& m) {
  return {{"accuracy", number(m.accuracy)}, {"precision", number(m.precision)}, {"recall", number(m.recall)},
          {"f1", number(m.f1)},             {"tp", m.tp},                       {"fp", m.fp},
          {"tn", m.tn},                     {"fn", m.fn}};
}

json loss_json(const LossBreakdown& l) {
  return {{"l_bce", number(l.l_bce)}, {"l_distinction", number(l.l_distinction)}, {"l_total", number(l.l_total)}};
}

std::string source_label(Source s) {
  switch (s) {
    case Source::Text: return "text";
    case Source::Numeric: return "numeric";
    case Source::Raw: return "raw";
    default: return "fused";
  }
}

json ols_json(const GroupedOlsReport& r) {
  const auto& f = r.fit;
  json coefficients = json::array();
  for (std::size_t i = 0; i < f.names.size(); ++i) {
    const auto e = static_cast<Eigen::Index>(i);
    coefficients.push_back({{"name", f.names[i]},
                            {"coef", number(f.coef[e])},
                            {"std_err", number(f.std_err[e])},
                            {"t", number(f.t_stat[e])},
                            {"p", number(f.p_value[e])}});
  }
  json groups = json::array();
  for (const auto& g : r.groups) {
    groups.push_back({{"label", g.label},
                      {"source", source_label(g.source)},
                      {"window", g.window},
                      {"order", g.order},
                      {"members", g.members.size()},
                      {"aliased", g.aliased},
                      {"mean_coef", number(g.mean_coef)},
                      {"mean_std_err", number(g.mean_std_err)},
                      {"mean_p_value", number(g.mean_p_value)}});
  }
  return {{"n", f.n},
          {"k", f.k},
          {"r_squared", number(f.r_squared)},
          {"adj_r_squared", number(f.adj_r_squared)},
          {"f_statistic", number(f.f_statistic)},
          {"f_p_value", number(f.f_p_value)},
          {"aliased_columns", r.aliased_columns},
          {"coefficients", coefficients},
          {"groups", groups}};
}

std::string metrics_row(const std::string& name, const MetricsReport& m) {
  return pad(name, 28) + pad(fixed(m.accuracy), 10) + pad(fixed(m.precision), 11) + pad(fixed(m.recall), 10) +
         fixed(m.f1) + "\n";
}

std::string metrics_header() { return pad("model", 28) + pad("accuracy", 10) + pad("precision", 11) + pad("recall", 10) + "f1\n"; }

std::string ols_text(const GroupedOlsReport& r) {
  std::ostringstream out;
  const auto& f = r.fit;
  out << "OLS: n=" << f.n << " k=" << f.k << " R^2=" << fixed(f.r_squared) << " adj R^2=" << fixed(f.adj_r_squared)
      << " F=" << fixed(f.f_statistic, 3) << " p(F)=" << sci(f.f_p_value) << "\n";
  if (!r.aliased_columns.empty()) out << "aliased columns left out: " << r.aliased_columns.size() << "\n";
  out << pad("group", 44) << pad("n", 4) << pad("mean coef", 12) << pad("mean se", 12) << "mean p\n";
  for (const auto& g : r.groups) {
    out << pad(g.label, 44) << pad(std::to_string(g.members.size() - static_cast<std::size_t>(g.aliased)), 4)
        << pad(fixed(g.mean_coef), 12) << pad(fixed(g.mean_std_err), 12) << fixed(g.mean_p_value) << "\n";
  }
  return out.str();
}

std::string config_text(const RunConfig& cfg) {
  std::string out;
  const json echo = config_echo(cfg);
  for (const auto& [key, value] : echo.items()) out += "# " + key + " = " + value.dump() + "\n";
  return out;
}

Report make_report(std::string_view command, const RunConfig& cfg) {
  Report r;
  r.command = command;
  const std::string hash = config_hash(cfg);
  r.stem = r.command + "_seed" + std::to_string(cfg.seed) + "_" + hash;
  r.document = {{"format", "dmsw-report/1"}, {"command", r.command}, {"config_hash", hash}, {"config", config_echo(cfg)}};
  r.text = "# dmsw " + r.command + "\n# config_hash = " + hash + "\n" + config_text(cfg) + "\n";
  return r;
}

std::filesystem::path out_dir(const RunConfig& cfg) {
  if (cfg.out.empty()) throw UsageError("no output directory given (set out)");
  std::filesystem::create_directories(cfg.out);
  return cfg.out;
}

Report synth_command(const RunConfig& cfg) {
  auto report = make_report("synth", cfg);
  const auto synth = generate_cohort(synth_config(cfg));
  const auto dir = out_dir(cfg);
  write_cohort(synth.cohort, dir.string());
  write_patterns(synth.patterns, (dir / kPatternsFile).string());
  std::map<std::string, std::pair<int, int>> by_pattern;
  for (std::size_t i = 0; i < synth.patterns.size(); ++i) {
    auto& c = by_pattern[std::string(to_string(synth.patterns[i].pattern))];
    ++c.first;
    c.second += synth.cohort.students[i].label.value_or(0);
  }
  json patterns = json::object();
  int dropouts = 0;
  report.text += pad("pattern", 28) + pad("students", 10) + "dropouts\n";
  for (const auto& [name, c] : by_pattern) {
    patterns[name] = {{"students", c.first}, {"dropouts", c.second}};
    dropouts += c.second;
    report.text += pad(name, 28) + pad(std::to_string(c.first), 10) + std::to_string(c.second) + "\n";
  }
  report.document["students"] = synth.cohort.students.size();
  report.document["dropouts"] = dropouts;
  report.document["patterns"] = patterns;
  report.text += "students " + std::to_string(synth.cohort.students.size()) + ", dropouts " + std::to_string(dropouts) + "\n";
  return report;
}

std::vector<SlidingFeatures> as_sliding(const std::vector<const StudentInputs*>& rows, const Eigen::MatrixXd& f,
                                        const std::vector<FeatureIndex>& index_map) {
  std::vector<SlidingFeatures> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.push_back({rows[i]->student_id, f.row(static_cast<Eigen::Index>(i)).transpose(), index_map});
  }
  return out;
}

Report preprocess_command(const RunConfig& cfg) {
  auto report = make_report("preprocess", cfg);
  const Prepared prep = prepare(load_run_cohort(cfg), cfg);
  const auto dir = out_dir(cfg);

  {
    std::ofstream out(dir / "numeric.csv", std::ios::binary);
    if (!out) throw DataError("cannot write " + (dir / "numeric.csv").string());
    std::vector<std::string> header = {"student_id", "period"};
    for (const auto& s : cfg.subjects) {
      header.push_back(s + "_relative");
      header.push_back(s + "_rank");
      header.push_back(s + "_composite");
    }
    header.push_back("imputed");
    csv::write_row(out, header);
    for (const auto& s : prep.inputs) {
      for (Eigen::Index p = 0; p < s.numeric.rows(); ++p) {
        std::vector<std::string> row = {s.student_id, std::to_string(p + 1)};
        for (Eigen::Index c = 0; c < s.numeric.cols(); ++c) row.push_back(csv::format_double(s.numeric(p, c)));
        row.push_back(s.imputed[static_cast<std::size_t>(p)] ? "1" : "0");
        csv::write_row(out, row);
      }
    }
  }
  {
    std::ofstream out(dir / "summaries.csv", std::ios::binary);
    if (!out) throw DataError("cannot write " + (dir / "summaries.csv").string());
    csv::write_row(out, {"student_id", "period", "text"});
    for (const auto& rec : prep.cohort.students) {
      for (int p = 1; p <= cfg.periods; ++p) {
        csv::write_row(out, {rec.student_id, std::to_string(p), summarize_period(rec.student_id, p, rec.events_in(p)).text});
      }
    }
  }
  std::vector<const StudentInputs*> all;
  std::vector<std::optional<int>> labels;
  for (const auto& s : prep.inputs) {
    all.push_back(&s);
    labels.push_back(s.label);
  }
  std::vector<FeatureIndex> index_map;
  const Eigen::MatrixXd f = initial_features(prep, cfg, all, &index_map);
  write_features_csv((dir / "features.csv").string(), as_sliding(all, f, index_map), labels);

  int imputed = 0;
  for (const auto& s : prep.inputs) imputed += static_cast<int>(std::count(s.imputed.begin(), s.imputed.end(), true));
  report.document["students"] = prep.inputs.size();
  report.document["labeled"] = prep.labeled.size();
  report.document["imputed_periods"] = imputed;
  report.document["feature_columns"] = index_map.size();
  report.document["autoencoder_loss"] = {{"initial", number(prep.autoencoder.loss_curve.front())},
                                         {"final", number(prep.autoencoder.loss_curve.back())}};
  report.text += "students " + std::to_string(prep.inputs.size()) + ", labeled " + std::to_string(prep.labeled.size()) +
                 ", imputed periods " + std::to_string(imputed) + "\n";
  report.text += "feature columns " + std::to_string(index_map.size()) + "\n";
  report.text += "autoencoder loss " + fixed(prep.autoencoder.loss_curve.front(), 6) + " -> " +
                 fixed(prep.autoencoder.loss_curve.back(), 6) + "\n";
  report.text += "wrote numeric.csv, summaries.csv, features.csv\n";
  return report;
}

Report train_command(const RunConfig& cfg) {
  if (cfg.model.empty()) throw UsageError("no model path given (set model)");
  auto report = make_report("train", cfg);
  const Prepared prep = prepare(load_run_cohort(cfg), cfg);
  const auto outcome = train_prepared(prep, cfg);
  if (const auto parent = std::filesystem::path(cfg.model).parent_path(); !parent.empty()) {
    std::filesystem::create_directories(parent);
  }
  save_model(outcome.model, cfg.model);

  json history = json::array();
  for (const auto& e : outcome.result.history) {
    json row = loss_json(e.loss);
    row["epoch"] = e.epoch;
    row["train_accuracy"] = number(e.train_accuracy);
    row["val_bce"] = e.val_bce ? number(*e.val_bce) : json(nullptr);
    history.push_back(row);
  }
  report.document["history"] = history;
  report.document["synthetic_rows"] = outcome.result.synthetic_rows;
  report.document["test"] = metrics_json(outcome.test);
  report.document["train_size"] = prep.split.train.size();
  report.document["test_size"] = prep.split.test.size();
  report.text += "train " + std::to_string(prep.split.train.size()) + " students (+" +
                 std::to_string(outcome.result.synthetic_rows) + " synthetic), test " +
                 std::to_string(prep.split.test.size()) + "\n";
  report.text += pad("epoch", 8) + pad("l_bce", 12) + pad("l_distinct", 12) + pad("l_total", 12) + "train_acc\n";
  const auto& h = outcome.result.history;
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (i % 20 != 0 && i + 1 != h.size()) continue;
    report.text += pad(std::to_string(h[i].epoch), 8) + pad(fixed(h[i].loss.l_bce, 6), 12) +
                   pad(fixed(h[i].loss.l_distinction, 6), 12) + pad(fixed(h[i].loss.l_total, 6), 12) +
                   fixed(h[i].train_accuracy) + "\n";
  }
  report.text += "\n" + metrics_header() + metrics_row("dmsw (test)", outcome.test);
  return report;
}

Report predict_command(const RunConfig& cfg) {
  if (cfg.model.empty()) throw UsageError("no model path given (set model)");
  const SavedModel model = load_model(cfg.model);
  RunConfig effective = model.config;
  effective.data = cfg.data;
  effective.out = cfg.out;
  effective.model = cfg.model;
  effective.report_dir = cfg.report_dir;
  effective.text_embeddings = cfg.text_embeddings;
  auto report = make_report("predict", effective);

  const Cohort cohort = load_run_cohort(effective);
  TextSource text;
  text.hash = {effective.text_dim, effective.hash_seed};
  std::optional<PrecomputedEmbeddings> precomputed;
  if (!effective.text_embeddings.empty()) {
    precomputed = load_precomputed_embeddings(effective.text_embeddings, effective.text_dim, cohort);
    text.precomputed = &*precomputed;
  }
  const auto inputs = prepare_inputs(cohort, model.stats, text);
  std::vector<const StudentInputs*> rows;
  for (const auto& s : inputs) rows.push_back(&s);
  const auto predictions = predict_students(model.params, rows);

  const auto dir = out_dir(effective);
  std::ofstream out(dir / "predictions.csv", std::ios::binary);
  if (!out) throw DataError("cannot write " + (dir / "predictions.csv").string());
  csv::write_row(out, {"student_id", "probability", "label"});
  std::vector<int> predicted, truth;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    csv::write_row(out, {rows[i]->student_id, csv::format_double(predictions[i].probability),
                         std::to_string(predictions[i].label)});
    if (rows[i]->label) {
      predicted.push_back(predictions[i].label);
      truth.push_back(*rows[i]->label);
    }
  }
  report.document["students"] = rows.size();
  report.document["predicted_positive"] =
      std::count_if(predictions.begin(), predictions.end(), [](const Prediction& p) { return p.label == 1; });
  report.text += "students " + std::to_string(rows.size()) + ", wrote predictions.csv\n";
  if (!truth.empty()) {
    const auto m = classification_metrics(predicted, truth);
    report.document["metrics"] = metrics_json(m);
    report.text += "\n" + metrics_header() + metrics_row("dmsw (labeled rows)", m);
  }
  return report;
}

Report evaluate_command(const RunConfig& cfg) {
  auto report = make_report("evaluate", cfg);
  const Prepared prep = prepare(load_run_cohort(cfg), cfg);
  const auto r = evaluate_prepared(prep, cfg);
  report.document["models"] = {{"dmsw", metrics_json(r.dmsw)},
                               {"dmsw_lambda0", metrics_json(r.dmsw_no_distinction)},
                               {"logreg_num", metrics_json(r.logreg_num)},
                               {"logreg_bi", metrics_json(r.logreg_bi)}};
  report.document["final_loss"] = {{"dmsw", loss_json(r.final_loss)},
                                   {"dmsw_lambda0", loss_json(r.final_loss_no_distinction)}};
  report.document["test_ids"] = r.test_ids;
  report.document["baseline_test_ids"] = r.baseline_test_ids;
  report.document["ols"] = ols_json(r.ols);
  report.text += "train " + std::to_string(prep.split.train.size()) + ", test " + std::to_string(prep.split.test.size()) +
                 " (all models share the test students)\n\n";
  report.text += metrics_header();
  report.text += metrics_row("dmsw (lambda=" + fixed(cfg.train.lambda, 2) + ")", r.dmsw);
  report.text += metrics_row("dmsw (lambda=0)", r.dmsw_no_distinction);
  report.text += metrics_row("logreg_num", r.logreg_num);
  report.text += metrics_row("logreg_bi", r.logreg_bi);
  report.text += "\n" + ols_text(r.ols);
  return report;
}

Report ols_command(const RunConfig& cfg) {
  auto report = make_report("ols", cfg);
  const Prepared prep = prepare(load_run_cohort(cfg), cfg);
  const auto r = ols_prepared(prep, cfg);
  report.document["ols"] = ols_json(r);
  report.text += ols_text(r);
  return report;
}

Report stats_command(const RunConfig& cfg) {
  auto report = make_report("stats", cfg);
  const Cohort cohort = load_run_cohort(cfg);
  const auto r = cohort_stats(cohort, builtin_rules(), cfg.stats);
  json rows = json::array();
  report.text += "base rate " + fixed(r.base_rate) + " (" + std::to_string(r.dropouts) + "/" + std::to_string(r.labeled) +
                 ")";
  if (r.unlabeled_excluded > 0) report.text += ", " + std::to_string(r.unlabeled_excluded) + " unlabeled excluded";
  report.text += "\n\n" + pad("condition", 72) + pad("n", 6) + pad("rate", 9) + "change\n";
  for (const auto& row : r.rows) {
    rows.push_back({{"label", row.label},
                    {"reference", row.reference},
                    {"population", row.population},
                    {"dropouts", row.dropouts},
                    {"rate", number(row.rate)},
                    {"change", number(row.change)}});
    report.text += pad(row.label, 72) + pad(std::to_string(row.population), 6) + pad(fixed(row.rate), 9) +
                   (row.change >= 0 ? "+" : "") + fixed(row.change) + "\n";
  }
  for (const auto& o : r.omitted) report.text += "omitted (no members): " + o + "\n";
  report.document["base_rate"] = number(r.base_rate);
  report.document["labeled"] = r.labeled;
  report.document["dropouts"] = r.dropouts;
  report.document["unlabeled_excluded"] = r.unlabeled_excluded;
  report.document["rows"] = rows;
  report.document["omitted"] = r.omitted;
  return report;
}

Report ablate_command(const RunConfig& cfg) {
  auto report = make_report("ablate", cfg);
  const Prepared prep = prepare(load_run_cohort(cfg), cfg);
  const auto t = ablation_prepared(prep, cfg);
  json cells = json::array();
  report.text += pad("placement", 13) + pad("windows", 10) + pad("lambda", 8) + pad("accuracy", 10) + "f1\n";
  for (const auto& c : t.cells) {
    json cell = {{"placement", std::string(to_string(c.placement))}, {"window_sizes", c.sizes}, {"lambda", c.lambda}};
    cell["metrics"] = c.metrics ? metrics_json(*c.metrics) : json(nullptr);
    if (!c.error.empty()) cell["error"] = c.error;
    cells.push_back(cell);
    report.text += pad(std::string(to_string(c.placement)), 13) + pad(join(c.sizes), 10) + pad(fixed(c.lambda, 2), 8) +
                   (c.metrics ? pad(fixed(c.metrics->accuracy), 10) + fixed(c.metrics->f1) : "error: " + c.error) + "\n";
  }
  json averages = json::array();
  report.text += "\n" + pad("placement", 13) + pad("lambda", 8) + pad("combo", 7) + pad("cells", 7) + "mean f1\n";
  for (const auto& a : t.averages) {
    averages.push_back({{"placement", std::string(to_string(a.placement))},
                        {"lambda", a.lambda},
                        {"combo_size", a.combo_size},
                        {"cells", a.cells},
                        {"mean_accuracy", number(a.mean_accuracy)},
                        {"mean_f1", number(a.mean_f1)}});
    report.text += pad(std::string(to_string(a.placement)), 13) + pad(fixed(a.lambda, 2), 8) +
                   pad("Combo" + std::to_string(a.combo_size), 7) + pad(std::to_string(a.cells), 7) + fixed(a.mean_f1) +
                   "\n";
  }
  report.document["cells"] = cells;
  report.document["combo_averages"] = averages;
  report.document["post_fusion_mean_f1"] = number(t.post_fusion_mean_f1);
  report.document["pre_fusion_mean_f1"] = number(t.pre_fusion_mean_f1);
  report.text += "\npost_fusion mean f1 " + fixed(t.post_fusion_mean_f1) + ", pre_fusion mean f1 " +
                 fixed(t.pre_fusion_mean_f1) + "\n";
  return report;
}

Report gradcheck_command(const RunConfig& cfg) {
  auto report = make_report("gradcheck", cfg);
  const auto r = gradcheck_run(cfg);
  report.document["max_relative_error"] = number(r.max_relative_error);
  report.document["checked"] = r.checked;
  report.document["skipped"] = r.skipped;
  report.document["tolerance"] = kGradCheckTolerance;
  report.document["passed"] = r.max_relative_error <= kGradCheckTolerance;
  report.text += "max relative error " + sci(r.max_relative_error) + " over " + std::to_string(r.checked) +
                 " coordinates (" + std::to_string(r.skipped) + " skipped at kinks)\n";
  if (!(r.max_relative_error <= kGradCheckTolerance)) {
    report.numeric_failure = "gradient check failed: max relative error " + sci(r.max_relative_error) + " > " +
                             sci(kGradCheckTolerance);
  }
  return report;
}

}  // namespace

Report run_command(std::string_view command, const RunConfig& cfg) {
  command_groups(command);  // rejects unknown commands
  validate(cfg);
  if (command == "synth") return synth_command(cfg);
  if (command == "preprocess") return preprocess_command(cfg);
  if (command == "train") return train_command(cfg);
  if (command == "predict") return predict_command(cfg);
  if (command == "evaluate") return evaluate_command(cfg);
  if (command == "ols") return ols_command(cfg);
  if (command == "stats") return stats_command(cfg);
  if (command == "ablate") return ablate_command(cfg);
  return gradcheck_command(cfg);
}

void write_report(const Report& report, const std::string& dir) {
  const std::filesystem::path base(dir.empty() ? "." : dir);
  std::filesystem::create_directories(base);
  {
    std::ofstream out(base / (report.stem + ".json"), std::ios::binary);
    if (!out) throw DataError("cannot write " + (base / (report.stem + ".json")).string());
    out << report.document.dump(2) << '\n';
  }
  std::ofstream out(base / (report.stem + ".txt"), std::ios::binary);
  if (!out) throw DataError("cannot write " + (base / (report.stem + ".txt")).string());
  out << report.text;
}

}  // namespace dmsw
