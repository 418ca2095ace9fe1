#include "dmsw/checkpoint.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "dmsw/error.hpp"

namespace dmsw {

using nlohmann::json;

namespace {

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double number(const json& v) { return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>(); }

json vector_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(number(v[i]));
  return out;
}

Eigen::VectorXd vector_from(const json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = number(j[i]);
  return v;
}

json dense_json(const Dense& d) {
  json weight = json::array();
  for (Eigen::Index r = 0; r < d.weight.rows(); ++r) {
    for (Eigen::Index c = 0; c < d.weight.cols(); ++c) weight.push_back(d.weight(r, c));
  }
  return {{"rows", d.weight.rows()}, {"cols", d.weight.cols()}, {"weight", weight}, {"bias", vector_json(d.bias)}};
}

Dense dense_from(const json& j, const char* what) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& weight = j.at("weight");
  if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(weight.size()) != rows * cols ||
      static_cast<Eigen::Index>(j.at("bias").size()) != rows) {
    throw DataError(std::string("model: inconsistent shape for ") + what);
  }
  Dense d;
  d.weight.resize(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) d.weight(r, c) = weight[static_cast<std::size_t>(r * cols + c)].get<double>();
  }
  d.bias = vector_from(j.at("bias"));
  return d;
}

std::string source_name(Source s) {
  switch (s) {
    case Source::Fused: return "fused";
    case Source::Text: return "text";
    case Source::Numeric: return "numeric";
    case Source::Raw: return "raw";
  }
  return "fused";
}

json stats_json(const ScoreStats& s) {
  json mean = json::array(), sd = json::array(), observed = json::array(), entries = json::array();
  for (std::size_t k = 0; k < s.subjects.size(); ++k) {
    json m = json::array(), d = json::array(), e = json::array();
    for (std::size_t p = 0; p < s.score_mean[k].size(); ++p) {
      m.push_back(number(s.score_mean[k][p]));
      d.push_back(number(s.score_sd[k][p]));
      json cell = json::array();
      for (double v : s.entry_mean[k][p]) cell.push_back(number(v));
      e.push_back(cell);
    }
    mean.push_back(m);
    sd.push_back(d);
    observed.push_back(s.observed[k]);
    entries.push_back(e);
  }
  return {{"periods", s.periods},  {"subjects", s.subjects},   {"omega1", s.weights.omega1},
          {"omega2", s.weights.omega2}, {"score_mean", mean}, {"score_sd", sd},
          {"observed", observed},   {"entry_mean", entries}};
}

ScoreStats stats_from(const json& j) {
  ScoreStats s;
  s.periods = j.at("periods").get<int>();
  s.subjects = j.at("subjects").get<std::vector<std::string>>();
  s.weights = make_weights(j.at("omega1").get<double>(), j.at("omega2").get<double>());
  const auto n = s.subjects.size();
  const auto p = static_cast<std::size_t>(s.periods);
  auto check = [&](const json& a) {
    if (a.size() != n) throw DataError("model: score moments do not match the subject list");
    for (const auto& row : a) {
      if (row.size() != p) throw DataError("model: score moments do not match the period count");
    }
  };
  check(j.at("score_mean"));
  check(j.at("score_sd"));
  check(j.at("observed"));
  check(j.at("entry_mean"));
  s.score_mean.assign(n, std::vector<double>(p));
  s.score_sd.assign(n, std::vector<double>(p));
  s.observed = j.at("observed").get<std::vector<std::vector<int>>>();
  s.entry_mean.assign(n, std::vector<std::array<double, kEntriesPerSubject>>(p));
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t q = 0; q < p; ++q) {
      s.score_mean[k][q] = number(j["score_mean"][k][q]);
      s.score_sd[k][q] = number(j["score_sd"][k][q]);
      const auto& cell = j["entry_mean"][k][q];
      if (cell.size() != kEntriesPerSubject) throw DataError("model: entry means must have 3 values per cell");
      for (std::size_t e = 0; e < kEntriesPerSubject; ++e) s.entry_mean[k][q][e] = number(cell[e]);
    }
  }
  return s;
}

}  // namespace

json model_to_json(const SavedModel& model) {
  const auto& p = model.params;
  json index = json::array();
  for (const auto& f : p.index_map) {
    index.push_back({{"name", column_name(f)},
                     {"window", f.window},
                     {"order", f.order},
                     {"position", f.position},
                     {"source", source_name(f.source)}});
  }
  return {{"format", kModelFormat},
          {"config", config_echo(model.config)},
          {"periods", p.periods},
          {"score_stats", stats_json(model.stats)},
          {"autoencoder",
           {{"mean", vector_json(p.autoencoder.mean)},
            {"scale", vector_json(p.autoencoder.scale)},
            {"encoder", dense_json(p.autoencoder.encoder)},
            {"decoder", dense_json(p.autoencoder.decoder)}}},
          {"text_refiner", {{"hidden", dense_json(p.text_refiner.hidden)}, {"output", dense_json(p.text_refiner.output)}}},
          {"num_refiner", {{"hidden", dense_json(p.num_refiner.hidden)}, {"output", dense_json(p.num_refiner.output)}}},
          {"classifier", {{"hidden", dense_json(p.classifier.hidden)}, {"output", dense_json(p.classifier.output)}}},
          {"index_map", index}};
}

SavedModel model_from_json(const json& doc) {
  try {
    if (!doc.is_object() || doc.value("format", std::string()) != kModelFormat) {
      throw DataError(std::string("model: missing or unsupported format tag (expected ") + kModelFormat + ")");
    }
    SavedModel m;
    apply_json(m.config, doc.at("config"), "model config");
    validate(m.config);
    m.stats = stats_from(doc.at("score_stats"));
    ModelParams& p = m.params;
    p.config = train_config(m.config);
    p.periods = doc.at("periods").get<int>();
    if (p.periods != m.config.periods || m.stats.periods != p.periods) throw DataError("model: period count mismatch");
    const auto& ae = doc.at("autoencoder");
    p.autoencoder.mean = vector_from(ae.at("mean"));
    p.autoencoder.scale = vector_from(ae.at("scale"));
    p.autoencoder.encoder = dense_from(ae.at("encoder"), "encoder");
    p.autoencoder.decoder = dense_from(ae.at("decoder"), "decoder");
    p.text_refiner = {dense_from(doc.at("text_refiner").at("hidden"), "text refiner"),
                      dense_from(doc.at("text_refiner").at("output"), "text refiner")};
    p.num_refiner = {dense_from(doc.at("num_refiner").at("hidden"), "numeric refiner"),
                     dense_from(doc.at("num_refiner").at("output"), "numeric refiner")};
    p.classifier = {dense_from(doc.at("classifier").at("hidden"), "classifier"),
                    dense_from(doc.at("classifier").at("output"), "classifier")};

    const Eigen::Index fused = p.text_refiner.output.out_dim() + p.num_refiner.output.out_dim();
    p.index_map = feature_layout(p.periods, p.config.window, static_cast<int>(fused));
    const auto& stored = doc.at("index_map");
    if (stored.size() != p.index_map.size()) throw DataError("model: feature index map does not match the config");
    for (std::size_t i = 0; i < stored.size(); ++i) {
      if (stored[i].at("name").get<std::string>() != column_name(p.index_map[i])) {
        throw DataError("model: feature index map entry " + std::to_string(i) + " does not match the config");
      }
    }
    const auto& ab = p.autoencoder;
    const Eigen::Index numeric = static_cast<Eigen::Index>(m.stats.subjects.size()) * kEntriesPerSubject;
    const bool shapes_ok =
        ab.mean.size() == numeric && ab.scale.size() == numeric && ab.encoder.in_dim() == numeric &&
        ab.decoder.in_dim() == ab.encoder.out_dim() && ab.decoder.out_dim() == numeric &&
        p.text_refiner.hidden.in_dim() == m.config.text_dim &&
        p.text_refiner.output.in_dim() == p.text_refiner.hidden.out_dim() &&
        p.num_refiner.hidden.in_dim() == ab.encoder.out_dim() &&
        p.num_refiner.output.in_dim() == p.num_refiner.hidden.out_dim() &&
        p.classifier.hidden.in_dim() == static_cast<Eigen::Index>(p.index_map.size()) &&
        p.classifier.output.in_dim() == p.classifier.hidden.out_dim() && p.classifier.output.out_dim() == 1;
    if (!shapes_ok) throw DataError("model: layer shapes are inconsistent");
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("model: malformed checkpoint: ") + e.what());
  } catch (const UsageError& e) {
    throw DataError(std::string("model: ") + e.what());
  }
}

void save_model(const SavedModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << model_to_json(model).dump(1) << '\n';
}

SavedModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing file: " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path + ": invalid JSON: " + e.what());
  }
  return model_from_json(doc);
}

}  // namespace dmsw
