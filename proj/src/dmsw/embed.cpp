#include "dmsw/embed.hpp"

#include <cctype>
#include <cmath>
#include <fstream>

#include "dmsw/csv.hpp"
#include "dmsw/error.hpp"
#include "dmsw/rng.hpp"

namespace dmsw {

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c >= 0x80 || std::isalnum(c)) {
      current.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

TokenSlot hash_token(std::string_view token, const TextEmbedderConfig& cfg) {
  // FNV-1a, then mixed with the seed.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : token) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  h = splitmix64(h ^ splitmix64(cfg.hash_seed));
  return {static_cast<int>(h % static_cast<std::uint64_t>(cfg.dim)), (h >> 63) ? -1 : 1};
}

Eigen::VectorXd embed_text_hash(std::string_view text, const TextEmbedderConfig& cfg) {
  if (cfg.dim < 2) throw UsageError("text_dim must be >= 2");
  Eigen::VectorXd v = Eigen::VectorXd::Zero(cfg.dim);
  for (const auto& token : tokenize(text)) {
    const auto slot = hash_token(token, cfg);
    v[slot.bucket] += slot.sign;
  }
  const double norm = v.norm();
  if (norm > 0.0) v /= norm;
  return v;
}

PrecomputedEmbeddings load_precomputed_embeddings(const std::string& path, int expected_dim, const Cohort& cohort) {
  auto rows = csv::read_file(path);
  if (rows.empty()) throw DataError(path + ": missing header");
  const auto& header = rows.front().fields;
  if (header.size() < 3 || header[0] != "student_id" || header[1] != "period") {
    throw DataError(path + ":1: malformed header, expected `student_id,period,v0,...`");
  }
  PrecomputedEmbeddings out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const std::string where = path + ":" + std::to_string(row.line);
    if (row.fields.size() < 2) throw DataError(where + ": malformed row");
    const auto dim = static_cast<int>(row.fields.size()) - 2;
    if (dim != expected_dim) {
      throw DataError(where + ": dimension mismatch (got " + std::to_string(dim) + ", expected " +
                      std::to_string(expected_dim) + ")");
    }
    const auto period = static_cast<int>(csv::parse_int(row.fields[1], where));
    Eigen::VectorXd v(dim);
    for (int i = 0; i < dim; ++i) {
      v[i] = csv::parse_double(row.fields[static_cast<std::size_t>(i) + 2], where);
      if (!std::isfinite(v[i])) throw DataError(where + ": non-finite value");
    }
    if (!out.emplace(std::make_pair(row.fields[0], period), std::move(v)).second) {
      throw DataError(where + ": duplicate (student, period) " + row.fields[0] + "/" + std::to_string(period));
    }
  }
  for (const auto& s : cohort.students) {
    for (int p = 1; p <= cohort.periods; ++p) {
      if (!out.count({s.student_id, p})) {
        throw DataError(path + ": missing embedding for (" + s.student_id + ", " + std::to_string(p) + ")");
      }
    }
  }
  return out;
}

void write_precomputed_embeddings(const PrecomputedEmbeddings& embeddings, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  const auto dim = embeddings.empty() ? 0 : embeddings.begin()->second.size();
  std::vector<std::string> header = {"student_id", "period"};
  for (Eigen::Index i = 0; i < dim; ++i) header.push_back("v" + std::to_string(i));
  csv::write_row(out, header);
  for (const auto& [key, v] : embeddings) {
    std::vector<std::string> row = {key.first, std::to_string(key.second)};
    for (Eigen::Index i = 0; i < v.size(); ++i) row.push_back(csv::format_double(v[i]));
    csv::write_row(out, row);
  }
}

AutoencoderParams init_autoencoder(const Eigen::MatrixXd& x, int latent_dim, std::uint64_t seed) {
  if (x.rows() < 1) throw DataError("autoencoder: empty training matrix");
  if (!x.allFinite()) throw NumericError("autoencoder: non-finite input");
  const auto d = x.cols();
  if (latent_dim < 1 || latent_dim > d) {
    throw UsageError("latent_dim must lie in [1, input_dim=" + std::to_string(d) + "]");
  }
  AutoencoderParams p;
  p.mean = x.colwise().mean().transpose();
  p.scale = Eigen::VectorXd::Ones(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double sd = std::sqrt((x.col(j).array() - p.mean[j]).square().mean());
    if (sd > 0.0) p.scale[j] = sd;
  }
  p.encoder = glorot_dense(d, latent_dim, Rng::substream(seed, 0).next());
  p.decoder = glorot_dense(latent_dim, d, Rng::substream(seed, 1).next());
  return p;
}

Eigen::MatrixXd standardize(const AutoencoderParams& params, const Eigen::MatrixXd& x) {
  if (x.cols() != params.mean.size()) throw DataError("autoencoder: dimension mismatch");
  return (x.rowwise() - params.mean.transpose()).array().rowwise() / params.scale.transpose().array();
}

double autoencoder_loss(const AutoencoderParams& params, const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd z = standardize(params, x);
  const Eigen::MatrixXd recon = affine(params.decoder, relu(affine(params.encoder, z)));
  return (recon - z).squaredNorm() / static_cast<double>(z.size());
}

AutoencoderGrad autoencoder_gradient(const AutoencoderParams& params, const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd z = standardize(params, x);
  const Eigen::MatrixXd pre = affine(params.encoder, z);
  const Eigen::MatrixXd h = relu(pre);
  const Eigen::MatrixXd recon = affine(params.decoder, h);
  const Eigen::MatrixXd d_recon = 2.0 * (recon - z) / static_cast<double>(z.size());
  Eigen::MatrixXd d_h;
  AutoencoderGrad g;
  g.decoder = affine_backward(params.decoder, h, d_recon, &d_h);
  g.encoder = affine_backward(params.encoder, z, relu_backward(pre, d_h), nullptr);
  return g;
}

AutoencoderFit autoencoder_train(const Eigen::MatrixXd& x, int latent_dim, int epochs, double lr,
                                 std::uint64_t seed) {
  if (epochs < 0) throw UsageError("ae_epochs must be >= 0");
  AutoencoderFit fit{init_autoencoder(x, latent_dim, seed), {}};
  fit.loss_curve.reserve(static_cast<std::size_t>(epochs) + 1);
  fit.loss_curve.push_back(autoencoder_loss(fit.params, x));
  for (int e = 0; e < epochs; ++e) {
    const auto g = autoencoder_gradient(fit.params, x);
    sgd_step(fit.params.encoder, g.encoder, lr);
    sgd_step(fit.params.decoder, g.decoder, lr);
    const double loss = autoencoder_loss(fit.params, x);
    if (!std::isfinite(loss)) throw NumericError("autoencoder: non-finite loss at epoch " + std::to_string(e + 1));
    fit.loss_curve.push_back(loss);
  }
  return fit;
}

Eigen::VectorXd encode_numeric(const AutoencoderParams& params, const Eigen::VectorXd& row) {
  if (row.size() != params.encoder.in_dim()) throw DataError("encode_numeric: dimension mismatch");
  const Eigen::VectorXd z = (row - params.mean).cwiseQuotient(params.scale);
  return (params.encoder.weight * z + params.encoder.bias).cwiseMax(0.0);
}

RefinerParams init_refiner(int in_dim, int hidden_dim, int out_dim, std::uint64_t seed) {
  if (in_dim < 1 || hidden_dim < 1 || out_dim < 1) throw UsageError("refiner dimensions must be positive");
  return {glorot_dense(in_dim, hidden_dim, Rng::substream(seed, 0).next()),
          glorot_dense(hidden_dim, out_dim, Rng::substream(seed, 1).next())};
}

Eigen::VectorXd refine(const RefinerParams& params, const Eigen::VectorXd& vec) {
  if (vec.size() != params.hidden.in_dim()) throw DataError("refine: dimension mismatch");
  const Eigen::VectorXd h = (params.hidden.weight * vec + params.hidden.bias).cwiseMax(0.0);
  return params.output.weight * h + params.output.bias;
}

Eigen::MatrixXd refine_batch(const RefinerParams& params, const Eigen::MatrixXd& rows) {
  if (rows.cols() != params.hidden.in_dim()) throw DataError("refine: dimension mismatch");
  return affine(params.output, relu(affine(params.hidden, rows)));
}

RefinerGrad refine_backward(const RefinerParams& params, const Eigen::MatrixXd& rows, const Eigen::MatrixXd& d_out,
                            Eigen::MatrixXd* d_in) {
  const Eigen::MatrixXd pre = affine(params.hidden, rows);
  const Eigen::MatrixXd h = relu(pre);
  Eigen::MatrixXd d_h;
  RefinerGrad g;
  g.output = affine_backward(params.output, h, d_out, &d_h);
  g.hidden = affine_backward(params.hidden, rows, relu_backward(pre, d_h), d_in);
  return g;
}

std::vector<StudentInputs> prepare_inputs(const Cohort& cohort, const ScoreStats& stats, const TextSource& text) {
  std::vector<StudentInputs> out;
  out.reserve(cohort.students.size());
  const int d_num = static_cast<int>(stats.subjects.size()) * kEntriesPerSubject;
  for (const auto& rec : cohort.students) {
    StudentInputs in;
    in.student_id = rec.student_id;
    in.label = rec.label;
    in.numeric.resize(cohort.periods, d_num);
    in.imputed.assign(static_cast<std::size_t>(cohort.periods), false);
    for (int p = 1; p <= cohort.periods; ++p) {
      const auto nv = numeric_period_vector(rec, p, stats);
      in.numeric.row(p - 1) = nv.values.transpose();
      for (bool flag : nv.imputed) in.imputed[static_cast<std::size_t>(p - 1)] = in.imputed[static_cast<std::size_t>(p - 1)] || flag;

      Eigen::VectorXd t;
      if (text.precomputed) {
        t = text.precomputed->at({rec.student_id, p});
      } else {
        const auto events = rec.events_in(p);
        t = embed_text_hash(summarize_period(rec.student_id, p, events), text.hash);
      }
      if (p == 1) in.text.resize(cohort.periods, t.size());
      in.text.row(p - 1) = t.transpose();
    }
    out.push_back(std::move(in));
  }
  return out;
}

std::vector<EmbeddingSequence> build_sequences(const std::vector<StudentInputs>& inputs, const AutoencoderParams& ae,
                                               const RefinerParams& text_refiner, const RefinerParams& num_refiner) {
  std::vector<EmbeddingSequence> out;
  out.reserve(inputs.size());
  for (const auto& in : inputs) {
    const Eigen::MatrixXd latent = relu(affine(ae.encoder, standardize(ae, in.numeric)));
    out.push_back({in.student_id, refine_batch(text_refiner, in.text), refine_batch(num_refiner, latent)});
  }
  return out;
}

Eigen::MatrixXd stack_numeric(const std::vector<StudentInputs>& inputs) {
  if (inputs.empty()) return {};
  const auto p = inputs.front().numeric.rows();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(inputs.size()) * p, inputs.front().numeric.cols());
  for (std::size_t i = 0; i < inputs.size(); ++i) out.middleRows(static_cast<Eigen::Index>(i) * p, p) = inputs[i].numeric;
  return out;
}

}  // namespace dmsw
