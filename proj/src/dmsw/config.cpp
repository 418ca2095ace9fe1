#include "dmsw/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dmsw/error.hpp"
#include "dmsw/rng.hpp"

namespace dmsw {

using nlohmann::json;

namespace {

std::string kind_name(KeyKind kind) {
  switch (kind) {
    case KeyKind::Int: return "integer";
    case KeyKind::UInt: return "unsigned integer";
    case KeyKind::Double: return "number";
    case KeyKind::Bool: return "boolean";
    case KeyKind::String: return "string";
    case KeyKind::IntList: return "list of integers";
    case KeyKind::DoubleList: return "list of numbers";
    case KeyKind::StringList: return "list of strings";
  }
  return "value";
}

bool matches(KeyKind kind, const json& v) {
  auto all = [&](auto pred) { return v.is_array() && std::all_of(v.begin(), v.end(), pred); };
  switch (kind) {
    case KeyKind::Int: return v.is_number_integer();
    case KeyKind::UInt: return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
    case KeyKind::Double: return v.is_number();
    case KeyKind::Bool: return v.is_boolean();
    case KeyKind::String: return v.is_string();
    case KeyKind::IntList: return all([](const json& e) { return e.is_number_integer(); });
    case KeyKind::DoubleList: return all([](const json& e) { return e.is_number(); });
    case KeyKind::StringList: return all([](const json& e) { return e.is_string(); });
  }
  return false;
}

template <class T>
ConfigKey field(std::string name, KeyKind kind, std::string group, std::string help, T RunConfig::*member) {
  return {std::move(name), kind, std::move(group), std::move(help),
          [member](const RunConfig& c) { return json(c.*member); },
          [member](RunConfig& c, const json& v) { c.*member = v.get<T>(); }};
}

template <class T>
ConfigKey train_field(std::string name, KeyKind kind, std::string help, T TrainConfig::*member) {
  return {std::move(name), kind, "train", std::move(help),
          [member](const RunConfig& c) { return json(c.train.*member); },
          [member](RunConfig& c, const json& v) { c.train.*member = v.get<T>(); }};
}

template <class T>
ConfigKey window_field(std::string name, KeyKind kind, std::string help, T WindowConfig::*member) {
  return {std::move(name), kind, "window", std::move(help),
          [member](const RunConfig& c) { return json(c.train.window.*member); },
          [member](RunConfig& c, const json& v) { c.train.window.*member = v.get<T>(); }};
}

template <class Enum, class Parse>
ConfigKey enum_field(std::string name, std::string group, std::string help, std::function<Enum&(RunConfig&)> ref,
                     Parse parse) {
  return {std::move(name), KeyKind::String, std::move(group), std::move(help),
          [ref](const RunConfig& c) { return json(std::string(to_string(ref(const_cast<RunConfig&>(c))))); },
          [ref, parse](RunConfig& c, const json& v) { ref(c) = parse(v.get<std::string>()); }};
}

ConfigKey mix_field(Pattern pattern) {
  const auto k = static_cast<std::size_t>(pattern);
  return {"mix_" + std::string(to_string(pattern)), KeyKind::Double, "synth",
          "synthetic pattern weight for " + std::string(to_string(pattern)),
          [k](const RunConfig& c) { return json(c.synth.mix[k]); },
          [k](RunConfig& c, const json& v) { c.synth.mix[k] = v.get<double>(); }};
}

std::vector<ConfigKey> build_keys() {
  std::vector<ConfigKey> keys = {
      field("periods", KeyKind::Int, "cohort", "exam periods per year", &RunConfig::periods),
      field("subjects", KeyKind::StringList, "cohort", "subjects, in numeric-vector order", &RunConfig::subjects),
      field("omega1", KeyKind::Double, "composite", "composite weight on the score z-term", &RunConfig::omega1),
      field("omega2", KeyKind::Double, "composite", "composite weight on the rank term", &RunConfig::omega2),
      field("text_dim", KeyKind::Int, "embed", "text embedding dimension", &RunConfig::text_dim),
      field("hash_seed", KeyKind::UInt, "embed", "seed of the hashed text embedder", &RunConfig::hash_seed),
      field("text_embeddings", KeyKind::String, "text", "precomputed text embedding CSV (empty = hashed)",
            &RunConfig::text_embeddings),
      field("latent_dim", KeyKind::Int, "embed", "autoencoder latent dimension", &RunConfig::latent_dim),
      field("ae_epochs", KeyKind::Int, "embed", "autoencoder pretraining epochs", &RunConfig::ae_epochs),
      field("ae_lr", KeyKind::Double, "embed", "autoencoder learning rate", &RunConfig::ae_lr),
      window_field("window_sizes", KeyKind::IntList, "window sizes (empty = 1..P-1)", &WindowConfig::window_sizes),
      enum_field<SecondOrderMode>(
          "second_order_mode", "window", "second-order features: cosine | delta",
          [](RunConfig& c) -> SecondOrderMode& { return c.train.window.second_order_mode; },
          parse_second_order_mode),
      enum_field<Placement>(
          "placement", "window", "sliding window placement: post_fusion | pre_fusion",
          [](RunConfig& c) -> Placement& { return c.train.window.placement; }, parse_placement),
      window_field("include_raw", KeyKind::Bool, "append the period-mean fused embedding to F",
                   &WindowConfig::include_raw),
      window_field("zero_norm_cosine", KeyKind::Double, "cosine assigned to zero-norm vectors",
                   &WindowConfig::zero_norm_cosine),
      train_field("lambda", KeyKind::Double, "weight of the distinction loss", &TrainConfig::lambda),
      train_field("percentile_q", KeyKind::Double, "percentile of the change threshold", &TrainConfig::percentile_q),
      enum_field<DistinctionSign>(
          "distinction_sign", "train", "distinction loss sign: intent | literal",
          [](RunConfig& c) -> DistinctionSign& { return c.train.distinction_sign; }, parse_distinction_sign),
      train_field("lr", KeyKind::Double, "learning rate", &TrainConfig::lr),
      train_field("epochs", KeyKind::Int, "training epochs", &TrainConfig::epochs),
      train_field("refiner_hidden", KeyKind::Int, "refiner hidden width", &TrainConfig::refiner_hidden),
      train_field("refiner_out", KeyKind::Int, "refined embedding width per modality", &TrainConfig::refiner_out),
      train_field("classifier_hidden", KeyKind::Int, "classifier hidden width", &TrainConfig::classifier_hidden),
      train_field("freeze_autoencoder", KeyKind::Bool, "keep the pretrained encoder fixed",
                  &TrainConfig::freeze_autoencoder),
      train_field("smote", KeyKind::Bool, "oversample the minority class", &TrainConfig::smote),
      train_field("smote_k", KeyKind::Int, "SMOTE nearest neighbours", &TrainConfig::smote_k),
      enum_field<SmoteSpace>(
          "smote_space", "train", "SMOTE space: features | embeddings",
          [](RunConfig& c) -> SmoteSpace& { return c.train.smote_space; }, parse_smote_space),
      train_field("decision_threshold", KeyKind::Double, "probability threshold for label 1",
                  &TrainConfig::decision_threshold),
      train_field("prob_clamp", KeyKind::Double, "probability clamp in the cross-entropy", &TrainConfig::prob_clamp),
      field("test_fraction", KeyKind::Double, "split", "held-out fraction per class", &RunConfig::test_fraction),
      field("seed", KeyKind::UInt, "seed", "master seed", &RunConfig::seed),
      {"logreg_lr", KeyKind::Double, "logreg", "baseline learning rate",
       [](const RunConfig& c) { return json(c.logreg.lr); }, [](RunConfig& c, const json& v) { c.logreg.lr = v.get<double>(); }},
      {"logreg_iterations", KeyKind::Int, "logreg", "baseline gradient steps",
       [](const RunConfig& c) { return json(c.logreg.iterations); },
       [](RunConfig& c, const json& v) { c.logreg.iterations = v.get<int>(); }},
      {"logreg_l2", KeyKind::Double, "logreg", "baseline L2 penalty",
       [](const RunConfig& c) { return json(c.logreg.l2); }, [](RunConfig& c, const json& v) { c.logreg.l2 = v.get<double>(); }},
      {"absence_increase", KeyKind::Int, "stats", "absence increase a rule requires (strictly more)",
       [](const RunConfig& c) { return json(c.stats.absence_increase); },
       [](RunConfig& c, const json& v) { c.stats.absence_increase = v.get<int>(); }},
      {"max_gap", KeyKind::Int, "stats", "periods within which the increase must occur",
       [](const RunConfig& c) { return json(c.stats.max_gap); },
       [](RunConfig& c, const json& v) { c.stats.max_gap = v.get<int>(); }},
      {"decline", KeyKind::Double, "stats", "relative drop in mean relative score",
       [](const RunConfig& c) { return json(c.stats.decline); },
       [](RunConfig& c, const json& v) { c.stats.decline = v.get<double>(); }},
      {"window_width", KeyKind::Int, "stats", "periods averaged before and after a change",
       [](const RunConfig& c) { return json(c.stats.window_width); },
       [](RunConfig& c, const json& v) { c.stats.window_width = v.get<int>(); }},
      {"n", KeyKind::Int, "synth", "synthetic cohort size",
       [](const RunConfig& c) { return json(c.synth.n_students); },
       [](RunConfig& c, const json& v) { c.synth.n_students = v.get<int>(); }},
      {"dropout_rate", KeyKind::Double, "synth", "synthetic dropout rate",
       [](const RunConfig& c) { return json(c.synth.dropout_rate); },
       [](RunConfig& c, const json& v) { c.synth.dropout_rate = v.get<double>(); }},
      mix_field(Pattern::AbsenteeSpikeDecline),
      mix_field(Pattern::PunishmentShockDecline),
      mix_field(Pattern::RewardMitigated),
      mix_field(Pattern::StableControl),
      mix_field(Pattern::NoisyControl),
      {"score_noise_sd", KeyKind::Double, "synth", "synthetic score noise sd",
       [](const RunConfig& c) { return json(c.synth.score_noise_sd); },
       [](RunConfig& c, const json& v) { c.synth.score_noise_sd = v.get<double>(); }},
      {"class_size", KeyKind::Int, "synth", "synthetic class size for ranks",
       [](const RunConfig& c) { return json(c.synth.class_size); },
       [](RunConfig& c, const json& v) { c.synth.class_size = v.get<int>(); }},
      {"missing_rate", KeyKind::Double, "synth", "probability an exam entry is missing",
       [](const RunConfig& c) { return json(c.synth.missing_rate); },
       [](RunConfig& c, const json& v) { c.synth.missing_rate = v.get<double>(); }},
      field("ablation_sizes", KeyKind::IntList, "ablate", "window sizes whose subsets form the combo grid",
            &RunConfig::ablation_sizes),
      field("ablation_lambdas", KeyKind::DoubleList, "ablate", "lambda values per cell", &RunConfig::ablation_lambdas),
      field("gradcheck_students", KeyKind::Int, "gradcheck", "students in the checked batch",
            &RunConfig::gradcheck_students),
      field("data", KeyKind::String, "input", "cohort directory", &RunConfig::data),
      field("out", KeyKind::String, "output", "output directory", &RunConfig::out),
      field("model", KeyKind::String, "model", "model checkpoint path", &RunConfig::model),
      field("report_dir", KeyKind::String, "report", "directory for report files", &RunConfig::report_dir),
  };
  std::sort(keys.begin(), keys.end(), [](const ConfigKey& a, const ConfigKey& b) { return a.name < b.name; });
  return keys;
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = build_keys();
  return keys;
}

const ConfigKey* find_key(std::string_view name) {
  for (const auto& k : config_keys()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

std::vector<std::string> command_groups(std::string_view command) {
  auto with = [](std::vector<std::string> base, std::initializer_list<const char*> extra) {
    base.insert(base.end(), extra.begin(), extra.end());
    return base;
  };
  const std::vector<std::string> model = {"cohort", "composite", "embed", "text", "window", "train", "seed", "report"};
  if (command == "synth") return {"cohort", "synth", "seed", "output", "report"};
  if (command == "preprocess") return with(model, {"split", "input", "output"});
  if (command == "train") return with(model, {"split", "input", "model"});
  if (command == "predict") return {"text", "input", "model", "output", "report"};
  if (command == "evaluate") return with(model, {"split", "input", "logreg"});
  if (command == "ols") return with(model, {"split", "input"});
  if (command == "stats") return {"cohort", "stats", "seed", "input", "report"};
  if (command == "ablate") return with(model, {"split", "input", "ablate"});
  if (command == "gradcheck") return with(model, {"input", "gradcheck", "synth"});
  throw UsageError("unknown subcommand: " + std::string(command));
}

std::vector<const ConfigKey*> command_keys(std::string_view command) {
  const auto groups = command_groups(command);
  std::vector<const ConfigKey*> out;
  for (const auto& k : config_keys()) {
    if (std::find(groups.begin(), groups.end(), k.group) != groups.end()) out.push_back(&k);
  }
  return out;
}

void apply_json(RunConfig& cfg, const json& object, std::string_view origin) {
  if (!object.is_object()) throw UsageError(std::string(origin) + ": config must be a JSON object");
  for (auto it = object.begin(); it != object.end(); ++it) {
    const ConfigKey* key = find_key(it.key());
    if (key == nullptr) throw UsageError(std::string(origin) + ": unknown config key: " + it.key());
    if (!matches(key->kind, it.value())) {
      throw UsageError(std::string(origin) + ": " + it.key() + " must be a " + kind_name(key->kind));
    }
    try {
      key->set(cfg, it.value());
    } catch (const json::exception& e) {
      throw UsageError(std::string(origin) + ": " + it.key() + ": " + e.what());
    }
  }
}

namespace {

json parse_scalar(KeyKind kind, std::string_view text, std::string_view key) {
  auto bad = [&]() { return UsageError("--" + std::string(key) + " expects a " + kind_name(kind) + ", got '" + std::string(text) + "'"); };
  switch (kind) {
    case KeyKind::Int: {
      long long v = 0;
      auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (ec != std::errc() || p != text.data() + text.size()) throw bad();
      return json(v);
    }
    case KeyKind::UInt: {
      std::uint64_t v = 0;
      auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (ec != std::errc() || p != text.data() + text.size()) throw bad();
      return json(v);
    }
    case KeyKind::Double: {
      double v = 0.0;
      auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (ec != std::errc() || p != text.data() + text.size() || !std::isfinite(v)) throw bad();
      return json(v);
    }
    case KeyKind::Bool:
      if (text == "true" || text == "1") return json(true);
      if (text == "false" || text == "0") return json(false);
      throw bad();
    default: return json(std::string(text));
  }
}

}  // namespace

void apply_flag(RunConfig& cfg, std::string_view name, std::string_view value) {
  const ConfigKey* key = find_key(name);
  if (key == nullptr) throw UsageError("unknown option: --" + std::string(name));
  json v;
  auto element = [&](KeyKind list) {
    switch (list) {
      case KeyKind::IntList: return KeyKind::Int;
      case KeyKind::DoubleList: return KeyKind::Double;
      default: return KeyKind::String;
    }
  };
  if (key->kind == KeyKind::IntList || key->kind == KeyKind::DoubleList || key->kind == KeyKind::StringList) {
    v = json::array();
    std::size_t start = 0;
    while (start <= value.size() && !value.empty()) {
      const auto comma = value.find(',', start);
      const auto item = value.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
      v.push_back(parse_scalar(element(key->kind), item, name));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
  } else {
    v = parse_scalar(key->kind, value, name);
  }
  json object = json::object();
  object[key->name] = v;
  apply_json(cfg, object, "--" + std::string(name));
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read config file: " + path);
  json object;
  try {
    object = json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError(path + ": invalid JSON: " + e.what());
  }
  RunConfig cfg;
  apply_json(cfg, object, path);
  return cfg;
}

void validate(const RunConfig& cfg) {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw UsageError(what);
  };
  require(cfg.periods >= 2, "periods must be >= 2");
  require(!cfg.subjects.empty(), "subjects must not be empty");
  make_weights(cfg.omega1, cfg.omega2);
  require(cfg.text_dim >= 1, "text_dim must be positive");
  const int numeric_dim = static_cast<int>(cfg.subjects.size()) * kEntriesPerSubject;
  require(cfg.latent_dim >= 1 && cfg.latent_dim <= numeric_dim,
          "latent_dim must lie in [1, " + std::to_string(numeric_dim) + "] (the numeric vector size)");
  require(cfg.ae_epochs >= 0 && cfg.ae_lr > 0.0, "ae_epochs must be >= 0 and ae_lr > 0");
  resolve_window_sizes(cfg.train.window, cfg.periods);
  const auto& t = cfg.train;
  require(t.lambda >= 0.0, "lambda must be >= 0");
  require(t.percentile_q > 0.0 && t.percentile_q <= 1.0, "percentile_q must lie in (0, 1]");
  require(t.lr > 0.0, "lr must be positive");
  require(t.epochs >= 0, "epochs must be >= 0");
  require(t.refiner_hidden >= 1 && t.refiner_out >= 1 && t.classifier_hidden >= 1, "layer widths must be positive");
  require(t.smote_k >= 1, "smote_k must be >= 1");
  require(t.decision_threshold >= 0.0 && t.decision_threshold <= 1.0, "decision_threshold must lie in [0, 1]");
  require(t.prob_clamp > 0.0 && t.prob_clamp < 0.5, "prob_clamp must lie in (0, 0.5)");
  require(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0, "test_fraction must lie in (0, 1)");
  require(cfg.logreg.lr > 0.0 && cfg.logreg.iterations >= 0 && cfg.logreg.l2 >= 0.0, "invalid logreg settings");
  require(cfg.stats.absence_increase >= 0 && cfg.stats.max_gap >= 1 && cfg.stats.window_width >= 1,
          "invalid stats rule settings");
  require(cfg.stats.decline >= 0.0 && cfg.stats.decline <= 1.0, "decline must lie in [0, 1]");
  for (int a : cfg.ablation_sizes) {
    require(a >= 1 && a < cfg.periods, "ablation_sizes must lie in [1, periods-1]");
  }
  require(!cfg.ablation_lambdas.empty(), "ablation_lambdas must not be empty");
  for (double l : cfg.ablation_lambdas) require(l >= 0.0, "ablation_lambdas must be >= 0");
  require(cfg.gradcheck_students >= 2, "gradcheck_students must be >= 2");
}

json config_echo(const RunConfig& cfg) {
  json echo = json::object();
  for (const auto& k : config_keys()) echo[k.name] = k.get(cfg);
  return echo;
}

std::string config_hash(const RunConfig& cfg) {
  const std::string text = config_echo(cfg).dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

TrainConfig train_config(const RunConfig& cfg) {
  TrainConfig t = cfg.train;
  t.seed = Rng::substream(cfg.seed, 2).next();
  return t;
}

SynthConfig synth_config(const RunConfig& cfg) {
  SynthConfig s = cfg.synth;
  s.seed = cfg.seed;
  s.periods = cfg.periods;
  s.subjects = cfg.subjects;
  return s;
}

}  // namespace dmsw
