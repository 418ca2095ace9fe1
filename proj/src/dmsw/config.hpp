#pragma once

#include <cstdint>
#include <functional>
#include <json.hpp>
#include <string>
#include <string_view>
#include <vector>

#include "dmsw/analyze.hpp"
#include "dmsw/synth.hpp"
#include "dmsw/train.hpp"

namespace dmsw {

struct RunConfig {
  int periods = kDefaultPeriods;
  std::vector<std::string> subjects = default_subjects();
  double omega1 = 0.5;
  double omega2 = 0.5;

  int text_dim = 64;
  std::uint64_t hash_seed = 0;
  std::string text_embeddings;  // precomputed embedding CSV; empty = hashed text
  int latent_dim = 8;
  int ae_epochs = 300;
  double ae_lr = 0.05;

  TrainConfig train;  // train.seed is derived from `seed`
  double test_fraction = 0.2;
  std::uint64_t seed = 42;

  LogRegConfig logreg;
  StatsRuleConfig stats;
  SynthConfig synth;  // synth.seed, periods and subjects follow the fields above

  std::vector<int> ablation_sizes;  // empty = presets small/medium/large
  std::vector<double> ablation_lambdas = {0.0, 0.5};
  int gradcheck_students = 12;

  std::string data;
  std::string out;
  std::string model;
  std::string report_dir = "reports";
};

enum class KeyKind { Int, UInt, Double, Bool, String, IntList, DoubleList, StringList };

struct ConfigKey {
  std::string name;
  KeyKind kind;
  std::string group;
  std::string help;
  std::function<nlohmann::json(const RunConfig&)> get;
  std::function<void(RunConfig&, const nlohmann::json&)> set;
};

const std::vector<ConfigKey>& config_keys();
const ConfigKey* find_key(std::string_view name);

// Groups of keys a subcommand reads.
std::vector<std::string> command_groups(std::string_view command);
std::vector<const ConfigKey*> command_keys(std::string_view command);

// Object of key -> value; unknown keys and ill-typed values are usage errors.
void apply_json(RunConfig& cfg, const nlohmann::json& object, std::string_view origin);
void apply_flag(RunConfig& cfg, std::string_view key, std::string_view value);
RunConfig load_config_file(const std::string& path);

// Module preconditions, checked once after all layers are applied.
void validate(const RunConfig& cfg);

// Every key with its effective value, keys sorted.
nlohmann::json config_echo(const RunConfig& cfg);
// 16 hex digits of a 64-bit FNV-1a over the serialized echo.
std::string config_hash(const RunConfig& cfg);

// Copies of module configs with the shared fields filled in.
TrainConfig train_config(const RunConfig& cfg);
SynthConfig synth_config(const RunConfig& cfg);

inline constexpr const char* kConfigEnv = "DMSW_CONFIG";

}  // namespace dmsw
