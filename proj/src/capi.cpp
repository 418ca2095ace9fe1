#include <dmsw.h>

#include <cstring>
#include <exception>
#include <filesystem>
#include <json.hpp>
#include <string>

#include "dmsw/checkpoint.hpp"
#include "dmsw/error.hpp"
#include "dmsw/pipeline.hpp"
#include "dmsw/synth.hpp"

struct dmsw_config {
  dmsw::RunConfig cfg;
};

struct dmsw_cohort {
  dmsw::Cohort cohort;
};

struct dmsw_model {
  dmsw::SavedModel model;
};

struct dmsw_report {
  dmsw::Report report;
  std::string json;
};

namespace {

thread_local std::string last_error;

template <class F>
dmsw_status guard(F&& body) {
  try {
    last_error.clear();
    return body();
  } catch (const dmsw::Error& e) {
    last_error = e.what();
    return static_cast<dmsw_status>(e.kind());
  } catch (const nlohmann::json::exception& e) {
    last_error = e.what();
    return DMSW_USAGE_ERROR;
  } catch (const std::filesystem::filesystem_error& e) {
    last_error = e.what();
    return DMSW_DATA_ERROR;
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return DMSW_DATA_ERROR;
  } catch (const std::exception& e) {
    last_error = e.what();
    return DMSW_DATA_ERROR;
  }
}

dmsw_status null_argument(const char* what) {
  last_error = std::string("null argument: ") + what;
  return DMSW_USAGE_ERROR;
}

char* copy_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

const char* kind_label(dmsw::KeyKind kind) {
  switch (kind) {
    case dmsw::KeyKind::Int: return "int";
    case dmsw::KeyKind::UInt: return "uint";
    case dmsw::KeyKind::Double: return "float";
    case dmsw::KeyKind::Bool: return "bool";
    case dmsw::KeyKind::String: return "string";
    case dmsw::KeyKind::IntList: return "int list";
    case dmsw::KeyKind::DoubleList: return "float list";
    case dmsw::KeyKind::StringList: return "string list";
  }
  return "";
}

}  // namespace

extern "C" {

const char* dmsw_last_error(void) { return last_error.c_str(); }

const char* dmsw_version(void) { return "1.0.0"; }

void dmsw_string_free(char* s) { delete[] s; }

dmsw_status dmsw_config_new(dmsw_config** out) {
  if (out == nullptr) return null_argument("out");
  return guard([&] {
    *out = new dmsw_config{};
    return DMSW_OK;
  });
}

dmsw_status dmsw_config_load(const char* path, dmsw_config** out) {
  if (path == nullptr) return null_argument("path");
  if (out == nullptr) return null_argument("out");
  return guard([&] {
    auto cfg = dmsw::load_config_file(path);
    *out = new dmsw_config{std::move(cfg)};
    return DMSW_OK;
  });
}

void dmsw_config_free(dmsw_config* cfg) { delete cfg; }

dmsw_status dmsw_config_set(dmsw_config* cfg, const char* key, const char* value) {
  if (cfg == nullptr || key == nullptr || value == nullptr) return null_argument("cfg/key/value");
  return guard([&] {
    dmsw::apply_flag(cfg->cfg, key, value);
    return DMSW_OK;
  });
}

dmsw_status dmsw_config_set_json(dmsw_config* cfg, const char* json_object) {
  if (cfg == nullptr || json_object == nullptr) return null_argument("cfg/json_object");
  return guard([&] {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(json_object);
    } catch (const nlohmann::json::parse_error& e) {
      throw dmsw::UsageError(std::string("invalid JSON: ") + e.what());
    }
    dmsw::apply_json(cfg->cfg, doc, "config");
    return DMSW_OK;
  });
}

dmsw_status dmsw_config_get(const dmsw_config* cfg, const char* key, char** json_out) {
  if (cfg == nullptr || key == nullptr || json_out == nullptr) return null_argument("cfg/key/json_out");
  return guard([&] {
    const auto* k = dmsw::find_key(key);
    if (k == nullptr) throw dmsw::UsageError(std::string("unknown config key: ") + key);
    *json_out = copy_string(k->get(cfg->cfg).dump());
    return DMSW_OK;
  });
}

dmsw_status dmsw_config_echo(const dmsw_config* cfg, char** json_out) {
  if (cfg == nullptr || json_out == nullptr) return null_argument("cfg/json_out");
  return guard([&] {
    *json_out = copy_string(dmsw::config_echo(cfg->cfg).dump());
    return DMSW_OK;
  });
}

dmsw_status dmsw_config_validate(const dmsw_config* cfg) {
  if (cfg == nullptr) return null_argument("cfg");
  return guard([&] {
    dmsw::validate(cfg->cfg);
    return DMSW_OK;
  });
}

size_t dmsw_key_count(void) { return dmsw::config_keys().size(); }

const char* dmsw_key_name(size_t index) {
  const auto& keys = dmsw::config_keys();
  return index < keys.size() ? keys[index].name.c_str() : nullptr;
}

const char* dmsw_key_type(size_t index) {
  const auto& keys = dmsw::config_keys();
  return index < keys.size() ? kind_label(keys[index].kind) : nullptr;
}

const char* dmsw_key_help(size_t index) {
  const auto& keys = dmsw::config_keys();
  return index < keys.size() ? keys[index].help.c_str() : nullptr;
}

int dmsw_command_honors(const char* command, const char* key) {
  if (command == nullptr || key == nullptr) return -1;
  try {
    for (const auto* k : dmsw::command_keys(command)) {
      if (k->name == key) return 1;
    }
    return 0;
  } catch (const std::exception&) {
    return -1;
  }
}

dmsw_status dmsw_cohort_load(const dmsw_config* cfg, const char* dir, dmsw_cohort** out) {
  if (cfg == nullptr || dir == nullptr || out == nullptr) return null_argument("cfg/dir/out");
  return guard([&] {
    auto cohort = dmsw::load_cohort_dir(dir, cfg->cfg.periods, cfg->cfg.subjects);
    *out = new dmsw_cohort{std::move(cohort)};
    return DMSW_OK;
  });
}

dmsw_status dmsw_cohort_generate(const dmsw_config* cfg, dmsw_cohort** out) {
  if (cfg == nullptr || out == nullptr) return null_argument("cfg/out");
  return guard([&] {
    auto synth = dmsw::generate_cohort(dmsw::synth_config(cfg->cfg));
    *out = new dmsw_cohort{std::move(synth.cohort)};
    return DMSW_OK;
  });
}

void dmsw_cohort_free(dmsw_cohort* cohort) { delete cohort; }

size_t dmsw_cohort_size(const dmsw_cohort* cohort) { return cohort ? cohort->cohort.students.size() : 0; }

int dmsw_cohort_label(const dmsw_cohort* cohort, size_t index) {
  if (cohort == nullptr || index >= cohort->cohort.students.size()) return -1;
  return cohort->cohort.students[index].label.value_or(-1);
}

dmsw_status dmsw_cohort_write(const dmsw_cohort* cohort, const char* dir) {
  if (cohort == nullptr || dir == nullptr) return null_argument("cohort/dir");
  return guard([&] {
    dmsw::write_cohort(cohort->cohort, dir);
    return DMSW_OK;
  });
}

dmsw_status dmsw_model_load(const char* path, dmsw_model** out) {
  if (path == nullptr || out == nullptr) return null_argument("path/out");
  return guard([&] {
    auto model = dmsw::load_model(path);
    *out = new dmsw_model{std::move(model)};
    return DMSW_OK;
  });
}

void dmsw_model_free(dmsw_model* model) { delete model; }

dmsw_status dmsw_model_predict(const dmsw_model* model, const dmsw_cohort* cohort, double* probabilities, int* labels,
                               size_t count) {
  if (model == nullptr || cohort == nullptr) return null_argument("model/cohort");
  return guard([&] {
    const auto& m = model->model;
    if (count != cohort->cohort.students.size()) throw dmsw::UsageError("output size does not match the cohort");
    if (cohort->cohort.periods != m.params.periods) throw dmsw::DataError("cohort period count does not match the model");
    if (!m.config.text_embeddings.empty()) {
      throw dmsw::UsageError("model uses precomputed text embeddings; run the predict command instead");
    }
    dmsw::TextSource text;
    text.hash = {m.config.text_dim, m.config.hash_seed};
    const auto inputs = dmsw::prepare_inputs(cohort->cohort, m.stats, text);
    std::vector<const dmsw::StudentInputs*> rows;
    for (const auto& s : inputs) rows.push_back(&s);
    const auto predictions = dmsw::predict_students(m.params, rows);
    for (std::size_t i = 0; i < predictions.size(); ++i) {
      if (probabilities != nullptr) probabilities[i] = predictions[i].probability;
      if (labels != nullptr) labels[i] = predictions[i].label;
    }
    return DMSW_OK;
  });
}

dmsw_status dmsw_run(const char* command, const dmsw_config* cfg, dmsw_report** out) {
  if (command == nullptr || cfg == nullptr || out == nullptr) return null_argument("command/cfg/out");
  *out = nullptr;
  return guard([&] {
    auto report = dmsw::run_command(command, cfg->cfg);
    auto* handle = new dmsw_report{std::move(report), {}};
    handle->json = handle->report.document.dump(2);
    *out = handle;
    if (!handle->report.numeric_failure.empty()) {
      last_error = handle->report.numeric_failure;
      return DMSW_NUMERIC_ERROR;
    }
    return DMSW_OK;
  });
}

void dmsw_report_free(dmsw_report* report) { delete report; }

const char* dmsw_report_json(const dmsw_report* report) { return report ? report->json.c_str() : ""; }

const char* dmsw_report_text(const dmsw_report* report) { return report ? report->report.text.c_str() : ""; }

const char* dmsw_report_stem(const dmsw_report* report) { return report ? report->report.stem.c_str() : ""; }

dmsw_status dmsw_report_write(const dmsw_report* report, const char* dir) {
  if (report == nullptr || dir == nullptr) return null_argument("report/dir");
  return guard([&] {
    dmsw::write_report(report->report, dir);
    return DMSW_OK;
  });
}

}  // extern "C"
