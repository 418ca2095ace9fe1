#include <doctest.h>

#include <dmsw.h>

#include <string>
#include <vector>

#include "support.hpp"

namespace {

std::string take(char* s) {
  std::string out = s ? s : "";
  dmsw_string_free(s);
  return out;
}

struct Config {
  dmsw_config* p = nullptr;
  Config() { REQUIRE(dmsw_config_new(&p) == DMSW_OK); }
  ~Config() { dmsw_config_free(p); }
};

}  // namespace

TEST_CASE("config handles") {
  Config cfg;
  char* json = nullptr;
  REQUIRE(dmsw_config_get(cfg.p, "lambda", &json) == DMSW_OK);
  CHECK(take(json) == "0.5");
  CHECK(dmsw_config_set(cfg.p, "lambda", "0.25") == DMSW_OK);
  REQUIRE(dmsw_config_get(cfg.p, "lambda", &json) == DMSW_OK);
  CHECK(take(json) == "0.25");
  CHECK(dmsw_config_set(cfg.p, "lambda", "abc") == DMSW_USAGE_ERROR);
  CHECK(std::string(dmsw_last_error()).find("lambda") != std::string::npos);
  CHECK(dmsw_config_set(cfg.p, "no_such_key", "1") == DMSW_USAGE_ERROR);
  CHECK(dmsw_config_set_json(cfg.p, R"({"epochs": 3, "seed": 2})") == DMSW_OK);
  CHECK(dmsw_config_set_json(cfg.p, "{broken") == DMSW_USAGE_ERROR);
  CHECK(dmsw_config_validate(cfg.p) == DMSW_OK);
  CHECK(dmsw_config_set(cfg.p, "omega1", "0.9") == DMSW_OK);
  CHECK(dmsw_config_validate(cfg.p) == DMSW_USAGE_ERROR);

  REQUIRE(dmsw_config_echo(cfg.p, &json) == DMSW_OK);
  CHECK(take(json).find("\"epochs\":3") != std::string::npos);

  dmsw_config* loaded = nullptr;
  CHECK(dmsw_config_load("/nonexistent/dmsw.json", &loaded) == DMSW_USAGE_ERROR);
  CHECK(loaded == nullptr);
  CHECK(dmsw_config_new(nullptr) == DMSW_USAGE_ERROR);
}

TEST_CASE("key registry") {
  const size_t n = dmsw_key_count();
  REQUIRE(n > 30);
  for (size_t i = 1; i < n; ++i) CHECK(std::string(dmsw_key_name(i - 1)) < std::string(dmsw_key_name(i)));
  CHECK(dmsw_key_name(n) == nullptr);
  CHECK(dmsw_command_honors("train", "lambda") == 1);
  CHECK(dmsw_command_honors("synth", "lambda") == 0);
  CHECK(dmsw_command_honors("fly", "lambda") == -1);
  CHECK(std::string(dmsw_version()).size() > 0);
}

TEST_CASE("cohort, run and model through the C API") {
  const auto dir = testing::temp_dir("capi");
  Config cfg;
  REQUIRE(dmsw_config_set(cfg.p, "n", "60") == DMSW_OK);
  REQUIRE(dmsw_config_set(cfg.p, "seed", "3") == DMSW_OK);
  dmsw_cohort* cohort = nullptr;
  REQUIRE(dmsw_cohort_generate(cfg.p, &cohort) == DMSW_OK);
  CHECK(dmsw_cohort_size(cohort) == 60);
  int dropouts = 0;
  for (size_t i = 0; i < 60; ++i) dropouts += dmsw_cohort_label(cohort, i);
  CHECK(dropouts == 7);
  CHECK(dmsw_cohort_label(cohort, 60) == -1);
  REQUIRE(dmsw_cohort_write(cohort, (dir / "data").c_str()) == DMSW_OK);

  dmsw_cohort* back = nullptr;
  REQUIRE(dmsw_cohort_load(cfg.p, (dir / "data").c_str(), &back) == DMSW_OK);
  CHECK(dmsw_cohort_size(back) == 60);
  dmsw_cohort* none = nullptr;
  CHECK(dmsw_cohort_load(cfg.p, (dir / "missing").c_str(), &none) == DMSW_DATA_ERROR);

  const std::string model = (dir / "model.json").string();
  REQUIRE(dmsw_config_set_json(cfg.p, (R"({"epochs": 3, "ae_epochs": 5, "text_dim": 16, "latent_dim": 3,)"
                                       R"( "refiner_hidden": 4, "refiner_out": 4, "classifier_hidden": 4,)"
                                       R"( "data": ")" + (dir / "data").string() + R"(", "model": ")" + model + "\"}")
                                          .c_str()) == DMSW_OK);
  dmsw_report* report = nullptr;
  REQUIRE(dmsw_run("train", cfg.p, &report) == DMSW_OK);
  CHECK(std::string(dmsw_report_stem(report)).rfind("train_seed3_", 0) == 0);
  CHECK(std::string(dmsw_report_json(report)).find("\"config_hash\"") != std::string::npos);
  CHECK(std::string(dmsw_report_text(report)).find("# dmsw train") == 0);
  REQUIRE(dmsw_report_write(report, (dir / "reports").c_str()) == DMSW_OK);
  CHECK(std::filesystem::exists(dir / "reports" / (std::string(dmsw_report_stem(report)) + ".json")));
  dmsw_report_free(report);

  dmsw_model* m = nullptr;
  REQUIRE(dmsw_model_load(model.c_str(), &m) == DMSW_OK);
  std::vector<double> probs(60);
  std::vector<int> labels(60);
  REQUIRE(dmsw_model_predict(m, back, probs.data(), labels.data(), 60) == DMSW_OK);
  for (size_t i = 0; i < 60; ++i) {
    CHECK((probs[i] > 0.0 && probs[i] < 1.0));
    CHECK(labels[i] == (probs[i] >= 0.5 ? 1 : 0));
  }
  CHECK(dmsw_model_predict(m, back, probs.data(), labels.data(), 59) == DMSW_USAGE_ERROR);
  dmsw_model_free(m);

  CHECK(dmsw_run("nonsense", cfg.p, &report) == DMSW_USAGE_ERROR);
  dmsw_cohort_free(cohort);
  dmsw_cohort_free(back);
  dmsw_model* bad = nullptr;
  CHECK(dmsw_model_load((dir / "data" / "students.csv").c_str(), &bad) == DMSW_DATA_ERROR);
}
