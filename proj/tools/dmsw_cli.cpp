#include <dmsw.h>

#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>
#include <json.hpp>
#include <map>
#include <string>
#include <vector>

namespace {

struct Command {
  const char* name;
  const char* description;
};

const std::vector<Command> kCommands = {
    {"synth", "generate a labeled synthetic cohort (three CSVs plus patterns.csv)"},
    {"preprocess", "write numeric vectors, period summaries and sliding-window features"},
    {"train", "train the model on the training split and save a checkpoint"},
    {"predict", "score a cohort with a saved model"},
    {"evaluate", "compare the model, its lambda=0 ablation and logistic baselines on one split"},
    {"ols", "regress labels on the sliding-window features, grouped by window size and order"},
    {"stats", "dropout rates under the built-in absentee/reward/punishment rules"},
    {"ablate", "train one model per placement x window combo x lambda cell"},
    {"gradcheck", "compare analytic and finite-difference gradients of the training loss"},
};

struct Parsed {
  CLI::App* app = nullptr;
  std::string config_path;
  std::map<std::string, std::string> values;
};

int fail(dmsw_status status, const std::string& context) {
  std::cerr << "dmsw: " << context << dmsw_last_error() << "\n";
  return static_cast<int>(status);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-modal multiscale sliding-window dropout-risk pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(dmsw_version()));

  std::vector<Parsed> parsed(kCommands.size());
  for (std::size_t c = 0; c < kCommands.size(); ++c) {
    auto& p = parsed[c];
    p.app = app.add_subcommand(kCommands[c].name, kCommands[c].description);
    p.app->add_option("--config", p.config_path, "JSON config file (default: $DMSW_CONFIG)");
    for (std::size_t k = 0; k < dmsw_key_count(); ++k) {
      const std::string key = dmsw_key_name(k);
      if (dmsw_command_honors(kCommands[c].name, key.c_str()) != 1) continue;
      p.app->add_option("--" + key, p.values[key], std::string(dmsw_key_help(k)) + " (" + dmsw_key_type(k) + ")");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "dmsw: " << e.what() << "\n\n";
    const CLI::App* usage = &app;
    for (const auto& p : parsed) {
      if (p.app->parsed()) usage = p.app;
    }
    std::cerr << usage->help();
    return DMSW_USAGE_ERROR;
  }

  const Parsed* chosen = nullptr;
  for (const auto& p : parsed) {
    if (p.app->parsed()) chosen = &p;
  }
  if (chosen == nullptr) return DMSW_USAGE_ERROR;
  const std::string command = chosen->app->get_name();

  std::string config_path = chosen->config_path;
  if (config_path.empty()) {
    if (const char* env = std::getenv("DMSW_CONFIG"); env != nullptr) config_path = env;
  }
  dmsw_config* cfg = nullptr;
  dmsw_status status = config_path.empty() ? dmsw_config_new(&cfg) : dmsw_config_load(config_path.c_str(), &cfg);
  if (status != DMSW_OK) return fail(status, "");

  for (const auto& [key, value] : chosen->values) {
    if (chosen->app->count("--" + key) == 0) continue;
    status = dmsw_config_set(cfg, key.c_str(), value.c_str());
    if (status != DMSW_OK) {
      dmsw_config_free(cfg);
      std::cerr << "dmsw: " << dmsw_last_error() << "\n\n" << chosen->app->help();
      return status;
    }
  }

  std::string report_dir = ".";
  char* dir_json = nullptr;
  if (dmsw_config_get(cfg, "report_dir", &dir_json) == DMSW_OK) {
    report_dir = nlohmann::json::parse(dir_json).get<std::string>();
    dmsw_string_free(dir_json);
  }

  dmsw_report* report = nullptr;
  status = dmsw_run(command.c_str(), cfg, &report);
  const std::string error = dmsw_last_error();
  dmsw_config_free(cfg);
  if (report != nullptr) {
    // The report file carries the config echo; the terminal gets the body.
    std::string text = dmsw_report_text(report);
    std::size_t body = 0;
    while (text.compare(body, 2, "# ") == 0) {
      const auto eol = text.find('\n', body);
      if (eol == std::string::npos) break;
      body = eol + 1;
    }
    if (text.compare(body, 1, "\n") == 0) ++body;
    std::cout << text.substr(body);
    if (const dmsw_status written = dmsw_report_write(report, report_dir.c_str()); written != DMSW_OK) {
      dmsw_report_free(report);
      return fail(written, "");
    }
    std::cout << "report: " << report_dir << "/" << dmsw_report_stem(report) << ".{json,txt}\n";
    dmsw_report_free(report);
  }
  if (status != DMSW_OK) {
    std::cerr << "dmsw " << command << ": " << error << "\n";
    return status;
  }
  return 0;
}
