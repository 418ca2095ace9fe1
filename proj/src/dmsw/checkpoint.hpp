#pragma once

#include <json.hpp>
#include <string>

#include "dmsw/config.hpp"
#include "dmsw/preprocess.hpp"
#include "dmsw/train.hpp"

namespace dmsw {

inline constexpr const char* kModelFormat = "dmsw-model/1";

struct SavedModel {
  RunConfig config;  // as echoed at training time
  ScoreStats stats;  // training-cohort moments used for Z-scores and imputation
  ModelParams params;
};

// Single JSON document: format tag, config echo, score moments, every weight
// matrix row-major, and the feature index map.
nlohmann::json model_to_json(const SavedModel& model);
SavedModel model_from_json(const nlohmann::json& doc);

void save_model(const SavedModel& model, const std::string& path);
SavedModel load_model(const std::string& path);

}  // namespace dmsw
