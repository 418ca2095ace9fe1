#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dmsw/records.hpp"

namespace dmsw {

enum class Pattern { AbsenteeSpikeDecline, PunishmentShockDecline, RewardMitigated, StableControl, NoisyControl };
inline constexpr std::size_t kPatternCount = 5;

std::string_view to_string(Pattern pattern);

struct SynthConfig {
  int n_students = 1000;
  int periods = kDefaultPeriods;
  double dropout_rate = 0.122;
  // Indexed by Pattern.
  std::array<double, kPatternCount> mix = {0.10, 0.05, 0.06, 0.59, 0.20};
  double score_noise_sd = 3.0;
  std::uint64_t seed = 0;
  int class_size = 30;
  double missing_rate = 0.01;
  std::vector<std::string> subjects = default_subjects();
};

struct PatternAssignment {
  std::string student_id;
  Pattern pattern = Pattern::StableControl;
  int onset = 0;  // period of the planted change, 0 for controls
};

struct SynthCohort {
  Cohort cohort;
  std::vector<PatternAssignment> patterns;
};

// Seeded cohort with planted behaviour patterns. Exactly
// round(n * dropout_rate) students are labeled 1, drawn mostly from the
// absentee-spike and punishment-shock patterns.
SynthCohort generate_cohort(const SynthConfig& cfg);

inline constexpr std::string_view kPatternsFile = "patterns.csv";
void write_patterns(const std::vector<PatternAssignment>& patterns, const std::string& path);

}  // namespace dmsw
