#include "dmsw/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "dmsw/csv.hpp"
#include "dmsw/error.hpp"
#include "dmsw/rng.hpp"

namespace dmsw {

std::string_view to_string(Pattern pattern) {
  switch (pattern) {
    case Pattern::AbsenteeSpikeDecline: return "absentee_spike_decline";
    case Pattern::PunishmentShockDecline: return "punishment_shock_decline";
    case Pattern::RewardMitigated: return "reward_mitigated";
    case Pattern::StableControl: return "stable_control";
    case Pattern::NoisyControl: return "noisy_control";
  }
  return "stable_control";
}

namespace {

const std::vector<std::string> kAbsenceReasons = {"sick leave", "parental leave", "personal leave"};
const std::vector<std::string> kRoutineRewards = {"merit", "good behavior", "academic attitude"};
const std::vector<std::string> kMitigatingRewards = {"academic competition", "academic attitude", "good behavior"};
const std::vector<std::string> kActivities = {"sports day", "music club", "volunteer service", "science fair"};
const std::vector<std::string> kMinorReasons = {"academic", "misbehavior"};
const std::vector<std::string> kSevereReasons = {"academic", "misbehavior", "dishonesty", "infringement"};

// Largest-remainder allocation of n items over the mix weights.
std::array<int, kPatternCount> allocate(int n, const std::array<double, kPatternCount>& mix) {
  std::array<int, kPatternCount> counts{};
  std::array<double, kPatternCount> remainder{};
  int assigned = 0;
  for (std::size_t k = 0; k < kPatternCount; ++k) {
    const double exact = n * mix[k];
    counts[k] = static_cast<int>(std::floor(exact));
    remainder[k] = exact - counts[k];
    assigned += counts[k];
  }
  std::array<std::size_t, kPatternCount> order;
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++counts[order[i % kPatternCount]];
  return counts;
}

const std::string& pick(Rng& rng, const std::vector<std::string>& items) { return items[rng.below(items.size())]; }

void add_event(StudentRecord& rec, int period, Category category, const std::string& subtype, int count,
               const std::string& description = "") {
  if (count <= 0) return;
  for (auto& ev : rec.events) {
    if (ev.period == period && ev.category == category && ev.subtype == subtype && ev.description == description) {
      ev.count += count;
      return;
    }
  }
  rec.events.push_back({rec.student_id, period, category, subtype, count, description});
}

// Spreads `count` absences over one or two reasons.
void add_absences(StudentRecord& rec, Rng& rng, int period, int count) {
  if (count <= 0) return;
  const int first = count > 1 && rng.uniform() < 0.4 ? rng.range(1, count - 1) : count;
  add_event(rec, period, Category::Absence, pick(rng, kAbsenceReasons), first);
  add_event(rec, period, Category::Absence, pick(rng, kAbsenceReasons), count - first);
}

}  // namespace

SynthCohort generate_cohort(const SynthConfig& cfg) {
  if (cfg.n_students < 1) throw UsageError("n must be positive");
  if (cfg.periods < 2) throw UsageError("periods must be >= 2 for synthetic cohorts");
  if (cfg.dropout_rate < 0.0 || cfg.dropout_rate > 1.0) throw UsageError("dropout_rate must lie in [0,1]");
  double mix_sum = 0.0;
  for (double w : cfg.mix) {
    if (w < 0.0) throw UsageError("mix weights must be nonnegative");
    mix_sum += w;
  }
  if (std::abs(mix_sum - 1.0) > 1e-9) throw UsageError("mix weights must sum to 1");
  if (cfg.class_size < 1) throw UsageError("class_size must be positive");

  const int n = cfg.n_students;
  const int periods = cfg.periods;
  const auto counts = allocate(n, cfg.mix);
  const int dropouts = static_cast<int>(std::llround(n * cfg.dropout_rate));

  std::vector<Pattern> assignment;
  for (std::size_t k = 0; k < kPatternCount; ++k) assignment.insert(assignment.end(), counts[k], static_cast<Pattern>(k));
  Rng layout_rng = Rng::substream(cfg.seed, 0xA11CE);
  layout_rng.shuffle(std::span<Pattern>(assignment));

  // Label allocation: a few dropouts among rewarded and noisy students, the
  // rest from the spike/shock pool.
  std::vector<int> by_pattern[kPatternCount];
  for (int i = 0; i < n; ++i) by_pattern[static_cast<std::size_t>(assignment[static_cast<std::size_t>(i)])].push_back(i);
  const auto& mitigated = by_pattern[static_cast<std::size_t>(Pattern::RewardMitigated)];
  const auto& noisy = by_pattern[static_cast<std::size_t>(Pattern::NoisyControl)];
  std::vector<int> pool = by_pattern[static_cast<std::size_t>(Pattern::AbsenteeSpikeDecline)];
  pool.insert(pool.end(), by_pattern[static_cast<std::size_t>(Pattern::PunishmentShockDecline)].begin(),
              by_pattern[static_cast<std::size_t>(Pattern::PunishmentShockDecline)].end());
  std::sort(pool.begin(), pool.end());

  const int from_mitigated = std::min<int>(static_cast<int>(std::llround(0.1 * static_cast<double>(mitigated.size()))), dropouts);
  const int from_noisy = std::min<int>({static_cast<int>(std::llround(0.05 * dropouts)),
                                        static_cast<int>(noisy.size()), dropouts - from_mitigated});
  const int from_pool = dropouts - from_mitigated - from_noisy;
  if (from_pool > static_cast<int>(pool.size())) {
    throw UsageError("infeasible mix: dropout_rate exceeds the share of dropout-capable patterns");
  }

  std::vector<int> label(static_cast<std::size_t>(n), 0);
  auto choose = [&](std::vector<int> members, int k, std::uint64_t stream) {
    Rng rng = Rng::substream(cfg.seed, stream);
    rng.shuffle(std::span<int>(members));
    for (int i = 0; i < k; ++i) label[static_cast<std::size_t>(members[static_cast<std::size_t>(i)])] = 1;
  };
  choose(pool, from_pool, 0xB0011);
  choose(mitigated, from_mitigated, 0xB0012);
  choose(noisy, from_noisy, 0xB0013);

  // Per (subject, period) maximum scores.
  Rng max_rng = Rng::substream(cfg.seed, 0x3A7);
  std::vector<std::vector<double>> max_score(cfg.subjects.size(), std::vector<double>(static_cast<std::size_t>(periods)));
  for (auto& row : max_score) {
    for (auto& m : row) m = std::array<double, 3>{100.0, 120.0, 150.0}[max_rng.below(3)];
  }

  const int width = static_cast<int>(std::to_string(n).size());
  SynthCohort out;
  out.cohort.periods = periods;
  out.cohort.subjects = cfg.subjects;
  out.cohort.students.reserve(static_cast<std::size_t>(n));
  std::vector<std::vector<std::vector<double>>> rel(static_cast<std::size_t>(n));

  for (int i = 0; i < n; ++i) {
    Rng rng = Rng::substream(cfg.seed, static_cast<std::uint64_t>(i) + 1);
    const Pattern pattern = assignment[static_cast<std::size_t>(i)];
    StudentRecord rec;
    std::string id = std::to_string(i + 1);
    rec.student_id = "S" + std::string(static_cast<std::size_t>(width) - id.size(), '0') + id;
    rec.label = label[static_cast<std::size_t>(i)];

    // Onsets leave at least one later period when P allows it, so a
    // persistent change can be told apart from a one-off.
    int onset = 0;
    if (pattern != Pattern::StableControl && pattern != Pattern::NoisyControl) {
      onset = periods >= 3 ? rng.range(std::max(2, periods - 3), periods - 1) : periods;
    }
    // Pool students who stay enrolled recover after the onset period.
    const bool pool = pattern == Pattern::AbsenteeSpikeDecline || pattern == Pattern::PunishmentShockDecline;
    const bool persistent = onset > 0 && (!pool || rec.label == 1);
    const int drop_from = pattern == Pattern::PunishmentShockDecline ? std::min(onset + 1, periods) : onset;
    const bool declines = onset > 0;
    const double drop = declines ? rng.uniform(0.40, 0.60) : 0.0;
    const double noise = cfg.score_noise_sd * (pattern == Pattern::NoisyControl ? 2.5 : 1.0);

    // Scores: per-subject random walk around an ability level.
    const double ability = std::clamp(rng.normal(68.0, 10.0), 25.0, 95.0);
    auto& scores = rel[static_cast<std::size_t>(i)];
    scores.assign(cfg.subjects.size(), std::vector<double>(static_cast<std::size_t>(periods), -1.0));
    for (std::size_t s = 0; s < cfg.subjects.size(); ++s) {
      double level = ability + rng.normal(0.0, 5.0);
      for (int p = 1; p <= periods; ++p) {
        level += rng.normal(0.0, noise * 0.5);
        double value = level + rng.normal(0.0, noise);
        if (declines && p >= drop_from) value *= 1.0 - drop;
        value = std::clamp(value, 0.0, 100.0);
        if (rng.uniform() < cfg.missing_rate) continue;
        scores[s][static_cast<std::size_t>(p - 1)] = value;
      }
    }

    // Behaviour events. Every student keeps a routine of one or two
    // activities; disengaged periods drop it.
    const double regularity = pattern == Pattern::NoisyControl ? 0.5 : 0.9;
    std::vector<std::string> routine = {pick(rng, kActivities)};
    if (rng.uniform() < 0.5) routine.push_back(pick(rng, kActivities));
    const bool spikes = pattern == Pattern::AbsenteeSpikeDecline || pattern == Pattern::RewardMitigated;
    std::vector<int> absences(static_cast<std::size_t>(periods), 0);
    for (int p = 1; p <= periods; ++p) {
      const bool disengaged = pool && p >= onset && (persistent || p == onset);
      int absent = rng.poisson(0.3);
      if (spikes && p == onset) {
        absent = absences[static_cast<std::size_t>(std::max(p - 2, 0))] + rng.range(6, 10);
      } else if (disengaged) {
        absent = rng.range(3, 7);
      }
      absences[static_cast<std::size_t>(p - 1)] = absent;
      add_absences(rec, rng, p, absent);

      for (const auto& activity : routine) {
        if (rng.uniform() < (disengaged ? 0.05 : regularity)) add_event(rec, p, Category::Activity, activity, 1);
      }

      if (pattern == Pattern::RewardMitigated && p >= onset - 1) {
        const int rewards = p == onset ? rng.range(3, 6) : rng.range(1, 3);
        for (int r = 0; r < rewards; ++r) add_event(rec, p, Category::Reward, pick(rng, kMitigatingRewards), 1);
      } else {
        const int rewards = rng.poisson(disengaged ? 0.02 : 0.15);
        for (int r = 0; r < rewards; ++r) add_event(rec, p, Category::Reward, pick(rng, kRoutineRewards), 1);
      }

      if (pattern == Pattern::PunishmentShockDecline && p == onset) {
        add_event(rec, p, Category::Punishment, "severe reprimand", 1, pick(rng, kSevereReasons));
      }
      const int minor = rng.poisson(disengaged ? 0.6 : 0.05);
      for (int m = 0; m < minor; ++m) add_event(rec, p, Category::Punishment, "minor offense", 1, pick(rng, kMinorReasons));
    }

    out.patterns.push_back({rec.student_id, pattern, onset});
    out.cohort.students.push_back(std::move(rec));
  }

  // Exams with class-level ranks.
  for (int c0 = 0; c0 < n; c0 += cfg.class_size) {
    const int c1 = std::min(n, c0 + cfg.class_size);
    const int size = c1 - c0;
    for (std::size_t s = 0; s < cfg.subjects.size(); ++s) {
      for (int p = 1; p <= periods; ++p) {
        const double max = max_score[s][static_cast<std::size_t>(p - 1)];
        std::vector<std::pair<double, int>> present;
        for (int i = c0; i < c1; ++i) {
          const double v = rel[static_cast<std::size_t>(i)][s][static_cast<std::size_t>(p - 1)];
          if (v < 0.0) continue;
          const double raw = std::clamp(std::round(v / 100.0 * max * 2.0) / 2.0, 0.0, max);
          present.emplace_back(raw, i);
        }
        std::stable_sort(present.begin(), present.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
        for (std::size_t r = 0; r < present.size(); ++r) {
          auto& rec = out.cohort.students[static_cast<std::size_t>(present[r].second)];
          rec.exams.push_back({rec.student_id, cfg.subjects[s], p, present[r].first, max, static_cast<int>(r) + 1, size});
        }
      }
    }
  }
  for (auto& rec : out.cohort.students) {
    std::sort(rec.exams.begin(), rec.exams.end(), [&](const ExamEntry& a, const ExamEntry& b) {
      if (a.period != b.period) return a.period < b.period;
      const auto ia = std::find(cfg.subjects.begin(), cfg.subjects.end(), a.subject);
      const auto ib = std::find(cfg.subjects.begin(), cfg.subjects.end(), b.subject);
      return ia < ib;
    });
  }
  return out;
}

void write_patterns(const std::vector<PatternAssignment>& patterns, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  csv::write_row(out, {"student_id", "pattern", "onset_period"});
  for (const auto& p : patterns) csv::write_row(out, {p.student_id, std::string(to_string(p.pattern)), std::to_string(p.onset)});
}

}  // namespace dmsw
