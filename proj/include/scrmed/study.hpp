#pragma once

#include "scrmed/effects.hpp"
#include "scrmed/em.hpp"
#include "scrmed/simulate.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace scrmed {

struct EffectPoint {
  EffectName name;
  double t;
};

/// NDE1 and NIE1 at t = 2, 4, 6; TE2 and TE3 at t = 2, 4, 6, 8.
std::vector<EffectPoint> table2_points();

struct StudyConfig {
  std::size_t n = 2000;
  std::size_t replicates = 200;
  std::uint64_t seed = 1;
  std::size_t bootstrap_n = 100;
  /// Replicates run in parallel; each bootstrap is single-threaded.
  std::size_t threads = 1;
  EmConfig em = [] {
    EmConfig c;
    c.accelerate = true;
    return c;
  }();
  Vector profile = (Vector(2) << 0.5, 0.5).finished();
  std::vector<EffectPoint> effect_points = table2_points();
  /// Starts for each replicate's base fit (see EmConfig::n_starts); refits use `em`.
  std::size_t base_starts = 5;
  /// Called after each replicate with (done, total).
  std::function<void(std::size_t, std::size_t)> progress;

  void validate() const;
};

struct ReplicateOutcome {
  bool fit_ok = false;
  bool boot_ok = false;
  std::string error;
  Vector estimate;
  Vector see;
  /// NaN where the point fell outside the fitted support.
  std::vector<double> effect_estimate;
  std::vector<double> effect_see;
};

struct SummaryRow {
  std::string quantity;
  double t = 0.0;  // NaN for parameters
  double truth = 0.0;
  double bias = 0.0;
  double se = 0.0;
  double see = 0.0;
  double cp = 0.0;
  std::size_t n_used = 0;
};

struct StudyResult {
  std::vector<ReplicateOutcome> replicates;
  std::vector<SummaryRow> table1;
  std::vector<SummaryRow> table2;
  std::size_t n_fit_failed = 0;
  std::size_t n_boot_failed = 0;
};

/// Seed of replicate r's dataset and of its bootstrap.
std::uint64_t replicate_seed(std::uint64_t seed, std::size_t r, std::uint64_t stream);

ReplicateOutcome run_replicate(const StudyConfig& config, std::size_t r);
StudyResult run_study(const StudyConfig& config);

/// Summaries over fitted replicates: bias and SE over all fits, SEE and CP over
/// fits whose bootstrap succeeded. Effect rows use only in-support replicates.
void summarize_study(const StudyConfig& config, StudyResult& result);

/// quantity,t,truth,bias,se,see,cp,n_used
void write_summary(std::ostream& out, const std::vector<SummaryRow>& rows);

}  // namespace scrmed
