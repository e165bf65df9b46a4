#pragma once

#include "scrmed/curve.hpp"
#include "scrmed/effects.hpp"
#include "scrmed/em.hpp"
#include "scrmed/model.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace scrmed {

/// A conditional (profile set) or marginal effect curve to carry through the bootstrap.
struct EffectRequest {
  EffectName name = EffectName::NIE1;
  std::optional<Vector> profile;
};

struct BootstrapConfig {
  std::size_t n_resamples = 100;
  std::uint64_t seed = 0;
  /// Worker threads; 0 means all hardware threads. Results do not depend on it.
  std::size_t threads = 1;
  EmConfig em;
  /// Start every refit from the base estimate.
  bool warm_start = true;
  /// With warm_start, also refit from the default start and keep the higher
  /// likelihood, so a multimodal likelihood does not pin resamples to the base mode.
  bool cold_restart = true;
  /// Percentile intervals instead of estimate +/- 1.96 SE.
  bool percentile = false;
  /// Test hook: every resample is the original data.
  bool identity_resample = false;
  std::vector<double> grid;
  std::vector<EffectRequest> effects;
  /// Largest tolerated share of failed resamples.
  double max_failure_share = 0.2;

  void validate() const;
};

struct BootstrapResult {
  std::size_t n_resamples = 0;
  std::size_t n_failed = 0;
  std::uint64_t seed = 0;
  /// Free parameters only; columns pinned by the fit are left out.
  std::vector<std::string> names;
  std::vector<double> estimate;
  std::vector<double> se;
  std::vector<double> ci_low;
  std::vector<double> ci_high;
  /// Base-fit curves with se / ci filled per grid point (NaN where no resample reached it).
  std::vector<EffectCurve> curves;
  /// Row b holds the flattened free parameters of resample b (NaN rows for failures).
  Matrix replicates;
};

/// Row indices of resample `index` (n draws with replacement).
std::vector<std::size_t> resample_rows(std::size_t n, std::uint64_t seed, std::size_t index);

BootstrapResult bootstrap(const Dataset& data, const FittedModel& base, const BootstrapConfig& config);
/// Fits the base model first.
BootstrapResult bootstrap(const Dataset& data, const BootstrapConfig& config);

struct WaldTest {
  std::string name;
  double estimate = 0.0;
  double se = 0.0;
  /// Absent when the SE is zero or not finite.
  std::optional<double> z;
  std::optional<double> p_value;
};

WaldTest wald_test(const std::string& name, double estimate, double se);
std::vector<WaldTest> wald_tests(const BootstrapResult& boot);

struct SensitivitySummary {
  double original_avg_w2 = 0.0;
  double swapped_avg_w2 = 0.0;
  bool original_converged = false;
  bool swapped_converged = false;
  double original_loglik = 0.0;
  double swapped_loglik = 0.0;
  std::size_t original_iters = 0;
  std::size_t swapped_iters = 0;
  /// Set when the swapped refit broke down numerically; its other fields are then NaN or zero.
  std::string swapped_error;
};

/// Mean fitted prior weight P(U=2 | x_i) over the sample.
double average_w2(const FittedModel& fit, const Dataset& data);

/// Refits with a -> 1 - a and compares the average stratum-2 weight with the original fit.
/// Failure of the original fit propagates; failure of the swapped one is recorded.
SensitivitySummary label_swap_sensitivity(const Dataset& data, const EmConfig& config = {});

}  // namespace scrmed
