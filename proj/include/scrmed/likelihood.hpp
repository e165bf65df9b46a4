#pragma once

#include "scrmed/curve.hpp"
#include "scrmed/model.hpp"

#include <span>
#include <vector>

namespace scrmed {

enum class ContributionKind : int {
  Intermediate = 1,  ///< delta_m = 1
  TerminalOnly = 2,  ///< delta_m = 0, delta_t = 1
  Censored = 3,      ///< delta_m = delta_t = 0
};

inline ContributionKind contribution_kind(int delta_m, int delta_t) {
  if (delta_m == 1) return ContributionKind::Intermediate;
  return delta_t == 1 ? ContributionKind::TerminalOnly : ContributionKind::Censored;
}

struct LikelihoodBreakdown {
  std::vector<ContributionKind> kinds;
  std::vector<double> log_contributions;
  double total = 0.0;
};

/// Per-subject log of each stratum's term in the observed-data likelihood
/// (prior weight times the stratum's joint density/survival of the observed
/// history). Structurally excluded strata are -inf. Rows log-sum-exp to the
/// subject's log-likelihood contribution; their softmax is the E-step posterior.
PosteriorMatrix stratum_log_terms(const Dataset& data, const ParameterSet& params,
                                  const HazardSet& hazards, std::size_t* clamp_counter = nullptr);

/// Observed-data log-likelihood with per-subject breakdown.
/// Throws UnderflowError naming the first subject whose contribution is not positive.
LikelihoodBreakdown observed_loglik(const Dataset& data, const ParameterSet& params,
                                    const HazardSet& hazards);

/// Neumaier-compensated sum.
double compensated_sum(std::span<const double> values);

/// Product-limit survival curve; S(t) is right-continuous and steps at event times.
class KaplanMeier {
 public:
  KaplanMeier(std::span<const double> times, std::span<const int> events);

  const std::vector<double>& times() const { return times_; }
  const std::vector<double>& survival() const { return surv_; }
  double operator()(double t) const;

 private:
  std::vector<double> times_;
  std::vector<double> surv_;
};

inline KaplanMeier kaplan_meier(std::span<const double> times, std::span<const int> events) {
  return KaplanMeier(times, events);
}

/// Arm-wise mixture survival sum_u w_u(x_i) S_u(t | x_i, arm), averaged over the
/// subjects of that arm. Grid points beyond the fitted support are dropped and
/// counted in EffectCurve::truncated.
EffectCurve population_average_survival(const FittedModel& fit, const Dataset& data, int arm,
                                        std::span<const double> grid);

}  // namespace scrmed
