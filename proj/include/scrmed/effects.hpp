#pragma once

#include "scrmed/curve.hpp"
#include "scrmed/model.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace scrmed {

enum class EffectName { NIE1, NDE1, TE1, TE2, TE3, NIE1_marginal, NDE1_marginal };

std::string effect_name(EffectName e);
EffectName parse_effect_name(const std::string& s);
bool is_marginal(EffectName e);

/// Largest t at which an effect can be evaluated on this fit.
double effect_support(EffectName e, const FittedModel& fit);

// Plug-in stratum-specific effects at covariate profile x (no intercept).
// All throw OutOfSupport past the relevant last jump time.

/// Survival under the treated mediator law minus under the control mediator law,
/// both with the treated residual process (stratum 1).
double nie1(double t, const Eigen::Ref<const Vector>& x, const FittedModel& fit);
/// Treated minus control residual process, both under the control mediator law (stratum 1).
double nde1(double t, const Eigen::Ref<const Vector>& x, const FittedModel& fit);
double te1(double t, const Eigen::Ref<const Vector>& x, const FittedModel& fit);
/// Total effect in the prevented stratum.
double te2(double t, const Eigen::Ref<const Vector>& x, const FittedModel& fit);
/// Total effect in the always non-susceptible stratum.
double te3(double t, const Eigen::Ref<const Vector>& x, const FittedModel& fit);

struct MarginalEffects {
  double nie1 = 0.0;
  double nde1 = 0.0;
};

/// w1-weighted averages of NIE1/NDE1 over the empirical covariate distribution.
MarginalEffects marginal_effects(double t, const FittedModel& fit, const Dataset& data);

/// Evaluates a conditional (x given) or marginal (data given) effect.
double evaluate_effect(EffectName e, double t, const FittedModel& fit,
                       const std::optional<Vector>& x, const Dataset* data);

/// Curve over `grid`; points beyond support are dropped and counted in `truncated`.
EffectCurve effect_curve(EffectName e, const FittedModel& fit, std::span<const double> grid,
                         const std::optional<Vector>& x, const Dataset* data = nullptr);

/// `points` equally spaced times from 0 to the 95th percentile of observed y.
std::vector<double> default_grid(const Dataset& data, std::size_t points = 100);

}  // namespace scrmed
