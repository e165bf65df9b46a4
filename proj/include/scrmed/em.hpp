#pragma once

#include "scrmed/model.hpp"

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

namespace scrmed {

struct EmConfig {
  double tol = 1e-6;
  std::size_t max_outer_iters = 5000;
  double inner_newton_tol = 1e-8;
  std::size_t inner_max_iters = 50;
  std::size_t step_halving_max = 20;
  std::optional<std::uint64_t> seed;
  /// Generalized EM: one ascent Newton step per block instead of a full solve.
  bool single_newton_step = false;
  /// Squared-extrapolation acceleration of the EM map (same fixed point and
  /// stopping rule, likelihood kept nondecreasing). Off by default.
  bool accelerate = false;
  /// Extra starts from jittered coefficients; the best converged fit wins.
  std::size_t n_starts = 1;
  /// Normal sd of the jitter; wide enough to reach other modes of the likelihood.
  double start_jitter = 1.0;

  void validate() const;
};

/// Starting point for fit(); hazards are transferred onto the new data's jump
/// times by differencing their cumulated values.
struct WarmStart {
  ParameterSet params;
  std::optional<HazardSet> hazards;
};

/// Distinct event times per scale: illness times Z (delta_m = 1), gap times
/// V (delta_m = delta_t = 1), direct terminal times Y (delta_m = 0, delta_t = 1).
std::array<std::vector<double>, 3> event_time_grid(const Dataset& data);

/// Posterior stratum probabilities given current parameters.
PosteriorMatrix e_step(const Dataset& data, const ParameterSet& params, const HazardSet& hazards);

/// Breslow-type closed-form jump sizes on the data's event-time grids.
HazardSet m_step_hazards(const Dataset& data, const PosteriorMatrix& posteriors,
                         const ParameterSet& params);

/// Profiled weighted partial log-likelihood of one eta block (other blocks held
/// at `params`), with its score and Hessian. Maximizing it solves the block's
/// weighted score equation.
struct ScoreEvaluation {
  double value = 0.0;
  Vector gradient;
  Matrix hessian;
};

ScoreEvaluation eta_objective(Block block, const Dataset& data, const PosteriorMatrix& posteriors,
                              const ParameterSet& params, const Vector& eta);

/// Weighted multinomial-logit log-likelihood in (alpha1, alpha2) stacked.
ScoreEvaluation alpha_objective(const PosteriorMatrix& posteriors, const Matrix& x,
                                const Vector& alpha_stacked);

/// Root of one eta block's weighted score equation by damped Newton.
/// `params` supplies the warm start for `block` and the partner block sharing its baseline.
/// `active` masks coefficient positions (false = pinned at its warm-start value).
Vector m_step_eta(Block block, const Dataset& data, const PosteriorMatrix& posteriors,
                  const ParameterSet& params, const EmConfig& config = {},
                  const std::vector<bool>& active = {});

std::pair<Vector, Vector> m_step_alpha(const PosteriorMatrix& posteriors, const Matrix& x,
                                       const Vector& alpha1, const Vector& alpha2,
                                       const EmConfig& config = {},
                                       const std::vector<bool>& active = {});

FittedModel fit(const Dataset& data, const EmConfig& config = {},
                const std::optional<WarmStart>& warm = std::nullopt);

/// Fit with stratum membership fixed to the given posteriors (no E-step);
/// alternates hazards and eta blocks until convergence. Used for oracle checks.
FittedModel fit_with_fixed_posteriors(const Dataset& data, const PosteriorMatrix& posteriors,
                                      const EmConfig& config = {});

/// Column centering and scaling for better-conditioned fits. restore() maps a fit
/// on standardized covariates back to the original scale exactly: slopes are
/// divided by the scale, and the centering offsets move into the intercept
/// blocks and the baseline hazards.
struct Standardization {
  Vector mean;
  Vector sd;

  static Standardization of(const Matrix& x);
  Vector apply(const Vector& x) const;
  Dataset apply(const Dataset& data) const;
  FittedModel restore(const FittedModel& fit) const;
};

/// Covariate columns with no variation across subjects.
std::vector<std::size_t> zero_variance_columns(const Matrix& x);

}  // namespace scrmed
