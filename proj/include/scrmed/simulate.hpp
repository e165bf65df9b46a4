#pragma once

#include "scrmed/curve.hpp"
#include "scrmed/effects.hpp"
#include "scrmed/model.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace scrmed {

enum class HazardForm { Linear, Log };

HazardForm parse_hazard_form(const std::string& name);
std::string hazard_form_name(HazardForm f);

/// Smooth baseline cumulative hazard: scale * t (linear) or scale * log(1 + t) (log).
struct CumulativeHazard {
  HazardForm form = HazardForm::Linear;
  double scale = 1.0;

  double operator()(double t) const;
  double rate(double t) const;
  double inverse(double h) const;
};

enum class CovariateKind { StandardNormal, Uniform01 };

struct GenerativeSpec {
  std::size_t n = 1000;
  ParameterSet true_params;
  std::array<CumulativeHazard, 3> baseline{};
  /// Censoring C ~ Uniform(0, censor_max); +inf disables censoring.
  double censor_max = 15.0;
  std::vector<CovariateKind> covariates;
  double treat_probability = 0.5;
  std::uint64_t seed = 0;

  void validate() const;

  /// The two-covariate simulation design: X1 ~ N(0,1), X2 ~ U(0,1), A ~ Bin(0.5),
  /// Lambda1 = t, Lambda2 = 0.2t, Lambda3 = log(1+t), C ~ U(0, 15).
  static GenerativeSpec reference_design(std::size_t n, std::uint64_t seed);
  static ParameterSet reference_parameters();
};

/// Inverse-CDF draw from S(t) = exp(-Lambda(t) e^lp) at uniform u in (0,1).
double sample_event_time(const CumulativeHazard& hazard, double linear_predictor, double u);

/// Per-subject latent quantities kept apart from the analysis data.
struct HiddenTruth {
  std::vector<int> stratum;
  /// Uncensored intermediate-event time; empty when the event never occurs.
  std::vector<std::optional<double>> m_time;
  std::vector<double> t_time;
};

struct SimulatedData {
  Dataset data;
  HiddenTruth truth;
};

SimulatedData generate(const GenerativeSpec& spec);

/// Uniform in (0,1) keyed by (seed, subject, role); independent of draw order.
double keyed_uniform(std::uint64_t seed, std::uint64_t subject, std::uint64_t role);

/// Ground-truth conditional effect at t by adaptive quadrature of the continuous formulas.
double true_effect(EffectName name, const GenerativeSpec& spec, double t, const Vector& x);

/// NIE1, NDE1, TE2, TE3 truth curves on a grid for covariate profile x.
std::vector<EffectCurve> true_effects(const GenerativeSpec& spec, const std::vector<double>& grid,
                                      const Vector& x);

/// True S(t | x, a, u) under the generative model (quadrature for illness paths).
double true_stratum_survival(const GenerativeSpec& spec, double t, const Vector& x, int a, int u);

}  // namespace scrmed
