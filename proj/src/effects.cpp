#include "scrmed/effects.hpp"

#include "scrmed/errors.hpp"
#include "scrmed/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace scrmed {

namespace {

void require_usable(const FittedModel& fit, const Eigen::Ref<const Vector>& x, double t) {
  if (!fit.converged) throw InvalidInput("effects require a converged fit");
  if (static_cast<std::size_t>(x.size()) != fit.params.dim())
    throw InvalidInput("covariate profile has " + std::to_string(x.size()) + " entries, model expects " +
                       std::to_string(fit.params.dim()));
  if (!(t >= 0.0)) throw InvalidInput("effects requested at negative time");
}

void require_support(EffectName e, const FittedModel& fit, double t) {
  const double limit = effect_support(e, fit);
  if (t > limit) throw OutOfSupport(t, limit);
}

double expo(const FittedModel& fit, Block b, int a, const Eigen::Ref<const Vector>& x) {
  return std::exp(clamp_lp(linear_predictor(fit.params, b, a, x)));
}

/// Walks the illness jumps t1j <= t and hands each callback the illness jump
/// size, the illness cumulated value through t1j, and Lambda2(t - t1j).
template <class F>
void for_each_illness_jump(double t, const FittedModel& fit, F&& f) {
  const auto& h1 = fit.hazards[0];
  const auto& h2 = fit.hazards[1];
  const std::size_t m1 = h1.count_at_or_before(t);
  std::size_t k = h2.count_at_or_before(t);
  for (std::size_t j = 0; j < m1; ++j) {
    const double residual = t - h1.times()[j];
    while (k > 0 && h2.times()[k - 1] > residual) --k;
    const double gap_cum = k == 0 ? 0.0 : h2.cumulative()[k - 1];
    f(h1.jumps()[j], h1.cumulative()[j], gap_cum);
  }
}

}  // namespace

std::string effect_name(EffectName e) {
  switch (e) {
    case EffectName::NIE1: return "NIE1";
    case EffectName::NDE1: return "NDE1";
    case EffectName::TE1: return "TE1";
    case EffectName::TE2: return "TE2";
    case EffectName::TE3: return "TE3";
    case EffectName::NIE1_marginal: return "NIE1_marginal";
    case EffectName::NDE1_marginal: return "NDE1_marginal";
  }
  return "?";
}

EffectName parse_effect_name(const std::string& s) {
  for (auto e : {EffectName::NIE1, EffectName::NDE1, EffectName::TE1, EffectName::TE2, EffectName::TE3,
                 EffectName::NIE1_marginal, EffectName::NDE1_marginal})
    if (effect_name(e) == s) return e;
  throw InvalidInput("unknown effect name '" + s + "'");
}

bool is_marginal(EffectName e) { return e == EffectName::NIE1_marginal || e == EffectName::NDE1_marginal; }

double effect_support(EffectName e, const FittedModel& fit) {
  const double t1 = fit.hazards[0].support_limit();
  const double t2 = fit.hazards[1].support_limit();
  const double t3 = fit.hazards[2].support_limit();
  switch (e) {
    case EffectName::TE3: return t3;
    case EffectName::TE2: return std::min({t1, t2, t3});
    default: return std::min(t1, t2);
  }
}

double nie1(double t, const Eigen::Ref<const Vector>& x, const FittedModel& fit) {
  require_usable(fit, x, t);
  require_support(EffectName::NIE1, fit, t);
  const double m_treated = expo(fit, Block::M1, 1, x);
  const double m_control = expo(fit, Block::M1, 0, x);
  const double r_treated = expo(fit, Block::R1, 1, x);
  double sum = 0.0;
  for_each_illness_jump(t, fit, [&](double jump, double cum1, double cum2) {
    sum += std::exp(-cum2 * r_treated) * jump *
           (m_treated * std::exp(-cum1 * m_treated) - m_control * std::exp(-cum1 * m_control));
  });
  const double c1 = cumhaz(fit.hazards[0], t);
  return sum + std::exp(-c1 * m_treated) - std::exp(-c1 * m_control);
}

double nde1(double t, const Eigen::Ref<const Vector>& x, const FittedModel& fit) {
  require_usable(fit, x, t);
  require_support(EffectName::NDE1, fit, t);
  const double m_control = expo(fit, Block::M1, 0, x);
  const double r_treated = expo(fit, Block::R1, 1, x);
  const double r_control = expo(fit, Block::R1, 0, x);
  double sum = 0.0;
  for_each_illness_jump(t, fit, [&](double jump, double cum1, double cum2) {
    sum += (std::exp(-cum2 * r_treated) - std::exp(-cum2 * r_control)) * jump * m_control *
           std::exp(-cum1 * m_control);
  });
  return sum;
}

double te1(double t, const Eigen::Ref<const Vector>& x, const FittedModel& fit) {
  return nie1(t, x, fit) + nde1(t, x, fit);
}

double te2(double t, const Eigen::Ref<const Vector>& x, const FittedModel& fit) {
  require_usable(fit, x, t);
  require_support(EffectName::TE2, fit, t);
  const double direct = expo(fit, Block::T2, 1, x);
  const double m2 = expo(fit, Block::M2, 0, x);
  const double r2 = expo(fit, Block::R2, 0, x);
  double sum = 0.0;
  for_each_illness_jump(t, fit, [&](double jump, double cum1, double cum2) {
    sum += jump * m2 * std::exp(-cum1 * m2) * (1.0 - std::exp(-cum2 * r2));
  });
  return std::exp(-cumhaz(fit.hazards[2], t) * direct) - 1.0 + sum;
}

double te3(double t, const Eigen::Ref<const Vector>& x, const FittedModel& fit) {
  require_usable(fit, x, t);
  require_support(EffectName::TE3, fit, t);
  const double c3 = cumhaz(fit.hazards[2], t);
  return std::exp(-c3 * expo(fit, Block::T3, 1, x)) - std::exp(-c3 * expo(fit, Block::T3, 0, x));
}

MarginalEffects marginal_effects(double t, const FittedModel& fit, const Dataset& data) {
  if (data.size() == 0) throw InvalidInput("marginal effects need at least one subject");
  if (data.dim() != fit.params.dim()) throw InvalidInput("data dimension does not match the fit");
  std::vector<double> w(data.size()), wnie(data.size()), wnde(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Vector x = data.x().row(static_cast<Eigen::Index>(i)).transpose();
    w[i] = stratum_weights(x, fit.params[Block::Alpha1], fit.params[Block::Alpha2])[0];
    wnie[i] = w[i] * nie1(t, x, fit);
    wnde[i] = w[i] * nde1(t, x, fit);
  }
  const double total = compensated_sum(w);
  if (!(total > std::numeric_limits<double>::min()))
    throw NumericalError("stratum 1 has numerically zero weight; marginal effects are undefined");
  return {compensated_sum(wnie) / total, compensated_sum(wnde) / total};
}

double evaluate_effect(EffectName e, double t, const FittedModel& fit, const std::optional<Vector>& x,
                       const Dataset* data) {
  if (is_marginal(e)) {
    if (!data) throw InvalidInput("marginal effects need the analysis data");
    const auto m = marginal_effects(t, fit, *data);
    return e == EffectName::NIE1_marginal ? m.nie1 : m.nde1;
  }
  if (!x) throw InvalidInput("conditional effects need a covariate profile");
  switch (e) {
    case EffectName::NIE1: return nie1(t, *x, fit);
    case EffectName::NDE1: return nde1(t, *x, fit);
    case EffectName::TE1: return te1(t, *x, fit);
    case EffectName::TE2: return te2(t, *x, fit);
    case EffectName::TE3: return te3(t, *x, fit);
    default: break;
  }
  throw InvalidInput("unhandled effect");
}

EffectCurve effect_curve(EffectName e, const FittedModel& fit, std::span<const double> grid,
                         const std::optional<Vector>& x, const Dataset* data) {
  EffectCurve c;
  c.name = effect_name(e);
  if (!is_marginal(e) && x) c.covariate_profile = std::vector<double>(x->data(), x->data() + x->size());
  const double limit = effect_support(e, fit);
  for (double t : grid) {
    if (t > limit) {
      ++c.truncated;
      continue;
    }
    c.grid.push_back(t);
    c.values.push_back(evaluate_effect(e, t, fit, x, data));
  }
  return c;
}

std::vector<double> default_grid(const Dataset& data, std::size_t points) {
  if (data.size() == 0) throw InvalidInput("cannot build a grid from empty data");
  if (points < 2) throw InvalidInput("grid needs at least two points");
  std::vector<double> y(data.y().data(), data.y().data() + data.size());
  std::sort(y.begin(), y.end());
  // Linear interpolation between order statistics.
  const double pos = 0.95 * static_cast<double>(y.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, y.size() - 1);
  const double upper = y[lo] + (pos - static_cast<double>(lo)) * (y[hi] - y[lo]);
  std::vector<double> g(points);
  for (std::size_t k = 0; k < points; ++k)
    g[k] = upper * static_cast<double>(k) / static_cast<double>(points - 1);
  return g;
}

}  // namespace scrmed
