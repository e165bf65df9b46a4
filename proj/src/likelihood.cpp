#include "scrmed/likelihood.hpp"

#include "scrmed/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace scrmed {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double jump_at(const BaselineHazard& h, double t) {
  const auto& ts = h.times();
  const auto it = std::lower_bound(ts.begin(), ts.end(), t);
  if (it == ts.end() || *it != t) return 0.0;
  return h.jumps()[static_cast<std::size_t>(it - ts.begin())];
}

double log_or_neginf(double v) { return v > 0.0 ? std::log(v) : kNegInf; }

double row_logsumexp(const PosteriorMatrix& m, Eigen::Index i) {
  const double mx = m.row(i).maxCoeff();
  if (mx == kNegInf) return kNegInf;
  double s = 0.0;
  for (int u = 0; u < 3; ++u) s += std::exp(m(i, u) - mx);
  return mx + std::log(s);
}

}  // namespace

double compensated_sum(std::span<const double> values) {
  double sum = 0.0, comp = 0.0;
  for (double v : values) {
    const double t = sum + v;
    if (std::abs(sum) >= std::abs(v))
      comp += (sum - t) + v;
    else
      comp += (v - t) + sum;
    sum = t;
  }
  return sum + comp;
}

PosteriorMatrix stratum_log_terms(const Dataset& data, const ParameterSet& params,
                                  const HazardSet& hazards, std::size_t* clamp_counter) {
  const auto n = static_cast<Eigen::Index>(data.size());
  const auto p = static_cast<Eigen::Index>(data.dim());
  if (static_cast<Eigen::Index>(params.dim()) != p)
    throw InvalidInput("parameter dimension does not match covariate dimension");

  PosteriorMatrix out(n, 3);
  const auto& X = data.x();
  for (Eigen::Index i = 0; i < n; ++i) {
    const int a = data.a()[i];
    const int dm = data.delta_m()[i];
    const int dt = data.delta_t()[i];
    const auto x = X.row(i).transpose();

    auto lp = [&](Block b) { return clamp_lp(linear_predictor(params, b, a, x), clamp_counter); };
    const double la1 = params[Block::Alpha1][0] + params[Block::Alpha1].tail(p).dot(x);
    const double la2 = params[Block::Alpha2][0] + params[Block::Alpha2].tail(p).dot(x);
    const double mx = std::max({la1, la2, 0.0});
    const double lnorm = mx + std::log(std::exp(la1 - mx) + std::exp(la2 - mx) + std::exp(-mx));
    const double lw1 = la1 - lnorm, lw2 = la2 - lnorm, lw3 = -lnorm;

    double c1 = kNegInf, c2 = kNegInf, c3 = kNegInf;
    if (dm == 1) {
      const double h1 = cumhaz(hazards[0], data.z()[i]);
      const double h2 = cumhaz(hazards[1], data.v()[i]);
      const double lj1 = log_or_neginf(jump_at(hazards[0], data.z()[i]));
      const double lj2 = dt == 1 ? log_or_neginf(jump_at(hazards[1], data.v()[i])) : 0.0;
      const double m1 = lp(Block::M1), r1 = lp(Block::R1);
      c1 = lw1 + lj1 + m1 - std::exp(m1) * h1 + dt * (lj2 + r1) - std::exp(r1) * h2;
      if (a == 0) {
        const double m2 = lp(Block::M2), r2 = lp(Block::R2);
        c2 = lw2 + lj1 + m2 - std::exp(m2) * h1 + dt * (lj2 + r2) - std::exp(r2) * h2;
      }
    } else if (dt == 1) {
      const double h3 = cumhaz(hazards[2], data.y()[i]);
      const double lj3 = log_or_neginf(jump_at(hazards[2], data.y()[i]));
      const double t3 = lp(Block::T3);
      c3 = lw3 + lj3 + t3 - std::exp(t3) * h3;
      if (a == 1) {
        const double t2 = lp(Block::T2);
        c2 = lw2 + lj3 + t2 - std::exp(t2) * h3;
      }
    } else {
      const double h1 = cumhaz(hazards[0], data.z()[i]);
      const double h3 = cumhaz(hazards[2], data.y()[i]);
      c1 = lw1 - std::exp(lp(Block::M1)) * h1;
      c2 = lw2 - (a == 0 ? std::exp(lp(Block::M2)) * h1 : std::exp(lp(Block::T2)) * h3);
      c3 = lw3 - std::exp(lp(Block::T3)) * h3;
    }
    // 0 * -inf from an absent gap jump when delta_t = 0 is avoided above.
    out(i, 0) = std::isnan(c1) ? kNegInf : c1;
    out(i, 1) = std::isnan(c2) ? kNegInf : c2;
    out(i, 2) = std::isnan(c3) ? kNegInf : c3;
  }
  return out;
}

LikelihoodBreakdown observed_loglik(const Dataset& data, const ParameterSet& params,
                                    const HazardSet& hazards) {
  const PosteriorMatrix terms = stratum_log_terms(data, params, hazards);
  LikelihoodBreakdown out;
  const auto n = data.size();
  out.kinds.resize(n);
  out.log_contributions.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.kinds[i] = contribution_kind(data.delta_m()[i], data.delta_t()[i]);
    const double l = row_logsumexp(terms, static_cast<Eigen::Index>(i));
    if (!std::isfinite(l))
      throw UnderflowError(data.ids()[i], "subject likelihood is not positive");
    out.log_contributions[i] = l;
  }
  out.total = compensated_sum(out.log_contributions);
  return out;
}

KaplanMeier::KaplanMeier(std::span<const double> times, std::span<const int> events) {
  if (times.empty()) throw InvalidInput("Kaplan-Meier needs at least one observation");
  if (times.size() != events.size()) throw InvalidInput("times and events differ in length");
  std::vector<std::size_t> order(times.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!(times[i] > 0.0) || !std::isfinite(times[i])) throw InvalidInput("Kaplan-Meier times must be positive");
    if (events[i] != 0 && events[i] != 1) throw InvalidInput("Kaplan-Meier events must be 0 or 1");
  }
  // Deaths precede censorings at tied times.
  std::sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) {
    if (times[l] != times[r]) return times[l] < times[r];
    return events[l] > events[r];
  });
  double at_risk = static_cast<double>(times.size());
  double s = 1.0;
  std::size_t k = 0;
  while (k < order.size()) {
    const double t = times[order[k]];
    double deaths = 0.0, leaving = 0.0;
    while (k < order.size() && times[order[k]] == t) {
      deaths += events[order[k]];
      leaving += 1.0;
      ++k;
    }
    if (deaths > 0.0) {
      s *= 1.0 - deaths / at_risk;
      times_.push_back(t);
      surv_.push_back(s);
    }
    at_risk -= leaving;
  }
}

double KaplanMeier::operator()(double t) const {
  const auto k = static_cast<std::size_t>(std::upper_bound(times_.begin(), times_.end(), t) - times_.begin());
  return k == 0 ? 1.0 : surv_[k - 1];
}

EffectCurve population_average_survival(const FittedModel& fit, const Dataset& data, int arm,
                                        std::span<const double> grid) {
  if (arm != 0 && arm != 1) throw InvalidInput("arm must be 0 or 1");
  double limit = std::numeric_limits<double>::infinity();
  for (int u = 1; u <= 3; ++u) limit = std::min(limit, survival_support(fit, arm, u));

  EffectCurve curve;
  curve.name = "population_survival_a" + std::to_string(arm);
  std::vector<Eigen::Index> members;
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(data.size()); ++i)
    if (data.a()[i] == arm) members.push_back(i);
  if (members.empty()) throw InvalidInput("no subjects in arm " + std::to_string(arm));

  std::vector<std::array<double, 3>> weights;
  weights.reserve(members.size());
  for (auto i : members)
    weights.push_back(stratum_weights(Eigen::Ref<const Vector>(data.x().row(i).transpose()),
                                      fit.params[Block::Alpha1], fit.params[Block::Alpha2]));

  std::vector<double> terms(members.size());
  for (double t : grid) {
    if (t > limit) {
      ++curve.truncated;
      continue;
    }
    for (std::size_t k = 0; k < members.size(); ++k) {
      const Vector x = data.x().row(members[k]).transpose();
      double s = 0.0;
      for (int u = 1; u <= 3; ++u) s += weights[k][u - 1] * stratum_survival(t, x, arm, u, fit);
      terms[k] = s;
    }
    curve.grid.push_back(t);
    curve.values.push_back(compensated_sum(terms) / static_cast<double>(members.size()));
  }
  return curve;
}

}  // namespace scrmed
