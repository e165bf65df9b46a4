#include "scrmed/simulate.hpp"

#include "scrmed/errors.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <limits>
#include <numbers>

namespace scrmed {

namespace {

// Stream roles for keyed draws. Covariate j uses kCovariateBase + 2j and + 2j + 1.
enum Role : std::uint64_t {
  kTreatment = 1,
  kStratum = 2,
  kIllness = 3,
  kResidual = 4,
  kDirect = 5,
  kCensoring = 6,
  kCovariateBase = 100,
};

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr double kQuadTol = 1e-8;

template <class F>
double integrate(F&& f, double lo, double hi) {
  if (hi <= lo) return 0.0;
  double err = 0.0;
  const double v = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, lo, hi, 15, 1e-12, &err);
  if (!std::isfinite(v) || err > kQuadTol)
    throw NumericalError("quadrature did not reach tolerance (error estimate " + std::to_string(err) + ")");
  return v;
}

double expo(const ParameterSet& p, Block b, int a, const Vector& x) {
  return std::exp(linear_predictor(p, b, a, x));
}

/// P(T >= t) along healthy -> illness -> death with illness and residual multipliers.
double path_survival(const GenerativeSpec& s, double t, double em, double er) {
  const auto& l1 = s.baseline[0];
  const auto& l2 = s.baseline[1];
  const double through_illness = integrate(
      [&](double m) { return l1.rate(m) * em * std::exp(-l1(m) * em) * std::exp(-l2(t - m) * er); }, 0.0, t);
  return std::exp(-l1(t) * em) + through_illness;
}

}  // namespace

HazardForm parse_hazard_form(const std::string& name) {
  if (name == "linear") return HazardForm::Linear;
  if (name == "log") return HazardForm::Log;
  throw InvalidInput("unsupported hazard form '" + name + "' (expected linear or log)");
}

std::string hazard_form_name(HazardForm f) { return f == HazardForm::Linear ? "linear" : "log"; }

double CumulativeHazard::operator()(double t) const {
  return form == HazardForm::Linear ? scale * t : scale * std::log1p(t);
}

double CumulativeHazard::rate(double t) const {
  return form == HazardForm::Linear ? scale : scale / (1.0 + t);
}

double CumulativeHazard::inverse(double h) const {
  return form == HazardForm::Linear ? h / scale : std::expm1(h / scale);
}

void GenerativeSpec::validate() const {
  if (n < 1) throw InvalidInput("n must be at least 1");
  if (!(censor_max > 0.0)) throw InvalidInput("censor_max must be positive");
  for (const auto& h : baseline)
    if (!(h.scale > 0.0) || !std::isfinite(h.scale)) throw InvalidInput("hazard scales must be positive");
  if (true_params.dim() != covariates.size())
    throw InvalidInput("true parameters do not match the covariate specification");
  if (!true_params.all_finite()) throw InvalidInput("true parameters must be finite");
  if (!(treat_probability > 0.0 && treat_probability < 1.0))
    throw InvalidInput("treatment probability must lie in (0, 1)");
}

ParameterSet GenerativeSpec::reference_parameters() {
  ParameterSet p(2);
  p[Block::M1] << 0.5, 0.5, 0.5;
  p[Block::R1] << 0.5, -0.2, -0.2;
  p[Block::M2] << -0.2, 0.4, 0.5;
  p[Block::R2] << 0.4, 0.5, 0.5;
  p[Block::T2] << 0.0, -0.5, -0.2;
  p[Block::T3] << 0.2, -0.2, 0.0;
  p[Block::Alpha1] << 0.0, 0.3, 0.1;
  p[Block::Alpha2] << 0.2, -0.5, 0.3;
  return p;
}

GenerativeSpec GenerativeSpec::reference_design(std::size_t n, std::uint64_t seed) {
  GenerativeSpec s;
  s.n = n;
  s.seed = seed;
  s.true_params = reference_parameters();
  s.baseline = {CumulativeHazard{HazardForm::Linear, 1.0}, CumulativeHazard{HazardForm::Linear, 0.2},
                CumulativeHazard{HazardForm::Log, 1.0}};
  s.censor_max = 15.0;
  s.covariates = {CovariateKind::StandardNormal, CovariateKind::Uniform01};
  return s;
}

double keyed_uniform(std::uint64_t seed, std::uint64_t subject, std::uint64_t role) {
  const std::uint64_t h = splitmix64(splitmix64(splitmix64(seed) ^ subject) ^ role);
  return (static_cast<double>(h >> 11) + 0.5) * 0x1.0p-53;
}

double sample_event_time(const CumulativeHazard& hazard, double linear_predictor, double u) {
  if (!(u > 0.0 && u < 1.0)) throw InvalidInput("uniform draw must lie in (0, 1)");
  return hazard.inverse(-std::log(u) * std::exp(-linear_predictor));
}

SimulatedData generate(const GenerativeSpec& spec) {
  spec.validate();
  const auto p = spec.covariates.size();
  const auto& th = spec.true_params;
  std::vector<SubjectRecord> records(spec.n);
  HiddenTruth truth;
  truth.stratum.resize(spec.n);
  truth.m_time.resize(spec.n);
  truth.t_time.resize(spec.n);

  for (std::size_t i = 0; i < spec.n; ++i) {
    const std::uint64_t sid = i + 1;
    auto draw = [&](std::uint64_t role) { return keyed_uniform(spec.seed, sid, role); };
    Vector x(static_cast<Eigen::Index>(p));
    for (std::size_t j = 0; j < p; ++j) {
      const double u1 = draw(kCovariateBase + 2 * j);
      if (spec.covariates[j] == CovariateKind::Uniform01) {
        x[static_cast<Eigen::Index>(j)] = u1;
      } else {
        const double u2 = draw(kCovariateBase + 2 * j + 1);
        x[static_cast<Eigen::Index>(j)] = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
      }
    }
    const int a = draw(kTreatment) < spec.treat_probability ? 1 : 0;
    const auto w = stratum_weights(x, th[Block::Alpha1], th[Block::Alpha2]);
    const double us = draw(kStratum);
    const int u = us < w[0] ? 1 : (us < w[0] + w[1] ? 2 : 3);

    std::optional<double> m;
    double t = 0.0;
    if (u == 1 || (u == 2 && a == 0)) {
      const Block bm = u == 1 ? Block::M1 : Block::M2;
      const Block br = u == 1 ? Block::R1 : Block::R2;
      const double mt = sample_event_time(spec.baseline[0], linear_predictor(th, bm, a, x), draw(kIllness));
      const double r = sample_event_time(spec.baseline[1], linear_predictor(th, br, a, x), draw(kResidual));
      m = mt;
      t = mt + r;
    } else {
      const Block bt = u == 2 ? Block::T2 : Block::T3;
      t = sample_event_time(spec.baseline[2], linear_predictor(th, bt, a, x), draw(kDirect));
    }
    const double c = std::isfinite(spec.censor_max) ? spec.censor_max * draw(kCensoring)
                                                    : std::numeric_limits<double>::infinity();

    SubjectRecord& rec = records[i];
    rec.id = std::to_string(sid);
    rec.a = a;
    rec.x.assign(x.data(), x.data() + x.size());
    rec.y = std::min(t, c);
    rec.delta_t = t <= c ? 1 : 0;
    if (m && *m <= rec.y) {
      rec.z = *m;
      rec.delta_m = 1;
    } else {
      rec.z = rec.y;
      rec.delta_m = 0;
    }
    truth.stratum[i] = u;
    truth.m_time[i] = m;
    truth.t_time[i] = t;
  }
  std::vector<std::string> names;
  for (std::size_t j = 0; j < p; ++j) names.push_back("x" + std::to_string(j + 1));
  return {Dataset(records, names), std::move(truth)};
}

double true_stratum_survival(const GenerativeSpec& spec, double t, const Vector& x, int a, int u) {
  const auto& th = spec.true_params;
  if (u < 1 || u > 3) throw InvalidInput("stratum label must be 1, 2 or 3");
  if (t <= 0.0) return 1.0;
  if (u == 1) return path_survival(spec, t, expo(th, Block::M1, a, x), expo(th, Block::R1, a, x));
  if (u == 2 && a == 0) return path_survival(spec, t, expo(th, Block::M2, 0, x), expo(th, Block::R2, 0, x));
  const Block b = u == 2 ? Block::T2 : Block::T3;
  return std::exp(-spec.baseline[2](t) * expo(th, b, a, x));
}

double true_effect(EffectName name, const GenerativeSpec& spec, double t, const Vector& x) {
  if (static_cast<std::size_t>(x.size()) != spec.covariates.size())
    throw InvalidInput("covariate profile dimension mismatch");
  if (t <= 0.0) return 0.0;
  const auto& th = spec.true_params;
  switch (name) {
    case EffectName::NIE1:
      return path_survival(spec, t, expo(th, Block::M1, 1, x), expo(th, Block::R1, 1, x)) -
             path_survival(spec, t, expo(th, Block::M1, 0, x), expo(th, Block::R1, 1, x));
    case EffectName::NDE1:
      return path_survival(spec, t, expo(th, Block::M1, 0, x), expo(th, Block::R1, 1, x)) -
             path_survival(spec, t, expo(th, Block::M1, 0, x), expo(th, Block::R1, 0, x));
    case EffectName::TE1:
      return path_survival(spec, t, expo(th, Block::M1, 1, x), expo(th, Block::R1, 1, x)) -
             path_survival(spec, t, expo(th, Block::M1, 0, x), expo(th, Block::R1, 0, x));
    case EffectName::TE2:
      return true_stratum_survival(spec, t, x, 1, 2) - true_stratum_survival(spec, t, x, 0, 2);
    case EffectName::TE3:
      return true_stratum_survival(spec, t, x, 1, 3) - true_stratum_survival(spec, t, x, 0, 3);
    default:
      throw InvalidInput("true_effect supports conditional effects only");
  }
}

std::vector<EffectCurve> true_effects(const GenerativeSpec& spec, const std::vector<double>& grid,
                                      const Vector& x) {
  std::vector<EffectCurve> out;
  for (auto e : {EffectName::NIE1, EffectName::NDE1, EffectName::TE2, EffectName::TE3}) {
    EffectCurve c;
    c.name = effect_name(e);
    c.grid = grid;
    c.covariate_profile = std::vector<double>(x.data(), x.data() + x.size());
    for (double t : grid) c.values.push_back(true_effect(e, spec, t, x));
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace scrmed
