#include "../fixtures.hpp"
#include "../checks.hpp"
#include "../oracles.hpp"

#include "scrmed/effects.hpp"
#include "scrmed/em.hpp"
#include "scrmed/errors.hpp"
#include "scrmed/simulate.hpp"

#include <doctest.h>

#include <random>

using namespace scrmed;

namespace {

const Vector kProfile = (Vector(2) << 0.5, 0.5).finished();

const FittedModel& fitted_reference() {
  static const FittedModel f = [] {
    const auto sim = fixture::reference(800, 55);
    return fit(sim.data);
  }();
  return f;
}

/// Continuous-time effects at the reference truth, coded from the definitions.
double continuous_effect(EffectName e, double t, const Vector& x) {
  const auto spec = GenerativeSpec::reference_design(1, 0);
  const auto& th = spec.true_params;
  const auto& L = spec.baseline;
  auto lp = [&](Block b, int a) {
    const Vector& c = th[b];
    double v = c[1] * x[0] + c[2] * x[1];
    return uses_treatment_design(b) ? v + c[0] * a : v + c[0];
  };
  auto path = [&](double em, double er) {
    return oracle::path_survival(
        t, [&](double s) { return L[0](s); }, [&](double s) { return L[0].rate(s); }, [&](double s) { return L[1](s); },
        em, er);
  };
  switch (e) {
    case EffectName::NIE1:
      return path(std::exp(lp(Block::M1, 1)), std::exp(lp(Block::R1, 1))) -
             path(std::exp(lp(Block::M1, 0)), std::exp(lp(Block::R1, 1)));
    case EffectName::NDE1:
      return path(std::exp(lp(Block::M1, 0)), std::exp(lp(Block::R1, 1))) -
             path(std::exp(lp(Block::M1, 0)), std::exp(lp(Block::R1, 0)));
    case EffectName::TE2:
      return std::exp(-L[2](t) * std::exp(lp(Block::T2, 1))) - path(std::exp(lp(Block::M2, 0)), std::exp(lp(Block::R2, 0)));
    case EffectName::TE3:
      return std::exp(-L[2](t) * std::exp(lp(Block::T3, 1))) - std::exp(-L[2](t) * std::exp(lp(Block::T3, 0)));
    default: return std::nan("");
  }
}

}  // namespace

TEST_CASE("all effects vanish at time zero") {
  const auto& f = fitted_reference();
  REQUIRE(f.converged);
  for (auto e : {EffectName::NIE1, EffectName::NDE1, EffectName::TE1, EffectName::TE2, EffectName::TE3})
    CHECK(evaluate_effect(e, 0.0, f, kProfile, nullptr) == 0.0);
}

TEST_CASE("null coefficients null the matching effect") {
  auto f = fitted_reference();
  f.params[Block::M1][0] = 0.0;
  f.params[Block::R1][0] = 0.0;
  f.params[Block::T3][0] = 0.0;
  for (double t = 0.0; t < 5.0; t += 0.25) {
    CHECK(nie1(t, kProfile, f) == 0.0);
    CHECK(nde1(t, kProfile, f) == 0.0);
    CHECK(te3(t, kProfile, f) == 0.0);
  }
}

TEST_CASE("indirect plus direct equals the stratum-1 arm difference") {
  const auto& f = fitted_reference();
  CHECK(check::decomposition_error(f, 6) <= 1e-10);
  const Vector x = (Vector(2) << -0.3, 0.8).finished();
  for (double t = 0.0; t < 4.0; t += 0.5) CHECK(te1(t, x, f) == doctest::Approx(nie1(t, x, f) + nde1(t, x, f)).epsilon(1e-14));
}

TEST_CASE("effects are bounded and continuous in the profile") {
  const auto& f = fitted_reference();
  const double top = effect_support(EffectName::TE2, f);
  const Vector dx = (Vector(2) << 1e-6, -1e-6).finished();
  for (auto e : {EffectName::NIE1, EffectName::NDE1, EffectName::TE2, EffectName::TE3})
    for (double t = 0.1; t < top; t += 0.4) {
      const double v = evaluate_effect(e, t, f, kProfile, nullptr);
      CHECK(std::abs(v) <= 1.0);
      CHECK(std::abs(evaluate_effect(e, t, f, Vector(kProfile + dx), nullptr) - v) < 1e-4);
    }
}

TEST_CASE("effects refuse points past the support and bad profiles") {
  const auto& f = fitted_reference();
  CHECK_THROWS_AS(nie1(effect_support(EffectName::NIE1, f) + 0.01, kProfile, f), OutOfSupport);
  CHECK_THROWS_AS(te3(effect_support(EffectName::TE3, f) + 0.01, kProfile, f), OutOfSupport);
  CHECK_THROWS_AS(nde1(1.0, Vector::Zero(3), f), InvalidInput);
  CHECK_THROWS_AS(parse_effect_name("NIE9"), InvalidInput);
  CHECK(parse_effect_name("TE2") == EffectName::TE2);
}

TEST_CASE("jump-sum effects on a fine grid approach the continuous formulas") {
  const auto f = fixture::truth_model(12.0, 24000);
  for (auto e : {EffectName::NIE1, EffectName::NDE1, EffectName::TE2, EffectName::TE3})
    for (double t : {2.0, 4.0, 6.0, 8.0}) {
      const double ref = continuous_effect(e, t, kProfile);
      CHECK(std::abs(evaluate_effect(e, t, f, kProfile, nullptr) - ref) < 1e-3);
      CHECK(std::abs(true_effect(e, GenerativeSpec::reference_design(1, 0), t, kProfile) - ref) < 1e-8);
    }
}

TEST_CASE("true effect values at the simulation truth") {
  const auto spec = GenerativeSpec::reference_design(1, 0);
  auto tv = [&](EffectName e, double t) { return true_effect(e, spec, t, kProfile); };
  // two-decimal table values
  CHECK(std::abs(tv(EffectName::NIE1, 4.0) - (-0.03)) <= 0.005);
  CHECK(std::abs(tv(EffectName::NDE1, 2.0) - (-0.11)) <= 0.005);
  CHECK(std::abs(tv(EffectName::TE2, 6.0) - 0.17) <= 0.005);
  CHECK(std::abs(tv(EffectName::TE2, 8.0) - 0.18) <= 0.005);
  CHECK(std::abs(tv(EffectName::TE3, 4.0) - (-0.06)) <= 0.005);
  auto null = spec;
  null.true_params[Block::M1][0] = 0.0;
  null.true_params[Block::R1][0] = 0.0;
  for (double t = 0.0; t <= 10.0; t += 0.5) {
    CHECK(std::abs(true_effect(EffectName::NIE1, null, t, kProfile)) < 1e-12);
    CHECK(std::abs(true_effect(EffectName::NDE1, null, t, kProfile)) < 1e-12);
  }
}

TEST_CASE("marginal effects are w1-weighted averages of conditional ones") {
  const auto& f = fitted_reference();
  const auto sim = fixture::reference(300, 91);
  const double t = 3.0;
  const auto m = marginal_effects(t, f, sim.data);
  double sw = 0.0, snie = 0.0, snde = 0.0;
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(sim.data.size()); ++i) {
    const Vector x = sim.data.x().row(i).transpose();
    const Vector& a1 = f.params[Block::Alpha1];
    const Vector& a2 = f.params[Block::Alpha2];
    const auto w = oracle::softmax3(a1[0] + a1[1] * x[0] + a1[2] * x[1], a2[0] + a2[1] * x[0] + a2[2] * x[1]);
    sw += static_cast<double>(w[0]);
    snie += static_cast<double>(w[0]) * nie1(t, x, f);
    snde += static_cast<double>(w[0]) * nde1(t, x, f);
  }
  CHECK(m.nie1 == doctest::Approx(snie / sw).epsilon(1e-12));
  CHECK(m.nde1 == doctest::Approx(snde / sw).epsilon(1e-12));

  std::vector<SubjectRecord> same = sim.data.records();
  for (auto& r : same) r.x = {0.5, 0.5};
  const Dataset one_x = fixture::make(same);
  const auto mo = marginal_effects(t, f, one_x);
  CHECK(mo.nie1 == doctest::Approx(nie1(t, kProfile, f)).epsilon(1e-12));
  CHECK(mo.nde1 == doctest::Approx(nde1(t, kProfile, f)).epsilon(1e-12));
  const auto single = marginal_effects(t, f, fixture::make({sim.data.record(0)}));
  CHECK(single.nie1 == doctest::Approx(nie1(t, sim.data.x().row(0).transpose(), f)).epsilon(1e-12));
}

TEST_CASE("effect curves drop points past the support") {
  const auto& f = fitted_reference();
  const double top = effect_support(EffectName::NIE1, f);
  const std::vector<double> grid{0.0, 1.0, top, top + 1.0};
  const auto c = effect_curve(EffectName::NIE1, f, grid, kProfile, nullptr);
  CHECK(c.grid.size() == 3);
  CHECK(c.truncated == 1);
  const auto sim = fixture::reference(100, 1);
  const auto g = default_grid(sim.data);
  CHECK(g.size() == 100);
  CHECK(g.front() == 0.0);
}
