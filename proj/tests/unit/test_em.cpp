#include "../fixtures.hpp"
#include "../checks.hpp"
#include "../oracles.hpp"

#include "scrmed/em.hpp"
#include "scrmed/errors.hpp"
#include "scrmed/likelihood.hpp"
#include "scrmed/study.hpp"

#include <doctest.h>

#include <random>

using namespace scrmed;
using fixture::rec;

using check::constant_rows;
using check::flat_hazards;

namespace {

void check_structure(const Dataset& d, const PosteriorMatrix& p) { CHECK(check::structure_violations(d, p) == 0); }

}  // namespace

TEST_CASE("e-step structural zeros on simple cases") {
  const Dataset d = fixture::make({rec(1, 1.0, 1, 2.0, 1, {0.1}), rec(0, 1.5, 0, 1.5, 1, {0.2}),
                                   rec(0, 0.7, 1, 1.9, 0, {0.3}), rec(1, 2.5, 0, 2.5, 1, {-0.1}),
                                   rec(0, 3.0, 0, 3.0, 0, {0.5})});
  ParameterSet p(1);
  const auto post = e_step(d, p, flat_hazards(d, 0.3));
  CHECK(post(0, 0) == 1.0);
  CHECK(post(1, 2) == 1.0);
  check_structure(d, post);
}

TEST_CASE("e-step rows follow the Bayes rule for double-censored subjects") {
  const Dataset d = fixture::make({rec(1, 1.0, 1, 2.0, 1, {0.1}), rec(0, 1.5, 0, 1.5, 1, {0.2}),
                                   rec(0, 0.7, 1, 1.9, 0, {0.3}), rec(0, 2.2, 0, 2.2, 0, {0.8}),
                                   rec(1, 2.4, 0, 2.4, 0, {-0.6}), rec(1, 1.8, 0, 1.8, 1, {0.4})});
  ParameterSet p(1);
  p[Block::M1] << 0.3, -0.4;
  p[Block::M2] << -0.2, 0.5;
  p[Block::T2] << 0.1, 0.9;
  p[Block::T3] << -0.7, 0.2;
  p[Block::R1] << 0.2, 0.2;
  p[Block::Alpha1] << 0.4, -0.3;
  p[Block::Alpha2] << -0.1, 0.6;
  const auto g = event_time_grid(d);
  HazardSet h{BaselineHazard(HazardScale::Illness, g[0], std::vector<double>(g[0].size(), 0.35)),
              BaselineHazard(HazardScale::Gap, g[1], std::vector<double>(g[1].size(), 0.5)),
              BaselineHazard(HazardScale::Direct, g[2], std::vector<double>(g[2].size(), 0.45))};
  const auto post = e_step(d, p, h);
  // hand-computed step sums at y = 2.2 and 2.4: one illness jump (0.7, 1.0 <= y), two direct jumps
  for (int i : {3, 4}) {
    const double x = d.x()(i, 0), y = d.y()[i];
    const int a = d.a()[i];
    double l1 = 0.0, l3 = 0.0;
    for (double t : g[0]) l1 += t <= y ? 0.35 : 0.0;
    for (double t : g[2]) l3 += t <= y ? 0.45 : 0.0;
    const double D1 = std::exp(0.4 - 0.3 * x - std::exp(0.3 * a - 0.4 * x) * l1);
    const double D2 = std::exp(-0.1 + 0.6 * x) *
                      (a == 0 ? std::exp(-std::exp(-0.2 + 0.5 * x) * l1) : std::exp(-std::exp(0.1 + 0.9 * x) * l3));
    const double D3 = std::exp(-std::exp(-0.7 * a + 0.2 * x) * l3);
    const double s = D1 + D2 + D3;
    CHECK(post(i, 0) == doctest::Approx(D1 / s).epsilon(1e-13));
    CHECK(post(i, 1) == doctest::Approx(D2 / s).epsilon(1e-13));
    CHECK(post(i, 2) == doctest::Approx(D3 / s).epsilon(1e-13));
  }
  check_structure(d, post);
}

TEST_CASE("e-step structure on a random corpus") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto sim = fixture::randomized(300, seed);
    std::mt19937_64 rng(seed);
    const auto p = check::jitter(ParameterSet(2), rng, 1.0);
    check_structure(sim.data, e_step(sim.data, p, flat_hazards(sim.data, 0.05)));
  }
}

TEST_CASE("hazard update of a single illness") {
  const Dataset d = fixture::make({rec(0, 1.0, 1, 2.0, 0, {0.0})});
  const auto h = m_step_hazards(d, constant_rows(1, 1.0, 0.0, 0.0), ParameterSet(1));
  REQUIRE(h[0].size() == 1);
  CHECK(h[0].jumps()[0] == 1.0);
}

TEST_CASE("hazard updates with unit weights are Nelson-Aalen increments") {
  for (std::uint64_t seed : {8, 9, 10}) CHECK(check::nelson_aalen_error(seed) <= 1e-10);
}

TEST_CASE("eta update with stratum-1 memberships is a Cox fit of (Z, delta_m) on (a, x)") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> nx(0.0, 1.0);
  std::uniform_real_distribution<double> un(0.0, 1.0);
  std::vector<SubjectRecord> rs;
  for (int i = 0; i < 250; ++i) {
    const int a = i % 2;
    const double x1 = nx(rng), x2 = un(rng);
    const double m = -std::log(un(rng)) / std::exp(0.5 * a + 0.4 * x1 - 0.3 * x2);
    const double c = 3.0 * un(rng);
    if (m <= c) rs.push_back(rec(a, m, 1, m + 0.5 + un(rng), 0, {x1, x2}));
    else rs.push_back(rec(a, c, 0, c, 0, {x1, x2}));
  }
  const Dataset d = fixture::make(rs);
  const auto post = constant_rows(d.size(), 1.0, 0.0, 0.0);
  const Vector eta = m_step_eta(Block::M1, d, post, ParameterSet(2));
  Matrix W(static_cast<Eigen::Index>(d.size()), 3);
  std::vector<double> t;
  std::vector<int> e;
  for (Eigen::Index i = 0; i < W.rows(); ++i) {
    W.row(i) << d.a()[i], d.x()(i, 0), d.x()(i, 1);
    t.push_back(d.z()[i]);
    e.push_back(d.delta_m()[i]);
  }
  const Vector ref = oracle::cox_fit(t, e, W);
  CHECK((eta - ref).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("eta update with constant-zero design stays at zero") {
  std::vector<SubjectRecord> rs;
  for (int i = 0; i < 20; ++i) rs.push_back(rec(0, 0.1 * (i + 1), 1, 0.1 * (i + 1) + 1.0, 1, {0.0}));
  const Dataset d = fixture::make(rs);
  const Vector eta = m_step_eta(Block::M1, d, constant_rows(d.size(), 1.0, 0.0, 0.0), ParameterSet(1));
  CHECK(eta.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("fixed memberships reproduce stratum-wise proportional-hazards fits") {
  CHECK(check::cox_reduction_error(fixture::reference(300, 77)) <= 1e-6);
}

TEST_CASE("alpha update fixed points and root") {
  SUBCASE("uniform posteriors give zero") {
    const auto post = constant_rows(30, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0);
    const Matrix x(30, 0);
    const auto [a1, a2] = m_step_alpha(post, x, Vector::Zero(1), Vector::Zero(1));
    CHECK(std::abs(a1[0]) < 1e-12);
    CHECK(std::abs(a2[0]) < 1e-12);
  }
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nx(0.0, 1.0);
  Matrix x(200, 2);
  for (Eigen::Index i = 0; i < x.rows(); ++i) x.row(i) << nx(rng), nx(rng);
  SUBCASE("posteriors equal to prior weights return the generating alpha") {
    const Vector s1 = (Vector(3) << 0.2, -0.7, 0.4).finished();
    const Vector s2 = (Vector(3) << -0.3, 0.5, 0.9).finished();
    PosteriorMatrix post(200, 3);
    for (Eigen::Index i = 0; i < 200; ++i) {
      const auto w = stratum_weights(x.row(i).transpose(), s1, s2);
      post.row(i) << w[0], w[1], w[2];
    }
    const auto [a1, a2] = m_step_alpha(post, x, Vector::Zero(3), Vector::Zero(3));
    CHECK((a1 - s1).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((a2 - s2).cwiseAbs().maxCoeff() < 1e-8);
  }
  SUBCASE("random posteriors match a generic root finder") {
    std::uniform_real_distribution<double> un(0.05, 1.0);
    PosteriorMatrix post(200, 3);
    for (Eigen::Index i = 0; i < 200; ++i) {
      const double a = un(rng), b = un(rng), c = un(rng);
      post.row(i) << a / (a + b + c), b / (a + b + c), c / (a + b + c);
    }
    const auto [a1, a2] = m_step_alpha(post, x, Vector::Zero(3), Vector::Zero(3));
    auto score = [&](const Vector& al) {
      Vector g = Vector::Zero(6);
      for (Eigen::Index i = 0; i < 200; ++i) {
        const Vector xt = (Vector(3) << 1.0, x(i, 0), x(i, 1)).finished();
        const auto w = oracle::softmax3(al.head(3).dot(xt), al.tail(3).dot(xt));
        g.head(3) += (post(i, 0) - static_cast<double>(w[0])) * xt;
        g.tail(3) += (post(i, 1) - static_cast<double>(w[1])) * xt;
      }
      return g;
    };
    Vector mine(6);
    mine << a1, a2;
    CHECK(score(mine).norm() < 1e-8);
    const Vector ref = oracle::multiroot(score, Vector::Zero(6));
    CHECK((mine - ref).cwiseAbs().maxCoeff() < 1e-7);
  }
}

TEST_CASE("analytic Newton derivatives match finite differences") {
  CHECK(check::jacobian_error(fixture::reference(300, 31).data, 99, 20) <= 1e-5);
}

TEST_CASE("fit preconditions") {
  std::vector<SubjectRecord> rs;
  for (int i = 0; i < 10; ++i) rs.push_back(rec(i % 2, 1.0 + i, 0, 1.0 + i, i % 2, {0.1 * i}));
  CHECK_THROWS_AS(fit(fixture::make(rs)), InvalidInput);
  const auto sim = fixture::reference(200, 3);
  std::vector<SubjectRecord> treated;
  for (const auto& r : sim.data.records())
    if (r.a == 1) treated.push_back(r);
  CHECK_THROWS_AS(fit(fixture::make(treated)), InvalidInput);
  EmConfig bad;
  bad.tol = 0.0;
  CHECK_THROWS_AS(fit(sim.data, bad), InvalidInput);
}

TEST_CASE("reference data at n = 1000 converges and is self-consistent") {
  const auto sim = fixture::reference(1000, 12);
  const auto f = fit(sim.data);
  REQUIRE(f.converged);
  for (std::size_t k = 1; k < f.loglik_trace.size(); ++k) CHECK(f.loglik_trace[k] >= f.loglik_trace[k - 1] - 1e-10);
  // one more EM sweep from the returned point barely moves it
  EmConfig one;
  one.max_outer_iters = 1;
  const auto again = fit(sim.data, one, WarmStart{f.params, f.hazards});
  CHECK((again.params.flat() - f.params.flat()).cwiseAbs().maxCoeff() < 1e-6);
  // warm start from the solution stops at once
  const auto warm = fit(sim.data, {}, WarmStart{f.params, f.hazards});
  CHECK(warm.converged);
  CHECK(warm.n_iters <= 2);
}

TEST_CASE("accelerated EM reaches the same point with an ascending trace") {
  const auto sim = fixture::reference(600, 14);
  const auto plain = fit(sim.data);
  EmConfig cfg;
  cfg.accelerate = true;
  const auto fast = fit(sim.data, cfg);
  REQUIRE(plain.converged);
  REQUIRE(fast.converged);
  CHECK(fast.n_iters < plain.n_iters);
  CHECK((fast.params.flat() - plain.params.flat()).cwiseAbs().maxCoeff() < 1e-3);
  for (std::size_t k = 1; k < fast.loglik_trace.size(); ++k) CHECK(fast.loglik_trace[k] >= fast.loglik_trace[k - 1] - 1e-10);
}

TEST_CASE("zeroed covariates reduce to the intercept-only model") {
  const auto sim = fixture::reference(400, 19);
  std::vector<SubjectRecord> zeroed, bare;
  for (auto r : sim.data.records()) {
    auto b = r;
    b.x.clear();
    bare.push_back(b);
    for (auto& v : r.x) v = 0.0;
    zeroed.push_back(r);
  }
  const auto fz = fit(fixture::make(zeroed));
  const auto fb = fit(Dataset(bare, {}));
  REQUIRE(fz.converged);
  REQUIRE(fb.converged);
  CHECK(fz.pinned_columns.size() == 2);
  CHECK(fz.loglik_trace.back() == doctest::Approx(fb.loglik_trace.back()).epsilon(1e-10));
  for (int b = 0; b < 8; ++b) {
    CHECK(std::abs(fz.params.blocks[b][0] - fb.params.blocks[b][0]) < 1e-8);
    CHECK(fz.params.blocks[b].tail(2).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("standardized fits map back to the original scale") {
  const auto sim = fixture::reference(500, 23);
  std::vector<SubjectRecord> rs = sim.data.records();
  for (auto& r : rs) {
    r.x[0] = 10.0 + 5.0 * r.x[0];
    r.x[1] = 3.0 * r.x[1] - 1.0;
  }
  const Dataset d = fixture::make(rs);
  EmConfig cfg;
  cfg.tol = 1e-9;
  const auto raw = fit(d, cfg);
  const auto st = Standardization::of(d.x());
  const auto back = st.restore(fit(st.apply(d), cfg));
  REQUIRE(raw.converged);
  REQUIRE(back.converged);
  CHECK((raw.params.flat() - back.params.flat()).cwiseAbs().maxCoeff() < 1e-5);
  const Vector x = (Vector(2) << 11.0, 0.2).finished();
  for (double t : {1.0, 3.0})
    for (int a : {0, 1})
      for (int u : {1, 2, 3})
        CHECK(stratum_survival(t, x, a, u, raw) == doctest::Approx(stratum_survival(t, x, a, u, back)).epsilon(1e-5));
}

TEST_CASE("extra starts escape an inferior mode") {
  // this dataset has two modes that disagree on the sign of beta_T3
  const Dataset data = generate(GenerativeSpec::reference_design(2000, replicate_seed(20240601, 11, 0))).data;
  EmConfig cfg;
  cfg.accelerate = true;
  const auto single = fit(data, cfg);
  cfg.n_starts = 5;
  cfg.seed = 2;
  const auto multi = fit(data, cfg);
  REQUIRE(single.converged);
  REQUIRE(multi.converged);
  CHECK(multi.loglik_trace.back() > single.loglik_trace.back() + 1.0);
  CHECK(single.params[Block::T3][0] > 0.5);
  CHECK(multi.params[Block::T3][0] < -0.5);
  CHECK(fit(data, cfg).loglik_trace.back() == multi.loglik_trace.back());
}
