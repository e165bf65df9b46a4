#pragma once

#include "scrmed/em.hpp"
#include "scrmed/model.hpp"
#include "scrmed/simulate.hpp"

#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace fixture {

using namespace scrmed;

inline SubjectRecord rec(int a, double z, int dm, double y, int dt, std::vector<double> x, std::string id = "") {
  SubjectRecord r;
  r.id = id;
  r.a = a;
  r.z = z;
  r.delta_m = dm;
  r.y = y;
  r.delta_t = dt;
  r.x = std::move(x);
  return r;
}

inline Dataset make(std::vector<SubjectRecord> rs) {
  for (std::size_t i = 0; i < rs.size(); ++i)
    if (rs[i].id.empty()) rs[i].id = std::to_string(i + 1);
  std::vector<std::string> names;
  for (std::size_t j = 0; j < (rs.empty() ? 0 : rs[0].x.size()); ++j) names.push_back("x" + std::to_string(j + 1));
  return Dataset(rs, names);
}

inline SimulatedData reference(std::size_t n, std::uint64_t seed) {
  return generate(GenerativeSpec::reference_design(n, seed));
}

/// Reference design with every coefficient drawn uniformly from [-1, 1].
inline SimulatedData randomized(std::size_t n, std::uint64_t seed) {
  auto spec = GenerativeSpec::reference_design(n, seed);
  std::mt19937_64 rng(seed * 7919 + 13);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& b : spec.true_params.blocks)
    for (Eigen::Index j = 0; j < b.size(); ++j) b[j] = u(rng);
  return generate(spec);
}

/// Posteriors that put all mass on the hidden stratum.
inline PosteriorMatrix hard_posteriors(const HiddenTruth& truth) {
  PosteriorMatrix p = PosteriorMatrix::Zero(static_cast<Eigen::Index>(truth.stratum.size()), 3);
  for (std::size_t i = 0; i < truth.stratum.size(); ++i) p(static_cast<Eigen::Index>(i), truth.stratum[i] - 1) = 1.0;
  return p;
}

/// Step hazard with jumps at a fine grid following a smooth cumulative hazard.
inline BaselineHazard discretize(HazardScale label, const CumulativeHazard& h, double upto, std::size_t steps) {
  std::vector<double> t, j;
  double prev = 0.0;
  for (std::size_t k = 1; k <= steps; ++k) {
    const double tk = upto * static_cast<double>(k) / static_cast<double>(steps);
    const double c = h(tk);
    t.push_back(tk);
    j.push_back(c - prev);
    prev = c;
  }
  return BaselineHazard(label, t, j);
}

/// A converged-looking model at the reference truth with finely discretized hazards.
inline FittedModel truth_model(double upto = 12.0, std::size_t steps = 24000) {
  const auto spec = GenerativeSpec::reference_design(1, 0);
  FittedModel f;
  f.params = spec.true_params;
  f.hazards = {discretize(HazardScale::Illness, spec.baseline[0], upto, steps),
               discretize(HazardScale::Gap, spec.baseline[1], upto, steps),
               discretize(HazardScale::Direct, spec.baseline[2], upto, steps)};
  f.converged = true;
  return f;
}

}  // namespace fixture
