#include "scrmed/inference.hpp"

#include "scrmed/errors.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <random>
#include <thread>

namespace scrmed {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kZ975 = 1.959963984540054;

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

double quantile(std::vector<double> v, double p) {
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::vector<Eigen::Index> free_positions(const FittedModel& fit) {
  const auto q = static_cast<Eigen::Index>(fit.params.dim() + 1);
  std::vector<bool> pinned(static_cast<std::size_t>(q), false);
  for (auto c : fit.pinned_columns) pinned[c + 1] = true;
  std::vector<Eigen::Index> out;
  for (Eigen::Index b = 0; b < 8; ++b)
    for (Eigen::Index j = 0; j < q; ++j)
      if (!pinned[static_cast<std::size_t>(j)]) out.push_back(b * q + j);
  return out;
}

struct Replicate {
  bool ok = false;
  Vector params;
  std::vector<std::vector<double>> curves;
};

/// Interval and SE from replicate values around a point estimate.
void summarize(double est, const std::vector<double>& vals, bool percentile, double& se, double& lo,
               double& hi) {
  se = sample_sd(vals);
  if (percentile) {
    lo = quantile(vals, 0.025);
    hi = quantile(vals, 0.975);
  } else {
    lo = est - kZ975 * se;
    hi = est + kZ975 * se;
  }
}

}  // namespace

void BootstrapConfig::validate() const {
  if (n_resamples < 1) throw InvalidInput("bootstrap needs at least one resample");
  if (!(max_failure_share >= 0.0 && max_failure_share <= 1.0))
    throw InvalidInput("max_failure_share must lie in [0, 1]");
  em.validate();
  for (std::size_t k = 0; k < grid.size(); ++k)
    if (!(grid[k] >= 0.0) || (k > 0 && !(grid[k] > grid[k - 1])))
      throw InvalidInput("bootstrap grid must be non-negative and increasing");
}

std::vector<std::size_t> resample_rows(std::size_t n, std::uint64_t seed, std::size_t index) {
  std::mt19937_64 rng(mix(mix(seed) ^ (0x5851f42d4c957f2dULL * (index + 1))));
  std::vector<std::size_t> rows(n);
  for (auto& r : rows) r = static_cast<std::size_t>(rng() % n);
  return rows;
}

BootstrapResult bootstrap(const Dataset& data, const BootstrapConfig& config) {
  config.validate();
  const FittedModel base = fit(data, config.em);
  return bootstrap(data, base, config);
}

BootstrapResult bootstrap(const Dataset& data, const FittedModel& base, const BootstrapConfig& config) {
  config.validate();
  if (!base.converged) throw InvalidInput("bootstrap requires a converged base fit");
  if (base.params.dim() != data.dim()) throw InvalidInput("base fit does not match the data");
  const std::size_t B = config.n_resamples;
  const auto free = free_positions(base);
  const Vector base_flat = base.params.flat();

  BootstrapResult res;
  res.n_resamples = B;
  res.seed = config.seed;
  const auto all_names = ParameterSet::names(data.covariate_names());
  for (auto k : free) {
    res.names.push_back(all_names[static_cast<std::size_t>(k)]);
    res.estimate.push_back(base_flat[k]);
  }
  for (const auto& req : config.effects) {
    EffectCurve c = effect_curve(req.name, base, config.grid, req.profile, &data);
    res.curves.push_back(std::move(c));
  }

  std::vector<Replicate> reps(B);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t b = next++; b < B; b = next++) {
      Replicate& r = reps[b];
      try {
        Dataset d = data;
        if (!config.identity_resample) d = data.select(resample_rows(data.size(), config.seed, b));
        std::optional<FittedModel> best;
        auto consider = [&](const std::optional<WarmStart>& start) {
          try {
            FittedModel f = fit(d, config.em, start);
            if (f.converged && (!best || f.loglik_trace.back() > best->loglik_trace.back())) best = std::move(f);
          } catch (const NumericalError&) {
          }
        };
        if (config.warm_start) consider(WarmStart{base.params, base.hazards});
        if (!config.warm_start || config.cold_restart) consider(std::nullopt);
        if (!best) continue;
        const FittedModel& f = *best;
        r.params = f.params.flat();
        for (std::size_t c = 0; c < config.effects.size(); ++c) {
          const auto& req = config.effects[c];
          const auto& grid = res.curves[c].grid;
          const double limit = effect_support(req.name, f);
          std::vector<double> v(grid.size(), kNaN);
          for (std::size_t g = 0; g < grid.size(); ++g)
            if (grid[g] <= limit) v[g] = evaluate_effect(req.name, grid[g], f, req.profile, &d);
          r.curves.push_back(std::move(v));
        }
        r.ok = true;
      } catch (const Error&) {
        r.ok = false;
      }
    }
  };
  std::size_t threads = config.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : config.threads;
  threads = std::min(threads, B);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  for (const auto& r : reps) res.n_failed += r.ok ? 0 : 1;
  if (static_cast<double>(res.n_failed) > config.max_failure_share * static_cast<double>(B))
    throw UnreliableInference(std::to_string(res.n_failed) + " of " + std::to_string(B) +
                              " bootstrap resamples failed to converge");

  res.replicates = Matrix::Constant(static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(free.size()), kNaN);
  for (std::size_t b = 0; b < B; ++b)
    if (reps[b].ok)
      for (std::size_t k = 0; k < free.size(); ++k)
        res.replicates(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(k)) = reps[b].params[free[k]];

  const std::size_t P = free.size();
  res.se.resize(P);
  res.ci_low.resize(P);
  res.ci_high.resize(P);
  for (std::size_t k = 0; k < P; ++k) {
    std::vector<double> vals;
    for (const auto& r : reps)
      if (r.ok) vals.push_back(r.params[free[k]]);
    summarize(res.estimate[k], vals, config.percentile, res.se[k], res.ci_low[k], res.ci_high[k]);
  }
  for (std::size_t c = 0; c < res.curves.size(); ++c) {
    auto& curve = res.curves[c];
    const std::size_t G = curve.grid.size();
    curve.se.assign(G, kNaN);
    curve.ci_low.assign(G, kNaN);
    curve.ci_high.assign(G, kNaN);
    for (std::size_t g = 0; g < G; ++g) {
      std::vector<double> vals;
      for (const auto& r : reps)
        if (r.ok && std::isfinite(r.curves[c][g])) vals.push_back(r.curves[c][g]);
      if (vals.empty()) continue;
      summarize(curve.values[g], vals, config.percentile, curve.se[g], curve.ci_low[g], curve.ci_high[g]);
    }
  }
  return res;
}

WaldTest wald_test(const std::string& name, double estimate, double se) {
  WaldTest w;
  w.name = name;
  w.estimate = estimate;
  w.se = se;
  if (se > 0.0 && std::isfinite(se) && std::isfinite(estimate)) {
    const double z = estimate / se;
    w.z = z;
    w.p_value = 2.0 * boost::math::cdf(boost::math::complement(boost::math::normal(), std::abs(z)));
  }
  return w;
}

std::vector<WaldTest> wald_tests(const BootstrapResult& boot) {
  std::vector<WaldTest> out;
  for (std::size_t k = 0; k < boot.names.size(); ++k) out.push_back(wald_test(boot.names[k], boot.estimate[k], boot.se[k]));
  return out;
}

double average_w2(const FittedModel& fit, const Dataset& data) {
  if (data.size() == 0) throw InvalidInput("average_w2 needs data");
  std::vector<double> w(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Vector x = data.x().row(static_cast<Eigen::Index>(i)).transpose();
    w[i] = stratum_weights(x, fit.params[Block::Alpha1], fit.params[Block::Alpha2])[1];
  }
  double s = 0.0;
  for (double v : w) s += v;
  return s / static_cast<double>(w.size());
}

SensitivitySummary label_swap_sensitivity(const Dataset& data, const EmConfig& config) {
  const FittedModel original = fit(data, config);
  SensitivitySummary s;
  s.original_avg_w2 = average_w2(original, data);
  s.original_converged = original.converged;
  s.original_loglik = original.loglik_trace.back();
  s.original_iters = original.n_iters;
  const Dataset swapped_data = data.with_swapped_treatment();
  try {
    const FittedModel swapped = fit(swapped_data, config);
    s.swapped_avg_w2 = average_w2(swapped, swapped_data);
    s.swapped_converged = swapped.converged;
    s.swapped_loglik = swapped.loglik_trace.back();
    s.swapped_iters = swapped.n_iters;
  } catch (const NumericalError& e) {
    s.swapped_avg_w2 = std::numeric_limits<double>::quiet_NaN();
    s.swapped_loglik = std::numeric_limits<double>::quiet_NaN();
    s.swapped_error = describe(e);
  }
  return s;
}

}  // namespace scrmed
