#include "scrmed/study.hpp"

#include "scrmed/errors.hpp"
#include "scrmed/inference.hpp"
#include "scrmed/io.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <mutex>
#include <ostream>
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

SummaryRow summarize(const std::string& q, double t, double truth, const std::vector<double>& est,
                     const std::vector<double>& see_est, const std::vector<double>& see) {
  SummaryRow row;
  row.quantity = q;
  row.t = t;
  row.truth = truth;
  row.n_used = est.size();
  if (est.empty()) {
    row.bias = row.se = row.see = row.cp = kNaN;
    return row;
  }
  double mean = 0.0;
  for (double v : est) mean += v;
  mean /= static_cast<double>(est.size());
  double ss = 0.0;
  for (double v : est) ss += (v - mean) * (v - mean);
  row.bias = mean - truth;
  row.se = est.size() > 1 ? std::sqrt(ss / static_cast<double>(est.size() - 1)) : 0.0;
  if (see.empty()) {
    row.see = row.cp = kNaN;
    return row;
  }
  double s = 0.0, covered = 0.0;
  for (std::size_t k = 0; k < see.size(); ++k) {
    s += see[k];
    if (std::abs(see_est[k] - truth) <= kZ975 * see[k]) covered += 1.0;
  }
  row.see = s / static_cast<double>(see.size());
  row.cp = covered / static_cast<double>(see.size());
  return row;
}

}  // namespace

std::vector<EffectPoint> table2_points() {
  std::vector<EffectPoint> pts;
  for (double t : {2.0, 4.0, 6.0}) pts.push_back({EffectName::NDE1, t});
  for (double t : {2.0, 4.0, 6.0}) pts.push_back({EffectName::NIE1, t});
  for (double t : {2.0, 4.0, 6.0, 8.0}) pts.push_back({EffectName::TE2, t});
  for (double t : {2.0, 4.0, 6.0, 8.0}) pts.push_back({EffectName::TE3, t});
  return pts;
}

void StudyConfig::validate() const {
  if (n < 1) throw InvalidInput("study n must be positive");
  if (replicates < 2) throw InvalidInput("study needs at least 2 replicates");
  if (profile.size() != 2) throw InvalidInput("study profile must have the two design covariates");
  for (const auto& p : effect_points)
    if (is_marginal(p.name) || !(p.t >= 0.0)) throw InvalidInput("study effect points must be conditional and t >= 0");
  em.validate();
}

std::uint64_t replicate_seed(std::uint64_t seed, std::size_t r, std::uint64_t stream) {
  return mix(mix(mix(seed) ^ static_cast<std::uint64_t>(r)) ^ stream);
}

ReplicateOutcome run_replicate(const StudyConfig& cfg, std::size_t r) {
  ReplicateOutcome out;
  const std::size_t E = cfg.effect_points.size();
  out.effect_estimate.assign(E, kNaN);
  out.effect_see.assign(E, kNaN);
  const auto spec = GenerativeSpec::reference_design(cfg.n, replicate_seed(cfg.seed, r, 0));
  const Dataset data = generate(spec).data;
  FittedModel base;
  try {
    EmConfig base_em = cfg.em;
    base_em.n_starts = std::max(cfg.em.n_starts, cfg.base_starts);
    base_em.seed = replicate_seed(cfg.seed, r, 2);
    base = fit(data, base_em);
    if (!base.converged) throw NumericalError("EM did not converge");
  } catch (const Error& e) {
    out.error = std::string("fit: ") + e.what();
    return out;
  }
  out.fit_ok = true;
  out.estimate = base.params.flat();
  for (std::size_t k = 0; k < E; ++k) {
    const auto& p = cfg.effect_points[k];
    if (p.t <= effect_support(p.name, base)) out.effect_estimate[k] = evaluate_effect(p.name, p.t, base, cfg.profile, nullptr);
  }
  if (cfg.bootstrap_n == 0) return out;

  BootstrapConfig bc;
  bc.n_resamples = cfg.bootstrap_n;
  bc.seed = replicate_seed(cfg.seed, r, 1);
  bc.threads = 1;
  bc.em = cfg.em;
  std::map<EffectName, std::vector<double>> grids;
  for (const auto& p : cfg.effect_points) grids[p.name].push_back(p.t);
  for (auto& [name, g] : grids) {
    std::sort(g.begin(), g.end());
    g.erase(std::unique(g.begin(), g.end()), g.end());
  }
  std::vector<EffectName> order;
  for (const auto& [name, g] : grids) order.push_back(name);
  try {
    // All curves share one grid: the union of the requested times.
    std::vector<double> uni;
    for (const auto& [name, g] : grids) uni.insert(uni.end(), g.begin(), g.end());
    std::sort(uni.begin(), uni.end());
    uni.erase(std::unique(uni.begin(), uni.end()), uni.end());
    bc.grid = uni;
    for (auto name : order) bc.effects.push_back({name, cfg.profile});
    const BootstrapResult br = bootstrap(data, base, bc);
    const auto q = static_cast<Eigen::Index>(base.params.dim() + 1);
    out.see = Vector::Constant(8 * q, kNaN);
    const auto names = ParameterSet::names(data.covariate_names());
    for (std::size_t k = 0; k < br.names.size(); ++k) {
      const auto it = std::find(names.begin(), names.end(), br.names[k]);
      out.see[it - names.begin()] = br.se[k];
    }
    for (std::size_t k = 0; k < E; ++k) {
      const auto& p = cfg.effect_points[k];
      const auto c = static_cast<std::size_t>(std::find(order.begin(), order.end(), p.name) - order.begin());
      const auto& curve = br.curves[c];
      for (std::size_t g = 0; g < curve.grid.size(); ++g)
        if (curve.grid[g] == p.t) out.effect_see[k] = curve.se[g];
    }
    out.boot_ok = true;
  } catch (const Error& e) {
    out.error = std::string("bootstrap: ") + e.what();
  }
  return out;
}

StudyResult run_study(const StudyConfig& cfg) {
  cfg.validate();
  StudyResult res;
  res.replicates.resize(cfg.replicates);
  std::atomic<std::size_t> next{0}, done{0};
  std::mutex mu;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t r = next++; r < cfg.replicates; r = next++) {
      try {
        res.replicates[r] = run_replicate(cfg, r);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!failure) failure = std::current_exception();
      }
      const std::size_t d = ++done;
      if (cfg.progress) {
        std::lock_guard<std::mutex> lock(mu);
        cfg.progress(d, cfg.replicates);
      }
    }
  };
  std::size_t threads = cfg.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : cfg.threads;
  threads = std::min(threads, cfg.replicates);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  summarize_study(cfg, res);
  return res;
}

void summarize_study(const StudyConfig& cfg, StudyResult& res) {
  res.table1.clear();
  res.table2.clear();
  res.n_fit_failed = res.n_boot_failed = 0;
  for (const auto& r : res.replicates) {
    if (!r.fit_ok) ++res.n_fit_failed;
    else if (cfg.bootstrap_n > 0 && !r.boot_ok) ++res.n_boot_failed;
  }
  const ParameterSet truth = GenerativeSpec::reference_parameters();
  const Vector tv = truth.flat();
  const auto names = ParameterSet::names(std::vector<std::string>{"x1", "x2"});
  for (Eigen::Index k = 0; k < tv.size(); ++k) {
    std::vector<double> est, see_est, see;
    for (const auto& r : res.replicates) {
      if (!r.fit_ok) continue;
      est.push_back(r.estimate[k]);
      if (r.boot_ok && std::isfinite(r.see[k])) {
        see_est.push_back(r.estimate[k]);
        see.push_back(r.see[k]);
      }
    }
    res.table1.push_back(summarize(names[static_cast<std::size_t>(k)], kNaN, tv[k], est, see_est, see));
  }
  const auto spec = GenerativeSpec::reference_design(cfg.n, cfg.seed);
  for (std::size_t e = 0; e < cfg.effect_points.size(); ++e) {
    const auto& p = cfg.effect_points[e];
    std::vector<double> est, see_est, see;
    for (const auto& r : res.replicates) {
      if (!r.fit_ok || !std::isfinite(r.effect_estimate[e])) continue;
      est.push_back(r.effect_estimate[e]);
      if (r.boot_ok && std::isfinite(r.effect_see[e])) {
        see_est.push_back(r.effect_estimate[e]);
        see.push_back(r.effect_see[e]);
      }
    }
    res.table2.push_back(summarize(effect_name(p.name), p.t, true_effect(p.name, spec, p.t, cfg.profile), est, see_est, see));
  }
}

void write_summary(std::ostream& out, const std::vector<SummaryRow>& rows) {
  out << "quantity,t,truth,bias,se,see,cp,n_used\n";
  auto f = [](double v) { return std::isfinite(v) ? io::format_double(v) : std::string(); };
  for (const auto& r : rows)
    out << r.quantity << ',' << f(r.t) << ',' << f(r.truth) << ',' << f(r.bias) << ',' << f(r.se) << ','
        << f(r.see) << ',' << f(r.cp) << ',' << r.n_used << '\n';
}

}  // namespace scrmed
