#include "scrmed/em.hpp"

#include "scrmed/errors.hpp"
#include "scrmed/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <random>
#include <string>

namespace scrmed {

void EmConfig::validate() const {
  if (!(tol > 0.0)) throw InvalidInput("tol must be positive");
  if (!(inner_newton_tol > 0.0)) throw InvalidInput("inner_newton_tol must be positive");
  if (max_outer_iters < 1 || inner_max_iters < 1 || step_halving_max < 1 || n_starts < 1)
    throw InvalidInput("iteration counts must be at least 1");
}

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Event-time grid and per-subject risk-set position on one hazard scale.
struct ScaleIndex {
  HazardScale scale = HazardScale::Illness;
  std::vector<double> times;
  std::vector<double> events;
  /// Number of jump times <= the subject's time on this scale; 0 when the subject
  /// never enters this scale's risk sets.
  std::vector<int> rank;
  std::vector<char> is_event;
  /// Subjects with rank > 0, by decreasing rank.
  std::vector<std::size_t> order;
};

struct Design {
  std::size_t n = 0;
  Eigen::Index q = 0;
  Matrix w;   // (a, x)
  Matrix xt;  // (1, x)
  std::array<ScaleIndex, 3> scales;
};

bool scale_event(int k, int dm, int dt) {
  switch (k) {
    case 0: return dm == 1;
    case 1: return dm == 1 && dt == 1;
    default: return dm == 0 && dt == 1;
  }
}

bool scale_at_risk(int k, int dm, int dt) {
  switch (k) {
    case 0: return !(dm == 0 && dt == 1);
    case 1: return dm == 1;
    default: return dm == 0;
  }
}

double scale_time(int k, const Dataset& d, std::size_t i) {
  switch (k) {
    case 0: return d.z()[i];
    case 1: return d.v()[i];
    default: return d.y()[i];
  }
}

std::vector<double> distinct_event_times(const Dataset& data, int k) {
  std::vector<double> t;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (scale_event(k, data.delta_m()[i], data.delta_t()[i])) t.push_back(scale_time(k, data, i));
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  return t;
}

Design make_design(const Dataset& data) {
  Design d;
  d.n = data.size();
  d.q = static_cast<Eigen::Index>(data.dim()) + 1;
  const auto n = static_cast<Eigen::Index>(d.n);
  d.w.resize(n, d.q);
  d.xt.resize(n, d.q);
  d.w.col(0) = data.a().cast<double>();
  d.xt.col(0).setOnes();
  d.w.rightCols(d.q - 1) = data.x();
  d.xt.rightCols(d.q - 1) = data.x();
  for (int k = 0; k < 3; ++k) {
    auto& s = d.scales[k];
    s.scale = static_cast<HazardScale>(k);
    s.times = distinct_event_times(data, k);
    s.events.assign(s.times.size(), 0.0);
    s.rank.assign(d.n, 0);
    s.is_event.assign(d.n, 0);
    for (std::size_t i = 0; i < d.n; ++i) {
      const int dm = data.delta_m()[i], dt = data.delta_t()[i];
      const double t = scale_time(k, data, i);
      const auto r = std::upper_bound(s.times.begin(), s.times.end(), t) - s.times.begin();
      if (scale_at_risk(k, dm, dt)) s.rank[i] = static_cast<int>(r);
      if (scale_event(k, dm, dt)) {
        s.is_event[i] = 1;
        s.events[static_cast<std::size_t>(r - 1)] += 1.0;
      }
      if (s.rank[i] > 0) s.order.push_back(i);
    }
    std::stable_sort(s.order.begin(), s.order.end(),
                     [&](std::size_t i, std::size_t j) { return s.rank[i] > s.rank[j]; });
  }
  return d;
}

struct BlockSpec {
  int scale;
  Block partner;
};

BlockSpec block_spec(Block b) {
  switch (b) {
    case Block::M1: return {0, Block::M2};
    case Block::M2: return {0, Block::M1};
    case Block::R1: return {1, Block::R2};
    case Block::R2: return {1, Block::R1};
    case Block::T2: return {2, Block::T3};
    case Block::T3: return {2, Block::T2};
    default: throw InvalidInput("not an eta block");
  }
}

/// Posterior mass a subject contributes to a block's process.
double block_weight(Block b, const PosteriorMatrix& post, Eigen::Index i, int a) {
  switch (b) {
    case Block::M1:
    case Block::R1: return post(i, 0);
    case Block::M2:
    case Block::R2: return a == 0 ? post(i, 1) : 0.0;
    case Block::T2: return a == 1 ? post(i, 1) : 0.0;
    case Block::T3: return post(i, 2);
    default: return 0.0;
  }
}

const Matrix& block_design(const Design& d, Block b) {
  return uses_treatment_design(b) ? d.w : d.xt;
}

/// Weighted exposure S_ik of every subject on one scale.
Vector scale_exposure(const Design& d, int k, const Dataset& data, const PosteriorMatrix& post,
                      const ParameterSet& params, std::size_t* clamp) {
  static constexpr std::array<std::array<Block, 2>, 3> kPairs{
      {{Block::M1, Block::M2}, {Block::R1, Block::R2}, {Block::T2, Block::T3}}};
  Vector s = Vector::Zero(static_cast<Eigen::Index>(d.n));
  for (Block b : kPairs[k]) {
    const Vector lp = block_design(d, b) * params[b];
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      const double wt = block_weight(b, post, i, data.a()[i]);
      if (wt > 0.0) s[i] += wt * std::exp(clamp_lp(lp[i], clamp));
    }
  }
  return s;
}

HazardSet breslow_hazards(const Design& d, const Dataset& data, const PosteriorMatrix& post,
                          const ParameterSet& params, std::size_t* clamp) {
  HazardSet out;
  for (int k = 0; k < 3; ++k) {
    const auto& sc = d.scales[k];
    const Vector s = scale_exposure(d, k, data, post, params, clamp);
    std::vector<double> den(sc.times.size(), 0.0);
    for (std::size_t i = 0; i < d.n; ++i)
      if (sc.rank[i] > 0) den[static_cast<std::size_t>(sc.rank[i] - 1)] += s[static_cast<Eigen::Index>(i)];
    std::vector<double> jumps(sc.times.size());
    double acc = 0.0;
    for (std::size_t l = sc.times.size(); l-- > 0;) {
      acc += den[l];
      if (!(acc > 0.0) || !std::isfinite(acc)) throw DegenerateRiskSet(scale_name(sc.scale), sc.times[l]);
      jumps[l] = sc.events[l] / acc;
    }
    out[k] = BaselineHazard(sc.scale, sc.times, std::move(jumps));
  }
  return out;
}

/// Profiled objective of one eta block with its partner held fixed.
class EtaProblem {
 public:
  EtaProblem(const Design& d, const Dataset& data, const PosteriorMatrix& post,
             const ParameterSet& params, Block block)
      : d_(d), block_(block) {
    const auto spec = block_spec(block);
    scale_ = &d.scales[spec.scale];
    const Matrix& design = block_design(d, block);
    const Vector plp = block_design(d, spec.partner) * params[spec.partner];
    const auto q = static_cast<std::size_t>(d.q);
    for (std::size_t i : scale_->order) {
      const auto ii = static_cast<Eigen::Index>(i);
      const int a = data.a()[ii];
      const double wt = block_weight(block, post, ii, a);
      const double pw = block_weight(spec.partner, post, ii, a);
      const double pt = pw > 0.0 ? pw * std::exp(clamp_lp(plp[ii])) : 0.0;
      if (wt == 0.0 && pt == 0.0) continue;
      level_.push_back(static_cast<std::size_t>(scale_->rank[i] - 1));
      weight_.push_back(wt);
      partner_.push_back(pt);
      event_.push_back(wt > 0.0 && scale_->is_event[i]);
      for (std::size_t c = 0; c < q; ++c) rows_.push_back(design(ii, static_cast<Eigen::Index>(c)));
    }
    acc_num_.resize(q);
    acc_sq_.resize(q * q);
  }

  ScoreEvaluation operator()(const Vector& eta) {
    const auto q = static_cast<std::size_t>(d_.q);
    std::vector<double> grad(q, 0.0), hess(q * q, 0.0);
    std::fill(acc_num_.begin(), acc_num_.end(), 0.0);
    std::fill(acc_sq_.begin(), acc_sq_.end(), 0.0);
    double value = 0.0;
    double acc_den = 0.0;
    std::size_t p = 0;
    const std::size_t count = level_.size();
    for (std::size_t l = scale_->times.size(); l-- > 0;) {
      for (; p < count && level_[p] == l; ++p) {
        const double* row = &rows_[p * q];
        acc_den += partner_[p];
        const double wt = weight_[p];
        if (wt == 0.0) continue;
        double lp = 0.0;
        for (std::size_t c = 0; c < q; ++c) lp += row[c] * eta[static_cast<Eigen::Index>(c)];
        if (event_[p]) {
          value += wt * lp;
          for (std::size_t c = 0; c < q; ++c) grad[c] += wt * row[c];
        }
        const double e = wt * std::exp(clamp_lp(lp));
        acc_den += e;
        for (std::size_t a = 0; a < q; ++a) {
          const double ea = e * row[a];
          acc_num_[a] += ea;
          for (std::size_t b = a; b < q; ++b) acc_sq_[a * q + b] += ea * row[b];
        }
      }
      const double dl = scale_->events[l];
      if (dl == 0.0) continue;
      if (!(acc_den > 0.0) || !std::isfinite(acc_den))
        throw DegenerateRiskSet(scale_name(scale_->scale), scale_->times[l]);
      value -= dl * std::log(acc_den);
      for (std::size_t a = 0; a < q; ++a) {
        const double ma = acc_num_[a] / acc_den;
        grad[a] -= dl * ma;
        for (std::size_t b = a; b < q; ++b)
          hess[a * q + b] -= dl * (acc_sq_[a * q + b] / acc_den - ma * (acc_num_[b] / acc_den));
      }
    }
    ScoreEvaluation ev;
    ev.value = value;
    ev.gradient = Eigen::Map<const Vector>(grad.data(), d_.q);
    ev.hessian.resize(d_.q, d_.q);
    for (std::size_t a = 0; a < q; ++a)
      for (std::size_t b = a; b < q; ++b) {
        const auto ia = static_cast<Eigen::Index>(a), ib = static_cast<Eigen::Index>(b);
        ev.hessian(ia, ib) = ev.hessian(ib, ia) = hess[a * q + b];
      }
    return ev;
  }

  Block block() const { return block_; }

 private:
  const Design& d_;
  Block block_;
  const ScaleIndex* scale_ = nullptr;
  std::vector<std::size_t> level_;
  std::vector<double> weight_;
  std::vector<double> partner_;
  std::vector<char> event_;
  std::vector<double> rows_;
  std::vector<double> acc_num_;
  std::vector<double> acc_sq_;
};

ScoreEvaluation alpha_eval(const PosteriorMatrix& post, const Matrix& xt, const Vector& alpha) {
  const Eigen::Index q = xt.cols();
  const Eigen::Index n = xt.rows();
  const Vector lp1 = xt * alpha.head(q);
  const Vector lp2 = xt * alpha.tail(q);
  Vector r1(n), r2(n), c11(n), c22(n), c12(n);
  double value = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mx = std::max({lp1[i], lp2[i], 0.0});
    const double e1 = std::exp(lp1[i] - mx), e2 = std::exp(lp2[i] - mx), e3 = std::exp(-mx);
    const double s = e1 + e2 + e3;
    const double w1 = e1 / s, w2 = e2 / s;
    value += post(i, 0) * lp1[i] + post(i, 1) * lp2[i] - (mx + std::log(s));
    r1[i] = post(i, 0) - w1;
    r2[i] = post(i, 1) - w2;
    c11[i] = w1 * (1.0 - w1);
    c22[i] = w2 * (1.0 - w2);
    c12[i] = -w1 * w2;
  }
  ScoreEvaluation ev;
  ev.value = value;
  ev.gradient.resize(2 * q);
  ev.gradient.head(q) = xt.transpose() * r1;
  ev.gradient.tail(q) = xt.transpose() * r2;
  ev.hessian.resize(2 * q, 2 * q);
  ev.hessian.topLeftCorner(q, q) = -(xt.transpose() * c11.asDiagonal() * xt);
  ev.hessian.bottomRightCorner(q, q) = -(xt.transpose() * c22.asDiagonal() * xt);
  ev.hessian.topRightCorner(q, q) = -(xt.transpose() * c12.asDiagonal() * xt);
  ev.hessian.bottomLeftCorner(q, q) = ev.hessian.topRightCorner(q, q).transpose();
  return ev;
}

std::vector<Eigen::Index> active_indices(const std::vector<bool>& active, Eigen::Index dim) {
  std::vector<Eigen::Index> idx;
  for (Eigen::Index j = 0; j < dim; ++j)
    if (active.empty() || active[static_cast<std::size_t>(j)]) idx.push_back(j);
  return idx;
}

/// Damped Newton ascent on a concave objective restricted to active coordinates.
template <class Eval>
Vector newton_maximize(Eval&& eval, Vector x, const std::vector<bool>& active,
                       const EmConfig& cfg, const std::string& what) {
  const auto idx = active_indices(active, x.size());
  const auto k = static_cast<Eigen::Index>(idx.size());
  if (k == 0) return x;
  ScoreEvaluation ev = eval(x);
  double gnorm = 0.0;
  for (std::size_t it = 0; it < cfg.inner_max_iters; ++it) {
    Vector g(k);
    Matrix h(k, k);
    for (Eigen::Index r = 0; r < k; ++r) {
      g[r] = ev.gradient[idx[r]];
      for (Eigen::Index c = 0; c < k; ++c) h(r, c) = -ev.hessian(idx[r], idx[c]);
    }
    gnorm = g.norm();
    if (!std::isfinite(gnorm)) throw SolverFailure(what + ": non-finite score", gnorm);
    if (gnorm < cfg.inner_newton_tol) return x;

    Eigen::LDLT<Matrix> ldlt(h);
    const Vector dvals = ldlt.vectorD();
    const double dmax = dvals.cwiseAbs().maxCoeff();
    if (ldlt.info() != Eigen::Success || !(dvals.minCoeff() > 1e-12 * std::max(1.0, dmax)))
      throw RankDeficiency(what + ": singular Hessian (covariates concentrated on a hyperplane or separated strata)");
    const Vector step = ldlt.solve(g);
    if (!step.allFinite()) throw RankDeficiency(what + ": Newton step is not finite");

    const double predicted = 0.5 * g.dot(step);
    double scale = 1.0;
    bool accepted = false;
    for (std::size_t hv = 0; hv <= cfg.step_halving_max; ++hv) {
      Vector cand = x;
      for (Eigen::Index r = 0; r < k; ++r) cand[idx[r]] += scale * step[r];
      ScoreEvaluation ce = eval(cand);
      // At the rounding floor the predicted gain is invisible in the objective.
      const bool at_floor = predicted <= 1e-14 * (1.0 + std::abs(ev.value)) && hv == 0;
      if (std::isfinite(ce.value) && (ce.value >= ev.value || at_floor)) {
        x = std::move(cand);
        ev = std::move(ce);
        accepted = true;
        break;
      }
      scale *= 0.5;
    }
    if (!accepted) throw SolverFailure(what + ": step-halving failed", gnorm);
    if (cfg.single_newton_step) return x;
  }
  // Re-check after the last accepted step.
  Vector g(k);
  for (Eigen::Index r = 0; r < k; ++r) g[r] = ev.gradient[idx[r]];
  if (g.norm() < cfg.inner_newton_tol) return x;
  throw SolverFailure(what + ": Newton did not converge", g.norm());
}

std::vector<bool> eta_mask(Eigen::Index q, const std::vector<std::size_t>& pinned) {
  std::vector<bool> m(static_cast<std::size_t>(q), true);
  for (auto c : pinned) m[c + 1] = false;
  return m;
}

std::vector<bool> alpha_mask(Eigen::Index q, const std::vector<std::size_t>& pinned) {
  std::vector<bool> m(static_cast<std::size_t>(2 * q), true);
  for (auto c : pinned) {
    m[c + 1] = false;
    m[static_cast<std::size_t>(q) + c + 1] = false;
  }
  return m;
}

Vector solve_eta(const Design& d, const Dataset& data, const PosteriorMatrix& post,
                 const ParameterSet& params, Block b, const EmConfig& cfg,
                 const std::vector<bool>& active) {
  EtaProblem problem(d, data, post, params, b);
  return newton_maximize(problem, params[b], active, cfg, std::string("eta_") + block_name(b));
}

std::pair<Vector, Vector> solve_alpha(const PosteriorMatrix& post, const Matrix& xt,
                                      const Vector& a1, const Vector& a2, const EmConfig& cfg,
                                      const std::vector<bool>& active) {
  const Eigen::Index q = xt.cols();
  Vector stacked(2 * q);
  stacked << a1, a2;
  auto eval = [&](const Vector& v) { return alpha_eval(post, xt, v); };
  const Vector sol = newton_maximize(eval, stacked, active, cfg, "alpha");
  return {sol.head(q), sol.tail(q)};
}

void check_posteriors(const PosteriorMatrix& post, std::size_t n) {
  if (static_cast<std::size_t>(post.rows()) != n) throw InvalidInput("posterior rows do not match data size");
  for (Eigen::Index i = 0; i < post.rows(); ++i) {
    if ((post.row(i).array() < 0.0).any() || (post.row(i).array() > 1.0).any() ||
        std::abs(post.row(i).sum() - 1.0) > 1e-9)
      throw InvalidInput("posterior row " + std::to_string(i + 1) + " is not a probability vector");
  }
}

PosteriorMatrix softmax_rows(const PosteriorMatrix& terms, const Dataset& data) {
  PosteriorMatrix post(terms.rows(), 3);
  for (Eigen::Index i = 0; i < terms.rows(); ++i) {
    const double mx = terms.row(i).maxCoeff();
    if (!std::isfinite(mx)) throw UnderflowError(data.ids()[static_cast<std::size_t>(i)], "all stratum mixture weights underflow");
    double s = 0.0;
    for (int u = 0; u < 3; ++u) {
      post(i, u) = terms(i, u) == kNegInf ? 0.0 : std::exp(terms(i, u) - mx);
      s += post(i, u);
    }
    post.row(i) /= s;
  }
  return post;
}

double loglik_from_terms(const PosteriorMatrix& terms, const Dataset& data) {
  std::vector<double> contrib(static_cast<std::size_t>(terms.rows()));
  for (Eigen::Index i = 0; i < terms.rows(); ++i) {
    const double mx = terms.row(i).maxCoeff();
    if (!std::isfinite(mx)) throw UnderflowError(data.ids()[static_cast<std::size_t>(i)], "subject likelihood is not positive");
    double s = 0.0;
    for (int u = 0; u < 3; ++u) s += terms(i, u) == kNegInf ? 0.0 : std::exp(terms(i, u) - mx);
    contrib[static_cast<std::size_t>(i)] = mx + std::log(s);
  }
  return compensated_sum(contrib);
}

HazardSet initial_hazards(const Design& d) {
  HazardSet h;
  for (int k = 0; k < 3; ++k) {
    const auto& sc = d.scales[k];
    const double m = static_cast<double>(sc.times.size());
    h[k] = BaselineHazard(sc.scale, sc.times, std::vector<double>(sc.times.size(), 1.0 / m));
  }
  return h;
}

HazardSet transfer_hazards(const Design& d, const HazardSet& from) {
  HazardSet h = initial_hazards(d);
  for (int k = 0; k < 3; ++k) {
    const auto& sc = d.scales[k];
    std::vector<double> jumps(sc.times.size());
    double prev = 0.0;
    bool ok = true;
    for (std::size_t l = 0; l < sc.times.size(); ++l) {
      const double c = cumhaz(from[k], sc.times[l]);
      jumps[l] = c - prev;
      prev = c;
      if (!(jumps[l] > 0.0)) ok = false;
    }
    if (ok) h[k] = BaselineHazard(sc.scale, sc.times, std::move(jumps));
  }
  return h;
}

double max_change(const ParameterSet& a, const ParameterSet& b, const HazardSet& ha, const HazardSet& hb) {
  double c = (a.flat() - b.flat()).cwiseAbs().maxCoeff();
  for (int k = 0; k < 3; ++k) {
    const auto& ja = ha[k].jumps();
    const auto& jb = hb[k].jumps();
    for (std::size_t l = 0; l < ja.size(); ++l) c = std::max(c, std::abs(ja[l] - jb[l]));
  }
  return c;
}

void check_fit_preconditions(const Dataset& data, const Design& d) {
  if (data.size() == 0) throw InvalidInput("empty dataset");
  const auto arm1 = data.a().sum();
  if (arm1 == 0 || arm1 == static_cast<int>(data.size()))
    throw InvalidInput("both treatment arms must be present; stratum 2 is unidentifiable with a single arm");
  static constexpr std::array<const char*, 3> kWhat{
      "no observed intermediate events (m1 = 0)", "no observed terminal events after an intermediate event (m2 = 0)",
      "no observed terminal events without an intermediate event (m3 = 0)"};
  for (int k = 0; k < 3; ++k)
    if (d.scales[k].times.empty()) throw InvalidInput(kWhat[k]);
}

std::vector<std::string> design_warnings(const Dataset& data, const std::vector<std::size_t>& pinned) {
  std::vector<std::string> w;
  for (auto c : pinned)
    w.push_back("covariate " + data.covariate_names()[c] + " has no variation; its coefficients are pinned at 0");
  // Remaining design collinearity makes strata hard to separate.
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(data.dim()); ++j)
    if (std::find(pinned.begin(), pinned.end(), static_cast<std::size_t>(j)) == pinned.end()) keep.push_back(j);
  Matrix xt(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(keep.size()) + 1);
  xt.col(0).setOnes();
  for (std::size_t c = 0; c < keep.size(); ++c) xt.col(static_cast<Eigen::Index>(c) + 1) = data.x().col(keep[c]);
  Eigen::ColPivHouseholderQR<Matrix> qr(xt);
  qr.setThreshold(1e-10);
  if (qr.rank() < xt.cols())
    w.push_back("covariates (with intercept) are collinear; stratum membership may be weakly identified");
  return w;
}

struct EmState {
  ParameterSet params;
  HazardSet hazards;
};

struct EmStep {
  double loglik = 0.0;  // at the input state
  EmState next;
};

EmStep em_step(const Dataset& data, const Design& d, const EmConfig& cfg, const EmState& s,
               const std::vector<bool>& emask, const std::vector<bool>& amask, std::size_t* clamp) {
  const PosteriorMatrix terms = stratum_log_terms(data, s.params, s.hazards, clamp);
  EmStep out;
  out.loglik = loglik_from_terms(terms, data);
  const PosteriorMatrix post = softmax_rows(terms, data);
  ParameterSet next = s.params;
  for (Block b : kEtaBlocks) next[b] = solve_eta(d, data, post, next, b, cfg, emask);
  auto [a1, a2] = solve_alpha(post, d.xt, s.params[Block::Alpha1], s.params[Block::Alpha2], cfg, amask);
  next[Block::Alpha1] = std::move(a1);
  next[Block::Alpha2] = std::move(a2);
  out.next.hazards = breslow_hazards(d, data, post, next, clamp);
  out.next.params = std::move(next);
  return out;
}

/// Parameters followed by log jump sizes.
Vector pack(const EmState& s) {
  const Vector p = s.params.flat();
  Eigen::Index len = p.size();
  for (const auto& h : s.hazards) len += static_cast<Eigen::Index>(h.size());
  Vector v(len);
  v.head(p.size()) = p;
  Eigen::Index k = p.size();
  for (const auto& h : s.hazards)
    for (double j : h.jumps()) v[k++] = std::log(j);
  return v;
}

EmState unpack(const Vector& v, const EmState& like) {
  EmState s;
  const auto q = static_cast<Eigen::Index>(like.params.blocks[0].size());
  s.params = ParameterSet::from_flat(v.head(8 * q), like.params.dim());
  Eigen::Index k = 8 * q;
  for (int c = 0; c < 3; ++c) {
    const auto& h = like.hazards[c];
    std::vector<double> jumps(h.size());
    for (auto& j : jumps) j = std::exp(v[k++]);
    s.hazards[c] = BaselineHazard(h.label(), h.times(), std::move(jumps));
  }
  return s;
}

FittedModel run_em(const Dataset& data, const Design& d, const EmConfig& cfg, ParameterSet params,
                   HazardSet hazards, const std::vector<std::size_t>& pinned) {
  FittedModel out;
  out.pinned_columns = pinned;
  const auto emask = eta_mask(d.q, pinned);
  const auto amask = alpha_mask(d.q, pinned);
  std::size_t clamp = 0;
  EmState state{std::move(params), std::move(hazards)};
  std::size_t iter = 0;

  // One plain EM step from `from`; returns true on convergence.
  auto plain = [&](const EmState& from, EmState& to, double& ll) {
    ++iter;
    try {
      EmStep st = em_step(data, d, cfg, from, emask, amask, &clamp);
      ll = st.loglik;
      const double change = max_change(from.params, st.next.params, from.hazards, st.next.hazards);
      to = std::move(st.next);
      return change < cfg.tol;
    } catch (const Error&) {
      std::throw_with_nested(NumericalError("EM iteration " + std::to_string(iter)));
    }
  };

  while (iter < cfg.max_outer_iters) {
    EmState x1;
    double ll0 = 0.0;
    if (plain(state, x1, ll0)) {
      out.loglik_trace.push_back(ll0);
      state = std::move(x1);
      out.converged = true;
      break;
    }
    out.loglik_trace.push_back(ll0);
    if (!cfg.accelerate || iter >= cfg.max_outer_iters) {
      state = std::move(x1);
      continue;
    }
    EmState x2;
    double ll1 = 0.0;
    const bool done = plain(x1, x2, ll1);
    out.loglik_trace.push_back(ll1);
    if (done || iter >= cfg.max_outer_iters) {
      state = std::move(x2);
      out.converged = done;
      if (done) break;
      continue;
    }
    // Squared extrapolation with a monotone safeguard; falls back to x2.
    const Vector v0 = pack(state), v1 = pack(x1), v2 = pack(x2);
    const Vector r = v1 - v0;
    const Vector w = v2 - v1 - r;
    const double wn = w.norm();
    double alpha = wn > 0.0 ? -r.norm() / wn : -1.0;
    alpha = std::min(alpha, -1.0);
    bool accepted = false;
    if (alpha < -1.0) {
      const Vector vx = v0 - 2.0 * alpha * r + alpha * alpha * w;
      if (vx.allFinite()) {
        try {
          const EmState xa = unpack(vx, state);
          EmStep st = em_step(data, d, cfg, xa, emask, amask, &clamp);
          ++iter;
          if (std::isfinite(st.loglik) && st.loglik >= ll1) {
            out.loglik_trace.push_back(st.loglik);
            const double change = max_change(xa.params, st.next.params, xa.hazards, st.next.hazards);
            state = std::move(st.next);
            accepted = true;
            if (change < cfg.tol) {
              out.converged = true;
              break;
            }
          }
        } catch (const Error&) {
          // Extrapolated point left the feasible region.
        }
      }
    }
    if (!accepted) state = std::move(x2);
  }
  params = std::move(state.params);
  hazards = std::move(state.hazards);
  out.n_iters = iter;
  const PosteriorMatrix terms = stratum_log_terms(data, params, hazards, &clamp);
  out.loglik_trace.push_back(loglik_from_terms(terms, data));
  out.posteriors = softmax_rows(terms, data);
  out.params = std::move(params);
  out.hazards = std::move(hazards);
  out.clamp_events = clamp;
  if (clamp > 0)
    out.warnings.push_back(std::to_string(clamp) + " linear predictor(s) clamped to +/-" +
                           std::to_string(static_cast<int>(kMaxLinearPredictor)));
  if (!out.converged)
    out.warnings.push_back("EM did not converge within " + std::to_string(cfg.max_outer_iters) + " iterations");
  return out;
}

}  // namespace

Standardization Standardization::of(const Matrix& x) {
  Standardization s;
  const auto n = static_cast<double>(x.rows());
  s.mean = x.colwise().mean().transpose();
  s.sd.resize(x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double ss = (x.col(j).array() - s.mean[j]).square().sum();
    const double sd = n > 1.0 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    s.sd[j] = sd > 0.0 ? sd : 1.0;
  }
  return s;
}

Vector Standardization::apply(const Vector& x) const {
  if (x.size() != mean.size()) throw InvalidInput("profile dimension does not match the standardization");
  return ((x - mean).array() / sd.array()).matrix();
}

Dataset Standardization::apply(const Dataset& data) const {
  if (static_cast<Eigen::Index>(data.dim()) != mean.size())
    throw InvalidInput("data dimension does not match the standardization");
  auto recs = data.records();
  for (auto& r : recs)
    for (std::size_t j = 0; j < r.x.size(); ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      r.x[j] = (r.x[j] - mean[jj]) / sd[jj];
    }
  return Dataset(recs, data.covariate_names());
}

FittedModel Standardization::restore(const FittedModel& fit) const {
  const auto p = static_cast<Eigen::Index>(fit.params.dim());
  if (p != mean.size()) throw InvalidInput("fit dimension does not match the standardization");
  FittedModel out = fit;
  std::array<double, 8> offset{};
  for (int b = 0; b < 8; ++b) {
    Vector& v = out.params.blocks[b];
    for (Eigen::Index j = 0; j < p; ++j) {
      v[j + 1] = fit.params.blocks[b][j + 1] / sd[j];
      offset[b] += v[j + 1] * mean[j];
    }
  }
  auto off = [&](Block b) { return offset[static_cast<int>(b)]; };
  // Each scale pairs a treatment-design block (no intercept) with an intercept block.
  static constexpr std::array<std::array<Block, 2>, 3> kPairs{
      {{Block::M1, Block::M2}, {Block::R1, Block::R2}, {Block::T3, Block::T2}}};
  for (int k = 0; k < 3; ++k) {
    const Block nb = kPairs[k][0], ib = kPairs[k][1];
    const double shift = std::exp(-off(nb));
    const auto& h = fit.hazards[k];
    std::vector<double> jumps(h.jumps());
    for (auto& j : jumps) j *= shift;
    if (!h.empty()) out.hazards[k] = BaselineHazard(h.label(), h.times(), std::move(jumps));
    out.params[ib][0] = fit.params[ib][0] - off(ib) + off(nb);
  }
  for (Block b : {Block::Alpha1, Block::Alpha2}) out.params[b][0] = fit.params[b][0] - off(b);
  return out;
}

std::vector<std::size_t> zero_variance_columns(const Matrix& x) {
  std::vector<std::size_t> out;
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    if (x.rows() == 0 || x.col(j).maxCoeff() == x.col(j).minCoeff()) out.push_back(static_cast<std::size_t>(j));
  return out;
}

std::array<std::vector<double>, 3> event_time_grid(const Dataset& data) {
  return {distinct_event_times(data, 0), distinct_event_times(data, 1), distinct_event_times(data, 2)};
}

PosteriorMatrix e_step(const Dataset& data, const ParameterSet& params, const HazardSet& hazards) {
  return softmax_rows(stratum_log_terms(data, params, hazards), data);
}

HazardSet m_step_hazards(const Dataset& data, const PosteriorMatrix& posteriors, const ParameterSet& params) {
  check_posteriors(posteriors, data.size());
  const Design d = make_design(data);
  return breslow_hazards(d, data, posteriors, params, nullptr);
}

ScoreEvaluation eta_objective(Block block, const Dataset& data, const PosteriorMatrix& posteriors,
                              const ParameterSet& params, const Vector& eta) {
  block_spec(block);
  const Design d = make_design(data);
  EtaProblem problem(d, data, posteriors, params, block);
  return problem(eta);
}

ScoreEvaluation alpha_objective(const PosteriorMatrix& posteriors, const Matrix& x,
                                const Vector& alpha_stacked) {
  Matrix xt(x.rows(), x.cols() + 1);
  xt.col(0).setOnes();
  xt.rightCols(x.cols()) = x;
  if (alpha_stacked.size() != 2 * xt.cols()) throw InvalidInput("alpha has wrong length");
  return alpha_eval(posteriors, xt, alpha_stacked);
}

Vector m_step_eta(Block block, const Dataset& data, const PosteriorMatrix& posteriors,
                  const ParameterSet& params, const EmConfig& config, const std::vector<bool>& active) {
  block_spec(block);
  config.validate();
  check_posteriors(posteriors, data.size());
  if (params.dim() != data.dim()) throw InvalidInput("parameter dimension does not match data");
  const Design d = make_design(data);
  return solve_eta(d, data, posteriors, params, block, config, active);
}

std::pair<Vector, Vector> m_step_alpha(const PosteriorMatrix& posteriors, const Matrix& x,
                                       const Vector& alpha1, const Vector& alpha2,
                                       const EmConfig& config, const std::vector<bool>& active) {
  config.validate();
  if (posteriors.rows() != x.rows()) throw InvalidInput("posterior rows do not match covariate rows");
  if (alpha1.size() != x.cols() + 1 || alpha2.size() != x.cols() + 1)
    throw InvalidInput("alpha length must be 1 + covariate dimension");
  Matrix xt(x.rows(), x.cols() + 1);
  xt.col(0).setOnes();
  xt.rightCols(x.cols()) = x;
  return solve_alpha(posteriors, xt, alpha1, alpha2, config, active);
}

FittedModel fit(const Dataset& data, const EmConfig& config, const std::optional<WarmStart>& warm) {
  config.validate();
  const Design d = make_design(data);
  check_fit_preconditions(data, d);
  const auto pinned = zero_variance_columns(data.x());
  const auto warnings = design_warnings(data, pinned);

  ParameterSet start(data.dim());
  HazardSet start_h = initial_hazards(d);
  if (warm) {
    if (warm->params.dim() != data.dim()) throw InvalidInput("warm start dimension does not match data");
    start = warm->params;
    if (warm->hazards) start_h = transfer_hazards(d, *warm->hazards);
  }
  for (auto c : pinned)
    for (auto& b : start.blocks) b[static_cast<Eigen::Index>(c) + 1] = 0.0;

  FittedModel best = run_em(data, d, config, start, start_h, pinned);
  if (config.n_starts > 1) {
    std::mt19937_64 rng(config.seed.value_or(0));
    std::normal_distribution<double> jitter(0.0, config.start_jitter);
    for (std::size_t s = 1; s < config.n_starts; ++s) {
      ParameterSet p = start;
      for (auto& b : p.blocks)
        for (Eigen::Index j = 0; j < b.size(); ++j) b[j] += jitter(rng);
      for (auto c : pinned)
        for (auto& b : p.blocks) b[static_cast<Eigen::Index>(c) + 1] = 0.0;
      try {
        FittedModel cand = run_em(data, d, config, p, start_h, pinned);
        if (cand.converged && (!best.converged || cand.loglik_trace.back() > best.loglik_trace.back()))
          best = std::move(cand);
      } catch (const Error&) {
        // A failed jittered start is simply not a candidate.
      }
    }
  }
  best.warnings.insert(best.warnings.begin(), warnings.begin(), warnings.end());
  return best;
}

FittedModel fit_with_fixed_posteriors(const Dataset& data, const PosteriorMatrix& posteriors,
                                      const EmConfig& config) {
  config.validate();
  check_posteriors(posteriors, data.size());
  const Design d = make_design(data);
  const auto pinned = zero_variance_columns(data.x());
  const auto emask = eta_mask(d.q, pinned);

  FittedModel out;
  out.posteriors = posteriors;
  out.pinned_columns = pinned;
  ParameterSet params(data.dim());
  auto [a1, a2] = solve_alpha(posteriors, d.xt, params[Block::Alpha1], params[Block::Alpha2], config,
                              alpha_mask(d.q, pinned));
  params[Block::Alpha1] = a1;
  params[Block::Alpha2] = a2;
  for (std::size_t iter = 1; iter <= config.max_outer_iters; ++iter) {
    ParameterSet next = params;
    for (Block b : kEtaBlocks) next[b] = solve_eta(d, data, posteriors, next, b, config, emask);
    const double change = (next.flat() - params.flat()).cwiseAbs().maxCoeff();
    params = std::move(next);
    out.n_iters = iter;
    if (change < config.tol) {
      out.converged = true;
      break;
    }
  }
  out.hazards = breslow_hazards(d, data, posteriors, params, nullptr);
  out.params = std::move(params);
  return out;
}

}  // namespace scrmed
