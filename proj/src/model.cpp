#include "scrmed/model.hpp"

#include "scrmed/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace scrmed {

namespace {

void check_record(const SubjectRecord& r, std::size_t p, std::size_t row,
                  std::vector<std::string>& issues) {
  auto report = [&](const std::string& msg) {
    issues.push_back("row " + std::to_string(row) + " (id " + r.id + "): " + msg);
  };
  if (r.a != 0 && r.a != 1) report("a must be 0 or 1");
  if (r.delta_m != 0 && r.delta_m != 1) report("delta_m must be 0 or 1");
  if (r.delta_t != 0 && r.delta_t != 1) report("delta_t must be 0 or 1");
  if (!std::isfinite(r.z) || !std::isfinite(r.y)) {
    report("times must be finite");
    return;
  }
  if (r.z < 0.0 || r.y < 0.0) report("times must be non-negative");
  if (r.z > r.y) report("z > y");
  if (r.delta_m == 0 && r.z != r.y) report("z must equal y when delta_m = 0");
  if (r.delta_m == 1 && !(r.y - r.z > 0.0)) report("gap time y - z must be positive when delta_m = 1");
  if (r.delta_m == 1 && r.z <= 0.0) report("intermediate event time must be positive");
  if (r.delta_t == 1 && r.y <= 0.0) report("terminal event time must be positive");
  if (r.x.size() != p) {
    report("expected " + std::to_string(p) + " covariates, found " + std::to_string(r.x.size()));
    return;
  }
  for (double v : r.x) {
    if (!std::isfinite(v)) {
      report("covariates must be finite");
      break;
    }
  }
}

}  // namespace

Dataset::Dataset(std::span<const SubjectRecord> records, std::vector<std::string> covariate_names)
    : names_(std::move(covariate_names)) {
  const std::size_t n = records.size();
  const std::size_t p = n == 0 ? names_.size() : records[0].x.size();
  if (names_.empty()) {
    for (std::size_t j = 0; j < p; ++j) names_.push_back("x" + std::to_string(j + 1));
  }
  if (names_.size() != p) throw InvalidInput("covariate name count does not match dimension");

  std::vector<std::string> issues;
  for (std::size_t i = 0; i < n; ++i) check_record(records[i], p, i + 1, issues);
  if (!issues.empty()) {
    std::ostringstream os;
    os << issues.size() << " invalid record(s):";
    for (std::size_t k = 0; k < std::min<std::size_t>(issues.size(), 50); ++k) os << "\n  " << issues[k];
    throw InvalidInput(os.str());
  }

  ids_.reserve(n);
  a_.resize(n);
  delta_m_.resize(n);
  delta_t_.resize(n);
  z_.resize(n);
  y_.resize(n);
  v_.resize(n);
  x_.resize(n, p);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = records[i];
    ids_.push_back(r.id);
    a_[i] = r.a;
    delta_m_[i] = r.delta_m;
    delta_t_[i] = r.delta_t;
    z_[i] = r.z;
    y_[i] = r.y;
    v_[i] = r.y - r.z;
    for (std::size_t j = 0; j < p; ++j) x_(i, j) = r.x[j];
  }
}

SubjectRecord Dataset::record(std::size_t i) const {
  SubjectRecord r;
  r.id = ids_[i];
  r.a = a_[i];
  r.z = z_[i];
  r.delta_m = delta_m_[i];
  r.y = y_[i];
  r.delta_t = delta_t_[i];
  r.x.resize(dim());
  for (std::size_t j = 0; j < dim(); ++j) r.x[j] = x_(i, j);
  return r;
}

std::vector<SubjectRecord> Dataset::records() const {
  std::vector<SubjectRecord> out;
  out.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) out.push_back(record(i));
  return out;
}

Dataset Dataset::select(std::span<const std::size_t> rows) const {
  Dataset d;
  const auto n = rows.size();
  d.names_ = names_;
  d.ids_.reserve(n);
  d.a_.resize(n);
  d.delta_m_.resize(n);
  d.delta_t_.resize(n);
  d.z_.resize(n);
  d.y_.resize(n);
  d.v_.resize(n);
  d.x_.resize(n, x_.cols());
  for (std::size_t k = 0; k < n; ++k) {
    const auto i = rows[k];
    if (i >= size()) throw InvalidInput("row index out of range in Dataset::select");
    d.ids_.push_back(ids_[i]);
    d.a_[k] = a_[i];
    d.delta_m_[k] = delta_m_[i];
    d.delta_t_[k] = delta_t_[i];
    d.z_[k] = z_[i];
    d.y_[k] = y_[i];
    d.v_[k] = v_[i];
    d.x_.row(k) = x_.row(i);
  }
  return d;
}

Dataset Dataset::with_swapped_treatment() const {
  Dataset d = *this;
  d.a_ = (1 - a_.array()).matrix();
  return d;
}

const char* block_name(Block b) {
  switch (b) {
    case Block::M1: return "M1";
    case Block::R1: return "R1";
    case Block::M2: return "M2";
    case Block::R2: return "R2";
    case Block::T2: return "T2";
    case Block::T3: return "T3";
    case Block::Alpha1: return "alpha1";
    case Block::Alpha2: return "alpha2";
  }
  return "?";
}

ParameterSet::ParameterSet(std::size_t p) {
  for (auto& b : blocks) b = Vector::Zero(static_cast<Eigen::Index>(p + 1));
}

Vector ParameterSet::flat() const {
  const auto q = blocks[0].size();
  Vector out(8 * q);
  for (int b = 0; b < 8; ++b) out.segment(b * q, q) = blocks[b];
  return out;
}

ParameterSet ParameterSet::from_flat(const Vector& v, std::size_t p) {
  const auto q = static_cast<Eigen::Index>(p + 1);
  if (v.size() != 8 * q) throw InvalidInput("parameter vector has length " + std::to_string(v.size()) +
                                            ", expected " + std::to_string(8 * q));
  ParameterSet ps(p);
  for (int b = 0; b < 8; ++b) ps.blocks[b] = v.segment(b * q, q);
  return ps;
}

std::vector<std::string> ParameterSet::names(std::span<const std::string> covariate_names) {
  std::vector<std::string> out;
  for (int b = 0; b < 8; ++b) {
    const auto blk = static_cast<Block>(b);
    const std::string nm = block_name(blk);
    if (blk == Block::Alpha1 || blk == Block::Alpha2) {
      out.push_back(nm + ".intercept");
      for (const auto& c : covariate_names) out.push_back(nm + "." + c);
    } else {
      out.push_back("beta_" + nm);
      for (const auto& c : covariate_names) out.push_back("gamma_" + nm + "." + c);
    }
  }
  return out;
}

bool ParameterSet::all_finite() const {
  return std::all_of(blocks.begin(), blocks.end(), [](const Vector& v) { return v.allFinite(); });
}

const char* scale_name(HazardScale s) {
  switch (s) {
    case HazardScale::Illness: return "Lambda1";
    case HazardScale::Gap: return "Lambda2";
    case HazardScale::Direct: return "Lambda3";
  }
  return "?";
}

BaselineHazard::BaselineHazard(HazardScale label, std::vector<double> jump_times,
                               std::vector<double> jump_sizes)
    : label_(label), times_(std::move(jump_times)), jumps_(std::move(jump_sizes)) {
  if (times_.size() != jumps_.size()) throw InvalidInput("jump times and sizes differ in length");
  cum_.resize(times_.size());
  double acc = 0.0;
  for (std::size_t l = 0; l < times_.size(); ++l) {
    if (!(times_[l] > 0.0) || !std::isfinite(times_[l]))
      throw InvalidInput("jump times must be positive and finite");
    if (l > 0 && !(times_[l] > times_[l - 1])) throw InvalidInput("jump times must be strictly increasing");
    if (!(jumps_[l] > 0.0) || !std::isfinite(jumps_[l]))
      throw InvalidInput("jump sizes must be positive and finite");
    acc += jumps_[l];
    cum_[l] = acc;
  }
}

std::size_t BaselineHazard::count_at_or_before(double t) const {
  return static_cast<std::size_t>(std::upper_bound(times_.begin(), times_.end(), t) - times_.begin());
}

double cumhaz(const BaselineHazard& h, double t) {
  if (!(t >= 0.0)) throw InvalidInput("cumulative hazard requested at negative time");
  const auto k = h.count_at_or_before(t);
  return k == 0 ? 0.0 : h.cumulative()[k - 1];
}

std::array<double, 3> stratum_weights(const Eigen::Ref<const Vector>& x, const Vector& alpha1,
                                      const Vector& alpha2) {
  if (alpha1.size() != x.size() + 1 || alpha2.size() != x.size() + 1)
    throw InvalidInput("stratum_weights: alpha length must be 1 + covariate dimension");
  const double lp1 = alpha1[0] + alpha1.tail(x.size()).dot(x);
  const double lp2 = alpha2[0] + alpha2.tail(x.size()).dot(x);
  const double m = std::max({lp1, lp2, 0.0});
  const double e1 = std::exp(lp1 - m), e2 = std::exp(lp2 - m), e3 = std::exp(-m);
  const double s = e1 + e2 + e3;
  return {e1 / s, e2 / s, e3 / s};
}

std::array<double, 3> stratum_weights(std::span<const double> x, const Vector& alpha1,
                                      const Vector& alpha2) {
  const Eigen::Map<const Vector> xm(x.data(), static_cast<Eigen::Index>(x.size()));
  return stratum_weights(Eigen::Ref<const Vector>(xm), alpha1, alpha2);
}

double linear_predictor(const ParameterSet& params, Block b, int a,
                        const Eigen::Ref<const Vector>& x) {
  const Vector& eta = params[b];
  if (eta.size() != x.size() + 1) throw InvalidInput("linear_predictor: covariate dimension mismatch");
  const double lead = uses_treatment_design(b) ? eta[0] * a : eta[0];
  return lead + eta.tail(x.size()).dot(x);
}

double illness_path_survival(double t, const BaselineHazard& illness, const BaselineHazard& gap,
                             double lp_illness, double lp_gap) {
  const double em = std::exp(clamp_lp(lp_illness));
  const double er = std::exp(clamp_lp(lp_gap));
  const auto& t1 = illness.times();
  const auto& l1 = illness.jumps();
  const auto& c1 = illness.cumulative();
  const auto& t2 = gap.times();
  const auto& c2 = gap.cumulative();

  const std::size_t m1 = illness.count_at_or_before(t);
  double total = std::exp(-(m1 == 0 ? 0.0 : c1[m1 - 1]) * em);
  // t - t1j decreases in j, so the gap-scale pointer only moves down.
  std::size_t k = gap.count_at_or_before(t);
  for (std::size_t j = 0; j < m1; ++j) {
    const double residual = t - t1[j];
    while (k > 0 && t2[k - 1] > residual) --k;
    const double gap_cum = k == 0 ? 0.0 : c2[k - 1];
    total += l1[j] * em * std::exp(-c1[j] * em) * std::exp(-gap_cum * er);
  }
  return total;
}

double survival_support(const FittedModel& fit, int a, int u) {
  const bool direct = u == 3 || (u == 2 && a == 1);
  if (direct) return fit.hazards[2].support_limit();
  return std::min(fit.hazards[0].support_limit(), fit.hazards[1].support_limit());
}

double stratum_survival(double t, const Eigen::Ref<const Vector>& x, int a, int u,
                        const FittedModel& fit) {
  if (u < 1 || u > 3) throw InvalidInput("stratum label must be 1, 2 or 3");
  if (a != 0 && a != 1) throw InvalidInput("treatment must be 0 or 1");
  if (!(t >= 0.0)) throw InvalidInput("survival requested at negative time");
  if (static_cast<std::size_t>(x.size()) != fit.params.dim())
    throw InvalidInput("covariate profile dimension mismatch");
  if (!fit.converged) throw InvalidInput("survival evaluation requires a converged fit");
  if (t == 0.0) return 1.0;
  const double limit = survival_support(fit, a, u);
  if (t > limit) throw OutOfSupport(t, limit);

  const auto& p = fit.params;
  const auto& h = fit.hazards;
  if (u == 1) {
    return illness_path_survival(t, h[0], h[1], linear_predictor(p, Block::M1, a, x),
                                 linear_predictor(p, Block::R1, a, x));
  }
  if (u == 2 && a == 0) {
    return illness_path_survival(t, h[0], h[1], linear_predictor(p, Block::M2, 0, x),
                                 linear_predictor(p, Block::R2, 0, x));
  }
  const Block b = u == 2 ? Block::T2 : Block::T3;
  return std::exp(-cumhaz(h[2], t) * std::exp(clamp_lp(linear_predictor(p, b, a, x))));
}

}  // namespace scrmed
