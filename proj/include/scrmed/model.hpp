#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace scrmed {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// One observed subject: (delta_m, z, delta_t, y, a, x).
struct SubjectRecord {
  std::string id;
  int a = 0;
  double z = 0.0;
  int delta_m = 0;
  double y = 0.0;
  int delta_t = 0;
  std::vector<double> x;
};

/// Column-oriented, validated collection of subjects sharing one covariate dimension.
///
/// Construction checks every record invariant: binary indicators, finite
/// non-negative times, z <= y, z == y when the intermediate event is censored,
/// a strictly positive gap y - z when it is observed, and strictly positive
/// event times. Violations are reported with the 1-based record number.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::span<const SubjectRecord> records,
                   std::vector<std::string> covariate_names = {});

  std::size_t size() const { return ids_.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(x_.cols()); }

  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<std::string>& covariate_names() const { return names_; }
  const Eigen::VectorXi& a() const { return a_; }
  const Eigen::VectorXi& delta_m() const { return delta_m_; }
  const Eigen::VectorXi& delta_t() const { return delta_t_; }
  const Vector& z() const { return z_; }
  const Vector& y() const { return y_; }
  /// Gap time y - z (zero when the intermediate event is censored).
  const Vector& v() const { return v_; }
  const Matrix& x() const { return x_; }

  SubjectRecord record(std::size_t i) const;
  std::vector<SubjectRecord> records() const;

  /// Subset / resample by row indices (duplicates allowed).
  Dataset select(std::span<const std::size_t> rows) const;
  /// Copy with treatment labels flipped a -> 1 - a.
  Dataset with_swapped_treatment() const;

 private:
  std::vector<std::string> ids_;
  std::vector<std::string> names_;
  Eigen::VectorXi a_, delta_m_, delta_t_;
  Vector z_, y_, v_;
  Matrix x_;
};

/// Coefficient blocks in the order eta_M1, eta_R1, eta_M2, eta_R2, eta_T2, eta_T3, alpha1, alpha2.
enum class Block : int { M1 = 0, R1, M2, R2, T2, T3, Alpha1, Alpha2 };

inline constexpr std::array<Block, 6> kEtaBlocks{Block::M1, Block::M2, Block::R1,
                                                 Block::R2, Block::T2, Block::T3};

const char* block_name(Block b);

/// True for blocks whose design is W = (a, x); false for X~ = (1, x).
constexpr bool uses_treatment_design(Block b) {
  return b == Block::M1 || b == Block::R1 || b == Block::T3;
}

/// All regression coefficients; each block has length 1 + p.
/// Treatment-design blocks hold (beta, gamma); intercept-design blocks hold
/// (intercept beta, gamma); alpha blocks are intercept-first.
struct ParameterSet {
  std::array<Vector, 8> blocks;

  ParameterSet() = default;
  explicit ParameterSet(std::size_t p);

  std::size_t dim() const { return static_cast<std::size_t>(blocks[0].size()) - 1; }

  Vector& operator[](Block b) { return blocks[static_cast<int>(b)]; }
  const Vector& operator[](Block b) const { return blocks[static_cast<int>(b)]; }

  /// Concatenation in block order; total length 8(p+1).
  Vector flat() const;
  static ParameterSet from_flat(const Vector& v, std::size_t p);
  /// Names aligned with flat(), e.g. "beta_M1", "gamma_M1.x2", "alpha2.intercept".
  static std::vector<std::string> names(std::span<const std::string> covariate_names);

  bool all_finite() const;
};

enum class HazardScale : int { Illness = 0, Gap = 1, Direct = 2 };
const char* scale_name(HazardScale s);

/// Right-continuous step cumulative hazard: Lambda(t) = sum of jumps at times <= t.
class BaselineHazard {
 public:
  BaselineHazard() = default;
  BaselineHazard(HazardScale label, std::vector<double> jump_times, std::vector<double> jump_sizes);

  HazardScale label() const { return label_; }
  const std::vector<double>& times() const { return times_; }
  const std::vector<double>& jumps() const { return jumps_; }
  /// Cumulated values at each jump time.
  const std::vector<double>& cumulative() const { return cum_; }
  std::size_t size() const { return times_.size(); }
  bool empty() const { return times_.empty(); }
  /// Largest jump time (0 when empty).
  double support_limit() const { return times_.empty() ? 0.0 : times_.back(); }

  /// Number of jump times <= t.
  std::size_t count_at_or_before(double t) const;

 private:
  HazardScale label_ = HazardScale::Illness;
  std::vector<double> times_;
  std::vector<double> jumps_;
  std::vector<double> cum_;
};

using HazardSet = std::array<BaselineHazard, 3>;

double cumhaz(const BaselineHazard& h, double t);

/// n x 3 posterior membership probabilities P(U_i = u | data).
using PosteriorMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3>;

struct FittedModel {
  ParameterSet params;
  HazardSet hazards;
  PosteriorMatrix posteriors;
  std::vector<double> loglik_trace;
  bool converged = false;
  std::size_t n_iters = 0;
  /// Covariate columns pinned at zero because they have no variation.
  std::vector<std::size_t> pinned_columns;
  std::size_t clamp_events = 0;
  std::vector<std::string> warnings;
};

/// Linear predictors are clamped to this magnitude before exponentiation.
inline constexpr double kMaxLinearPredictor = 700.0;

/// Clamp a linear predictor; increments *counter when clamping happens.
inline double clamp_lp(double lp, std::size_t* counter = nullptr) {
  if (lp > kMaxLinearPredictor) {
    if (counter) ++*counter;
    return kMaxLinearPredictor;
  }
  if (lp < -kMaxLinearPredictor) {
    if (counter) ++*counter;
    return -kMaxLinearPredictor;
  }
  return lp;
}

/// Stratum membership probabilities (w1, w2, w3) under the multinomial logit
/// with stratum 3 as reference. x excludes the intercept.
std::array<double, 3> stratum_weights(std::span<const double> x, const Vector& alpha1,
                                      const Vector& alpha2);
std::array<double, 3> stratum_weights(const Eigen::Ref<const Vector>& x, const Vector& alpha1,
                                      const Vector& alpha2);

/// Linear predictor of block b for treatment a and covariates x.
double linear_predictor(const ParameterSet& params, Block b, int a,
                        const Eigen::Ref<const Vector>& x);

/// Survival P(T >= t | x, A=a, U=u) under the fitted model. u in {1,2,3}.
double stratum_survival(double t, const Eigen::Ref<const Vector>& x, int a, int u,
                        const FittedModel& fit);

/// Support limit applicable to stratum_survival for (a, u).
double survival_support(const FittedModel& fit, int a, int u);

/// Survival of the illness-death path: no illness by t, or illness at a jump
/// t1j <= t followed by a residual time beyond t - t1j. Exponents are the
/// illness and residual linear predictors.
double illness_path_survival(double t, const BaselineHazard& illness, const BaselineHazard& gap,
                             double lp_illness, double lp_gap);

}  // namespace scrmed
