#pragma once

// Independent reference implementations used only by the tests. None of them
// calls into the library's numerical code.

#include <gsl/gsl_errno.h>
#include <gsl/gsl_integration.h>
#include <gsl/gsl_multiroots.h>
#include <gsl/gsl_vector.h>

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>
#include <vector>

namespace oracle {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Softmax of (l1, l2, 0) in long double.
inline std::array<long double, 3> softmax3(long double l1, long double l2) {
  const long double e1 = std::exp(l1), e2 = std::exp(l2), e3 = 1.0L;
  const long double s = e1 + e2 + e3;
  return {e1 / s, e2 / s, e3 / s};
}

/// Nelson-Aalen increments d_l / #{t_i >= s_l} at each distinct event time.
inline std::map<double, double> nelson_aalen(const std::vector<double>& t, const std::vector<int>& d) {
  std::map<double, double> out;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!d[i] || out.count(t[i])) continue;
    double events = 0.0, at_risk = 0.0;
    for (std::size_t j = 0; j < t.size(); ++j) {
      if (t[j] >= t[i]) at_risk += 1.0;
      if (d[j] && t[j] == t[i]) events += 1.0;
    }
    out[t[i]] = events / at_risk;
  }
  return out;
}

/// Cox partial likelihood with Breslow ties, evaluated by brute force.
struct CoxEval {
  double value = 0.0;
  Vec grad;
  Mat hess;
};

inline CoxEval cox_eval(const std::vector<double>& t, const std::vector<int>& d, const Mat& X, const Vec& b) {
  const auto n = static_cast<Eigen::Index>(t.size());
  const auto q = X.cols();
  CoxEval e{0.0, Vec::Zero(q), Mat::Zero(q, q)};
  std::vector<double> done;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!d[i] || std::find(done.begin(), done.end(), t[i]) != done.end()) continue;
    done.push_back(t[i]);
    double s0 = 0.0, cnt = 0.0;
    Vec s1 = Vec::Zero(q), xs = Vec::Zero(q);
    Mat s2 = Mat::Zero(q, q);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (d[j] && t[j] == t[i]) {
        cnt += 1.0;
        xs += X.row(j).transpose();
      }
      if (t[j] >= t[i]) {
        const double r = std::exp(X.row(j).dot(b));
        s0 += r;
        s1 += r * X.row(j).transpose();
        s2 += r * X.row(j).transpose() * X.row(j);
      }
    }
    e.value += xs.dot(b) - cnt * std::log(s0);
    e.grad += xs - cnt * s1 / s0;
    e.hess -= cnt * (s2 / s0 - (s1 / s0) * (s1 / s0).transpose());
  }
  return e;
}

/// Newton-Raphson with step halving on the Breslow partial likelihood.
inline Vec cox_fit(const std::vector<double>& t, const std::vector<int>& d, const Mat& X) {
  Vec b = Vec::Zero(X.cols());
  for (int it = 0; it < 200; ++it) {
    const CoxEval e = cox_eval(t, d, X, b);
    if (e.grad.norm() < 1e-12) return b;
    Vec step = (-e.hess).fullPivLu().solve(e.grad);
    double f = 1.0;
    for (int h = 0; h < 40; ++h, f *= 0.5) {
      if (cox_eval(t, d, X, b + f * step).value >= e.value - 1e-14) break;
    }
    b += f * step;
  }
  if (cox_eval(t, d, X, b).grad.norm() > 1e-8) throw std::runtime_error("cox oracle did not converge");
  return b;
}

/// Adaptive quadrature of f on [a, b] (GSL QAGS).
inline double integrate(const std::function<double(double)>& f, double a, double b, double tol = 1e-11) {
  if (b <= a) return 0.0;
  gsl_integration_workspace* ws = gsl_integration_workspace_alloc(2000);
  gsl_function F;
  F.function = [](double x, void* p) { return (*static_cast<const std::function<double(double)>*>(p))(x); };
  F.params = const_cast<std::function<double(double)>*>(&f);
  double result = 0.0, err = 0.0;
  const int status = gsl_integration_qags(&F, a, b, tol, tol, 2000, ws, &result, &err);
  gsl_integration_workspace_free(ws);
  if (status != GSL_SUCCESS) throw std::runtime_error("gsl quadrature failed");
  return result;
}

/// P(M + R > t) with M, R independent proportional-hazards times:
/// cumulative hazards L1 * e1 and L2 * e2, hazard rates l1 * e1.
inline double path_survival(double t, const std::function<double(double)>& L1,
                            const std::function<double(double)>& l1, const std::function<double(double)>& L2,
                            double e1, double e2) {
  const double tail = std::exp(-L1(t) * e1);
  const double body = integrate([&](double m) { return l1(m) * e1 * std::exp(-L1(m) * e1) * std::exp(-L2(t - m) * e2); },
                                0.0, t);
  return tail + body;
}

/// Solves F(x) = 0 with the GSL hybrid scaled method, started at x0.
inline Vec multiroot(const std::function<Vec(const Vec&)>& F, const Vec& x0) {
  const auto n = static_cast<std::size_t>(x0.size());
  struct Ctx {
    const std::function<Vec(const Vec&)>* f;
    std::size_t n;
  } ctx{&F, n};
  gsl_multiroot_function fn;
  fn.n = n;
  fn.params = &ctx;
  fn.f = [](const gsl_vector* x, void* p, gsl_vector* out) -> int {
    auto* c = static_cast<Ctx*>(p);
    Vec v(static_cast<Eigen::Index>(c->n));
    for (std::size_t i = 0; i < c->n; ++i) v[static_cast<Eigen::Index>(i)] = gsl_vector_get(x, i);
    const Vec r = (*c->f)(v);
    for (std::size_t i = 0; i < c->n; ++i) gsl_vector_set(out, i, r[static_cast<Eigen::Index>(i)]);
    return GSL_SUCCESS;
  };
  gsl_multiroot_fsolver* s = gsl_multiroot_fsolver_alloc(gsl_multiroot_fsolver_hybrids, n);
  gsl_vector* x = gsl_vector_alloc(n);
  for (std::size_t i = 0; i < n; ++i) gsl_vector_set(x, i, x0[static_cast<Eigen::Index>(i)]);
  gsl_multiroot_fsolver_set(s, &fn, x);
  int status = GSL_CONTINUE;
  for (int it = 0; it < 1000 && status == GSL_CONTINUE; ++it) {
    if (gsl_multiroot_fsolver_iterate(s)) break;
    status = gsl_multiroot_test_residual(s->f, 1e-12);
  }
  Vec out(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) out[static_cast<Eigen::Index>(i)] = gsl_vector_get(s->x, i);
  gsl_multiroot_fsolver_free(s);
  gsl_vector_free(x);
  if (status != GSL_SUCCESS) throw std::runtime_error("gsl multiroot failed");
  return out;
}

/// Central finite-difference Jacobian of F at x.
inline Mat fd_jacobian(const std::function<Vec(const Vec&)>& F, const Vec& x, double h = 1e-5) {
  const Vec f0 = F(x);
  Mat J(f0.size(), x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double step = h * std::max(1.0, std::abs(x[j]));
    Vec xp = x, xm = x;
    xp[j] += step;
    xm[j] -= step;
    J.col(j) = (F(xp) - F(xm)) / (2.0 * step);
  }
  return J;
}

}  // namespace oracle
