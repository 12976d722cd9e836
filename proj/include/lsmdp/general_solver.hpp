#pragma once

// Backward-forward dynamic programming for the fully transition-differentiated
// penalty. Each backward step solves, per source column, a one-dimensional
// root-find for the Lagrange multiplier that restores stochasticity of the
// KKT transition formula
//
//   p(dest, src) = pbar(dest, src) * exp(-1 - (phi_next(dest) - lambda) / gamma(dest, src)).
//
// The column residual g(lambda) = sum_dest p(dest, src) - 1 is strictly
// increasing, so the root is unique and bracketable.

#include "lsmdp/core.hpp"
#include "lsmdp/types.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

namespace lsmdp::general_solver {

enum class LambdaMethod { BisectionNewton, GradientDescent, DirectConvex };

struct LambdaSolveConfig {
  LambdaMethod method = LambdaMethod::BisectionNewton;
  double tol = 1e-10;       // stochasticity residual |sum(p) - 1|
  int max_iter = 10'000;
  double step = 0.1;        // fixed step of the gradient iteration
};

struct LambdaResult {
  double lambda = 0.0;
  int iterations = 0;
};

struct DirectMinimizeResult {
  Vector p_col;
  double value = 0.0;
  int iterations = 0;
};

/// Elementwise KKT transition formula for one source column; zeros of the
/// target column are preserved exactly.
inline Vector kkt_transition_column(const Vector& phi_next, double lambda,
                                    const Vector& gamma_col, const Vector& pbar_col) {
  const Index n = pbar_col.size();
  if (phi_next.size() != n || gamma_col.size() != n)
    throw DimensionError("kkt_transition_column: size mismatch");
  Vector p = Vector::Zero(n);
  for (Index i = 0; i < n; ++i)
    if (pbar_col(i) > 0.0)
      p(i) = pbar_col(i) *
             std::exp(-1.0 - (phi_next(i) - lambda) / gamma_col(i));
  return p;
}

namespace detail {

// Log-domain description of one column: the column sum at multiplier lambda is
// exp(logsumexp(a + lambda / gamma)) over the support.
struct ColumnSystem {
  std::vector<Index> support;
  std::vector<double> a;          // log pbar_i - 1 - phi_i / gamma_i
  std::vector<double> inv_gamma;  // 1 / gamma_i

  ColumnSystem(const Vector& phi_next, const Vector& gamma_col, const Vector& pbar_col) {
    for (Index i = 0; i < pbar_col.size(); ++i) {
      if (pbar_col(i) <= 0.0) continue;
      if (!(gamma_col(i) > 0.0))
        throw InvalidValueError("penalty weight must be > 0 on the target support");
      support.push_back(i);
      a.push_back(std::log(pbar_col(i)) - 1.0 - phi_next(i) / gamma_col(i));
      inv_gamma.push_back(1.0 / gamma_col(i));
    }
    if (support.empty())
      throw InvalidValueError("target column has empty support");
  }

  // log of the column sum, plus its derivative in lambda
  std::pair<double, double> log_sum_and_slope(double lambda) const {
    double shift = -std::numeric_limits<double>::infinity();
    for (size_t k = 0; k < a.size(); ++k)
      shift = std::max(shift, a[k] + lambda * inv_gamma[k]);
    double sum = 0.0, weighted = 0.0;
    for (size_t k = 0; k < a.size(); ++k) {
      const double w = std::exp(a[k] + lambda * inv_gamma[k] - shift);
      sum += w;
      weighted += w * inv_gamma[k];
    }
    return {shift + std::log(sum), weighted / sum};
  }

  double residual(double lambda) const { return std::expm1(log_sum_and_slope(lambda).first); }

  // closed-form lambda of the column-constant case, evaluated at the support
  // mean of gamma; exact when gamma does not vary across destinations.
  double initial_guess(const Vector& phi_next, const Vector& gamma_col,
                       const Vector& pbar_col) const {
    double mean_gamma = 0.0;
    for (size_t k = 0; k < support.size(); ++k) mean_gamma += gamma_col(support[k]);
    mean_gamma /= static_cast<double>(support.size());
    double shift = -std::numeric_limits<double>::infinity();
    for (Index i : support)
      shift = std::max(shift, std::log(pbar_col(i)) - phi_next(i) / mean_gamma);
    double acc = 0.0;
    for (Index i : support)
      acc += std::exp(std::log(pbar_col(i)) - phi_next(i) / mean_gamma - shift);
    const double log_sum = shift + std::log(acc);
    return mean_gamma * (1.0 - log_sum);
  }
};

inline LambdaResult solve_lambda_newton(const ColumnSystem& sys, double lambda0,
                                        const LambdaSolveConfig& cfg) {
  // establish a sign-changing bracket by doubling outward from the guess
  double lo = lambda0, hi = lambda0;
  double width = 1.0 + 0.5 * std::abs(lambda0);
  int evals = 0;
  auto log_sum = [&](double lam) {
    ++evals;
    return sys.log_sum_and_slope(lam);
  };
  auto [h0, slope0] = log_sum(lambda0);
  if (h0 < 0.0) {
    while (true) {
      hi = lo + width;
      if (log_sum(hi).first >= 0.0) break;
      lo = hi;
      width *= 2.0;
      if (evals > cfg.max_iter)
        throw ConvergenceError("lambda bracket expansion exhausted the iteration budget",
                               -1, sys.residual(hi), evals);
    }
  } else {
    while (true) {
      lo = hi - width;
      if (log_sum(lo).first <= 0.0) break;
      hi = lo;
      width *= 2.0;
      if (evals > cfg.max_iter)
        throw ConvergenceError("lambda bracket expansion exhausted the iteration budget",
                               -1, sys.residual(lo), evals);
    }
  }

  // safeguarded Newton on h(lambda) = log(column sum); h is increasing
  double lambda = std::clamp(lambda0, lo, hi);
  double h = h0, slope = slope0;
  if (lambda != lambda0) std::tie(h, slope) = log_sum(lambda);
  while (true) {
    const double res = std::expm1(h);
    if (std::abs(res) <= cfg.tol) return {lambda, evals};
    if (evals >= cfg.max_iter)
      throw ConvergenceError("lambda Newton iteration exhausted the iteration budget",
                             -1, res, evals);
    if (h < 0.0)
      lo = lambda;
    else
      hi = lambda;
    double next = lambda - h / slope;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    lambda = next;
    std::tie(h, slope) = log_sum(lambda);
  }
}

inline LambdaResult solve_lambda_gradient(const ColumnSystem& sys, double lambda0,
                                          const LambdaSolveConfig& cfg) {
  double lambda = lambda0;
  for (int it = 1; it <= cfg.max_iter; ++it) {
    const double res = sys.residual(lambda);
    if (std::abs(res) <= cfg.tol) return {lambda, it};
    lambda -= cfg.step * res;
    if (!std::isfinite(lambda))
      throw ConvergenceError("lambda gradient iteration diverged", -1, res, it);
  }
  throw ConvergenceError("lambda gradient iteration exhausted the iteration budget",
                         -1, sys.residual(lambda), cfg.max_iter);
}

}  // namespace detail

/// First-order minimization of the column objective
///   f(p) = sum_dest phi_next(dest) p(dest) + sum_dest gamma(dest) p(dest) log(p(dest)/pbar(dest))
/// over the probability simplex restricted to the support of pbar_col, by
/// projected gradient in the entropy geometry (multiplicative updates with
/// backtracking). Stops when the KKT stationarity residual
/// max |grad - <p, grad>| drops to `tol`. The additive cost `u_cost` is
/// folded into the reported value, which then equals phi at this column.
inline DirectMinimizeResult minimize_column_direct(const Vector& phi_next, double u_cost,
                                                   const Vector& gamma_col,
                                                   const Vector& pbar_col, double tol,
                                                   int max_iter = 50'000) {
  const Index n = pbar_col.size();
  if (phi_next.size() != n || gamma_col.size() != n)
    throw DimensionError("minimize_column_direct: size mismatch");

  std::vector<Index> support;
  for (Index i = 0; i < n; ++i)
    if (pbar_col(i) > 0.0) support.push_back(i);
  if (support.empty()) throw InvalidValueError("target column has empty support");

  const size_t m = support.size();
  Eigen::VectorXd p(m), pbar_s(m), gamma_s(m), phi_s(m);
  for (size_t k = 0; k < m; ++k) {
    pbar_s(k) = pbar_col(support[k]);
    gamma_s(k) = gamma_col(support[k]);
    phi_s(k) = phi_next(support[k]);
  }
  p = pbar_s;

  auto objective = [&](const Eigen::VectorXd& q) {
    double f = 0.0;
    for (size_t k = 0; k < m; ++k)
      if (q(k) > 0.0) f += phi_s(k) * q(k) + gamma_s(k) * q(k) * std::log(q(k) / pbar_s(k));
    return f;
  };

  const double base_step = 1.0 / gamma_s.maxCoeff();
  double step = base_step;
  double f = objective(p);
  int it = 0;
  for (; it < max_iter; ++it) {
    Eigen::VectorXd grad(m);
    for (size_t k = 0; k < m; ++k)
      grad(k) = phi_s(k) + gamma_s(k) * (1.0 + std::log(p(k) / pbar_s(k)));
    const double mean = p.dot(grad);
    const double stationarity = (grad.array() - mean).abs().maxCoeff();
    if (stationarity <= tol) break;

    double try_step = step;
    bool moved = false;
    for (int bt = 0; bt < 60 && !moved; ++bt) {
      Eigen::VectorXd logq = p.array().log() - try_step * (grad.array() - mean);
      logq.array() -= logq.maxCoeff();
      Eigen::VectorXd q = logq.array().exp().max(1e-300);
      q /= q.sum();
      const double fq = objective(q);
      if (fq <= f + 1e-12 * (1.0 + std::abs(f))) {
        f = fq;
        p = std::move(q);
        moved = true;
      } else {
        try_step *= 0.5;
      }
    }
    if (moved) step = std::min(try_step * 1.5, base_step);
  }
  if (it >= max_iter) {
    Eigen::VectorXd grad(m);
    for (size_t k = 0; k < m; ++k)
      grad(k) = phi_s(k) + gamma_s(k) * (1.0 + std::log(p(k) / pbar_s(k)));
    const double mean = p.dot(grad);
    throw ConvergenceError("direct column minimization exhausted the iteration budget",
                           -1, (grad.array() - mean).abs().maxCoeff(), it);
  }

  Vector full = Vector::Zero(n);
  for (size_t k = 0; k < m; ++k) full(support[k]) = p(k);
  return {std::move(full), f + u_cost, it};
}

/// Finds the multiplier lambda with |sum_dest p(dest) - 1| <= cfg.tol for the
/// KKT column at phi_next. The residual is strictly increasing in lambda so
/// the root is unique; the default method is safeguarded Newton inside a
/// doubling bracket, the paper's fixed-step gradient iteration and the direct
/// convex column minimization are selectable alternatives.
inline LambdaResult solve_lambda(const Vector& phi_next, const Vector& gamma_col,
                                 const Vector& pbar_col,
                                 const LambdaSolveConfig& cfg = {}) {
  if (!(cfg.tol > 0.0) || cfg.max_iter < 1 || !(cfg.step > 0.0))
    throw InvalidValueError("lambda solve config: tol and step must be > 0, max_iter >= 1");
  detail::ColumnSystem sys(phi_next, gamma_col, pbar_col);
  const double lambda0 = sys.initial_guess(phi_next, gamma_col, pbar_col);
  switch (cfg.method) {
    case LambdaMethod::BisectionNewton:
      return detail::solve_lambda_newton(sys, lambda0, cfg);
    case LambdaMethod::GradientDescent:
      return detail::solve_lambda_gradient(sys, lambda0, cfg);
    case LambdaMethod::DirectConvex: {
      // recover lambda from the stationarity condition of the primal optimum
      double gamma_min = std::numeric_limits<double>::infinity();
      for (Index i : sys.support) gamma_min = std::min(gamma_min, gamma_col(i));
      const double stat_tol = std::min(cfg.tol, 0.25 * cfg.tol * gamma_min);
      auto direct = minimize_column_direct(phi_next, 0.0, gamma_col, pbar_col, stat_tol,
                                           cfg.max_iter);
      double lambda = 0.0;
      for (Index i : sys.support)
        if (direct.p_col(i) > 0.0)
          lambda += direct.p_col(i) *
                    (phi_next(i) +
                     gamma_col(i) * (1.0 + std::log(direct.p_col(i) / pbar_col(i))));
      const double res = sys.residual(lambda);
      if (!(std::abs(res) <= cfg.tol))
        throw ConvergenceError("direct-convex lambda extraction missed the tolerance",
                               -1, res, direct.iterations);
      return {lambda, direct.iterations};
    }
  }
  throw Error("unreachable");
}

struct BackwardStepResult {
  Matrix p_t;       // (n, n), column-stochastic within cfg.tol
  Vector phi_t;     // per source
  Vector lambda_t;  // per source
};

/// One backward DP step: per source column, solve for lambda, evaluate the
/// KKT transition column, and accumulate the value recursion
///   phi_src(t) = <phi_next, p_col> + sum gamma p log(p/pbar) + U_src(t).
/// Columns are normalized after the residual check; the correction is below
/// cfg.tol by construction and keeps downstream propagation exactly on the
/// probability simplex.
inline BackwardStepResult backward_step(const Vector& phi_next, const Vector& u_t,
                                        const Matrix& gamma_t, const StochasticMatrix& pbar,
                                        const LambdaSolveConfig& cfg = {}) {
  const Index n = pbar.n();
  if (phi_next.size() != n || u_t.size() != n || gamma_t.rows() != n || gamma_t.cols() != n)
    throw DimensionError("backward_step: size mismatch");

  BackwardStepResult out;
  out.p_t = Matrix::Zero(n, n);
  out.phi_t = Vector::Zero(n);
  out.lambda_t = Vector::Zero(n);

  for (Index src = 0; src < n; ++src) {
    const Vector gamma_col = gamma_t.col(src);
    const Vector pbar_col = pbar.col(src);
    LambdaResult lam;
    try {
      lam = solve_lambda(phi_next, gamma_col, pbar_col, cfg);
    } catch (const ConvergenceError& e) {
      throw ConvergenceError(std::string(e.what()) + " (source column " +
                                 std::to_string(src) + ")",
                             src, e.residual, e.iterations);
    }
    Vector p_col = kkt_transition_column(phi_next, lam.lambda, gamma_col, pbar_col);
    p_col /= p_col.sum();
    out.p_t.col(src) = p_col;
    out.lambda_t(src) = lam.lambda;
    out.phi_t(src) =
        phi_next.dot(p_col) + kl_column_cost(p_col, pbar_col, gamma_col) + u_t(src);
  }
  return out;
}

/// Full backward sweep (tau = T-1..0) followed by the forward
/// master-equation sweep. Accepts any penalty variant; uniform and
/// per-source weights are expanded columnwise and solved through the same
/// multiplier machinery.
inline Solution solve(const Problem& prob, const LambdaSolveConfig& cfg = {}) {
  const Index n = prob.n;
  const Index horizon = prob.horizon;

  Matrix phi(horizon + 1, n);
  phi.row(horizon) = prob.costs.at(horizon).transpose();
  Matrix lambda(horizon, n);
  std::vector<Matrix> raw(static_cast<size_t>(horizon));

  Matrix gamma_t(n, n);
  for (Index t = horizon - 1; t >= 0; --t) {
    for (Index src = 0; src < n; ++src)
      gamma_t.col(src) = prob.penalty.gamma_column(t, src, n);
    BackwardStepResult step;
    try {
      step = backward_step(phi.row(t + 1).transpose(), prob.costs.at(t), gamma_t,
                           prob.pbar, cfg);
    } catch (const ConvergenceError& e) {
      throw ConvergenceError(std::string(e.what()) + " at time " + std::to_string(t),
                             e.column, e.residual, e.iterations, t);
    }
    raw[static_cast<size_t>(t)] = std::move(step.p_t);
    phi.row(t) = step.phi_t.transpose();
    lambda.row(t) = step.lambda_t.transpose();
  }

  std::vector<StochasticMatrix> p_traj;
  p_traj.reserve(static_cast<size_t>(horizon));
  for (Index t = 0; t < horizon; ++t)
    p_traj.emplace_back(std::move(raw[static_cast<size_t>(t)]));

  return lsmdp::detail::finalize_solution(prob, std::move(p_traj), std::move(phi),
                                     std::move(lambda));
}

}  // namespace lsmdp::general_solver
