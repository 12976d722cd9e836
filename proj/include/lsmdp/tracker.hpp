#pragma once

// Ancillary-services tracking: minimize the welfare penalty subject to the
// ensemble consumption matching an exogenous signal at every slot. Solved by
// dual ascent on the per-slot multipliers xi(t): each outer iterate solves
// the penalized problem with costs U(t) = xi(t) * epsilon, then moves xi
// along the tracking violation.

#include "lsmdp/core.hpp"
#include "lsmdp/general_solver.hpp"
#include "lsmdp/types.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>
#include <vector>

namespace lsmdp::tracker {

/// Tracking instance. The base problem's cost schedule is ignored; costs are
/// regenerated from the multipliers at every outer iterate.
struct TrackingProblem {
  Problem base;
  Vector epsilon;  // per-state energy use, >= 0
  Vector target;   // s(t) for t = 1..T

  TrackingProblem(Problem base_problem, Vector eps, Vector signal)
      : base(std::move(base_problem)), epsilon(std::move(eps)), target(std::move(signal)) {
    if (epsilon.size() != base.n)
      throw DimensionError("epsilon length does not match the state count");
    if (target.size() != base.horizon)
      throw DimensionError("target signal length does not match the horizon");
    if (!epsilon.allFinite() || !(epsilon.minCoeff() >= 0.0))
      throw InvalidValueError("epsilon must be finite and nonnegative");
    if (!target.allFinite()) throw InvalidValueError("target signal must be finite");
  }

  /// Consumption is a convex combination of epsilon, so any reachable signal
  /// lies in [min eps, max eps]. Throws when the target leaves that band.
  void check_feasible_band() const {
    const double lo = epsilon.minCoeff();
    const double hi = epsilon.maxCoeff();
    for (Index t = 0; t < target.size(); ++t) {
      if (target(t) < lo || target(t) > hi) {
        std::ostringstream os;
        os << "target s(" << (t + 1) << ") = " << target(t)
           << " is outside the reachable consumption band [" << lo << ", " << hi << "]";
        throw InfeasibleTargetError(os.str());
      }
    }
  }
};

struct TrackingResult {
  Solution solution;
  Vector xi;                             // length T
  Vector residuals;                      // |consumption - target| per t = 1..T
  std::vector<double> residual_history;  // max residual after each inner solve
  int outer_iterations = 0;              // dual updates applied
  bool converged = false;
};

struct TrackOptions {
  double outer_tol = 1e-6;
  int max_outer = 500;
  double step = 0.5;  // initial dual step; halved on residual increase,
                      // regrown geometrically (cap 16x) on decrease
  general_solver::LambdaSolveConfig inner;
};

/// Ensemble consumption s_hat(t) = sum_alpha eps_alpha rho_alpha(t), t = 1..T.
inline Vector consumption(const std::vector<EnsembleState>& rho_traj,
                          const Vector& epsilon) {
  if (rho_traj.empty()) throw DimensionError("consumption: empty trajectory");
  const Index horizon = static_cast<Index>(rho_traj.size()) - 1;
  Vector s(horizon);
  for (Index t = 1; t <= horizon; ++t) {
    const auto& rho = rho_traj[static_cast<size_t>(t)];
    if (rho.n() != epsilon.size()) throw DimensionError("consumption: size mismatch");
    s(t - 1) = rho.values().dot(epsilon);
  }
  return s;
}

/// Cost schedule equivalent of the tracking multipliers: U_alpha(t) = xi(t) * eps_alpha.
inline CostSchedule costs_from_xi(const Vector& xi, const Vector& epsilon) {
  Matrix u(xi.size(), epsilon.size());
  for (Index t = 0; t < xi.size(); ++t) u.row(t) = xi(t) * epsilon.transpose();
  return CostSchedule(std::move(u));
}

/// Outer dual loop. Initialization follows the natural chain: xi starts at
/// one dual step from zero, evaluated at the consumption of the uncontrolled
/// ensemble (which makes xi identically zero whenever the target is already
/// met naturally). Non-convergence is reported in the result, not thrown.
inline TrackingResult track(const TrackingProblem& tp, const TrackOptions& opts = {}) {
  tp.check_feasible_band();
  const Index horizon = tp.base.horizon;

  std::vector<StochasticMatrix> natural(static_cast<size_t>(horizon), tp.base.pbar);
  const Vector natural_consumption =
      consumption(propagate_trajectory(tp.base.rho0, natural), tp.epsilon);

  Vector xi = opts.step * (natural_consumption - tp.target);
  double step = opts.step;
  const double step_cap = 16.0 * opts.step;
  double prev_residual = std::numeric_limits<double>::infinity();

  TrackingResult result;
  for (int outer = 0; outer <= opts.max_outer; ++outer) {
    Problem inner(tp.base.n, horizon, tp.base.pbar, costs_from_xi(xi, tp.epsilon),
                  tp.base.penalty, tp.base.rho0);
    Solution sol = general_solver::solve(inner, opts.inner);
    const Vector s_hat = consumption(sol.rho_traj, tp.epsilon);
    const Vector violation = s_hat - tp.target;
    const double max_residual = violation.cwiseAbs().maxCoeff();
    result.residual_history.push_back(max_residual);

    if (max_residual <= opts.outer_tol || outer == opts.max_outer) {
      result.solution = std::move(sol);
      result.xi = xi;
      result.residuals = violation.cwiseAbs();
      result.outer_iterations = outer;
      result.converged = max_residual <= opts.outer_tol;
      return result;
    }

    if (max_residual > prev_residual)
      step *= 0.5;
    else
      step = std::min(step * 1.2, step_cap);
    prev_residual = max_residual;
    xi += step * violation;  // ascend the dual of the tracking constraint
  }
  throw Error("unreachable");
}

}  // namespace lsmdp::tracker
