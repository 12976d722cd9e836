#pragma once

// Master-equation propagation, steady states, and objective evaluation.

#include "lsmdp/types.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <sstream>
#include <vector>

namespace lsmdp {

/// One master-equation step: rho'(dest) = sum_src p(dest, src) * rho(src).
inline EnsembleState propagate(const EnsembleState& rho, const StochasticMatrix& p) {
  if (rho.n() != p.n()) throw DimensionError("propagate: state/matrix size mismatch");
  return EnsembleState(p.matrix() * rho.values());
}

/// Full forward sweep under a time-dependent policy; returns rho(0..T).
inline std::vector<EnsembleState> propagate_trajectory(
    const EnsembleState& rho0, const std::vector<StochasticMatrix>& p_traj) {
  std::vector<EnsembleState> rho;
  rho.reserve(p_traj.size() + 1);
  rho.push_back(rho0);
  for (const auto& p : p_traj) rho.push_back(propagate(rho.back(), p));
  return rho;
}

/// Stationary distribution of `pbar`, i.e. the normalized solution of
/// (I - pbar) rho = 0. Solved as a linear system with the normalization row
/// appended rather than by power iteration, so periodic chains (pure cycles)
/// are handled. Requires the eigenvalue-1 eigenspace to be one-dimensional.
inline EnsembleState steady_state(const StochasticMatrix& pbar,
                                  double residual_tol = defaults::fixed_point_tol) {
  const Index n = pbar.n();
  const Matrix a = Matrix::Identity(n, n) - pbar.matrix();

  // Uniqueness: rank(I - pbar) must be exactly n - 1.
  Eigen::FullPivLU<Matrix> lu(a);
  lu.setThreshold(1e-9);
  if (lu.rank() < n - 1) {
    std::ostringstream os;
    os << "steady state is not unique: rank(I - pbar) = " << lu.rank() << " < n - 1";
    throw NonUniqueSteadyStateError(os.str());
  }

  Matrix aug(n + 1, n);
  aug.topRows(n) = a;
  aug.row(n).setOnes();
  Vector rhs = Vector::Zero(n + 1);
  rhs(n) = 1.0;
  Vector rho = aug.colPivHouseholderQr().solve(rhs);

  // Clamp roundoff-level negatives and renormalize.
  rho = rho.cwiseMax(0.0);
  rho /= rho.sum();

  const double residual = (pbar.matrix() * rho - rho).lpNorm<Eigen::Infinity>();
  if (!(residual <= residual_tol)) {
    std::ostringstream os;
    os << "steady state residual " << residual << " exceeds " << residual_tol;
    throw NonUniqueSteadyStateError(os.str());
  }
  return EnsembleState(rho);
}

/// Weighted KL cost of one source column:
///   sum_dest gamma(dest) * p(dest) * log(p(dest) / pbar(dest)),
/// with the convention 0 * log(0/0) = 0. Transitions forbidden by pbar must
/// carry zero probability. Can be negative when gamma varies across
/// destinations; it is a true divergence (>= 0) only for constant gamma.
inline double kl_column_cost(const Vector& p_col, const Vector& pbar_col,
                             const Vector& gamma_col) {
  if (p_col.size() != pbar_col.size() || p_col.size() != gamma_col.size())
    throw DimensionError("kl_column_cost: size mismatch");
  double acc = 0.0;
  for (Index i = 0; i < p_col.size(); ++i) {
    if (pbar_col(i) == 0.0) {
      if (p_col(i) > 0.0) {
        std::ostringstream os;
        os << "support violation: p(" << i << ") = " << p_col(i)
           << " but target entry is zero";
        throw SupportViolationError(os.str());
      }
      continue;
    }
    if (p_col(i) > 0.0)
      acc += gamma_col(i) * p_col(i) * std::log(p_col(i) / pbar_col(i));
  }
  return acc;
}

/// Realized objective of a policy trajectory: expected electricity cost plus
/// the weighted-KL welfare penalty, accumulated along the master-equation
/// trajectory started at prob.rho0. Cost at slot t weights U(t+1) by the
/// transition taken at t.
inline double objective_value(const Problem& prob,
                              const std::vector<StochasticMatrix>& p_traj) {
  if (static_cast<Index>(p_traj.size()) != prob.horizon)
    throw DimensionError("objective_value: policy length does not match horizon");
  const Index n = prob.n;
  Vector rho = prob.rho0.values();
  double total = 0.0;
  for (Index t = 0; t < prob.horizon; ++t) {
    const auto& p = p_traj[static_cast<size_t>(t)];
    if (p.n() != n) throw DimensionError("objective_value: matrix size mismatch");
    const Vector u_next = prob.costs.at(t + 1);
    for (Index src = 0; src < n; ++src) {
      const Vector p_col = p.col(src);
      const double cost = p_col.dot(u_next);
      const double penalty = kl_column_cost(
          p_col, prob.pbar.col(src), prob.penalty.gamma_column(t, src, n));
      total += rho(src) * (cost + penalty);
    }
    rho = p.matrix() * rho;
  }
  return total;
}

namespace detail {

// Assemble a Solution from a finished backward pass: forward sweep from
// rho0 plus the realized objective.
inline Solution finalize_solution(const Problem& prob,
                                  std::vector<StochasticMatrix> p_traj, Matrix phi,
                                  std::optional<Matrix> lambda = std::nullopt) {
  Solution sol;
  sol.p_traj = std::move(p_traj);
  sol.rho_traj = propagate_trajectory(prob.rho0, sol.p_traj);
  sol.phi = std::move(phi);
  sol.lambda = std::move(lambda);
  sol.objective = objective_value(prob, sol.p_traj);
  return sol;
}

}  // namespace detail

/// Shannon entropy of an ensemble state (natural log).
inline double entropy(const EnsembleState& rho) {
  double h = 0.0;
  for (Index i = 0; i < rho.n(); ++i)
    if (rho(i) > 0.0) h -= rho(i) * std::log(rho(i));
  return h;
}

/// Time-averaged entropy over a trajectory.
inline double mean_entropy(const std::vector<EnsembleState>& rho_traj) {
  double h = 0.0;
  for (const auto& r : rho_traj) h += entropy(r);
  return h / static_cast<double>(rho_traj.size());
}

}  // namespace lsmdp
