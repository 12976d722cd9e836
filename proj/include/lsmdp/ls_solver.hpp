#pragma once

// Backward-forward dynamic programming for the two analytically normalizable
// penalty variants:
//   - uniform gamma(t): the linearly solvable case, solved in the
//     desirability variable u = exp(-phi/gamma);
//   - per-source gamma_src(t): explicit normalization via a log-sum-exp
//     value recursion.

#include "lsmdp/core.hpp"
#include "lsmdp/types.hpp"

#include <Eigen/Dense>

#include <cassert>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

namespace lsmdp::ls_solver {

/// Desirability u(t, alpha) = exp(-phi(t, alpha) / gamma(t)) for t = 0..T,
/// with gamma(T) taken as gamma(T-1). Positive by definition; phi is the
/// authoritative quantity when u leaves the representable range.
struct DesirabilityTrajectory {
  Matrix u;  // (T+1, n)
};

struct LinearBackwardResult {
  std::vector<StochasticMatrix> p_traj;
  DesirabilityTrajectory desirability;
  Matrix phi;  // (T+1, n)
};

struct NormalizedBackwardResult {
  std::vector<StochasticMatrix> p_traj;
  Matrix phi;  // (T+1, n)
};

/// One step of the linear desirability recursion:
///   u(tau)_alpha = exp(-U_alpha(tau)/gamma) * sum_dest u_next(dest) * pbar(dest, alpha).
/// The map u_next -> u is linear in u_next.
inline Vector desirability_step(const Vector& u_next, const StochasticMatrix& pbar,
                                const Vector& u_cost, double gamma) {
  if (u_next.size() != pbar.n() || u_cost.size() != pbar.n())
    throw DimensionError("desirability_step: size mismatch");
  const Vector folded = pbar.matrix().transpose() * u_next;
  return folded.cwiseProduct((-u_cost / gamma).array().exp().matrix());
}

namespace detail {

// Shared by the normalized solver and the uniform broadcast path.
// gamma_src is (T, n): weight per (time, source column).
inline NormalizedBackwardResult normalized_backward(const StochasticMatrix& pbar,
                                                    const CostSchedule& costs,
                                                    const Matrix& gamma_src) {
  const Index n = pbar.n();
  const Index horizon = costs.horizon();
  Matrix phi(horizon + 1, n);
  phi.row(horizon) = costs.at(horizon).transpose();

  std::vector<StochasticMatrix> p_traj;
  p_traj.reserve(static_cast<size_t>(horizon));
  std::vector<Matrix> raw(static_cast<size_t>(horizon));

  for (Index t = horizon - 1; t >= 0; --t) {
    Matrix p_t = Matrix::Zero(n, n);
    for (Index src = 0; src < n; ++src) {
      const double g = gamma_src(t, src);
      // log-sum-exp over the support of the source column
      double shift = -std::numeric_limits<double>::infinity();
      for (Index i = 0; i < n; ++i)
        if (pbar(i, src) > 0.0)
          shift = std::max(shift, std::log(pbar(i, src)) - phi(t + 1, i) / g);
      double acc = 0.0;
      for (Index i = 0; i < n; ++i)
        if (pbar(i, src) > 0.0)
          acc += std::exp(std::log(pbar(i, src)) - phi(t + 1, i) / g - shift);
      const double log_norm = shift + std::log(acc);
      for (Index i = 0; i < n; ++i)
        if (pbar(i, src) > 0.0)
          p_t(i, src) = std::exp(std::log(pbar(i, src)) - phi(t + 1, i) / g - log_norm);
      phi(t, src) = -g * log_norm + costs.value(t, src);
    }
    raw[static_cast<size_t>(t)] = std::move(p_t);
  }
  for (Index t = 0; t < horizon; ++t)
    p_traj.emplace_back(std::move(raw[static_cast<size_t>(t)]));

  return {std::move(p_traj), std::move(phi)};
}

}  // namespace detail

/// Linearly solvable backward pass (uniform penalty only). The desirability
/// is renormalized by its maximum at every step with the accumulated log
/// scale tracked separately, so long horizons or small gamma cannot
/// underflow; phi is reconstructed exactly from the scaled representation.
/// Time-varying gamma(t) is handled by the exact power transform
/// u^(gamma(t+1)/gamma(t)) before folding, which reduces to the plain linear
/// recursion whenever gamma is constant in time.
inline LinearBackwardResult backward_linear(const Problem& prob) {
  if (prob.penalty.variant() != PenaltyVariant::Uniform)
    throw WrongVariantError("backward_linear requires the uniform penalty variant");
  const Vector& g = prob.penalty.as_uniform().gamma;
  const Index n = prob.n;
  const Index horizon = prob.horizon;
  const auto gamma_at = [&](Index t) { return g(std::min(t, horizon - 1)); };

  Matrix phi(horizon + 1, n);
  phi.row(horizon) = prob.costs.at(horizon).transpose();

  // scaled desirability: u = exp(log_u_scaled + log_scale), max(log_u_scaled) = 0
  Vector log_u_scaled = -prob.costs.at(horizon) / gamma_at(horizon);
  double log_scale = log_u_scaled.maxCoeff();
  log_u_scaled.array() -= log_scale;

  std::vector<Matrix> raw(static_cast<size_t>(horizon));
  for (Index t = horizon - 1; t >= 0; --t) {
    const double gamma_t = g(t);
    const double ratio = gamma_at(t + 1) / gamma_t;
    const Vector log_v = ratio * log_u_scaled;
    const double v_scale = ratio * log_scale;
    const Vector v = log_v.array().exp();

    const Vector folded = prob.pbar.matrix().transpose() * v;  // per source column
    Matrix p_t = Matrix::Zero(n, n);
    Vector log_folded(n);
    for (Index src = 0; src < n; ++src) {
      if (folded(src) > 0.0 && std::isfinite(folded(src))) {
        p_t.col(src) = v.cwiseProduct(prob.pbar.col(src)) / folded(src);
        log_folded(src) = std::log(folded(src));
      } else {
        // entire support of this column underflowed; redo it in log space
        double shift = -std::numeric_limits<double>::infinity();
        for (Index i = 0; i < n; ++i)
          if (prob.pbar(i, src) > 0.0)
            shift = std::max(shift, std::log(prob.pbar(i, src)) + log_v(i));
        double acc = 0.0;
        for (Index i = 0; i < n; ++i)
          if (prob.pbar(i, src) > 0.0)
            acc += std::exp(std::log(prob.pbar(i, src)) + log_v(i) - shift);
        log_folded(src) = shift + std::log(acc);
        for (Index i = 0; i < n; ++i)
          if (prob.pbar(i, src) > 0.0)
            p_t(i, src) =
                std::exp(std::log(prob.pbar(i, src)) + log_v(i) - log_folded(src));
      }
    }
    raw[static_cast<size_t>(t)] = std::move(p_t);

    const Vector log_u = log_folded - prob.costs.at(t) / gamma_t;
    phi.row(t) = (-gamma_t * (log_u.array() + v_scale)).matrix().transpose();
    log_scale = v_scale + log_u.maxCoeff();
    log_u_scaled = log_u.array() - log_u.maxCoeff();
  }

  std::vector<StochasticMatrix> p_traj;
  p_traj.reserve(static_cast<size_t>(horizon));
  for (Index t = 0; t < horizon; ++t)
    p_traj.emplace_back(std::move(raw[static_cast<size_t>(t)]));

  DesirabilityTrajectory desirability;
  desirability.u.resize(horizon + 1, n);
  for (Index t = 0; t <= horizon; ++t)
    desirability.u.row(t) = (-phi.row(t).array() / gamma_at(t)).exp();

  return {std::move(p_traj), std::move(desirability), std::move(phi)};
}

/// Explicitly normalized backward pass for the per-source penalty variant.
inline NormalizedBackwardResult backward_normalized(const Problem& prob) {
  if (prob.penalty.variant() != PenaltyVariant::PerSource)
    throw WrongVariantError("backward_normalized requires the per-source penalty variant");
  return detail::normalized_backward(prob.pbar, prob.costs,
                                     prob.penalty.as_per_source().gamma);
}

/// Backward pass then forward master-equation sweep. Handles the uniform and
/// per-source variants; the full transition-differentiated variant needs the
/// general solver.
inline Solution solve(const Problem& prob) {
  switch (prob.penalty.variant()) {
    case PenaltyVariant::Uniform: {
      auto bw = backward_linear(prob);
#ifndef NDEBUG
      if (prob.n <= 8 && prob.horizon <= 16) {
        // cross-check the linear recursion against the log-sum-exp route
        const Vector& g = prob.penalty.as_uniform().gamma;
        Matrix gamma_src(prob.horizon, prob.n);
        for (Index t = 0; t < prob.horizon; ++t) gamma_src.row(t).setConstant(g(t));
        const auto ref = detail::normalized_backward(prob.pbar, prob.costs, gamma_src);
        assert((bw.phi - ref.phi).cwiseAbs().maxCoeff() < 1e-9);
        for (Index t = 0; t < prob.horizon; ++t)
          assert((bw.p_traj[static_cast<size_t>(t)].matrix() -
                  ref.p_traj[static_cast<size_t>(t)].matrix())
                     .cwiseAbs()
                     .maxCoeff() < 1e-9);
      }
#endif
      return lsmdp::detail::finalize_solution(prob, std::move(bw.p_traj), std::move(bw.phi));
    }
    case PenaltyVariant::PerSource: {
      auto bw = backward_normalized(prob);
      return lsmdp::detail::finalize_solution(prob, std::move(bw.p_traj), std::move(bw.phi));
    }
    case PenaltyVariant::Full:
      throw WrongVariantError(
          "ls_solver::solve handles uniform and per-source penalties only; "
          "use general_solver::solve for the full variant");
  }
  throw Error("unreachable");
}

}  // namespace lsmdp::ls_solver
