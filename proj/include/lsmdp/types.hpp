#pragma once

// Domain types for finite-horizon KL-regularized ensemble control problems.
//
// Orientation convention used everywhere in this library: transition matrices
// are column-stochastic with the COLUMN indexing the source state, i.e.
// entry(dest, src) is the probability of moving from `src` to `dest` in one
// time step and every source column sums to one. The ensemble state advances
// as rho(t+1) = p(t) * rho(t).

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace lsmdp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

namespace defaults {
inline constexpr double stochastic_tol = 1e-12;
inline constexpr double fixed_point_tol = 1e-10;
}  // namespace defaults

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
  using Error::Error;
};

/// A probability was placed on a transition forbidden by the target matrix.
struct SupportViolationError : Error {
  using Error::Error;
};

/// The eigenvalue-1 eigenspace of the target matrix is not one-dimensional.
struct NonUniqueSteadyStateError : Error {
  using Error::Error;
};

/// A solver was invoked with a penalty variant it does not handle.
struct WrongVariantError : Error {
  using Error::Error;
};

/// Matrix or state failed validation on construction.
struct InvalidValueError : Error {
  using Error::Error;
};

/// An iterative solve ran out of its iteration budget.
struct ConvergenceError : Error {
  ConvergenceError(std::string what, Index column, double residual, int iterations,
                   Index time = -1)
      : Error(std::move(what)), column(column), residual(residual),
        iterations(iterations), time(time) {}

  Index column;
  double residual;
  int iterations;
  Index time;  // -1 when not attributable to a backward step
};

/// The requested tracking signal violates a necessary feasibility bound.
struct InfeasibleTargetError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Stochasticity validation report
// ---------------------------------------------------------------------------

struct ColumnViolation {
  Index column = 0;
  double column_sum = 0.0;
  double min_entry = 0.0;
};

struct StochasticityReport {
  bool ok = true;
  std::vector<ColumnViolation> violations;

  std::string describe() const {
    if (ok) return "ok";
    std::ostringstream os;
    os << "stochasticity violated in " << violations.size() << " column(s):";
    for (const auto& v : violations) {
      os << " [col " << v.column << " sum " << v.column_sum << " min " << v.min_entry
         << "]";
    }
    return os.str();
  }
};

/// Checks that `m` is square, elementwise >= -tol, and that every source
/// column sums to 1 within tol. Offending columns are listed in the report.
inline StochasticityReport validate_stochastic(const Matrix& m,
                                               double tol = defaults::stochastic_tol) {
  if (m.rows() != m.cols()) {
    std::ostringstream os;
    os << "stochastic matrix must be square, got " << m.rows() << "x" << m.cols();
    throw DimensionError(os.str());
  }
  StochasticityReport report;
  for (Index j = 0; j < m.cols(); ++j) {
    const double sum = m.col(j).sum();
    const double min_entry = m.col(j).minCoeff();
    if (!(std::abs(sum - 1.0) <= tol) || !(min_entry >= -tol) ||
        !m.col(j).allFinite()) {
      report.ok = false;
      report.violations.push_back({j, sum, min_entry});
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// StochasticMatrix
// ---------------------------------------------------------------------------

class StochasticMatrix;
inline StochasticityReport validate_stochastic(const StochasticMatrix& m,
                                               double tol = defaults::stochastic_tol);

/// Column-stochastic transition matrix; entry(dest, src) is the one-step
/// probability of the transition src -> dest.
class StochasticMatrix {
 public:
  explicit StochasticMatrix(Matrix entries, double tol = defaults::stochastic_tol)
      : entries_(std::move(entries)) {
    const auto report = validate_stochastic(entries_, tol);
    if (!report.ok) throw InvalidValueError(report.describe());
  }

  Index n() const { return entries_.rows(); }
  double operator()(Index dest, Index src) const { return entries_(dest, src); }
  const Matrix& matrix() const { return entries_; }
  auto col(Index src) const { return entries_.col(src); }

  bool operator==(const StochasticMatrix& other) const {
    return entries_ == other.entries_;
  }

 private:
  Matrix entries_;
};

inline StochasticityReport validate_stochastic(const StochasticMatrix& m, double tol) {
  return validate_stochastic(m.matrix(), tol);
}

// ---------------------------------------------------------------------------
// EnsembleState
// ---------------------------------------------------------------------------

/// Probability vector over the n device states.
class EnsembleState {
 public:
  explicit EnsembleState(Vector values, double tol = defaults::stochastic_tol)
      : values_(std::move(values)) {
    if (!(std::abs(values_.sum() - 1.0) <= tol) || !(values_.minCoeff() >= -tol) ||
        !values_.allFinite()) {
      std::ostringstream os;
      os << "ensemble state must be a probability vector (sum " << values_.sum()
         << ", min " << values_.minCoeff() << ")";
      throw InvalidValueError(os.str());
    }
  }

  static EnsembleState uniform(Index n) {
    return EnsembleState(Vector::Constant(n, 1.0 / static_cast<double>(n)));
  }

  Index n() const { return values_.size(); }
  double operator()(Index alpha) const { return values_(alpha); }
  const Vector& values() const { return values_; }

  bool operator==(const EnsembleState& other) const {
    return values_ == other.values_;
  }

 private:
  Vector values_;
};

// ---------------------------------------------------------------------------
// CostSchedule
// ---------------------------------------------------------------------------

/// Electricity cost per state and time slot, defined for t = 1..T.
/// The value at t = 0 is identically zero; this normalization makes the
/// backward value recursion and the trajectory objective agree exactly.
class CostSchedule {
 public:
  /// `u` holds rows for t = 1..T: u(t-1, alpha) = U_alpha(t).
  CostSchedule(Matrix u) : u_(std::move(u)) {
    if (!u_.allFinite()) throw InvalidValueError("cost schedule has non-finite entries");
  }

  static CostSchedule zero(Index horizon, Index n) {
    return CostSchedule(Matrix::Zero(horizon, n));
  }

  Index horizon() const { return u_.rows(); }
  Index n() const { return u_.cols(); }

  /// U(t, .) for t in [0, T]; t = 0 yields the zero vector.
  Vector at(Index t) const {
    if (t < 0 || t > horizon()) throw DimensionError("cost schedule index out of range");
    if (t == 0) return Vector::Zero(n());
    return u_.row(t - 1).transpose();
  }

  double value(Index t, Index alpha) const {
    if (t == 0) return 0.0;
    return u_(t - 1, alpha);
  }

  const Matrix& rows() const { return u_; }

  bool operator==(const CostSchedule& other) const { return u_ == other.u_; }

 private:
  Matrix u_;  // (T, n), row t-1 holds U(t)
};

// ---------------------------------------------------------------------------
// PenaltySchedule
// ---------------------------------------------------------------------------

/// Uniform KL weight: one gamma(t) > 0 per time step t = 0..T-1.
struct UniformPenalty {
  Vector gamma;  // length T
};

/// Per-source weight gamma_src(t): constant across destinations within a
/// source column, the case that still normalizes in closed form.
struct PerSourcePenalty {
  Matrix gamma;  // (T, n), entry (t, src)
};

/// Fully transition-differentiated weight gamma(t, dest, src).
struct FullPenalty {
  std::vector<Matrix> gamma;  // T matrices, each (n, n) indexed (dest, src)
};

enum class PenaltyVariant { Uniform, PerSource, Full };

class PenaltySchedule {
 public:
  PenaltySchedule(UniformPenalty p) : storage_(std::move(p)) {
    const auto& g = std::get<UniformPenalty>(storage_).gamma;
    if (!(g.minCoeff() > 0.0) || !g.allFinite())
      throw InvalidValueError("uniform penalty must be strictly positive and finite");
  }
  PenaltySchedule(PerSourcePenalty p) : storage_(std::move(p)) {
    const auto& g = std::get<PerSourcePenalty>(storage_).gamma;
    if (!(g.minCoeff() > 0.0) || !g.allFinite())
      throw InvalidValueError("per-source penalty must be strictly positive and finite");
  }
  PenaltySchedule(FullPenalty p) : storage_(std::move(p)) {
    const auto& gs = std::get<FullPenalty>(storage_).gamma;
    if (gs.empty()) throw InvalidValueError("full penalty schedule is empty");
    const Index n = gs.front().rows();
    for (const auto& g : gs) {
      if (g.rows() != n || g.cols() != n)
        throw DimensionError("full penalty matrices must all be n x n");
      if (!(g.minCoeff() > 0.0) || !g.allFinite())
        throw InvalidValueError("full penalty must be strictly positive and finite");
    }
  }

  static PenaltySchedule uniform(Index horizon, double gamma) {
    return PenaltySchedule(UniformPenalty{Vector::Constant(horizon, gamma)});
  }

  PenaltyVariant variant() const {
    if (std::holds_alternative<UniformPenalty>(storage_)) return PenaltyVariant::Uniform;
    if (std::holds_alternative<PerSourcePenalty>(storage_))
      return PenaltyVariant::PerSource;
    return PenaltyVariant::Full;
  }

  Index horizon() const {
    if (const auto* u = std::get_if<UniformPenalty>(&storage_)) return u->gamma.size();
    if (const auto* s = std::get_if<PerSourcePenalty>(&storage_)) return s->gamma.rows();
    return static_cast<Index>(std::get<FullPenalty>(storage_).gamma.size());
  }

  /// Weight of transition src -> dest at time t; valid for any variant.
  double gamma(Index t, Index dest, Index src) const {
    if (const auto* u = std::get_if<UniformPenalty>(&storage_)) return u->gamma(t);
    if (const auto* s = std::get_if<PerSourcePenalty>(&storage_)) return s->gamma(t, src);
    return std::get<FullPenalty>(storage_).gamma[static_cast<size_t>(t)](dest, src);
  }

  /// Column of weights over destinations for (t, src).
  Vector gamma_column(Index t, Index src, Index n) const {
    if (const auto* u = std::get_if<UniformPenalty>(&storage_))
      return Vector::Constant(n, u->gamma(t));
    if (const auto* s = std::get_if<PerSourcePenalty>(&storage_))
      return Vector::Constant(n, s->gamma(t, src));
    return std::get<FullPenalty>(storage_).gamma[static_cast<size_t>(t)].col(src);
  }

  const UniformPenalty& as_uniform() const {
    if (const auto* u = std::get_if<UniformPenalty>(&storage_)) return *u;
    throw WrongVariantError("penalty schedule is not the uniform variant");
  }
  const PerSourcePenalty& as_per_source() const {
    if (const auto* s = std::get_if<PerSourcePenalty>(&storage_)) return *s;
    throw WrongVariantError("penalty schedule is not the per-source variant");
  }
  const FullPenalty& as_full() const {
    if (const auto* f = std::get_if<FullPenalty>(&storage_)) return *f;
    throw WrongVariantError("penalty schedule is not the full variant");
  }

  bool operator==(const PenaltySchedule& other) const {
    if (variant() != other.variant()) return false;
    switch (variant()) {
      case PenaltyVariant::Uniform:
        return as_uniform().gamma == other.as_uniform().gamma;
      case PenaltyVariant::PerSource:
        return as_per_source().gamma == other.as_per_source().gamma;
      case PenaltyVariant::Full:
        return as_full().gamma == other.as_full().gamma;
    }
    return false;
  }

 private:
  std::variant<UniformPenalty, PerSourcePenalty, FullPenalty> storage_;
};

// ---------------------------------------------------------------------------
// Problem / Solution
// ---------------------------------------------------------------------------

/// A finite-horizon instance: target matrix, cost and penalty schedules, and
/// the initial ensemble state. The target matrix is constant in time.
struct Problem {
  Index n;
  Index horizon;  // T >= 1
  StochasticMatrix pbar;
  CostSchedule costs;
  PenaltySchedule penalty;
  EnsembleState rho0;

  Problem(Index n_states, Index T, StochasticMatrix target, CostSchedule cost_schedule,
          PenaltySchedule penalty_schedule, EnsembleState initial_state)
      : n(n_states), horizon(T), pbar(std::move(target)), costs(std::move(cost_schedule)),
        penalty(std::move(penalty_schedule)), rho0(std::move(initial_state)) {
    if (horizon < 1) throw InvalidValueError("horizon must be >= 1");
    if (pbar.n() != n) throw DimensionError("target matrix size does not match n");
    if (rho0.n() != n) throw DimensionError("initial state size does not match n");
    if (costs.horizon() != horizon || costs.n() != n)
      throw DimensionError("cost schedule dimensions do not match (T, n)");
    if (penalty.horizon() != horizon)
      throw DimensionError("penalty schedule horizon does not match T");
    if (penalty.variant() == PenaltyVariant::PerSource &&
        penalty.as_per_source().gamma.cols() != n)
      throw DimensionError("per-source penalty width does not match n");
    if (penalty.variant() == PenaltyVariant::Full &&
        penalty.as_full().gamma.front().rows() != n)
      throw DimensionError("full penalty matrix size does not match n");
  }

  bool operator==(const Problem& other) const {
    return n == other.n && horizon == other.horizon && pbar == other.pbar &&
           costs == other.costs && penalty == other.penalty && rho0 == other.rho0;
  }
};

/// Optimal trajectories produced by a solver. `phi` holds the value function
/// phi(t, alpha) for t = 0..T; `lambda` the per-column multipliers for
/// t = 0..T-1 (general solver only).
struct Solution {
  std::vector<StochasticMatrix> p_traj;   // length T
  std::vector<EnsembleState> rho_traj;    // length T+1
  Matrix phi;                             // (T+1, n)
  std::optional<Matrix> lambda;           // (T, n)
  double objective = 0.0;
};

}  // namespace lsmdp
