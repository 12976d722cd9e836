#pragma once

// Generator for the cyclic two-level load model: n states arranged on a
// directed cycle (first half "on", second half "off"). The natural dynamics
// advance one step along the cycle with probability q and hold otherwise;
// electricity cost applies to the on states only, with an optional seeded
// per-slot uniform noise term.

#include "lsmdp/core.hpp"
#include "lsmdp/rng.hpp"
#include "lsmdp/types.hpp"

#include <algorithm>
#include <cstdint>
#include <vector>

namespace lsmdp {

struct CyclicModelSpec {
  Index n_states = 8;            // even
  double advance_prob = 0.8;     // q in (0, 1]
  std::vector<Index> on_states;  // empty selects the first half
  Index horizon = 50;

  double cost_base = 1.0;
  bool cost_noise_uniform01 = true;  // adds uniform[0,1) per time slot when set
  std::uint64_t seed = 0;

  enum class PenaltyKind { Differentiated, Uniform };
  PenaltyKind penalty_kind = PenaltyKind::Differentiated;
  double gamma_off_cycle = 10.0;  // differentiated: weight away from the cycle
  double gamma_on_cycle = 1.0;    // differentiated: weight of the advancing step
  double uniform_gamma = 1.0;     // uniform penalty value
  // Reproduce the literal exemption list alpha = 1..n-1 (the wrap transition
  // n -> 1 stays penalized). Off by default: the cycle is physically closed.
  bool strict_paper_gamma = false;

  double epsilon_on = 1.0;
  double epsilon_off = 0.0;

  void validate() const {
    if (n_states < 2 || n_states % 2 != 0)
      throw InvalidValueError("cyclic model needs an even state count >= 2");
    if (!(advance_prob > 0.0) || !(advance_prob <= 1.0))
      throw InvalidValueError("advance probability must lie in (0, 1]");
    if (horizon < 1) throw InvalidValueError("horizon must be >= 1");
    if (!(gamma_off_cycle > 0.0) || !(gamma_on_cycle > 0.0) || !(uniform_gamma > 0.0))
      throw InvalidValueError("penalty factors must be strictly positive");
    for (Index s : on_states)
      if (s < 0 || s >= n_states) throw InvalidValueError("on-state index out of range");
  }

  std::vector<Index> resolved_on_states() const {
    if (!on_states.empty()) return on_states;
    std::vector<Index> first_half(static_cast<size_t>(n_states / 2));
    for (Index i = 0; i < n_states / 2; ++i) first_half[static_cast<size_t>(i)] = i;
    return first_half;
  }
};

/// Natural transition matrix of the cycle: from state j, advance to
/// (j+1) mod n with probability q, stay with probability 1-q.
inline StochasticMatrix cyclic_target_matrix(Index n, double q) {
  Matrix p = Matrix::Zero(n, n);
  for (Index j = 0; j < n; ++j) {
    p((j + 1) % n, j) += q;
    p(j, j) += 1.0 - q;
  }
  return StochasticMatrix(std::move(p));
}

/// Penalty weights: gamma_off_cycle everywhere except the cycle-advancing
/// transitions, which get gamma_on_cycle. The wrap transition n -> 1 is
/// exempted too unless strict_paper_gamma keeps it penalized.
inline PenaltySchedule cyclic_penalty(const CyclicModelSpec& spec) {
  spec.validate();
  if (spec.penalty_kind == CyclicModelSpec::PenaltyKind::Uniform)
    return PenaltySchedule::uniform(spec.horizon, spec.uniform_gamma);
  const Index n = spec.n_states;
  Matrix g = Matrix::Constant(n, n, spec.gamma_off_cycle);
  const Index last_exempt = spec.strict_paper_gamma ? n - 1 : n;
  for (Index j = 0; j < last_exempt; ++j) g((j + 1) % n, j) = spec.gamma_on_cycle;
  return PenaltySchedule(
      FullPenalty{std::vector<Matrix>(static_cast<size_t>(spec.horizon), g)});
}

/// Cost schedule: cost_base (+ one uniform[0,1) draw per slot, shared by all
/// on states) on the on states, zero elsewhere.
inline CostSchedule cyclic_costs(const CyclicModelSpec& spec) {
  spec.validate();
  Matrix u = Matrix::Zero(spec.horizon, spec.n_states);
  SplitMix64 gen(spec.seed);
  const auto on = spec.resolved_on_states();
  for (Index t = 0; t < spec.horizon; ++t) {
    const double noise = spec.cost_noise_uniform01 ? gen.next_double() : 0.0;
    for (Index s : on) u(t, s) = spec.cost_base + noise;
  }
  return CostSchedule(std::move(u));
}

/// Per-state energy consumption per unit time slot.
inline Vector cyclic_epsilon(const CyclicModelSpec& spec) {
  spec.validate();
  Vector eps = Vector::Constant(spec.n_states, spec.epsilon_off);
  for (Index s : spec.resolved_on_states()) eps(s) = spec.epsilon_on;
  return eps;
}

/// Full problem instance with rho0 at the steady state of the natural chain.
inline Problem cyclic_problem(const CyclicModelSpec& spec) {
  spec.validate();
  auto pbar = cyclic_target_matrix(spec.n_states, spec.advance_prob);
  auto rho0 = steady_state(pbar);
  return Problem(spec.n_states, spec.horizon, std::move(pbar), cyclic_costs(spec),
                 cyclic_penalty(spec), std::move(rho0));
}

}  // namespace lsmdp
