#include <catch2/catch_amalgamated.hpp>

#include "lsmdp/core.hpp"
#include "lsmdp/cyclic_model.hpp"
#include "lsmdp/ls_solver.hpp"

#include "support/instances.hpp"
#include "support/oracles.hpp"

#include <cmath>
#include <random>

using namespace lsmdp;
using Catch::Matchers::WithinAbs;

namespace {

Vector vec2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

Problem two_state_log3_problem(PenaltySchedule penalty) {
  Matrix pbar(2, 2);
  pbar << 0.5, 0.5, 0.5, 0.5;
  Matrix costs(1, 2);
  costs << 0.0, std::log(3.0);
  return Problem(2, 1, StochasticMatrix(pbar), CostSchedule(costs), std::move(penalty),
                 EnsembleState(vec2(0.5, 0.5)));
}

}  // namespace

TEST_CASE("backward_linear with zero cost returns the natural policy", "[ls]") {
  std::mt19937_64 rng(11);
  auto prob = testsupport::random_problem(rng, 5, 8, PenaltyVariant::Uniform,
                                          {.zero_fraction = 0.3, .zero_costs = true});
  const auto bw = ls_solver::backward_linear(prob);
  CHECK((bw.desirability.u.array() - 1.0).abs().maxCoeff() < 1e-14);
  for (const auto& p : bw.p_traj)
    CHECK((p.matrix() - prob.pbar.matrix()).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(bw.phi.cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("backward_linear two-state log-3 example", "[ls]") {
  auto prob = two_state_log3_problem(PenaltySchedule::uniform(1, 1.0));
  const auto bw = ls_solver::backward_linear(prob);

  // final condition u(T) = exp(-U(T)/gamma(T))
  CHECK_THAT(bw.desirability.u(1, 0), WithinAbs(1.0, 1e-15));
  CHECK_THAT(bw.desirability.u(1, 1), WithinAbs(1.0 / 3.0, 1e-15));
  // one linear fold: u(0) = pbar^T u(1) = (2/3, 2/3)
  CHECK_THAT(bw.desirability.u(0, 0), WithinAbs(2.0 / 3.0, 1e-15));
  CHECK_THAT(bw.desirability.u(0, 1), WithinAbs(2.0 / 3.0, 1e-15));
  for (Index src = 0; src < 2; ++src) {
    CHECK_THAT(bw.p_traj[0](0, src), WithinAbs(0.75, 1e-15));
    CHECK_THAT(bw.p_traj[0](1, src), WithinAbs(0.25, 1e-15));
  }
  CHECK_THAT(bw.phi(0, 0), WithinAbs(0.40546510810816438, 1e-15));
}

TEST_CASE("backward_linear rejects non-uniform penalties", "[ls]") {
  std::mt19937_64 rng(12);
  auto prob = testsupport::random_problem(rng, 3, 2, PenaltyVariant::PerSource);
  CHECK_THROWS_AS(ls_solver::backward_linear(prob), WrongVariantError);
}

TEST_CASE("desirability_step is exactly linear", "[ls][property]") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> unit(0.1, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    const Index n = 2 + static_cast<Index>(rng() % 6);
    const auto pbar = testsupport::random_stochastic(rng, n);
    Vector u_next(n), cost(n);
    for (Index i = 0; i < n; ++i) {
      u_next(i) = unit(rng);
      cost(i) = unit(rng);
    }
    const double gamma = unit(rng);
    const Vector once = ls_solver::desirability_step(u_next, pbar, cost, gamma);
    const Vector doubled = ls_solver::desirability_step(2.0 * u_next, pbar, cost, gamma);
    CHECK(doubled == 2.0 * once);  // exact: scaling by 2 commutes with rounding
  }
}

TEST_CASE("backward_normalized matches backward_linear for constant gamma", "[ls]") {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = 2 + static_cast<Index>(rng() % 5);
    const Index horizon = 1 + static_cast<Index>(rng() % 9);
    const double gamma = 0.5 + 2.0 * std::uniform_real_distribution<double>()(rng);

    auto pbar = testsupport::random_stochastic(rng, n, trial % 2 ? 0.3 : 0.0);
    auto costs = testsupport::random_costs(rng, horizon, n);
    auto rho0 = testsupport::random_state(rng, n);

    const Problem uniform(n, horizon, pbar, costs,
                          PenaltySchedule::uniform(horizon, gamma), rho0);
    const Problem per_source(
        n, horizon, pbar, costs,
        PenaltySchedule(PerSourcePenalty{Matrix::Constant(horizon, n, gamma)}), rho0);

    const auto lin = ls_solver::backward_linear(uniform);
    const auto norm = ls_solver::backward_normalized(per_source);
    CHECK((lin.phi - norm.phi).cwiseAbs().maxCoeff() < 1e-12);
    for (Index t = 0; t < horizon; ++t)
      CHECK((lin.p_traj[static_cast<size_t>(t)].matrix() -
             norm.p_traj[static_cast<size_t>(t)].matrix())
                .cwiseAbs()
                .maxCoeff() < 1e-12);
  }
}

TEST_CASE("backward_normalized with zero cost returns the natural policy", "[ls]") {
  std::mt19937_64 rng(15);
  auto prob = testsupport::random_problem(rng, 4, 6, PenaltyVariant::PerSource,
                                          {.zero_costs = true});
  const auto bw = ls_solver::backward_normalized(prob);
  for (const auto& p : bw.p_traj)
    CHECK((p.matrix() - prob.pbar.matrix()).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(bw.phi.cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("backward_normalized two-state per-source example", "[ls]") {
  // gamma = (1, 2) per source; verified by substitution into the explicit
  // normalization formula: column 1 weights are (1, 3^(-1/2)).
  Matrix gamma(1, 2);
  gamma << 1.0, 2.0;
  auto prob = two_state_log3_problem(PenaltySchedule(PerSourcePenalty{gamma}));
  const auto bw = ls_solver::backward_normalized(prob);
  CHECK_THAT(bw.p_traj[0](0, 0), WithinAbs(0.75, 1e-15));
  CHECK_THAT(bw.p_traj[0](1, 0), WithinAbs(0.25, 1e-15));
  CHECK_THAT(bw.p_traj[0](0, 1), WithinAbs(0.63397459621556129, 1e-15));
  CHECK_THAT(bw.p_traj[0](1, 1), WithinAbs(0.36602540378443865, 1e-15));
}

TEST_CASE("solve rejects the full penalty variant", "[ls]") {
  std::mt19937_64 rng(16);
  auto full = testsupport::random_problem(rng, 3, 3, PenaltyVariant::Full);
  CHECK_THROWS_AS(ls_solver::solve(full), WrongVariantError);
}

TEST_CASE("solve with zero cost follows the natural chain at zero objective", "[ls]") {
  std::mt19937_64 rng(17);
  for (auto variant : {PenaltyVariant::Uniform, PenaltyVariant::PerSource}) {
    auto prob = testsupport::random_problem(rng, 6, 10, variant, {.zero_costs = true});
    const auto sol = ls_solver::solve(prob);
    CHECK_THAT(sol.objective, WithinAbs(0.0, 1e-13));
    Vector rho = prob.rho0.values();
    for (Index t = 0; t <= prob.horizon; ++t) {
      CHECK((sol.rho_traj[static_cast<size_t>(t)].values() - rho)
                .lpNorm<Eigen::Infinity>() < 1e-12);
      rho = prob.pbar.matrix() * rho;
    }
  }
}

TEST_CASE("8-state cycle with zero cost keeps the natural dynamics", "[ls]") {
  CyclicModelSpec spec;
  spec.cost_base = 0.0;
  spec.cost_noise_uniform01 = false;
  spec.penalty_kind = CyclicModelSpec::PenaltyKind::Uniform;
  spec.horizon = 30;
  auto prob = cyclic_problem(spec);
  const auto sol = ls_solver::solve(prob);
  CHECK_THAT(sol.objective, WithinAbs(0.0, 1e-13));
  // steady start stays steady: the cycle's stationary state is uniform
  for (const auto& rho : sol.rho_traj)
    CHECK((rho.values().array() - 0.125).abs().maxCoeff() < 1e-12);
}

TEST_CASE("solver outputs stay stochastic and support-preserving", "[ls][property]") {
  std::mt19937_64 rng(18);
  for (int trial = 0; trial < 30; ++trial) {
    const Index n = 2 + static_cast<Index>(rng() % 7);
    const Index horizon = 1 + static_cast<Index>(rng() % 10);
    const auto variant =
        trial % 2 ? PenaltyVariant::Uniform : PenaltyVariant::PerSource;
    auto prob = testsupport::random_problem(rng, n, horizon, variant,
                                            {.zero_fraction = 0.35});
    const auto sol = ls_solver::solve(prob);
    for (const auto& p : sol.p_traj) {
      CHECK(validate_stochastic(p.matrix(), 1e-10).ok);
      for (Index j = 0; j < n; ++j)
        for (Index i = 0; i < n; ++i)
          if (prob.pbar(i, j) == 0.0) CHECK(p(i, j) == 0.0);
    }
  }
}

TEST_CASE("value identity: phi(0) weighted by rho0 equals the objective",
          "[ls][property]") {
  std::mt19937_64 rng(19);
  for (int trial = 0; trial < 30; ++trial) {
    const Index n = 2 + static_cast<Index>(rng() % 6);
    const Index horizon = 1 + static_cast<Index>(rng() % 12);
    const auto variant =
        trial % 2 ? PenaltyVariant::Uniform : PenaltyVariant::PerSource;
    auto prob = testsupport::random_problem(rng, n, horizon, variant);
    const auto sol = ls_solver::solve(prob);
    const double from_phi = sol.phi.row(0).dot(prob.rho0.values().transpose());
    CHECK_THAT(from_phi, WithinAbs(sol.objective, 1e-9));
  }
}

TEST_CASE("desirability rescaling survives tiny gamma over long horizons", "[ls]") {
  // without per-step rescaling u would evaluate around exp(-9000) and die
  std::mt19937_64 rng(20);
  const Index n = 4, horizon = 300;
  auto pbar = testsupport::random_stochastic(rng, n);
  auto costs = testsupport::random_costs(rng, horizon, n, 0.5, 3.0);
  auto rho0 = testsupport::random_state(rng, n);
  const double gamma = 0.05;
  const Problem uniform(n, horizon, pbar, costs,
                        PenaltySchedule::uniform(horizon, gamma), rho0);
  const Problem per_source(
      n, horizon, pbar, costs,
      PenaltySchedule(PerSourcePenalty{Matrix::Constant(horizon, n, gamma)}), rho0);
  const auto lin = ls_solver::backward_linear(uniform);
  CHECK(lin.phi.allFinite());
  for (const auto& p : lin.p_traj) CHECK(validate_stochastic(p.matrix(), 1e-10).ok);
  const auto norm = ls_solver::backward_normalized(per_source);
  CHECK((lin.phi - norm.phi).cwiseAbs().maxCoeff() <
        1e-8 * lin.phi.cwiseAbs().maxCoeff());
}

TEST_CASE("optimal objective never exceeds the natural policy's", "[ls][property]") {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = 3 + static_cast<Index>(rng() % 4);
    const Index horizon = 2 + static_cast<Index>(rng() % 6);
    auto prob = testsupport::random_problem(rng, n, horizon, PenaltyVariant::Uniform);
    const auto sol = ls_solver::solve(prob);
    const std::vector<StochasticMatrix> natural(static_cast<size_t>(horizon), prob.pbar);
    CHECK(sol.objective <= objective_value(prob, natural) + 1e-12);
  }
}
