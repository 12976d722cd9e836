#include <catch2/catch_amalgamated.hpp>

#include "lsmdp/core.hpp"
#include "lsmdp/cyclic_model.hpp"
#include "lsmdp/general_solver.hpp"
#include "lsmdp/ls_solver.hpp"
#include "lsmdp/simulator.hpp"
#include "lsmdp/tracker.hpp"

#include "support/instances.hpp"

#include <cmath>
#include <random>

using namespace lsmdp;
using Catch::Matchers::WithinAbs;

TEST_CASE("inverse-CDF ties resolve toward the lower index", "[sim]") {
  Vector cdf(3);
  cdf << 0.25, 0.5, 1.0;
  CHECK(sim::detail::pick(cdf, 0.25) == 0);
  CHECK(sim::detail::pick(cdf, 0.250000001) == 1);
  CHECK(sim::detail::pick(cdf, 0.5) == 1);
  CHECK(sim::detail::pick(cdf, 0.0) == 0);
  CHECK(sim::detail::pick(cdf, 0.999999) == 2);
}

TEST_CASE("identity policy freezes the occupation counts", "[sim]") {
  std::mt19937_64 rng(71);
  const Index n = 4, horizon = 9;
  const std::vector<StochasticMatrix> p(static_cast<size_t>(horizon),
                                        StochasticMatrix(Matrix::Identity(n, n)));
  const auto run = sim::sample(p, testsupport::random_state(rng, n), 500, 2024);
  for (Index t = 1; t <= horizon; ++t) CHECK(run.counts.row(t) == run.counts.row(0));
}

TEST_CASE("deterministic swap chain alternates exactly", "[sim]") {
  Matrix swap(2, 2);
  swap << 0.0, 1.0, 1.0, 0.0;
  Vector start(2);
  start << 1.0, 0.0;
  const std::vector<StochasticMatrix> p(6, StochasticMatrix(swap));
  const auto run = sim::sample(p, EnsembleState(start), 1000, 7);
  for (Index t = 0; t <= 6; ++t) {
    CHECK(run.counts(t, t % 2) == 1000);
    CHECK(run.counts(t, 1 - t % 2) == 0);
  }
}

TEST_CASE("runs are reproducible and thread-count independent", "[sim][property]") {
  std::mt19937_64 rng(72);
  const Index n = 5, horizon = 8;
  auto prob = testsupport::random_problem(rng, n, horizon, PenaltyVariant::Uniform);
  const auto sol = general_solver::solve(prob);

  const auto a = sim::sample(sol.p_traj, prob.rho0, 4000, 99);
  const auto b = sim::sample(sol.p_traj, prob.rho0, 4000, 99);
  const auto c = sim::sample(sol.p_traj, prob.rho0, 4000, 99, /*threads=*/3);
  CHECK(a.counts == b.counts);
  CHECK(a.counts == c.counts);

  const auto other = sim::sample(sol.p_traj, prob.rho0, 4000, 100);
  CHECK(a.counts != other.counts);
}

TEST_CASE("device count is conserved at every step", "[sim][property]") {
  std::mt19937_64 rng(73);
  for (int trial = 0; trial < 5; ++trial) {
    const Index n = 2 + static_cast<Index>(rng() % 6);
    const Index horizon = 1 + static_cast<Index>(rng() % 10);
    auto prob = testsupport::random_problem(rng, n, horizon, PenaltyVariant::Uniform,
                                            {.zero_fraction = 0.3});
    const auto sol = ls_solver::solve(prob);
    const std::int64_t devices = 1000 + static_cast<std::int64_t>(rng() % 3000);
    const auto run = sim::sample(sol.p_traj, prob.rho0, devices, rng());
    for (Index t = 0; t <= horizon; ++t) {
      CHECK(run.counts.row(t).sum() == devices);
      CHECK_THAT(run.empirical_rho.row(t).sum(), WithinAbs(1.0, 1e-12));
    }
  }
}

TEST_CASE("empirical consumption trivial cases", "[sim]") {
  std::mt19937_64 rng(74);
  const Index n = 4, horizon = 5;
  auto prob = testsupport::random_problem(rng, n, horizon, PenaltyVariant::Uniform);
  const auto sol = ls_solver::solve(prob);
  const auto run = sim::sample(sol.p_traj, prob.rho0, 2000, 11);
  CHECK((sim::empirical_consumption(run, Vector::Ones(n)).array() - 1.0)
            .abs()
            .maxCoeff() < 1e-12);
  CHECK(sim::empirical_consumption(run, Vector::Zero(n)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("empirical occupation concentrates on the analytic trajectory",
          "[sim][oracle]") {
  CyclicModelSpec spec;
  spec.horizon = 30;
  spec.seed = 5;
  auto prob = cyclic_problem(spec);
  const auto sol = general_solver::solve(prob);

  const std::int64_t devices = 20'000;
  const double bound = 5.0 / std::sqrt(static_cast<double>(devices));
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto run = sim::sample(sol.p_traj, prob.rho0, devices, seed);
    double worst = 0.0;
    for (Index t = 0; t <= prob.horizon; ++t)
      worst = std::max(worst,
                       (run.empirical_rho.row(t).transpose() -
                        sol.rho_traj[static_cast<size_t>(t)].values())
                           .lpNorm<Eigen::Infinity>());
    CHECK(worst <= bound);
  }
}

TEST_CASE("tracked solutions keep their consumption promise empirically",
          "[sim][tracker][oracle]") {
  CyclicModelSpec spec;
  spec.horizon = 20;
  spec.penalty_kind = CyclicModelSpec::PenaltyKind::Uniform;
  spec.cost_base = 0.0;
  spec.cost_noise_uniform01 = false;
  auto base = cyclic_problem(spec);
  const Vector epsilon = cyclic_epsilon(spec);

  // feasible target from a perturbed chain
  std::mt19937_64 rng(75);
  std::normal_distribution<double> noise(0.0, 0.3);
  Matrix perturbed = base.pbar.matrix();
  for (Index j = 0; j < 8; ++j) {
    for (Index i = 0; i < 8; ++i)
      if (perturbed(i, j) > 0.0) perturbed(i, j) *= std::exp(noise(rng));
    perturbed.col(j) /= perturbed.col(j).sum();
  }
  const Vector target = tracker::consumption(
      propagate_trajectory(base.rho0,
                           std::vector<StochasticMatrix>(20, StochasticMatrix(perturbed))),
      epsilon);

  tracker::TrackOptions opts;
  const auto tracked = tracker::track({base, epsilon, target}, opts);
  REQUIRE(tracked.converged);

  const std::int64_t devices = 50'000;
  const auto run = sim::sample(tracked.solution.p_traj, base.rho0, devices, 3);
  const Vector s_emp = sim::empirical_consumption(run, epsilon);
  const double bound = opts.outer_tol + 5.0 * epsilon.maxCoeff() /
                                            std::sqrt(static_cast<double>(devices));
  CHECK((s_emp - target).cwiseAbs().maxCoeff() <= bound);
}
