#pragma once

// Command implementations behind the lsmdp binary. Each command returns a
// process exit code:
//   0  success
//   2  problem/signal file cannot be parsed
//   3  an inner solve failed to converge
//   4  invalid or infeasible input (bad matrix, wrong variant, target outside
//      the reachable band, dimension mismatch)
//   5  tracking finished without reaching the outer tolerance (diagnostics
//      are still written)

#include "lsmdp/core.hpp"
#include "lsmdp/cyclic_model.hpp"
#include "lsmdp/general_solver.hpp"
#include "lsmdp/ls_solver.hpp"
#include "lsmdp/problem_io.hpp"
#include "lsmdp/simulator.hpp"
#include "lsmdp/tracker.hpp"
#include "lsmdp/types.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace lsmdp::cli {

inline constexpr int exit_ok = 0;
inline constexpr int exit_parse_error = 2;
inline constexpr int exit_convergence_failure = 3;
inline constexpr int exit_invalid = 4;
inline constexpr int exit_tracking_not_converged = 5;

struct CommonFlags {
  double tol = 1e-10;                 // multiplier/stochasticity tolerance
  std::optional<std::uint64_t> seed;  // overrides the problem-file seed
  std::string out_dir = ".";
};

struct SolveFlags : CommonFlags {
  std::string solver = "auto";  // auto | linear | normalized | general
};

struct TrackFlags : CommonFlags {
  double outer_tol = 1e-6;
  int max_outer = 500;
  double eta = 0.5;
};

struct SimulateFlags : CommonFlags {
  std::int64_t devices = 10'000;
  int threads = 1;
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

inline const char* variant_name(PenaltyVariant v) {
  switch (v) {
    case PenaltyVariant::Uniform: return "uniform";
    case PenaltyVariant::PerSource: return "per_source";
    case PenaltyVariant::Full: return "full";
  }
  return "?";
}

inline int fail(int code, const std::string& message) {
  std::cerr << "error: " << message << "\n";
  return code;
}

// Uniform problems can be pushed through the per-source recursion by
// broadcasting the weight across sources.
inline Problem broadcast_to_per_source(const Problem& prob) {
  const Vector& g = prob.penalty.as_uniform().gamma;
  Matrix gamma(prob.horizon, prob.n);
  for (Index t = 0; t < prob.horizon; ++t) gamma.row(t).setConstant(g(t));
  return Problem(prob.n, prob.horizon, prob.pbar, prob.costs,
                 PenaltySchedule(PerSourcePenalty{std::move(gamma)}), prob.rho0);
}

}  // namespace detail

inline int cmd_gen_model(const CyclicModelSpec& spec, const std::string& out_path) {
  try {
    const auto file = io::gen_model_file(spec);
    io::atomic_write_text(out_path, io::to_json(file).dump(1) + "\n");
    std::cout << "wrote " << out_path << " (n=" << spec.n_states
              << ", T=" << spec.horizon << ")\n";
    return exit_ok;
  } catch (const InvalidValueError& e) {
    return detail::fail(exit_invalid, e.what());
  } catch (const Error& e) {
    return detail::fail(exit_invalid, e.what());
  }
}

inline int cmd_solve(const std::string& problem_path, const SolveFlags& flags) {
  namespace fs = std::filesystem;
  const auto start = detail::Clock::now();
  try {
    const auto file = io::parse_problem_file(io::load_json(problem_path));
    const auto resolved = io::resolve(file, flags.seed);
    const Problem& prob = resolved.problem;

    std::string solver = flags.solver;
    if (solver == "auto") {
      switch (prob.penalty.variant()) {
        case PenaltyVariant::Uniform: solver = "linear"; break;
        case PenaltyVariant::PerSource: solver = "normalized"; break;
        case PenaltyVariant::Full: solver = "general"; break;
      }
    }

    const auto solve_start = detail::Clock::now();
    Solution sol;
    if (solver == "linear") {
      sol = ls_solver::solve(prob);  // rejects non-uniform variants
    } else if (solver == "normalized") {
      if (prob.penalty.variant() == PenaltyVariant::Uniform)
        sol = ls_solver::solve(detail::broadcast_to_per_source(prob));
      else
        sol = ls_solver::solve(prob);
    } else if (solver == "general") {
      general_solver::LambdaSolveConfig cfg;
      cfg.tol = flags.tol;
      sol = general_solver::solve(prob, cfg);
    } else {
      return detail::fail(exit_invalid, "unknown solver \"" + solver + "\"");
    }
    const double solve_ms = detail::ms_since(solve_start);

    const fs::path out_dir(flags.out_dir);
    io::write_rho_csv(out_dir / "rho.csv", sol.rho_traj);
    io::write_p_traj_json(out_dir / "p_traj.json", sol.p_traj);

    io::json summary;
    summary["command"] = "solve";
    summary["problem"] = problem_path;
    summary["n"] = prob.n;
    summary["T"] = prob.horizon;
    summary["solver"] = solver;
    summary["penalty_variant"] = detail::variant_name(prob.penalty.variant());
    summary["objective"] = sol.objective;
    summary["phi0"] = io::detail::vector_to_json(sol.phi.row(0).transpose());
    summary["value_identity_residual"] =
        std::abs(sol.phi.row(0).dot(prob.rho0.values().transpose()) - sol.objective);
    summary["tolerance"] = flags.tol;
    if (sol.lambda) {
      summary["lambda"] = {{"min", sol.lambda->minCoeff()},
                           {"max", sol.lambda->maxCoeff()},
                           {"mean", sol.lambda->mean()}};
    }
    if (resolved.cost_seed) summary["cost_seed"] = *resolved.cost_seed;
    summary["timings_ms"] = {{"solve", solve_ms}, {"total", detail::ms_since(start)}};
    io::atomic_write_text(out_dir / "summary.json", summary.dump(1) + "\n");
    return exit_ok;
  } catch (const io::SchemaError& e) {
    return detail::fail(exit_parse_error, e.what());
  } catch (const ConvergenceError& e) {
    return detail::fail(exit_convergence_failure, e.what());
  } catch (const Error& e) {
    return detail::fail(exit_invalid, e.what());
  }
}

inline int cmd_track(const std::string& problem_path, const std::string& signal_path,
                     const TrackFlags& flags) {
  namespace fs = std::filesystem;
  try {
    const auto file = io::parse_problem_file(io::load_json(problem_path));
    if (!file.epsilon)
      return detail::fail(exit_invalid,
                          "tracking needs an \"epsilon\" vector in the problem file");
    const auto resolved = io::resolve(file, flags.seed);
    const Vector target = io::read_signal_csv(signal_path, file.horizon);

    tracker::TrackingProblem tp(resolved.problem, *file.epsilon, target);
    tracker::TrackOptions opts;
    opts.outer_tol = flags.outer_tol;
    opts.max_outer = flags.max_outer;
    opts.step = flags.eta;
    opts.inner.tol = flags.tol;
    const auto result = tracker::track(tp, opts);

    const fs::path out_dir(flags.out_dir);
    io::write_rho_csv(out_dir / "rho.csv", result.solution.rho_traj);
    io::write_p_traj_json(out_dir / "p_traj.json", result.solution.p_traj);
    const Vector s_hat = tracker::consumption(result.solution.rho_traj, tp.epsilon);
    io::write_residuals_csv(out_dir / "residuals.csv", target, s_hat);

    io::json summary;
    summary["command"] = "track";
    summary["problem"] = problem_path;
    summary["signal"] = signal_path;
    summary["converged"] = result.converged;
    summary["outer_iterations"] = result.outer_iterations;
    summary["max_residual"] = result.residuals.maxCoeff();
    summary["outer_tol"] = flags.outer_tol;
    summary["eta"] = flags.eta;
    // split the inner objective into its xi-cost part and the pure welfare part
    double xi_cost_part = 0.0;
    const CostSchedule xi_costs = tracker::costs_from_xi(result.xi, tp.epsilon);
    for (Index t = 1; t <= tp.base.horizon; ++t)
      xi_cost_part += xi_costs.at(t).dot(
          result.solution.rho_traj[static_cast<size_t>(t)].values());
    summary["welfare_penalty"] = result.solution.objective - xi_cost_part;
    summary["xi"] = io::detail::vector_to_json(result.xi);
    summary["residual_history"] = result.residual_history;
    io::atomic_write_text(out_dir / "summary.json", summary.dump(1) + "\n");

    if (!result.converged) {
      std::cerr << "tracking did not reach tol " << flags.outer_tol << " within "
                << flags.max_outer << " outer iterations (max residual "
                << result.residuals.maxCoeff() << ")\n";
      return exit_tracking_not_converged;
    }
    return exit_ok;
  } catch (const io::SchemaError& e) {
    return detail::fail(exit_parse_error, e.what());
  } catch (const InfeasibleTargetError& e) {
    return detail::fail(exit_invalid, e.what());
  } catch (const ConvergenceError& e) {
    return detail::fail(exit_convergence_failure, e.what());
  } catch (const Error& e) {
    return detail::fail(exit_invalid, e.what());
  }
}

inline int cmd_simulate(const std::string& problem_path, const std::string& p_traj_path,
                        const SimulateFlags& flags) {
  namespace fs = std::filesystem;
  try {
    const auto file = io::parse_problem_file(io::load_json(problem_path));
    const auto resolved = io::resolve(file, flags.seed);
    const auto p_traj = io::read_p_traj_json(p_traj_path);
    if (static_cast<Index>(p_traj.size()) != file.horizon ||
        (!p_traj.empty() && p_traj.front().n() != file.n))
      return detail::fail(exit_invalid,
                          "policy trajectory does not match the problem dimensions");

    const std::uint64_t seed = flags.seed.value_or(file.seed.value_or(0));
    const auto run = sim::sample(p_traj, resolved.problem.rho0, flags.devices, seed,
                                 flags.threads);

    const fs::path out_dir(flags.out_dir);
    io::write_empirical_rho_csv(out_dir / "empirical_rho.csv", run.empirical_rho);
    if (file.epsilon)
      io::write_series_csv(out_dir / "empirical_consumption.csv", "consumption",
                           sim::empirical_consumption(run, *file.epsilon));

    io::json summary;
    summary["command"] = "simulate";
    summary["problem"] = problem_path;
    summary["p_traj"] = p_traj_path;
    summary["devices"] = run.device_count;
    summary["seed"] = run.seed;
    summary["threads"] = flags.threads;
    io::atomic_write_text(out_dir / "summary.json", summary.dump(1) + "\n");
    return exit_ok;
  } catch (const io::SchemaError& e) {
    return detail::fail(exit_parse_error, e.what());
  } catch (const Error& e) {
    return detail::fail(exit_invalid, e.what());
  }
}

}  // namespace lsmdp::cli
