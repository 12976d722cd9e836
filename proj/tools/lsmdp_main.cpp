// lsmdp: solver frontend for KL-regularized ensemble control problems.
//
//   lsmdp gen-model -o model.json [--seed 1 ...]
//   lsmdp solve model.json [--solver general] [--out-dir runs/a]
//   lsmdp track model.json signal.csv [--outer-tol 1e-6]
//   lsmdp simulate model.json p_traj.json --devices 100000

#include "lsmdp/cli.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

namespace {

void add_common_flags(CLI::App* cmd, lsmdp::cli::CommonFlags& flags,
                      std::uint64_t& seed_slot, bool& seed_set) {
  cmd->add_option("--tol", flags.tol, "stochasticity / multiplier tolerance")
      ->capture_default_str();
  cmd->add_option("--seed", seed_slot, "seed override for generated costs / sampling")
      ->each([&seed_set](const std::string&) { seed_set = true; });
  cmd->add_option("--out-dir", flags.out_dir, "output directory")
      ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"finite-horizon KL-regularized ensemble control"};
  app.require_subcommand(1);

  // gen-model -----------------------------------------------------------
  lsmdp::CyclicModelSpec spec;
  std::string out_path = "model.json";
  std::vector<lsmdp::Index> on_states;
  std::string penalty_kind = "differentiated";
  auto* gen = app.add_subcommand("gen-model", "emit a cyclic load model file");
  gen->add_option("-o,--out", out_path, "output problem file")->capture_default_str();
  gen->add_option("--n-states", spec.n_states, "number of states (even)")
      ->capture_default_str();
  gen->add_option("-q,--advance-prob", spec.advance_prob,
                  "probability of advancing along the cycle")
      ->capture_default_str();
  gen->add_option("-T,--horizon", spec.horizon, "time horizon")->capture_default_str();
  gen->add_option("--on-states", on_states,
                  "indices of the consuming states (default: first half)");
  gen->add_option("--cost-base", spec.cost_base, "base cost of the on states")
      ->capture_default_str();
  gen->add_flag_callback(
      "--no-cost-noise", [&spec] { spec.cost_noise_uniform01 = false; },
      "disable the per-slot uniform[0,1) cost noise");
  gen->add_option("--penalty", penalty_kind, "differentiated | uniform")
      ->capture_default_str();
  gen->add_option("--gamma-off-cycle", spec.gamma_off_cycle,
                  "penalty weight away from the cycle (differentiated)")
      ->capture_default_str();
  gen->add_option("--gamma-on-cycle", spec.gamma_on_cycle,
                  "penalty weight of the advancing transition (differentiated)")
      ->capture_default_str();
  gen->add_option("--uniform-gamma", spec.uniform_gamma,
                  "penalty weight (uniform penalty)")
      ->capture_default_str();
  gen->add_flag("--strict-paper-gamma", spec.strict_paper_gamma,
                "keep the wrap transition n->1 penalized (literal 1..n-1 list)");
  gen->add_option("--epsilon-on", spec.epsilon_on, "per-slot energy of on states")
      ->capture_default_str();
  gen->add_option("--epsilon-off", spec.epsilon_off, "per-slot energy of off states")
      ->capture_default_str();
  gen->add_option("--seed", spec.seed, "seed stored in the model file")
      ->capture_default_str();

  // solve -----------------------------------------------------------------
  lsmdp::cli::SolveFlags solve_flags;
  std::string solve_problem;
  std::uint64_t solve_seed = 0;
  bool solve_seed_set = false;
  auto* solve = app.add_subcommand("solve", "solve the penalized problem");
  solve->add_option("problem", solve_problem, "problem JSON file")->required();
  solve
      ->add_option("--solver", solve_flags.solver,
                   "auto | linear | normalized | general")
      ->capture_default_str();
  add_common_flags(solve, solve_flags, solve_seed, solve_seed_set);

  // track -------------------------------------------------------------------
  lsmdp::cli::TrackFlags track_flags;
  std::string track_problem, track_signal;
  std::uint64_t track_seed = 0;
  bool track_seed_set = false;
  auto* track = app.add_subcommand("track", "track a consumption signal");
  track->add_option("problem", track_problem, "problem JSON file")->required();
  track->add_option("signal", track_signal, "signal CSV (t,s)")->required();
  track->add_option("--outer-tol", track_flags.outer_tol, "tracking residual tolerance")
      ->capture_default_str();
  track->add_option("--max-outer", track_flags.max_outer, "outer iteration budget")
      ->capture_default_str();
  track->add_option("--eta", track_flags.eta, "initial dual step")
      ->capture_default_str();
  add_common_flags(track, track_flags, track_seed, track_seed_set);

  // simulate ----------------------------------------------------------------
  lsmdp::cli::SimulateFlags sim_flags;
  std::string sim_problem, sim_ptraj;
  std::uint64_t sim_seed = 0;
  bool sim_seed_set = false;
  auto* simulate = app.add_subcommand("simulate", "sample a device ensemble");
  simulate->add_option("problem", sim_problem, "problem JSON file")->required();
  simulate->add_option("p_traj", sim_ptraj, "policy trajectory JSON")->required();
  simulate->add_option("-N,--devices", sim_flags.devices, "number of devices")
      ->capture_default_str();
  simulate->add_option("--threads", sim_flags.threads, "worker threads")
      ->capture_default_str();
  add_common_flags(simulate, sim_flags, sim_seed, sim_seed_set);

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) {
    if (!on_states.empty()) spec.on_states = on_states;
    if (penalty_kind == "uniform")
      spec.penalty_kind = lsmdp::CyclicModelSpec::PenaltyKind::Uniform;
    else if (penalty_kind != "differentiated") {
      std::cerr << "error: --penalty must be differentiated or uniform\n";
      return lsmdp::cli::exit_invalid;
    }
    return lsmdp::cli::cmd_gen_model(spec, out_path);
  }
  if (solve->parsed()) {
    if (solve_seed_set) solve_flags.seed = solve_seed;
    return lsmdp::cli::cmd_solve(solve_problem, solve_flags);
  }
  if (track->parsed()) {
    if (track_seed_set) track_flags.seed = track_seed;
    return lsmdp::cli::cmd_track(track_problem, track_signal, track_flags);
  }
  if (simulate->parsed()) {
    if (sim_seed_set) sim_flags.seed = sim_seed;
    return lsmdp::cli::cmd_simulate(sim_problem, sim_ptraj, sim_flags);
  }
  return lsmdp::cli::exit_invalid;
}
