#pragma once

// Monte Carlo realization of N independent devices following a solved policy.
// Each device owns a SplitMix64 stream keyed by (seed, device index), so runs
// are bit-identical for a given seed regardless of the thread count.

#include "lsmdp/rng.hpp"
#include "lsmdp/types.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <thread>
#include <vector>

namespace lsmdp::sim {

using CountMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

struct SimulationRun {
  std::int64_t device_count = 0;
  std::uint64_t seed = 0;
  CountMatrix counts;    // (T+1, n); every row sums to device_count
  Matrix empirical_rho;  // counts / device_count
};

namespace detail {

// Inverse-CDF draw; ties at a bin edge resolve toward the lower index.
inline Index pick(const Vector& cdf, double u) {
  const Index n = cdf.size();
  for (Index i = 0; i < n; ++i)
    if (u <= cdf(i)) return i;
  return n - 1;
}

inline Vector cumulative(const Vector& weights) {
  Vector cdf(weights.size());
  double acc = 0.0;
  for (Index i = 0; i < weights.size(); ++i) {
    acc += weights(i);
    cdf(i) = acc;
  }
  cdf(weights.size() - 1) = 1.0;  // close the last bin against roundoff
  return cdf;
}

}  // namespace detail

/// Samples `device_count` independent device trajectories: the initial state
/// from rho0, then one categorical draw per time step from the source column
/// of p_traj[t]. Deterministic for a given seed.
inline SimulationRun sample(const std::vector<StochasticMatrix>& p_traj,
                            const EnsembleState& rho0, std::int64_t device_count,
                            std::uint64_t seed, int threads = 1) {
  if (device_count < 1) throw InvalidValueError("device count must be >= 1");
  const Index n = rho0.n();
  const Index horizon = static_cast<Index>(p_traj.size());
  for (const auto& p : p_traj)
    if (p.n() != n) throw DimensionError("sample: matrix size mismatch");

  const Vector cdf0 = detail::cumulative(rho0.values());
  std::vector<Matrix> cdf_t(p_traj.size());
  for (size_t t = 0; t < p_traj.size(); ++t) {
    cdf_t[t].resize(n, n);
    for (Index src = 0; src < n; ++src)
      cdf_t[t].col(src) = detail::cumulative(p_traj[t].col(src));
  }

  const int workers = std::max(1, threads);
  std::vector<CountMatrix> local(static_cast<size_t>(workers),
                                 CountMatrix::Zero(horizon + 1, n));

  auto run_chunk = [&](std::int64_t d0, std::int64_t d1, CountMatrix& counts) {
    for (std::int64_t d = d0; d < d1; ++d) {
      SplitMix64 gen = SplitMix64::stream(seed, static_cast<std::uint64_t>(d));
      Index state = detail::pick(cdf0, gen.next_double());
      counts(0, state) += 1;
      for (Index t = 0; t < horizon; ++t) {
        state = detail::pick(cdf_t[static_cast<size_t>(t)].col(state), gen.next_double());
        counts(t + 1, state) += 1;
      }
    }
  };

  if (workers == 1) {
    run_chunk(0, device_count, local[0]);
  } else {
    std::vector<std::thread> pool;
    const std::int64_t chunk = (device_count + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
      const std::int64_t d0 = std::min<std::int64_t>(device_count, w * chunk);
      const std::int64_t d1 = std::min<std::int64_t>(device_count, d0 + chunk);
      pool.emplace_back(run_chunk, d0, d1, std::ref(local[static_cast<size_t>(w)]));
    }
    for (auto& th : pool) th.join();
  }

  SimulationRun run;
  run.device_count = device_count;
  run.seed = seed;
  run.counts = CountMatrix::Zero(horizon + 1, n);
  for (const auto& c : local) run.counts += c;
  run.empirical_rho =
      run.counts.cast<double>() / static_cast<double>(device_count);
  return run;
}

/// Empirical ensemble consumption for t = 1..T given per-state energy use.
inline Vector empirical_consumption(const SimulationRun& run, const Vector& epsilon) {
  if (epsilon.size() != run.empirical_rho.cols())
    throw DimensionError("empirical_consumption: epsilon size mismatch");
  const Index horizon = run.empirical_rho.rows() - 1;
  Vector s(horizon);
  for (Index t = 1; t <= horizon; ++t)
    s(t - 1) = run.empirical_rho.row(t).dot(epsilon.transpose());
  return s;
}

}  // namespace lsmdp::sim
