#pragma once

// Problem-file JSON schema, trajectory CSV emitters, and the model-file
// builder for the cyclic load generator.
//
// Schema (see README for the full description):
//   {
//     "n": 8, "T": 50,
//     "states": ["on1", ...],              // optional
//     "pbar": [[row 0], ...],              // n x n, row = destination, column = source
//     "rho0": "steady" | [..n..],
//     "costs": [[..n..] x T]               // row k = U(t = k+1)
//            | {"base": 1.0, "on_states": [0,..], "noise": "uniform01"|"none"},
//     "penalty": {"uniform": g | [T]}
//              | {"per_source": [n] | [T][n]}
//              | {"full": [n][n] | [T][n][n]},
//     "epsilon": [..n..],                  // optional, enables tracking/consumption
//     "seed": 1234                         // optional, drives the cost generator
//   }

#include "lsmdp/core.hpp"
#include "lsmdp/cyclic_model.hpp"
#include "lsmdp/rng.hpp"
#include "lsmdp/types.hpp"

#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace lsmdp::io {

using nlohmann::json;

/// Structural problem: missing key, wrong type, wrong array shape.
/// Distinct from value-level validation failures, which keep their own
/// exception types (and exit code).
struct SchemaError : Error {
  using Error::Error;
};

struct CostGenerator {
  double base = 1.0;
  std::vector<Index> on_states;
  bool uniform01_noise = true;
};

struct ProblemFile {
  Index n = 0;
  Index horizon = 0;
  std::vector<std::string> state_names;  // empty when absent
  Matrix pbar;
  std::optional<Vector> rho0;  // nullopt encodes "steady"
  std::variant<Matrix, CostGenerator> costs = Matrix();
  std::optional<PenaltySchedule> penalty;
  std::optional<Vector> epsilon;
  std::optional<std::uint64_t> seed;
};

struct ResolvedProblem {
  Problem problem;
  std::optional<std::uint64_t> cost_seed;  // set when the generator ran
};

// ---------------------------------------------------------------------------
// parsing
// ---------------------------------------------------------------------------

namespace detail {

inline const json& require(const json& j, const char* key) {
  if (!j.contains(key))
    throw SchemaError(std::string("problem file: missing key \"") + key + "\"");
  return j.at(key);
}

inline Vector parse_vector(const json& j, Index expected, const char* what) {
  if (!j.is_array() || static_cast<Index>(j.size()) != expected)
    throw SchemaError(std::string("problem file: ") + what + " must be an array of " +
                      std::to_string(expected) + " numbers");
  Vector v(expected);
  for (Index i = 0; i < expected; ++i) {
    if (!j[static_cast<size_t>(i)].is_number())
      throw SchemaError(std::string("problem file: ") + what + " must be numeric");
    v(i) = j[static_cast<size_t>(i)].get<double>();
  }
  return v;
}

inline Matrix parse_matrix(const json& j, Index rows, Index cols, const char* what) {
  if (!j.is_array() || static_cast<Index>(j.size()) != rows)
    throw SchemaError(std::string("problem file: ") + what + " must have " +
                      std::to_string(rows) + " rows");
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    m.row(i) = parse_vector(j[static_cast<size_t>(i)], cols, what).transpose();
  return m;
}

inline PenaltySchedule parse_penalty(const json& j, Index horizon, Index n) {
  if (!j.is_object() || j.size() != 1)
    throw SchemaError(
        "problem file: penalty must be an object with exactly one of "
        "\"uniform\", \"per_source\", \"full\"");
  if (j.contains("uniform")) {
    const auto& u = j.at("uniform");
    if (u.is_number())
      return PenaltySchedule::uniform(horizon, u.get<double>());
    return PenaltySchedule(UniformPenalty{parse_vector(u, horizon, "penalty.uniform")});
  }
  if (j.contains("per_source")) {
    const auto& s = j.at("per_source");
    if (!s.is_array() || s.empty())
      throw SchemaError("problem file: penalty.per_source must be a nonempty array");
    if (s[0].is_number()) {
      const Vector row = parse_vector(s, n, "penalty.per_source");
      Matrix g(horizon, n);
      for (Index t = 0; t < horizon; ++t) g.row(t) = row.transpose();
      return PenaltySchedule(PerSourcePenalty{std::move(g)});
    }
    return PenaltySchedule(
        PerSourcePenalty{parse_matrix(s, horizon, n, "penalty.per_source")});
  }
  if (j.contains("full")) {
    const auto& f = j.at("full");
    if (!f.is_array() || f.empty())
      throw SchemaError("problem file: penalty.full must be a nonempty array");
    std::vector<Matrix> gs;
    if (f[0].is_array() && !f[0].empty() && f[0][0].is_number()) {
      gs.assign(static_cast<size_t>(horizon), parse_matrix(f, n, n, "penalty.full"));
    } else {
      if (static_cast<Index>(f.size()) != horizon)
        throw SchemaError("problem file: penalty.full must hold T matrices");
      for (const auto& one : f) gs.push_back(parse_matrix(one, n, n, "penalty.full"));
    }
    return PenaltySchedule(FullPenalty{std::move(gs)});
  }
  throw SchemaError("problem file: unknown penalty variant");
}

}  // namespace detail

inline ProblemFile parse_problem_file(const json& j) {
  ProblemFile file;
  file.n = detail::require(j, "n").get<Index>();
  file.horizon = detail::require(j, "T").get<Index>();
  if (file.n < 1 || file.horizon < 1)
    throw SchemaError("problem file: n and T must be positive");

  if (j.contains("states")) {
    for (const auto& s : j.at("states")) file.state_names.push_back(s.get<std::string>());
    if (static_cast<Index>(file.state_names.size()) != file.n)
      throw SchemaError("problem file: states must list n names");
  }

  file.pbar = detail::parse_matrix(detail::require(j, "pbar"), file.n, file.n, "pbar");

  const auto& rho0 = detail::require(j, "rho0");
  if (rho0.is_string()) {
    if (rho0.get<std::string>() != "steady")
      throw SchemaError("problem file: rho0 must be \"steady\" or a vector");
    file.rho0 = std::nullopt;
  } else {
    file.rho0 = detail::parse_vector(rho0, file.n, "rho0");
  }

  const auto& costs = detail::require(j, "costs");
  if (costs.is_object()) {
    CostGenerator gen;
    gen.base = costs.value("base", 1.0);
    if (!costs.contains("on_states"))
      throw SchemaError("problem file: cost generator needs on_states");
    for (const auto& s : costs.at("on_states")) gen.on_states.push_back(s.get<Index>());
    const std::string noise = costs.value("noise", "uniform01");
    if (noise == "uniform01")
      gen.uniform01_noise = true;
    else if (noise == "none")
      gen.uniform01_noise = false;
    else
      throw SchemaError("problem file: cost noise must be \"uniform01\" or \"none\"");
    for (Index s : gen.on_states)
      if (s < 0 || s >= file.n)
        throw InvalidValueError("problem file: on_states index out of range");
    file.costs = std::move(gen);
  } else {
    file.costs = detail::parse_matrix(costs, file.horizon, file.n, "costs");
  }

  file.penalty = detail::parse_penalty(detail::require(j, "penalty"), file.horizon, file.n);

  if (j.contains("epsilon"))
    file.epsilon = detail::parse_vector(j.at("epsilon"), file.n, "epsilon");
  if (j.contains("seed")) file.seed = j.at("seed").get<std::uint64_t>();
  return file;
}

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

namespace detail {

inline json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Index jx = 0; jx < m.cols(); ++jx) row.push_back(m(i, jx));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline json vector_to_json(const Vector& v) {
  json arr = json::array();
  for (Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

inline json penalty_to_json(const PenaltySchedule& p) {
  switch (p.variant()) {
    case PenaltyVariant::Uniform: {
      const Vector& g = p.as_uniform().gamma;
      if ((g.array() == g(0)).all()) return json{{"uniform", g(0)}};
      return json{{"uniform", vector_to_json(g)}};
    }
    case PenaltyVariant::PerSource: {
      const Matrix& g = p.as_per_source().gamma;
      bool constant = true;
      for (Index t = 1; t < g.rows() && constant; ++t)
        constant = (g.row(t) == g.row(0));
      if (constant) return json{{"per_source", vector_to_json(g.row(0).transpose())}};
      return json{{"per_source", matrix_to_json(g)}};
    }
    case PenaltyVariant::Full: {
      const auto& gs = p.as_full().gamma;
      bool constant = true;
      for (size_t t = 1; t < gs.size() && constant; ++t) constant = (gs[t] == gs[0]);
      if (constant) return json{{"full", matrix_to_json(gs[0])}};
      json per_t = json::array();
      for (const auto& g : gs) per_t.push_back(matrix_to_json(g));
      return json{{"full", std::move(per_t)}};
    }
  }
  throw Error("unreachable");
}

}  // namespace detail

inline json to_json(const ProblemFile& file) {
  json j;
  j["n"] = file.n;
  j["T"] = file.horizon;
  if (!file.state_names.empty()) j["states"] = file.state_names;
  j["pbar"] = detail::matrix_to_json(file.pbar);
  if (file.rho0)
    j["rho0"] = detail::vector_to_json(*file.rho0);
  else
    j["rho0"] = "steady";
  if (const auto* gen = std::get_if<CostGenerator>(&file.costs)) {
    json g;
    g["base"] = gen->base;
    g["on_states"] = gen->on_states;
    g["noise"] = gen->uniform01_noise ? "uniform01" : "none";
    j["costs"] = std::move(g);
  } else {
    j["costs"] = detail::matrix_to_json(std::get<Matrix>(file.costs));
  }
  j["penalty"] = detail::penalty_to_json(*file.penalty);
  if (file.epsilon) j["epsilon"] = detail::vector_to_json(*file.epsilon);
  if (file.seed) j["seed"] = *file.seed;
  return j;
}

// ---------------------------------------------------------------------------
// resolution to a Problem
// ---------------------------------------------------------------------------

/// Materializes the document: "steady" initial states are computed from the
/// target matrix, generated costs are drawn from the (overridable) seed.
inline ResolvedProblem resolve(const ProblemFile& file,
                               std::optional<std::uint64_t> seed_override = std::nullopt) {
  if (!file.penalty) throw SchemaError("problem file: penalty is not set");
  StochasticMatrix pbar(file.pbar);
  EnsembleState rho0 = file.rho0 ? EnsembleState(*file.rho0) : steady_state(pbar);

  std::optional<std::uint64_t> cost_seed;
  Matrix u;
  if (const auto* gen = std::get_if<CostGenerator>(&file.costs)) {
    const std::uint64_t seed = seed_override.value_or(file.seed.value_or(0));
    u = Matrix::Zero(file.horizon, file.n);
    SplitMix64 rng(seed);
    for (Index t = 0; t < file.horizon; ++t) {
      const double noise = gen->uniform01_noise ? rng.next_double() : 0.0;
      for (Index s : gen->on_states) u(t, s) = gen->base + noise;
    }
    cost_seed = seed;
  } else {
    u = std::get<Matrix>(file.costs);
  }
  return {Problem(file.n, file.horizon, std::move(pbar), CostSchedule(std::move(u)),
                  *file.penalty, std::move(rho0)),
          cost_seed};
}

/// Model file for the cyclic load generator: natural cycle matrix, generated
/// on-state costs, steady initial state, and the per-state energy vector.
inline ProblemFile gen_model_file(const CyclicModelSpec& spec) {
  spec.validate();
  ProblemFile file;
  file.n = spec.n_states;
  file.horizon = spec.horizon;
  file.pbar = cyclic_target_matrix(spec.n_states, spec.advance_prob).matrix();
  file.rho0 = std::nullopt;  // steady
  CostGenerator gen;
  gen.base = spec.cost_base;
  gen.on_states = spec.resolved_on_states();
  gen.uniform01_noise = spec.cost_noise_uniform01;
  file.costs = std::move(gen);
  file.penalty = cyclic_penalty(spec);
  file.epsilon = cyclic_epsilon(spec);
  file.seed = spec.seed;

  const auto on = spec.resolved_on_states();
  std::vector<bool> is_on(static_cast<size_t>(spec.n_states), false);
  for (Index s : on) is_on[static_cast<size_t>(s)] = true;
  for (Index i = 0; i < spec.n_states; ++i)
    file.state_names.push_back((is_on[static_cast<size_t>(i)] ? "on_" : "off_") +
                               std::to_string(i + 1));
  return file;
}

// ---------------------------------------------------------------------------
// files: atomic writes, CSV, policy trajectories
// ---------------------------------------------------------------------------

inline void atomic_write_text(const std::filesystem::path& path,
                              const std::string& content) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out << content;
    if (!out) throw Error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

/// 17 significant digits: doubles survive a write/read round trip bit-exactly.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string load_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json load_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

inline void write_rho_csv(const std::filesystem::path& path,
                          const std::vector<EnsembleState>& rho_traj) {
  std::ostringstream out;
  const Index n = rho_traj.front().n();
  out << "t";
  for (Index i = 0; i < n; ++i) out << ",rho_" << (i + 1);
  out << "\n";
  for (size_t t = 0; t < rho_traj.size(); ++t) {
    out << t;
    for (Index i = 0; i < n; ++i)
      out << ',' << format_double(rho_traj[t](static_cast<Index>(i)));
    out << "\n";
  }
  atomic_write_text(path, out.str());
}

inline void write_empirical_rho_csv(const std::filesystem::path& path,
                                    const Matrix& empirical_rho) {
  std::ostringstream out;
  out << "t";
  for (Index i = 0; i < empirical_rho.cols(); ++i) out << ",rho_" << (i + 1);
  out << "\n";
  for (Index t = 0; t < empirical_rho.rows(); ++t) {
    out << t;
    for (Index i = 0; i < empirical_rho.cols(); ++i)
      out << ',' << format_double(empirical_rho(t, i));
    out << "\n";
  }
  atomic_write_text(path, out.str());
}

/// Rows t = 1..T of a per-slot series (consumption, signals, ...).
inline void write_series_csv(const std::filesystem::path& path, const char* name,
                             const Vector& series) {
  std::ostringstream out;
  out << "t," << name << "\n";
  for (Index t = 0; t < series.size(); ++t)
    out << (t + 1) << ',' << format_double(series(t)) << "\n";
  atomic_write_text(path, out.str());
}

inline void write_residuals_csv(const std::filesystem::path& path, const Vector& target,
                                const Vector& consumption) {
  std::ostringstream out;
  out << "t,target,consumption,residual\n";
  for (Index t = 0; t < target.size(); ++t)
    out << (t + 1) << ',' << format_double(target(t)) << ','
        << format_double(consumption(t)) << ','
        << format_double(consumption(t) - target(t)) << "\n";
  atomic_write_text(path, out.str());
}

/// Signal CSV `t,s` with one row per t = 1..T (header optional).
inline Vector read_signal_csv(const std::filesystem::path& path, Index horizon) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open " + path.string());
  Vector s(horizon);
  Index row = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string t_field, s_field;
    if (!std::getline(fields, t_field, ',') || !std::getline(fields, s_field, ','))
      throw SchemaError(path.string() + ": expected rows of the form t,s");
    char* end = nullptr;
    const double t_val = std::strtod(t_field.c_str(), &end);
    if (end == t_field.c_str()) continue;  // header row
    if (row >= horizon)
      throw SchemaError(path.string() + ": more rows than the horizon T");
    if (static_cast<Index>(t_val) != row + 1)
      throw SchemaError(path.string() + ": time column must run 1..T in order");
    s(row++) = std::strtod(s_field.c_str(), nullptr);
  }
  if (row != horizon)
    throw SchemaError(path.string() + ": expected " + std::to_string(horizon) +
                      " signal rows, got " + std::to_string(row));
  return s;
}

inline void write_p_traj_json(const std::filesystem::path& path,
                              const std::vector<StochasticMatrix>& p_traj) {
  json j;
  j["n"] = p_traj.empty() ? 0 : p_traj.front().n();
  j["T"] = p_traj.size();
  j["orientation"] = "column_source";
  json per_t = json::array();
  for (const auto& p : p_traj) per_t.push_back(detail::matrix_to_json(p.matrix()));
  j["p"] = std::move(per_t);
  atomic_write_text(path, j.dump(1) + "\n");
}

inline std::vector<StochasticMatrix> read_p_traj_json(const std::filesystem::path& path,
                                                      double tol = defaults::stochastic_tol) {
  const json j = load_json(path);
  const Index n = detail::require(j, "n").get<Index>();
  const auto& per_t = detail::require(j, "p");
  if (!per_t.is_array()) throw SchemaError(path.string() + ": \"p\" must be an array");
  std::vector<StochasticMatrix> p_traj;
  p_traj.reserve(per_t.size());
  for (const auto& one : per_t)
    p_traj.emplace_back(detail::parse_matrix(one, n, n, "p"), tol);
  return p_traj;
}

}  // namespace lsmdp::io
