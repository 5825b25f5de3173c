#pragma once

// Metrics, closed-loop simulation and the controller comparison tables.

#include <mpcnn/dataset.hpp>
#include <mpcnn/mpc.hpp>
#include <mpcnn/network.hpp>
#include <mpcnn/sampler.hpp>

#include <algorithm>
#include <map>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

namespace mpcnn {

/// 10 log10( sum ||u - u*||^2 / sum ||u*||^2 ), floored at -300 dB.
inline double nmse(const std::vector<Vector>& preds, const std::vector<Vector>& truths) {
  require_dims(preds.size() == truths.size(), "nmse: sequence lengths");
  double err = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    require_dims(preds[i].size() == truths[i].size(), "nmse: vector dims");
    err += (preds[i] - truths[i]).squaredNorm();
    ref += truths[i].squaredNorm();
  }
  if (ref < 1e-300) throw Error(ErrorCode::ZeroReference, "nmse: reference energy is zero");
  if (err == 0.0) return -300.0;
  return std::max(-300.0, 10.0 * std::log10(err / ref));
}

// ---------------------------------------------------------------------------
// Controllers

enum class ControllerKind { MpcOracle, Lqr, BBNN, ProjectionNN };

/// MpcOracle rollouts either re-solve at every step or apply the plan computed
/// at x0 (whose cost is the N-step optimum j_star).
enum class Rollout { Receding, OpenLoop };

inline const char* to_string(ControllerKind k) {
  switch (k) {
    case ControllerKind::MpcOracle: return "MpcOracle";
    case ControllerKind::Lqr: return "Lqr";
    case ControllerKind::BBNN: return "BBNN";
    case ControllerKind::ProjectionNN: return "ProjectionNN";
  }
  return "?";
}

struct Controller {
  ControllerKind kind = ControllerKind::MpcOracle;
  std::string name;
  Rollout rollout = Rollout::Receding;
  std::shared_ptr<const MpcSpec> spec;
  std::shared_ptr<const Mlp> net;
  std::shared_ptr<const ProjectionSpec> pspec;
  Matrix gain;

  static Controller mpc(const MpcSpec& s, Rollout r = Rollout::Receding, std::string name = "") {
    Controller c;
    c.kind = ControllerKind::MpcOracle;
    c.rollout = r;
    c.spec = std::make_shared<const MpcSpec>(s);
    c.name = name.empty() ? (r == Rollout::OpenLoop ? "MpcOracle" : "MpcReceding") : std::move(name);
    return c;
  }

  /// u = clip_U(-L x) with L the infinite-horizon LQR gain of the spec.
  static Controller lqr(const MpcSpec& s) {
    Controller c;
    c.kind = ControllerKind::Lqr;
    c.name = "Lqr";
    c.spec = std::make_shared<const MpcSpec>(s);
    c.gain = lqr_gain(s.sys, s.q_mat, s.r_mat);
    ProjectionSpec onto_u;
    onto_u.g_mat = s.u_set.a_mat();
    onto_u.h0_vec = s.u_set.b_vec();
    onto_u.h_x_mat = Matrix::Zero(s.u_set.num_rows(), s.n());
    c.pspec = std::make_shared<const ProjectionSpec>(std::move(onto_u));
    return c;
  }

  static Controller bbnn(const Mlp& net) {
    Controller c;
    c.kind = ControllerKind::BBNN;
    c.name = "BBNN";
    c.net = std::make_shared<const Mlp>(net);
    return c;
  }

  static Controller projection_nn(const Mlp& net, const ProjectionSpec& ps) {
    Controller c;
    c.kind = ControllerKind::ProjectionNN;
    c.name = "ProjectionNN";
    c.net = std::make_shared<const Mlp>(net);
    c.pspec = std::make_shared<const ProjectionSpec>(ps);
    return c;
  }

  /// Input applied at state x (first block of outputs for sequence networks).
  Vector operator()(const Vector& x) const {
    switch (kind) {
      case ControllerKind::MpcOracle: return solve_mpc(*spec, x).u_seq.front();
      case ControllerKind::Lqr: return project_feasible(*pspec, x, -gain * x).u;
      case ControllerKind::BBNN: return forward(*net, x);
      case ControllerKind::ProjectionNN: return network_output(Architecture::ProjectionNN, *net, pspec.get(), x);
    }
    return {};
  }
};

struct TrajectoryResult {
  std::vector<Vector> states;
  std::vector<Vector> inputs;
  double cost = 0.0;
  /// Step k is feasible when u_k is in U and x_{k+1} is in X.
  std::vector<bool> feasible;
  /// Number of individual input or state constraint-set violations.
  int violations = 0;
};

inline constexpr double kFeasibilityTol = 1e-7;

/// Closed-loop rollout x_{k+1} = A x_k + B u_k for `steps` steps (default N).
/// Constraint violations are counted, never fatal.
inline TrajectoryResult simulate(const Controller& ctrl, const MpcSpec& spec, const Vector& x0, int steps = -1) {
  require_dims(x0.size() == spec.n(), "simulate: x0 dimension");
  if (steps < 0) steps = spec.horizon;
  TrajectoryResult tr;
  tr.states.push_back(x0);
  std::vector<Vector> plan;
  for (int k = 0; k < steps; ++k) {
    const Vector& x = tr.states.back();
    Vector u;
    try {
      if (ctrl.kind == ControllerKind::MpcOracle && ctrl.rollout == Rollout::OpenLoop) {
        const std::size_t slot = static_cast<std::size_t>(k % spec.horizon);
        if (slot == 0) plan = solve_mpc(spec, x).u_seq;
        u = plan[slot];
      } else {
        u = ctrl(x);
      }
    } catch (const Error& e) {
      throw Error(ErrorCode::ControllerFailure, ctrl.name + " failed at step " + std::to_string(k) + ": " + e.what());
    }
    if (u.size() < spec.m()) throw Error(ErrorCode::ControllerFailure, ctrl.name + " returned too few inputs");
    u = u.head(spec.m()).eval();
    const Vector next = spec.sys.step(x, u);
    const bool u_ok = spec.u_set.contains(u, kFeasibilityTol);
    const bool x_ok = spec.x_set.contains(next, kFeasibilityTol);
    tr.violations += static_cast<int>(!u_ok) + static_cast<int>(!x_ok);
    tr.feasible.push_back(u_ok && x_ok);
    tr.inputs.push_back(u);
    tr.states.push_back(next);
  }
  tr.cost = steps == 0 ? x0.dot(spec.qn_mat * x0) : spec.trajectory_cost(tr.states, tr.inputs);
  return tr;
}

/// J / (x0' x0).
inline double normalized_cost(const TrajectoryResult& tr, const MpcSpec& spec) {
  require_dims(!tr.states.empty(), "normalized_cost: empty trajectory");
  const double energy = tr.states.front().squaredNorm();
  if (energy < 1e-300) throw Error(ErrorCode::ZeroInitialState, "normalized_cost: x0 is zero");
  const double j = tr.inputs.empty() ? tr.states.front().dot(spec.qn_mat * tr.states.front())
                                     : spec.trajectory_cost(tr.states, tr.inputs);
  return j / energy;
}

// ---------------------------------------------------------------------------
// NMSE learning curve

struct NmseRow {
  std::size_t size = 0;
  Architecture arch = Architecture::BBNN;
  std::uint64_t seed = 0;
  double nmse_db = 0.0;
};

struct NmseCurveConfig {
  std::vector<std::size_t> sizes;
  std::vector<Architecture> archs{Architecture::BBNN, Architecture::ProjectionNN};
  std::vector<std::uint64_t> seeds{0};
  /// Sampler settings shared by the test and training chains; the seed
  /// field is replaced per chain.
  HitAndRunConfig sampler;
  TrainConfig train;
  /// Empty means default_widths for the spec.
  std::vector<int> widths;
  unsigned threads = 1;
};

/// Test-set predictions of a trained architecture.
inline std::vector<Vector> predict(Architecture arch, const Mlp& net, const ProjectionSpec* ps, const Dataset& ds,
                                   unsigned threads = 1) {
  std::vector<Vector> out(ds.size());
  parallel_for(ds.size(), threads, [&](std::size_t i) { out[i] = network_output(arch, net, ps, ds.states[i]); });
  return out;
}

/// Labelled training pool of one seed: the chain the learning curve draws its
/// nested training sets from.
inline Dataset nmse_training_pool(const MpcSpec& spec, const Polytope& cinf, std::uint64_t seed, std::size_t size,
                                  TargetMode mode, const HitAndRunConfig& sampler, unsigned threads = 1,
                                  const std::string& timestamp = {}) {
  HitAndRunConfig hr = sampler;
  hr.seed = derive_seed(seed, "nmse-train-data");
  GenerateOptions gopt;
  gopt.mode = mode;
  gopt.threads = threads;
  gopt.timestamp = timestamp;
  return generate(spec, cinf, size, hr, gopt);
}

/// Learning curve over precomputed pools (pools[i] belongs to cfg.seeds[i]).
/// The training set of size s is the first s pairs of the pool; every
/// (size, arch, seed) cell trains a fresh network and scores it on the
/// shared test set.
inline std::vector<NmseRow> nmse_curve(const MpcSpec& spec, const ProjectionSpec& ps, const Dataset& test_set,
                                       const NmseCurveConfig& cfg, const std::vector<Dataset>& pools) {
  if (cfg.sizes.empty()) throw Error(ErrorCode::InvalidArgument, "nmse_curve: no sizes");
  if (!std::is_sorted(cfg.sizes.begin(), cfg.sizes.end())) throw Error(ErrorCode::InvalidArgument, "nmse_curve: sizes must be ascending");
  if (pools.size() != cfg.seeds.size()) throw Error(ErrorCode::InvalidArgument, "nmse_curve: one pool per seed");
  const std::vector<int> widths = cfg.widths.empty() ? default_widths(spec.n(), test_set.target_dim()) : cfg.widths;
  std::vector<NmseRow> rows;
  for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
    const std::uint64_t seed = cfg.seeds[si];
    if (pools[si].size() < cfg.sizes.back()) throw Error(ErrorCode::InvalidArgument, "nmse_curve: pool smaller than largest size");
    for (std::size_t size : cfg.sizes) {
      const Dataset train_set = pools[si].head(size);
      for (Architecture arch : cfg.archs) {
        TrainConfig tc = cfg.train;
        tc.seed = derive_seed(seed, std::string("nmse-train-") + to_string(arch));
        const Mlp init = Mlp::random(widths, derive_seed(seed, std::string("nmse-init-") + to_string(arch)));
        const TrainResult tr = train(init, train_set, tc, arch, &ps);
        const auto preds = predict(arch, tr.net, &ps, test_set, cfg.threads);
        rows.push_back({size, arch, seed, nmse(preds, test_set.targets)});
      }
    }
  }
  return rows;
}

inline std::vector<NmseRow> nmse_curve(const MpcSpec& spec, const Polytope& cinf, const ProjectionSpec& ps,
                                       const Dataset& test_set, const NmseCurveConfig& cfg) {
  if (cfg.sizes.empty()) throw Error(ErrorCode::InvalidArgument, "nmse_curve: no sizes");
  std::vector<Dataset> pools;
  for (std::uint64_t seed : cfg.seeds) {
    pools.push_back(nmse_training_pool(spec, cinf, seed, *std::max_element(cfg.sizes.begin(), cfg.sizes.end()),
                                       test_set.target_mode, cfg.sampler, cfg.threads));
  }
  return nmse_curve(spec, ps, test_set, cfg, pools);
}

inline void write_nmse_csv(std::ostream& os, const std::vector<NmseRow>& rows) {
  os << "size,arch,seed,nmse_db\n";
  for (const auto& r : rows) os << r.size << ',' << to_string(r.arch) << ',' << r.seed << ',' << format_double(r.nmse_db) << '\n';
}

/// Mean NMSE over seeds for one (size, arch) cell.
inline double mean_nmse(const std::vector<NmseRow>& rows, std::size_t size, Architecture arch) {
  double sum = 0.0;
  int count = 0;
  for (const auto& r : rows) {
    if (r.size == size && r.arch == arch) {
      sum += r.nmse_db;
      ++count;
    }
  }
  if (count == 0) throw Error(ErrorCode::InvalidArgument, "mean_nmse: no rows for that cell");
  return sum / count;
}

// ---------------------------------------------------------------------------
// Control-cost comparison

struct CostRow {
  std::size_t traj_id = 0;
  std::string controller;
  double j_n = 0.0;
  int violations = 0;
};

struct CostSummary {
  std::string controller;
  double mean = 0.0;
  double median = 0.0;
  int total_violations = 0;
  int trajectories_with_violations = 0;
};

struct CostTable {
  std::vector<Vector> initial_states;
  std::vector<CostRow> rows;
  std::vector<CostSummary> summary;

  /// J_n of `controller` on trajectory `traj_id`.
  double j_n(std::size_t traj_id, const std::string& controller) const {
    for (const auto& r : rows) {
      if (r.traj_id == traj_id && r.controller == controller) return r.j_n;
    }
    throw Error(ErrorCode::InvalidArgument, "cost table: no entry for " + controller);
  }
};

inline std::vector<CostSummary> summarize(const std::vector<CostRow>& rows, const std::vector<std::string>& order) {
  std::vector<CostSummary> out;
  for (const auto& name : order) {
    std::vector<double> values;
    CostSummary s;
    s.controller = name;
    for (const auto& r : rows) {
      if (r.controller != name) continue;
      values.push_back(r.j_n);
      s.total_violations += r.violations;
      s.trajectories_with_violations += r.violations > 0 ? 1 : 0;
    }
    if (!values.empty()) {
      double sum = 0.0;
      for (double v : values) sum += v;
      s.mean = sum / static_cast<double>(values.size());
      std::sort(values.begin(), values.end());
      const std::size_t h = values.size() / 2;
      s.median = values.size() % 2 ? values[h] : 0.5 * (values[h - 1] + values[h]);
    }
    out.push_back(s);
  }
  return out;
}

/// Simulates every controller from `n_traj` hit-and-run initial states.
inline CostTable cost_comparison(const MpcSpec& spec, const Polytope& cinf, const std::vector<Controller>& controllers,
                                 std::size_t n_traj, const HitAndRunConfig& sampler, unsigned threads = 1) {
  CostTable table;
  table.initial_states = hit_and_run(cinf, n_traj, sampler);
  std::vector<std::vector<CostRow>> per_traj(n_traj);
  parallel_for(n_traj, threads, [&](std::size_t t) {
    for (const auto& c : controllers) {
      const TrajectoryResult tr = simulate(c, spec, table.initial_states[t]);
      per_traj[t].push_back({t, c.name, normalized_cost(tr, spec), tr.violations});
    }
  });
  for (auto& rows : per_traj) table.rows.insert(table.rows.end(), rows.begin(), rows.end());
  std::vector<std::string> names;
  for (const auto& c : controllers) names.push_back(c.name);
  table.summary = summarize(table.rows, names);
  return table;
}

inline void write_cost_csv(std::ostream& os, const CostTable& table) {
  os << "traj_id,controller,j_n,violations\n";
  for (const auto& r : table.rows) os << r.traj_id << ',' << r.controller << ',' << format_double(r.j_n) << ',' << r.violations << '\n';
}

inline void write_cost_summary_csv(std::ostream& os, const CostTable& table) {
  os << "controller,mean_j_n,median_j_n,total_violations,trajectories_with_violations\n";
  for (const auto& s : table.summary) {
    os << s.controller << ',' << format_double(s.mean) << ',' << format_double(s.median) << ',' << s.total_violations << ','
       << s.trajectories_with_violations << '\n';
  }
}

}  // namespace mpcnn
