#pragma once

// Finite-horizon linear MPC:
//
//   min  x_N' Q_N x_N + sum_{k=0}^{N-1} x_k' Q x_k + u_k' R u_k
//   s.t. x_{k+1} = A x_k + B u_k,  x_k in X (k = 1..N),  u_k in U,  x_0 given
//
// posed as a stacked QP over z = (x_1..x_N, u_0..u_{N-1}) with the dynamics as
// equality rows. Also the LQR baseline (DARE) and the state sensitivity of the
// first optimal input.

#include <mpcnn/config.hpp>
#include <mpcnn/numerics.hpp>
#include <mpcnn/optimize.hpp>
#include <mpcnn/polytope.hpp>
#include <mpcnn/system.hpp>

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace mpcnn {

struct MpcSpec {
  LinearSystem sys;
  Matrix q_mat;
  Matrix qn_mat;
  Matrix r_mat;
  int horizon = 1;
  Polytope x_set;
  Polytope u_set;
  /// Solver settings used for every MPC solve made from this spec.
  SolverSettings solver;

  Eigen::Index n() const { return sys.state_dim(); }
  Eigen::Index m() const { return sys.input_dim(); }

  void validate() const {
    sys.validate();
    const auto n_ = n();
    const auto m_ = m();
    require_dims(q_mat.rows() == n_ && q_mat.cols() == n_, "mpc spec: Q must be n x n");
    require_dims(qn_mat.rows() == n_ && qn_mat.cols() == n_, "mpc spec: Q_N must be n x n");
    require_dims(r_mat.rows() == m_ && r_mat.cols() == m_, "mpc spec: R must be m x m");
    require_dims(x_set.dim() == n_, "mpc spec: state set dimension");
    require_dims(u_set.dim() == m_, "mpc spec: input set dimension");
    if (horizon < 1) throw Error(ErrorCode::InvalidArgument, "mpc spec: horizon must be >= 1");
    auto psd = [](const Matrix& mat, double shift) {
      if ((mat - mat.transpose()).cwiseAbs().maxCoeff() > 1e-12) return false;
      Matrix shifted = mat;
      shifted.diagonal().array() += shift;
      return Eigen::LLT<Matrix>(shifted).info() == Eigen::Success;
    };
    if (!psd(q_mat, 1e-10) || !psd(qn_mat, 1e-10)) throw Error(ErrorCode::InvalidArgument, "mpc spec: Q and Q_N must be symmetric PSD");
    if (!psd(r_mat, 0.0)) throw Error(ErrorCode::InvalidArgument, "mpc spec: R must be symmetric positive definite");
  }

  /// Stage-plus-terminal cost of a trajectory x_0..x_N with inputs u_0..u_{N-1}.
  double trajectory_cost(const std::vector<Vector>& states, const std::vector<Vector>& inputs) const {
    require_dims(!states.empty() && states.size() == inputs.size() + 1, "trajectory_cost: need N+1 states and N inputs");
    double j = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      j += states[k].dot(q_mat * states[k]) + inputs[k].dot(r_mat * inputs[k]);
    }
    j += states.back().dot(qn_mat * states.back());
    return j;
  }
};

// ---------------------------------------------------------------------------
// Built-in benchmark problems

inline MpcSpec double_integrator_2d() {
  MpcSpec s;
  s.sys.a_mat = Matrix(2, 2);
  s.sys.a_mat << 1.0, 1.0, 0.0, 1.0;
  s.sys.b_mat = Matrix(2, 1);
  s.sys.b_mat << 0.0, 1.0;
  s.q_mat = Matrix::Identity(2, 2);
  s.qn_mat = Matrix::Identity(2, 2);
  s.r_mat = Matrix::Constant(1, 1, 10.0);
  s.horizon = 3;
  s.x_set = Polytope::symmetric_box(Vector::Constant(2, 5.0));
  s.u_set = Polytope::symmetric_box(Vector::Constant(1, 2.0));
  return s;
}

inline MpcSpec system_4d() {
  MpcSpec s;
  s.sys.a_mat = Matrix(4, 4);
  s.sys.a_mat << 0.7, -0.1, 0.0, 0.0,
                 0.2, -0.5, 0.1, 0.0,
                 0.0, 0.1, 0.1, 0.0,
                 0.5, 0.0, 0.5, 0.5;
  s.sys.b_mat = Matrix(4, 2);
  s.sys.b_mat << 0.0, 0.1,
                 0.1, 1.0,
                 0.1, 0.0,
                 0.0, 0.0;
  s.q_mat = Matrix::Identity(4, 4);
  s.qn_mat = Matrix::Identity(4, 4);
  s.r_mat = Matrix::Identity(2, 2);
  s.horizon = 10;
  Vector x_half(4);
  x_half << 6.0, 6.0, 1.0, 0.5;
  s.x_set = Polytope::symmetric_box(x_half);
  s.u_set = Polytope::symmetric_box(Vector::Constant(2, 5.0));
  return s;
}

inline MpcSpec builtin_spec(const std::string& name) {
  if (name == "double-integrator-2d") return double_integrator_2d();
  if (name == "system-4d") return system_4d();
  throw Error(ErrorCode::InvalidArgument, "unknown built-in spec '" + name + "'");
}

// ---------------------------------------------------------------------------
// Spec files
//
//   [system]       a, b            matrices
//   [cost]         q, qn, r        matrices; horizon integer
//   [constraints]  x_lower/x_upper and u_lower/u_upper boxes, or
//                  x_polytope/u_polytope paths (polytope text format)
//   [solver]       eps_abs, eps_rel, rho, sigma, alpha, max_iter (optional)

inline std::string spec_to_text(const MpcSpec& s) {
  std::ostringstream os;
  os << "[system]\n";
  os << "a = " << format_matrix(s.sys.a_mat) << "\n";
  os << "b = " << format_matrix(s.sys.b_mat) << "\n";
  os << "[cost]\n";
  os << "q = " << format_matrix(s.q_mat) << "\n";
  os << "qn = " << format_matrix(s.qn_mat) << "\n";
  os << "r = " << format_matrix(s.r_mat) << "\n";
  os << "horizon = " << s.horizon << "\n";
  os << "[constraints]\n";
  os << "x_a = " << format_matrix(s.x_set.a_mat()) << "\n";
  os << "x_b = " << format_vector(s.x_set.b_vec()) << "\n";
  os << "u_a = " << format_matrix(s.u_set.a_mat()) << "\n";
  os << "u_b = " << format_vector(s.u_set.b_vec()) << "\n";
  os << "[solver]\n";
  os << "eps_abs = " << format_double(s.solver.eps_abs) << "\n";
  os << "eps_rel = " << format_double(s.solver.eps_rel) << "\n";
  os << "rho = " << format_double(s.solver.rho) << "\n";
  os << "sigma = " << format_double(s.solver.sigma) << "\n";
  os << "alpha = " << format_double(s.solver.alpha) << "\n";
  os << "max_iter = " << s.solver.max_iter << "\n";
  return os.str();
}

/// Hash of the canonical text form; identifies a spec in dataset metadata.
inline std::uint64_t spec_hash(const MpcSpec& s) { return stable_hash(spec_to_text(s)); }

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline Polytope load_polytope_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open polytope file " + path);
  return read_polytope(in);
}

inline MpcSpec spec_from_config(const KeyValueConfig& cfg) {
  MpcSpec s;
  s.sys.a_mat = parse_matrix(cfg.require("system.a"));
  s.sys.b_mat = parse_matrix(cfg.require("system.b"));
  s.q_mat = parse_matrix(cfg.require("cost.q"));
  s.qn_mat = cfg.has("cost.qn") ? parse_matrix(cfg.require("cost.qn")) : s.q_mat;
  s.r_mat = parse_matrix(cfg.require("cost.r"));
  s.horizon = static_cast<int>(cfg.get_int("cost.horizon", 1));
  auto load_set = [&](const std::string& prefix) {
    if (cfg.has("constraints." + prefix + "_polytope")) return load_polytope_file(cfg.require("constraints." + prefix + "_polytope"));
    if (cfg.has("constraints." + prefix + "_a")) {
      return Polytope(parse_matrix(cfg.require("constraints." + prefix + "_a")), parse_vector(cfg.require("constraints." + prefix + "_b")));
    }
    return Polytope::box(parse_vector(cfg.require("constraints." + prefix + "_lower")),
                         parse_vector(cfg.require("constraints." + prefix + "_upper")));
  };
  s.x_set = load_set("x");
  s.u_set = load_set("u");
  s.solver.eps_abs = cfg.get_double("solver.eps_abs", s.solver.eps_abs);
  s.solver.eps_rel = cfg.get_double("solver.eps_rel", s.solver.eps_rel);
  s.solver.rho = cfg.get_double("solver.rho", s.solver.rho);
  s.solver.sigma = cfg.get_double("solver.sigma", s.solver.sigma);
  s.solver.alpha = cfg.get_double("solver.alpha", s.solver.alpha);
  s.solver.max_iter = static_cast<int>(cfg.get_int("solver.max_iter", s.solver.max_iter));
  s.validate();
  return s;
}

inline MpcSpec spec_from_text(const std::string& text) {
  std::istringstream is(text);
  return spec_from_config(KeyValueConfig::parse(is, "<spec>"));
}

// ---------------------------------------------------------------------------
// QP assembly

/// Index helpers for the stacked decision vector.
struct MpcLayout {
  Eigen::Index n = 0;
  Eigen::Index m = 0;
  Eigen::Index horizon = 0;

  Eigen::Index num_vars() const { return horizon * (n + m); }
  Eigen::Index state(Eigen::Index k) const { return (k - 1) * n; }  // k = 1..N
  Eigen::Index input(Eigen::Index k) const { return horizon * n + k * m; }  // k = 0..N-1
  Eigen::Index num_dynamics_rows() const { return horizon * n; }
};

inline MpcLayout layout_of(const MpcSpec& s) { return {s.n(), s.m(), s.horizon}; }

inline QpProblem build_mpc_qp(const MpcSpec& spec, const Vector& x0) {
  require_dims(x0.size() == spec.n(), "build_mpc_qp: x0 dimension");
  const MpcLayout lay = layout_of(spec);
  const Eigen::Index n = lay.n, m = lay.m, N = lay.horizon;
  const Eigen::Index nz = lay.num_vars();
  const Eigen::Index rx = spec.x_set.num_rows();
  const Eigen::Index ru = spec.u_set.num_rows();
  const Eigen::Index rows = N * n + N * rx + N * ru;

  QpProblem qp;
  qp.p_mat = Matrix::Zero(nz, nz);
  for (Eigen::Index k = 1; k <= N; ++k) {
    qp.p_mat.block(lay.state(k), lay.state(k), n, n) = 2.0 * (k == N ? spec.qn_mat : spec.q_mat);
  }
  for (Eigen::Index k = 0; k < N; ++k) qp.p_mat.block(lay.input(k), lay.input(k), m, m) = 2.0 * spec.r_mat;
  qp.q_vec = Vector::Zero(nz);

  qp.a_mat = Matrix::Zero(rows, nz);
  qp.lower = Vector::Constant(rows, -kInf);
  qp.upper = Vector::Constant(rows, kInf);
  const Vector ax0 = spec.sys.a_mat * x0;
  for (Eigen::Index k = 0; k < N; ++k) {
    const Eigen::Index r = k * n;
    qp.a_mat.block(r, lay.state(k + 1), n, n) = Matrix::Identity(n, n);
    if (k > 0) qp.a_mat.block(r, lay.state(k), n, n) = -spec.sys.a_mat;
    qp.a_mat.block(r, lay.input(k), n, m) = -spec.sys.b_mat;
    const Vector rhs = k == 0 ? ax0 : Vector::Zero(n);
    qp.lower.segment(r, n) = rhs;
    qp.upper.segment(r, n) = rhs;
  }
  Eigen::Index r = N * n;
  for (Eigen::Index k = 1; k <= N; ++k, r += rx) {
    qp.a_mat.block(r, lay.state(k), rx, n) = spec.x_set.a_mat();
    qp.upper.segment(r, rx) = spec.x_set.b_vec();
  }
  for (Eigen::Index k = 0; k < N; ++k, r += ru) {
    qp.a_mat.block(r, lay.input(k), ru, m) = spec.u_set.a_mat();
    qp.upper.segment(r, ru) = spec.u_set.b_vec();
  }
  return qp;
}

struct MpcSolution {
  std::vector<Vector> u_seq;
  std::vector<Vector> x_seq;  // x_0..x_N as predicted by the QP
  double j_star = 0.0;
  QpProblem qp;
  QpSolution qp_solution;
};

inline MpcSolution solve_mpc(const MpcSpec& spec, const Vector& x0) {
  require_dims(x0.size() == spec.n(), "solve_mpc: x0 dimension");
  if (!spec.x_set.contains(x0, 1e-9)) throw Error(ErrorCode::InfeasibleState, "solve_mpc: x0 outside the state set");
  MpcSolution out;
  out.qp = build_mpc_qp(spec, x0);
  out.qp_solution = qp_solve(out.qp, spec.solver);
  const auto& sol = out.qp_solution;
  if (sol.status == QpStatus::Infeasible) throw Error(ErrorCode::InfeasibleState, "solve_mpc: QP infeasible from x0");
  if (sol.status != QpStatus::Solved) {
    throw Error(ErrorCode::NoConvergence, std::string("solve_mpc: QP status ") + to_string(sol.status));
  }
  const MpcLayout lay = layout_of(spec);
  out.x_seq.push_back(x0);
  for (Eigen::Index k = 1; k <= lay.horizon; ++k) out.x_seq.push_back(sol.z_star.segment(lay.state(k), lay.n));
  for (Eigen::Index k = 0; k < lay.horizon; ++k) out.u_seq.push_back(sol.z_star.segment(lay.input(k), lay.m));
  out.j_star = 0.5 * sol.z_star.dot(out.qp.p_mat * sol.z_star) + x0.dot(spec.q_mat * x0);
  return out;
}

/// d u_0 / d x_0 at the MPC optimum, by differentiating the active-set KKT
/// system with x_0 entering the first block of dynamics offsets.
inline Matrix mpc_gradient(const MpcSpec& spec, const MpcSolution& sol, const ActiveSetThresholds& th = {}) {
  const MpcLayout lay = layout_of(spec);
  const Eigen::Index nz = lay.num_vars();
  Matrix dq = Matrix::Zero(nz, lay.n);
  Matrix dbounds = Matrix::Zero(sol.qp.num_constraints(), lay.n);
  dbounds.topRows(lay.n) = spec.sys.a_mat;
  const Matrix dz = qp_solution_jacobian(sol.qp, sol.qp_solution, dq, dbounds, th);
  return dz.middleRows(lay.input(0), lay.m);
}

inline Matrix mpc_gradient(const MpcSpec& spec, const Vector& x0, const ActiveSetThresholds& th = {}) {
  return mpc_gradient(spec, solve_mpc(spec, x0), th);
}

// ---------------------------------------------------------------------------
// LQR

struct RiccatiSettings {
  double tol = 1e-10;
  int max_iter = 100'000;
};

inline Matrix riccati_step(const LinearSystem& sys, const Matrix& q, const Matrix& r, const Matrix& p) {
  const Matrix& a = sys.a_mat;
  const Matrix& b = sys.b_mat;
  const Matrix bt_p = b.transpose() * p;
  const Matrix gram = bt_p * b + r;
  const Ldlt fact(gram);
  const Matrix gain = fact.solve(Matrix(bt_p * a));
  Matrix next = q + a.transpose() * p * a - (bt_p * a).transpose() * gain;
  return 0.5 * (next + next.transpose());
}

inline double dare_residual(const LinearSystem& sys, const Matrix& q, const Matrix& r, const Matrix& p) {
  return (riccati_step(sys, q, r, p) - p).cwiseAbs().maxCoeff();
}

/// P = Q + A'(P - P B (B'P B + R)^-1 B'P) A by fixed-point iteration from P = Q.
inline Matrix dare_solve(const LinearSystem& sys, const Matrix& q, const Matrix& r, const RiccatiSettings& s = {}) {
  sys.validate();
  require_dims(q.rows() == sys.state_dim() && q.cols() == sys.state_dim(), "dare: Q shape");
  require_dims(r.rows() == sys.input_dim() && r.cols() == sys.input_dim(), "dare: R shape");
  Matrix p = q;
  double change = 0.0;
  for (int it = 0; it < s.max_iter; ++it) {
    Matrix next = riccati_step(sys, q, r, p);
    change = (next - p).cwiseAbs().maxCoeff();
    p = std::move(next);
    if (!p.allFinite()) break;
    if (change <= s.tol) return p;
  }
  throw Error(ErrorCode::NoConvergence, "dare_solve: last change " + std::to_string(change));
}

/// L = (B'P B + R)^-1 B'P A with P the stabilizing DARE solution; u = -L x.
inline Matrix lqr_gain(const LinearSystem& sys, const Matrix& q, const Matrix& r, const RiccatiSettings& s = {}) {
  const Matrix p = dare_solve(sys, q, r, s);
  const Matrix bt_p = sys.b_mat.transpose() * p;
  return Ldlt(Matrix(bt_p * sys.b_mat + r)).solve(Matrix(bt_p * sys.a_mat));
}

}  // namespace mpcnn
