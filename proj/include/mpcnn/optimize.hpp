#pragma once

// Convex QP solver (ADMM operator splitting with solution polishing), KKT
// diagnostics, implicit differentiation of QP solutions, and a dense revised
// simplex for the small LPs of the polytope routines.
//
// QP form:
//     minimize    1/2 z'Pz + q'z
//     subject to  lower <= A z <= upper
// Infinite bounds use the +/-kInf sentinel.

#include <mpcnn/numerics.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

namespace mpcnn {

struct QpProblem {
  Matrix p_mat;
  Vector q_vec;
  Matrix a_mat;
  Vector lower;
  Vector upper;

  Eigen::Index num_vars() const { return q_vec.size(); }
  Eigen::Index num_constraints() const { return a_mat.rows(); }

  void validate() const {
    const auto n = q_vec.size();
    const auto m = a_mat.rows();
    require_dims(p_mat.rows() == n && p_mat.cols() == n, "qp: P must be n x n");
    require_dims(a_mat.cols() == n || m == 0, "qp: A must have n columns");
    require_dims(lower.size() == m && upper.size() == m, "qp: bound sizes");
    if (n > 0 && (p_mat - p_mat.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, p_mat.cwiseAbs().maxCoeff())) {
      throw Error(ErrorCode::InvalidArgument, "qp: P is not symmetric");
    }
    for (Eigen::Index i = 0; i < m; ++i) {
      if (lower(i) > upper(i)) throw Error(ErrorCode::InvalidArgument, "qp: lower > upper in row " + std::to_string(i));
    }
  }
};

enum class QpStatus { Solved, MaxIter, Infeasible, Unbounded };

inline const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::Solved: return "Solved";
    case QpStatus::MaxIter: return "MaxIter";
    case QpStatus::Infeasible: return "Infeasible";
    case QpStatus::Unbounded: return "Unbounded";
  }
  return "?";
}

struct QpSolution {
  Vector z_star;
  Vector y_star;
  QpStatus status = QpStatus::MaxIter;
  double prim_res = 0.0;
  double dual_res = 0.0;
  int iterations = 0;
  bool polished = false;
};

struct SolverSettings {
  double rho = 0.1;
  double sigma = 1e-6;
  double alpha = 1.6;
  double eps_abs = 1e-6;
  double eps_rel = 1e-6;
  double eps_prim_inf = 1e-4;
  double eps_dual_inf = 1e-4;
  int max_iter = 20'000;
  bool polish = true;
  /// Equality rows (lower == upper) use rho * eq_rho_scale.
  double eq_rho_scale = 1e3;
  /// Rows with both bounds infinite use this rho.
  double free_rho = 1e-6;
  double polish_delta = 1e-9;
  int polish_refine_iter = 5;
  /// ADMM convergence is tested every this many iterations.
  int check_every = 5;
  /// Unconverged runs get an exact LP feasibility check at this iteration.
  int lp_feasibility_check_at = 500;
  /// Interval (iterations) between early polish attempts; 0 disables them.
  int polish_every = 50;
  /// Every this many iterations (and after the last one) the polish may
  /// repair its active-set guess up to `polish_corrections` times.
  int polish_correct_every = 250;
  int polish_corrections = 25;
  /// Ruiz equilibration passes applied before iterating; 0 disables scaling.
  int scaling_iter = 10;

  void validate() const {
    if (!(rho > 0.0)) throw Error(ErrorCode::InvalidArgument, "settings: rho must be > 0");
    if (!(alpha > 0.0 && alpha < 2.0)) throw Error(ErrorCode::InvalidArgument, "settings: alpha must be in (0,2)");
    if (!(sigma > 0.0)) throw Error(ErrorCode::InvalidArgument, "settings: sigma must be > 0");
  }
};

namespace detail {

inline bool is_finite_bound(double b) { return std::abs(b) < 0.5 * kInf; }

inline Vector clamp(const Vector& v, const Vector& lo, const Vector& hi) { return v.cwiseMax(lo).cwiseMin(hi); }

inline double inf_norm(const Vector& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

struct Residuals {
  double prim = 0.0;
  double dual = 0.0;
  double eps_prim = 0.0;
  double eps_dual = 0.0;
};

inline Residuals residuals(const QpProblem& prob, const Vector& x, const Vector& z, const Vector& y,
                           const SolverSettings& s) {
  const Vector ax = prob.a_mat * x;
  const Vector px = prob.p_mat * x;
  const Vector aty = prob.a_mat.transpose() * y;
  Residuals r;
  r.prim = inf_norm(ax - z);
  r.dual = inf_norm(px + prob.q_vec + aty);
  r.eps_prim = s.eps_abs + s.eps_rel * std::max(inf_norm(ax), inf_norm(z));
  r.eps_dual = s.eps_abs + s.eps_rel * std::max({inf_norm(px), inf_norm(aty), inf_norm(prob.q_vec)});
  return r;
}

/// Primal infeasibility certificate on the ADMM dual increment dy, after
/// projecting dy onto the polar cone of the bound set (rows with an infinite
/// bound cannot carry multiplier mass toward that side).
inline bool primal_infeasible(const QpProblem& prob, const Vector& dy_raw, double eps) {
  Vector dy = dy_raw;
  for (Eigen::Index i = 0; i < dy.size(); ++i) {
    if (!is_finite_bound(prob.upper(i))) dy(i) = std::min(dy(i), 0.0);
    if (!is_finite_bound(prob.lower(i))) dy(i) = std::max(dy(i), 0.0);
  }
  const double norm = inf_norm(dy);
  if (norm < 1e-30) return false;
  if (inf_norm(prob.a_mat.transpose() * dy) > eps * norm) return false;
  double support = 0.0;
  for (Eigen::Index i = 0; i < dy.size(); ++i) {
    if (dy(i) > 0.0) support += prob.upper(i) * dy(i);
    else if (dy(i) < 0.0) support += prob.lower(i) * dy(i);
  }
  return support < -eps * norm;
}

inline bool dual_infeasible(const QpProblem& prob, const Vector& dx, double eps) {
  const double norm = inf_norm(dx);
  if (norm < 1e-30) return false;
  if (inf_norm(prob.p_mat * dx) > eps * norm) return false;
  if (prob.q_vec.dot(dx) > -eps * norm) return false;
  const Vector adx = prob.a_mat * dx;
  for (Eigen::Index i = 0; i < adx.size(); ++i) {
    const bool lo = is_finite_bound(prob.lower(i));
    const bool hi = is_finite_bound(prob.upper(i));
    if (hi && adx(i) > eps * norm) return false;
    if (lo && adx(i) < -eps * norm) return false;
  }
  return true;
}

/// Solves the equality-constrained KKT system restricted to `active` rows,
/// returning (z, y) with y zero on inactive rows. Uses a regularized
/// quasi-definite factorization plus iterative refinement.
inline std::optional<std::pair<Vector, Vector>> polish_solve(const QpProblem& prob, const std::vector<int>& active,
                                                             const Vector& target, const SolverSettings& s) {
  const Eigen::Index n = prob.num_vars();
  const Eigen::Index k = static_cast<Eigen::Index>(active.size());
  Matrix a_act(k, n);
  for (Eigen::Index r = 0; r < k; ++r) a_act.row(r) = prob.a_mat.row(active[r]);

  Matrix kkt = Matrix::Zero(n + k, n + k);
  kkt.topLeftCorner(n, n) = prob.p_mat;
  kkt.topRightCorner(n, k) = a_act.transpose();
  kkt.bottomLeftCorner(k, n) = a_act;
  Matrix kkt_reg = kkt;
  kkt_reg.topLeftCorner(n, n).diagonal().array() += s.polish_delta;
  kkt_reg.bottomRightCorner(k, k).diagonal().array() -= s.polish_delta;

  Vector rhs(n + k);
  rhs.head(n) = -prob.q_vec;
  rhs.tail(k) = target;

  Ldlt fact;
  try {
    fact.factor(kkt_reg);
  } catch (const Error&) {
    return std::nullopt;
  }
  Vector sol = fact.solve(rhs);
  for (int it = 0; it < s.polish_refine_iter; ++it) {
    const Vector res = rhs - kkt * sol;
    sol += fact.solve(res);
  }
  if (!sol.allFinite()) return std::nullopt;
  Vector y = Vector::Zero(prob.num_constraints());
  for (Eigen::Index r = 0; r < k; ++r) y(active[r]) = sol(n + r);
  return std::make_pair(Vector(sol.head(n)), y);
}

struct Polished {
  Vector z;
  Vector y;
  double prim = 0.0;
  double dual = 0.0;
  bool within_eps = false;
};

/// Guesses the active set from an ADMM iterate (z, y), solves the reduced KKT
/// system and repairs the guess: a row whose multiplier has the wrong sign is
/// released, an inactive row that the solution violates is added. Returns
/// nothing when no consistent active set is found within `corrections` repairs.
inline std::optional<Polished> try_polish(const QpProblem& prob, const Vector& z, const Vector& y,
                                          const SolverSettings& s, int corrections = 0) {
  const Eigen::Index m = prob.num_constraints();
  std::vector<int> side(static_cast<std::size_t>(m), 2);  // 2 inactive, -1 lower, +1 upper, 0 equality
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    if (std::abs(prob.upper(i) - prob.lower(i)) < 1e-12) side[ui] = 0;
    else if (is_finite_bound(prob.lower(i)) && z(i) - prob.lower(i) < -y(i)) side[ui] = -1;
    else if (is_finite_bound(prob.upper(i)) && prob.upper(i) - z(i) < y(i)) side[ui] = 1;
  }
  for (int attempt = 0; attempt <= corrections; ++attempt) {
    std::vector<int> active;
    std::vector<double> bounds;
    for (Eigen::Index i = 0; i < m; ++i) {
      const int sd = side[static_cast<std::size_t>(i)];
      if (sd == 2) continue;
      active.push_back(static_cast<int>(i));
      bounds.push_back(sd < 0 ? prob.lower(i) : prob.upper(i));
    }
    const Vector target = Eigen::Map<Vector>(bounds.data(), static_cast<Eigen::Index>(bounds.size()));
    auto pol = polish_solve(prob, active, target, s);
    if (!pol) return std::nullopt;
    Polished out;
    out.z = std::move(pol->first);
    out.y = std::move(pol->second);

    // Most wrong-signed multiplier.
    const double sign_tol = 1e-9 * std::max(1.0, inf_norm(out.y));
    int worst_sign = -1;
    double worst_sign_val = 0.0;
    for (int i : active) {
      const int sd = side[static_cast<std::size_t>(i)];
      const double bad = sd < 0 ? out.y(i) : sd > 0 ? -out.y(i) : 0.0;
      if (bad > sign_tol && bad > worst_sign_val) {
        worst_sign = i;
        worst_sign_val = bad;
      }
    }
    const Vector az = prob.a_mat * out.z;
    const Vector px = prob.p_mat * out.z;
    const Vector aty = prob.a_mat.transpose() * out.y;
    out.prim = inf_norm(clamp(az, prob.lower, prob.upper) - az);
    out.dual = inf_norm(px + prob.q_vec + aty);
    const double eps_prim = s.eps_abs + s.eps_rel * inf_norm(az);
    const double eps_dual = s.eps_abs + s.eps_rel * std::max({inf_norm(px), inf_norm(aty), inf_norm(prob.q_vec)});
    if (worst_sign < 0) {
      out.within_eps = out.prim <= eps_prim && out.dual <= eps_dual;
      if (out.within_eps || attempt == corrections) return out;
    } else if (attempt == corrections) {
      return std::nullopt;
    }
    if (worst_sign >= 0) {
      side[static_cast<std::size_t>(worst_sign)] = 2;
      continue;
    }
    // Most violated inactive row.
    int worst_row = -1;
    double worst_viol = eps_prim;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (side[static_cast<std::size_t>(i)] != 2) continue;
      const double lo = prob.lower(i) - az(i);
      const double hi = az(i) - prob.upper(i);
      if (std::max(lo, hi) > worst_viol) {
        worst_viol = std::max(lo, hi);
        worst_row = static_cast<int>(i);
      }
    }
    if (worst_row < 0) return out;
    side[static_cast<std::size_t>(worst_row)] = prob.lower(worst_row) - az(worst_row) > 0 ? -1 : 1;
  }
  return std::nullopt;
}

/// Diagonal equilibration: the solver iterates on
///   P' = c D P D, q' = c D q, A' = E A D, bounds' = E bounds.
struct Scaling {
  Vector d;
  Vector e;
  double c = 1.0;
};

inline Scaling ruiz_scaling(const QpProblem& prob, int passes) {
  const Eigen::Index n = prob.num_vars();
  const Eigen::Index m = prob.num_constraints();
  Scaling sc{Vector::Ones(n), Vector::Ones(m), 1.0};
  if (passes <= 0 || n == 0) return sc;
  auto safe = [](double v) { return std::clamp(v, 1e-4, 1e4); };
  Matrix p = prob.p_mat;
  Matrix a = prob.a_mat;
  Vector q = prob.q_vec;
  for (int k = 0; k < passes; ++k) {
    Vector dk(n), ek(m);
    for (Eigen::Index j = 0; j < n; ++j) {
      double col = p.col(j).cwiseAbs().maxCoeff();
      if (m > 0) col = std::max(col, a.col(j).cwiseAbs().maxCoeff());
      dk(j) = col < 1e-4 ? 1.0 : 1.0 / std::sqrt(safe(col));
    }
    for (Eigen::Index i = 0; i < m; ++i) {
      const double row = a.row(i).cwiseAbs().maxCoeff();
      ek(i) = row < 1e-4 ? 1.0 : 1.0 / std::sqrt(safe(row));
    }
    p = dk.asDiagonal() * p * dk.asDiagonal();
    a = ek.asDiagonal() * a * dk.asDiagonal();
    q = dk.cwiseProduct(q);
    sc.d = sc.d.cwiseProduct(dk);
    sc.e = sc.e.cwiseProduct(ek);

    double mean_col = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) mean_col += p.col(j).cwiseAbs().maxCoeff();
    mean_col /= static_cast<double>(n);
    const double qn = inf_norm(q);
    const double denom = std::max(mean_col, qn);
    const double gamma = denom < 1e-4 ? 1.0 : 1.0 / safe(denom);
    p *= gamma;
    q *= gamma;
    sc.c *= gamma;
  }
  return sc;
}

inline QpProblem apply_scaling(const QpProblem& prob, const Scaling& sc) {
  QpProblem out;
  out.p_mat = sc.c * (sc.d.asDiagonal() * prob.p_mat * sc.d.asDiagonal());
  out.q_vec = sc.c * sc.d.cwiseProduct(prob.q_vec);
  out.a_mat = sc.e.asDiagonal() * prob.a_mat * sc.d.asDiagonal();
  out.lower = prob.lower;
  out.upper = prob.upper;
  for (Eigen::Index i = 0; i < prob.num_constraints(); ++i) {
    if (is_finite_bound(prob.lower(i))) out.lower(i) *= sc.e(i);
    if (is_finite_bound(prob.upper(i))) out.upper(i) *= sc.e(i);
  }
  return out;
}

}  // namespace detail

/// Primal infeasibility, dual residual and complementarity of a candidate.
struct KktResiduals {
  double prim = 0.0;
  double dual = 0.0;
  double comp = 0.0;
};

inline KktResiduals kkt_residuals(const QpProblem& prob, const QpSolution& sol) {
  require_dims(sol.z_star.size() == prob.num_vars() && sol.y_star.size() == prob.num_constraints(),
               "kkt_residuals: solution dims");
  const Vector az = prob.a_mat * sol.z_star;
  KktResiduals r;
  r.prim = detail::inf_norm(detail::clamp(az, prob.lower, prob.upper) - az);
  r.dual = detail::inf_norm(prob.p_mat * sol.z_star + prob.q_vec + prob.a_mat.transpose() * sol.y_star);
  for (Eigen::Index i = 0; i < az.size(); ++i) {
    const double y = sol.y_star(i);
    double dist = 0.0;
    if (y > 0.0) dist = std::abs(prob.upper(i) - az(i));
    else if (y < 0.0) dist = std::abs(az(i) - prob.lower(i));
    r.comp = std::max(r.comp, std::abs(y) * dist);
  }
  return r;
}

enum class LpStatus { Optimal, Infeasible, Unbounded };
struct LpResult;
struct LpSettings;
inline bool constraints_feasible(const QpProblem& prob);

/// OSQP-style ADMM with fixed step size and an active-set polish step. A run
/// that ends at the iteration cap is classified Infeasible when an exact LP
/// feasibility check of lower <= A z <= upper fails.
inline QpSolution qp_solve(const QpProblem& prob, const SolverSettings& settings = {}) {
  prob.validate();
  settings.validate();
  const Eigen::Index m = prob.num_constraints();
  const detail::Scaling sc = detail::ruiz_scaling(prob, settings.scaling_iter);
  const QpProblem work = detail::apply_scaling(prob, sc);
  const Eigen::Index n = work.num_vars();

  Vector rho(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const bool lo = detail::is_finite_bound(work.lower(i));
    const bool hi = detail::is_finite_bound(work.upper(i));
    if (!lo && !hi) rho(i) = settings.free_rho;
    else if (std::abs(prob.upper(i) - prob.lower(i)) < 1e-12) rho(i) = settings.rho * settings.eq_rho_scale;
    else rho(i) = settings.rho;
  }

  Matrix reduced = work.p_mat + work.a_mat.transpose() * rho.asDiagonal() * work.a_mat;
  reduced.diagonal().array() += settings.sigma;
  const Ldlt fact(reduced);

  Vector xs = Vector::Zero(n);
  Vector zs = detail::clamp(Vector::Zero(m), work.lower, work.upper);
  Vector ys = Vector::Zero(m);
  // Unscaled views of the iterate.
  Vector x, z, y;
  auto unscale = [&] {
    x = sc.d.cwiseProduct(xs);
    z = zs.cwiseQuotient(sc.e);
    y = sc.e.cwiseProduct(ys) / sc.c;
  };

  QpSolution sol;
  sol.status = QpStatus::MaxIter;
  std::optional<detail::Polished> early;
  int it = 0;
  for (it = 1; it <= settings.max_iter; ++it) {
    const Vector xs_prev = xs;
    const Vector ys_prev = ys;
    const Vector rhs = settings.sigma * xs - work.q_vec + work.a_mat.transpose() * (rho.cwiseProduct(zs) - ys);
    const Vector x_tilde = fact.solve(rhs);
    const Vector z_tilde = work.a_mat * x_tilde;
    xs = settings.alpha * x_tilde + (1.0 - settings.alpha) * xs_prev;
    const Vector z_relaxed = settings.alpha * z_tilde + (1.0 - settings.alpha) * zs;
    const Vector z_next = detail::clamp(z_relaxed + ys.cwiseQuotient(rho), work.lower, work.upper);
    ys = ys + rho.cwiseProduct(z_relaxed - z_next);
    zs = z_next;

    if (it % settings.check_every != 0 && it != settings.max_iter) continue;
    unscale();
    const auto r = detail::residuals(prob, x, z, y, settings);
    if (r.prim <= r.eps_prim && r.dual <= r.eps_dual) {
      sol.status = QpStatus::Solved;
      break;
    }
    const Vector dy = sc.e.cwiseProduct(ys - ys_prev) / sc.c;
    const Vector dx = sc.d.cwiseProduct(xs - xs_prev);
    if (detail::primal_infeasible(prob, dy, settings.eps_prim_inf)) {
      sol.status = QpStatus::Infeasible;
      break;
    }
    if (detail::dual_infeasible(prob, dx, settings.eps_dual_inf)) {
      sol.status = QpStatus::Unbounded;
      break;
    }
    if (it == settings.lp_feasibility_check_at && !constraints_feasible(prob)) {
      sol.status = QpStatus::Infeasible;
      break;
    }
    if (settings.polish && settings.polish_every > 0 && it % settings.polish_every == 0) {
      const bool repair = settings.polish_correct_every > 0 && it % settings.polish_correct_every == 0;
      auto pol = detail::try_polish(prob, z, y, settings, repair ? settings.polish_corrections : 0);
      if (pol && pol->within_eps) {
        early = std::move(pol);
        sol.status = QpStatus::Solved;
        break;
      }
    }
  }
  unscale();
  sol.iterations = std::min(it, settings.max_iter);

  sol.z_star = x;
  sol.y_star = y;
  {
    const auto r = detail::residuals(prob, x, z, y, settings);
    const Vector ax = prob.a_mat * x;
    sol.prim_res = detail::inf_norm(detail::clamp(ax, prob.lower, prob.upper) - ax);
    sol.dual_res = r.dual;
  }
  if (sol.status == QpStatus::Infeasible || sol.status == QpStatus::Unbounded) return sol;

  if (early) {
    sol.z_star = early->z;
    sol.y_star = early->y;
    sol.prim_res = early->prim;
    sol.dual_res = early->dual;
    sol.polished = true;
    return sol;
  }
  if (settings.polish) {
    if (auto pol = detail::try_polish(prob, z, y, settings, settings.polish_corrections)) {
      const double floor = 1e-12 * (1.0 + detail::inf_norm(prob.q_vec));
      const bool better_prim = pol->prim < sol.prim_res || pol->prim <= floor;
      const bool better_dual = pol->dual < sol.dual_res || pol->dual <= floor;
      if (better_prim && better_dual) {
        sol.z_star = pol->z;
        sol.y_star = pol->y;
        sol.prim_res = pol->prim;
        sol.dual_res = pol->dual;
        sol.polished = true;
        if (sol.status == QpStatus::MaxIter && pol->within_eps) sol.status = QpStatus::Solved;
      }
    }
  }
  if (sol.status == QpStatus::MaxIter && !constraints_feasible(prob)) sol.status = QpStatus::Infeasible;
  return sol;
}

// ---------------------------------------------------------------------------
// Sensitivities

struct ActiveSetThresholds {
  double dual = 1e-6;
  double slack = 1e-6;
};

/// Rows treated as active at `sol`: equalities, plus inequalities with a
/// strictly positive multiplier. Throws DegenerateActiveSet for weakly active
/// rows (zero slack, zero multiplier).
inline std::vector<int> active_rows(const QpProblem& prob, const QpSolution& sol, const ActiveSetThresholds& th = {}) {
  std::vector<int> active;
  const Vector az = prob.a_mat * sol.z_star;
  for (Eigen::Index i = 0; i < prob.num_constraints(); ++i) {
    if (std::abs(prob.upper(i) - prob.lower(i)) < 1e-12) {
      active.push_back(static_cast<int>(i));
      continue;
    }
    const double slack = std::min(prob.upper(i) - az(i), az(i) - prob.lower(i));
    const double y = std::abs(sol.y_star(i));
    if (y > th.dual) {
      active.push_back(static_cast<int>(i));
    } else if (slack < th.slack) {
      throw Error(ErrorCode::DegenerateActiveSet, "row " + std::to_string(i) + " is weakly active");
    }
  }
  return active;
}

/// d z* / d theta by implicit differentiation of the active-set KKT system.
/// `dq_dtheta` is n x p; `dbounds_dtheta` is m x p and gives the derivative of
/// the bound of each row (only active rows are read).
inline Matrix qp_solution_jacobian(const QpProblem& prob, const QpSolution& sol, const Matrix& dq_dtheta,
                                   const Matrix& dbounds_dtheta, const ActiveSetThresholds& th = {}) {
  if (sol.status != QpStatus::Solved) throw Error(ErrorCode::InvalidArgument, "jacobian: QP not solved");
  const Eigen::Index n = prob.num_vars();
  const Eigen::Index p = dq_dtheta.cols();
  require_dims(dq_dtheta.rows() == n, "jacobian: dq_dtheta rows");
  require_dims(dbounds_dtheta.rows() == prob.num_constraints() && dbounds_dtheta.cols() == p,
               "jacobian: dbounds_dtheta shape");
  const auto active = active_rows(prob, sol, th);
  const auto k = static_cast<Eigen::Index>(active.size());

  Matrix kkt = Matrix::Zero(n + k, n + k);
  kkt.topLeftCorner(n, n) = prob.p_mat;
  Matrix rhs(n + k, p);
  rhs.topRows(n) = -dq_dtheta;
  for (Eigen::Index r = 0; r < k; ++r) {
    kkt.block(n + r, 0, 1, n) = prob.a_mat.row(active[r]);
    kkt.block(0, n + r, n, 1) = prob.a_mat.row(active[r]).transpose();
    rhs.row(n + r) = dbounds_dtheta.row(active[r]);
  }
  Eigen::FullPivLU<Matrix> lu(kkt);
  lu.setThreshold(1e-10);
  if (!lu.isInvertible()) {
    throw Error(ErrorCode::DegenerateActiveSet, "active-set KKT matrix is singular");
  }
  return lu.solve(rhs).topRows(n);
}

// ---------------------------------------------------------------------------
// Linear programming

struct LpResult {
  LpStatus status = LpStatus::Infeasible;
  Vector x;
  double value = 0.0;
};

struct LpSettings {
  double tol = 1e-10;
  /// Smallest admissible pivot element.
  double pivot_tol = 1e-7;
  /// Primal feasibility slack allowed by the Harris ratio test.
  double harris_tol = 1e-9;
  int max_pivots = 100'000;
  int refactor_every = 40;
  int degenerate_before_bland = 30;
};

namespace detail {

/// Revised simplex on   min cost'y  s.t.  cols * y = rhs, y >= 0, with rhs >= 0.
/// Columns [num_real, num_real + rows) are unit artificials that only take
/// part in phase one. Returns false when phase one leaves a positive
/// artificial sum or phase two is unbounded; `unbounded` tells which.
struct StandardFormSimplex {
  const Matrix& cols;  // rows x num_real
  const Vector& cost;  // num_real
  const Vector& rhs;   // rows, >= 0
  const LpSettings& s;

  Eigen::Index rows = 0;
  Eigen::Index num_real = 0;
  std::vector<Eigen::Index> basis;
  Matrix binv;
  Vector xb;
  bool unbounded = false;
  int since_refactor = 0;

  Vector column(Eigen::Index j) const {
    if (j < num_real) return cols.col(j);
    return Vector::Unit(rows, j - num_real);
  }

  void refactor() {
    Matrix bmat(rows, rows);
    for (Eigen::Index r = 0; r < rows; ++r) bmat.col(r) = column(basis[r]);
    Eigen::PartialPivLU<Matrix> lu(bmat);
    binv = lu.inverse();
    if (!binv.allFinite() || lu.rcond() < 1e-14) {
      throw Error(ErrorCode::LpFailure, "simplex basis became singular");
    }
    xb = binv * rhs;
    since_refactor = 0;
  }

  /// Harris two-pass ratio test: bound the step with a small feasibility
  /// slack, then take the largest pivot among rows reaching that bound. Under
  /// Bland's rule the lowest basis index among minimum ratios leaves.
  Eigen::Index harris_leave(const Vector& w, bool bland) const {
    double theta = std::numeric_limits<double>::infinity();
    for (Eigen::Index r = 0; r < rows; ++r) {
      if (w(r) > s.pivot_tol) theta = std::min(theta, (std::max(xb(r), 0.0) + s.harris_tol) / w(r));
    }
    if (!std::isfinite(theta)) return -1;
    Eigen::Index leave = -1;
    for (Eigen::Index r = 0; r < rows; ++r) {
      if (w(r) <= s.pivot_tol || std::max(xb(r), 0.0) / w(r) > theta) continue;
      if (leave < 0) {
        leave = r;
      } else if (bland ? basis[r] < basis[leave] : w(r) > w(leave)) {
        leave = r;
      }
    }
    return leave;
  }

  // phase: 1 uses artificial costs, 2 uses real costs and bars artificials.
  bool run(int phase) {
    std::vector<char> in_basis(static_cast<std::size_t>(num_real + rows), 0);
    for (auto b : basis) in_basis[b] = 1;
    auto cost_of = [&](Eigen::Index j) -> double {
      if (phase == 1) return j >= num_real ? 1.0 : 0.0;
      return j >= num_real ? 0.0 : cost(j);
    };
    int degenerate_run = 0;
    for (int pivots = 0; pivots < s.max_pivots; ++pivots) {
      if (pivots % s.refactor_every == 0) refactor();
      Vector cb(rows);
      for (Eigen::Index r = 0; r < rows; ++r) cb(r) = cost_of(basis[r]);
      const Vector lambda = binv.transpose() * cb;
      const bool bland = degenerate_run > s.degenerate_before_bland;
      const Eigen::Index limit = phase == 1 ? num_real + rows : num_real;
      const Vector reduced_real = (phase == 1 ? Vector::Zero(num_real) : Vector(cost)) - cols.transpose() * lambda;
      std::vector<std::pair<double, Eigen::Index>> candidates;
      for (Eigen::Index j = 0; j < limit; ++j) {
        if (in_basis[j]) continue;
        const double d = j < num_real ? reduced_real(j) : cost_of(j) - lambda(j - num_real);
        if (d < -s.tol * (1.0 + std::abs(cost_of(j)))) candidates.emplace_back(bland ? static_cast<double>(j) : d, j);
      }
      std::sort(candidates.begin(), candidates.end());

      // Columns whose only positive entries are below the pivot tolerance
      // are passed over; a column with no positive entry at all is a ray.
      Eigen::Index enter = -1, leave = -1;
      Vector w;
      for (const auto& [key, j] : candidates) {
        w = binv * column(j);
        leave = harris_leave(w, bland);
        if (leave >= 0) {
          enter = j;
          break;
        }
        // The phase-one objective is bounded below, so a ray there is noise.
        if (phase == 2 && w.maxCoeff() <= s.tol) {
          if (since_refactor > 0) break;
          unbounded = true;
          return false;
        }
      }
      if (enter < 0) {
        if (since_refactor > 0 && !candidates.empty()) {
          refactor();
          continue;
        }
        return true;
      }
      const double ratio = std::max(xb(leave), 0.0) / w(leave);
      degenerate_run = ratio <= 1e-14 ? degenerate_run + 1 : 0;

      // Product-form update of the basis inverse.
      const double piv = w(leave);
      xb -= ratio * w;
      xb(leave) = ratio;
      const Vector pivot_row = binv.row(leave) / piv;
      for (Eigen::Index r = 0; r < rows; ++r) {
        if (r == leave) continue;
        binv.row(r) -= w(r) * pivot_row.transpose();
      }
      binv.row(leave) = pivot_row.transpose();
      ++since_refactor;
      in_basis[basis[leave]] = 0;
      basis[leave] = enter;
      in_basis[enter] = 1;
    }
    throw Error(ErrorCode::LpFailure, "simplex pivot limit reached");
  }

  /// Returns false if the equality system is infeasible.
  bool phase_one() {
    basis.resize(rows);
    for (Eigen::Index r = 0; r < rows; ++r) basis[r] = num_real + r;
    refactor();
    run(1);
    refactor();
    double art = 0.0;
    for (Eigen::Index r = 0; r < rows; ++r) {
      if (basis[r] >= num_real) art += std::abs(xb(r));
    }
    if (art > 1e-8 * (1.0 + rhs.lpNorm<Eigen::Infinity>())) return false;
    // Drive zero-level artificials out of the basis where possible.
    for (Eigen::Index r = 0; r < rows; ++r) {
      if (basis[r] < num_real) continue;
      const Vector row_r = binv.row(r).transpose();
      const Vector entries = cols.transpose() * row_r;
      Eigen::Index pick = -1;
      double mag = s.pivot_tol;
      for (Eigen::Index j = 0; j < num_real; ++j) {
        if (std::find(basis.begin(), basis.end(), j) != basis.end()) continue;
        if (std::abs(entries(j)) > mag) {
          mag = std::abs(entries(j));
          pick = j;
        }
      }
      if (pick >= 0) {
        basis[r] = pick;
        refactor();
      }
    }
    return true;
  }
};

}  // namespace detail

/// maximize c'x subject to A x <= b with x free.
///
/// Solved through its dual (min b'y, A'y = c, y >= 0) by a dense revised
/// simplex; the optimal x is the simplex multiplier vector. The dual has only
/// dim(x) rows, which keeps the pivots cheap for the low-dimensional,
/// many-row LPs that polytope operations produce.
inline LpResult lp_maximize(const Vector& c, const Matrix& a, const Vector& b, const LpSettings& settings = {},
                            bool classify_failure = true) {
  const Eigen::Index n = c.size();
  const Eigen::Index m = a.rows();
  require_dims(a.cols() == n && b.size() == m, "lp_maximize: dims");
  LpResult result;

  // Row signs so the equality right-hand side is non-negative.
  Vector sign = Vector::Ones(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (c(i) < 0.0) sign(i) = -1.0;
  }
  const Matrix cols = sign.asDiagonal() * a.transpose();
  const Vector rhs = sign.cwiseProduct(c);

  detail::StandardFormSimplex sx{cols, b, rhs, settings, 0, 0, {}, {}, {}, false, 0};
  sx.rows = n;
  sx.num_real = m;
  bool dual_feasible = sx.phase_one();
  if (dual_feasible) {
    const bool ok = sx.run(2);
    if (!ok) {
      result.status = LpStatus::Infeasible;  // dual unbounded
      return result;
    }
    sx.refactor();
    Vector cb(n);
    for (Eigen::Index r = 0; r < n; ++r) cb(r) = sx.basis[r] < m ? b(sx.basis[r]) : 0.0;
    const Vector lambda = sx.binv.transpose() * cb;
    result.x = sign.cwiseProduct(lambda);
    result.value = c.dot(result.x);
    result.status = LpStatus::Optimal;
    return result;
  }
  if (!classify_failure) throw Error(ErrorCode::LpFailure, "phase one failed on a dual-feasible LP");

  // Dual infeasible: the primal is unbounded or infeasible. Decide with
  // min t s.t. A x - t <= b, t >= -1, whose dual is always feasible.
  Matrix a_aug(m + 1, n + 1);
  a_aug.setZero();
  a_aug.topLeftCorner(m, n) = a;
  a_aug.col(n).head(m).setConstant(-1.0);
  a_aug(m, n) = -1.0;
  Vector b_aug(m + 1);
  b_aug.head(m) = b;
  b_aug(m) = 1.0;
  Vector c_aug = Vector::Zero(n + 1);
  c_aug(n) = -1.0;
  const LpResult feas = lp_maximize(c_aug, a_aug, b_aug, settings, false);
  if (feas.status == LpStatus::Optimal && feas.x(n) <= 1e-9) {
    result.status = LpStatus::Unbounded;
    result.x = feas.x.head(n);
  } else {
    result.status = LpStatus::Infeasible;
  }
  return result;
}

/// Exact feasibility of lower <= A z <= upper. Equality rows are eliminated
/// first (z = z0 + N w with N an orthonormal nullspace basis), so the LP only
/// sees inequalities in the free directions.
inline bool constraints_feasible(const QpProblem& prob) {
  const Eigen::Index n = prob.num_vars();
  std::vector<Eigen::Index> eq;
  std::vector<std::pair<Eigen::Index, double>> rows;  // (row, sign)
  for (Eigen::Index i = 0; i < prob.num_constraints(); ++i) {
    const bool lo = detail::is_finite_bound(prob.lower(i));
    const bool hi = detail::is_finite_bound(prob.upper(i));
    if (lo && hi && std::abs(prob.upper(i) - prob.lower(i)) <= 1e-12 * (1.0 + std::abs(prob.upper(i)))) {
      eq.push_back(i);
      continue;
    }
    if (hi) rows.emplace_back(i, 1.0);
    if (lo) rows.emplace_back(i, -1.0);
  }
  Vector z0 = Vector::Zero(n);
  Matrix basis = Matrix::Identity(n, n);
  if (!eq.empty()) {
    Matrix a_eq(static_cast<Eigen::Index>(eq.size()), n);
    Vector b_eq(a_eq.rows());
    for (std::size_t k = 0; k < eq.size(); ++k) {
      a_eq.row(static_cast<Eigen::Index>(k)) = prob.a_mat.row(eq[k]);
      b_eq(static_cast<Eigen::Index>(k)) = prob.upper(eq[k]);
    }
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(a_eq);
    cod.setThreshold(1e-12);
    z0 = cod.solve(b_eq);
    if ((a_eq * z0 - b_eq).lpNorm<Eigen::Infinity>() > 1e-9 * (1.0 + b_eq.lpNorm<Eigen::Infinity>())) return false;
    const Eigen::Index rank = cod.rank();
    if (rank == n) {
      basis.resize(n, 0);
    } else {
      Eigen::JacobiSVD<Matrix> svd(a_eq, Eigen::ComputeFullV);
      basis = svd.matrixV().rightCols(n - rank);
    }
  }
  if (rows.empty()) return true;
  const Eigen::Index k = basis.cols();
  Matrix a(static_cast<Eigen::Index>(rows.size()), k);
  Vector b(a.rows());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto [i, sgn] = rows[r];
    const auto rr = static_cast<Eigen::Index>(r);
    const double bound = sgn > 0 ? prob.upper(i) : -prob.lower(i);
    a.row(rr) = sgn * prob.a_mat.row(i) * basis;
    b(rr) = bound - sgn * prob.a_mat.row(i).dot(z0);
  }
  if (k == 0) return b.minCoeff() >= -1e-9;
  return lp_maximize(Vector::Zero(k), a, b).status != LpStatus::Infeasible;
}

}  // namespace mpcnn
