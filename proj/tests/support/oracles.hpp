#pragma once

// Reference computations used by the tests. They avoid the library's solvers
// and factorizations and use plain loops wherever that is practical.

#include <mpcnn/mpc.hpp>
#include <mpcnn/network.hpp>
#include <mpcnn/numerics.hpp>
#include <mpcnn/polytope.hpp>

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

namespace oracle {

using mpcnn::Matrix;
using mpcnn::Vector;

/// Gaussian elimination with partial pivoting on a copy of the data.
/// Returns nullopt when a pivot is numerically zero.
inline std::optional<Vector> gauss_solve(const Matrix& m, const Vector& rhs) {
  const auto n = static_cast<std::size_t>(m.rows());
  std::vector<std::vector<double>> a(n, std::vector<double>(n + 1));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) a[i][j] = m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    a[i][n] = rhs(static_cast<Eigen::Index>(i));
  }
  double scale = 0.0;
  for (const auto& row : a) {
    for (std::size_t j = 0; j < n; ++j) scale = std::max(scale, std::abs(row[j]));
  }
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r) {
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    }
    if (std::abs(a[piv][c]) <= 1e-13 * std::max(scale, 1e-300)) return std::nullopt;
    std::swap(a[c], a[piv]);
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r][c] / a[c][c];
      for (std::size_t j = c; j <= n; ++j) a[r][j] -= f * a[c][j];
    }
  }
  Vector x(static_cast<Eigen::Index>(n));
  for (std::size_t i = n; i-- > 0;) {
    double s = a[i][n];
    for (std::size_t j = i + 1; j < n; ++j) s -= a[i][j] * x(static_cast<Eigen::Index>(j));
    x(static_cast<Eigen::Index>(i)) = s / a[i][i];
  }
  return x;
}

inline Matrix gauss_inverse(const Matrix& m) {
  Matrix inv(m.rows(), m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    auto col = gauss_solve(m, Vector::Unit(m.rows(), j));
    if (!col) throw std::runtime_error("gauss_inverse: singular");
    inv.col(j) = *col;
  }
  return inv;
}

struct VertexLp {
  bool feasible = false;
  double value = -std::numeric_limits<double>::infinity();
  Vector x;
};

/// max c'x s.t. A x <= b for bounded problems, by enumerating every basic
/// point (all n-row subsets) and keeping the best feasible one.
inline VertexLp lp_by_vertices(const Vector& c, const Matrix& a, const Vector& b, double feas_tol = 1e-9) {
  const auto n = static_cast<int>(a.cols());
  const auto m = static_cast<int>(a.rows());
  VertexLp best;
  std::vector<int> pick(static_cast<std::size_t>(n));
  std::function<void(int, int)> rec = [&](int start, int depth) {
    if (depth == n) {
      Matrix sub(n, n);
      Vector rhs(n);
      for (int k = 0; k < n; ++k) {
        sub.row(k) = a.row(pick[static_cast<std::size_t>(k)]);
        rhs(k) = b(pick[static_cast<std::size_t>(k)]);
      }
      auto x = gauss_solve(sub, rhs);
      if (!x) return;
      if (((a * *x - b).array() > feas_tol).any()) return;
      const double v = c.dot(*x);
      if (!best.feasible || v > best.value) best = {true, v, *x};
      return;
    }
    for (int i = start; i < m; ++i) {
      pick[static_cast<std::size_t>(depth)] = i;
      rec(i + 1, depth + 1);
    }
  };
  rec(0, 0);
  return best;
}

/// Unconstrained finite-horizon optimum in condensed form: the input
/// sequence minimizing the MPC cost with states eliminated by the dynamics.
inline Vector condensed_unconstrained_inputs(const mpcnn::MpcSpec& s, const Vector& x0) {
  const Eigen::Index n = s.n(), m = s.m(), N = s.horizon;
  // x_k = Phi_k x0 + Gam_k U
  std::vector<Matrix> phi(static_cast<std::size_t>(N + 1)), gam(static_cast<std::size_t>(N + 1));
  phi[0] = Matrix::Identity(n, n);
  gam[0] = Matrix::Zero(n, N * m);
  for (Eigen::Index k = 1; k <= N; ++k) {
    phi[static_cast<std::size_t>(k)] = s.sys.a_mat * phi[static_cast<std::size_t>(k - 1)];
    gam[static_cast<std::size_t>(k)] = s.sys.a_mat * gam[static_cast<std::size_t>(k - 1)];
    gam[static_cast<std::size_t>(k)].block(0, (k - 1) * m, n, m) += s.sys.b_mat;
  }
  Matrix h = Matrix::Zero(N * m, N * m);
  Vector g = Vector::Zero(N * m);
  for (Eigen::Index k = 1; k <= N; ++k) {
    const Matrix& w = k == N ? s.qn_mat : s.q_mat;
    const Matrix& gk = gam[static_cast<std::size_t>(k)];
    h += gk.transpose() * w * gk;
    g += gk.transpose() * w * phi[static_cast<std::size_t>(k)] * x0;
  }
  for (Eigen::Index k = 0; k < N; ++k) h.block(k * m, k * m, m, m) += s.r_mat;
  auto u = gauss_solve(h, -g);
  if (!u) throw std::runtime_error("condensed oracle: singular Hessian");
  return *u;
}

/// First-step feedback gain K_0 of the finite-horizon LQ problem (u_0 = -K_0 x_0)
/// from the backward Riccati recursion with terminal weight Q_N.
inline Matrix backward_riccati_first_gain(const mpcnn::MpcSpec& s) {
  Matrix p = s.qn_mat;
  Matrix k;
  for (int step = 0; step < s.horizon; ++step) {
    const Matrix& a = s.sys.a_mat;
    const Matrix& b = s.sys.b_mat;
    const Matrix gram = s.r_mat + b.transpose() * p * b;
    k = gauss_inverse(gram) * (b.transpose() * p * a);
    p = s.q_mat + a.transpose() * p * a - a.transpose() * p * b * k;
  }
  return k;
}

/// Central differences of f at x, step h.
inline Matrix fd_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x, double h = 1e-5) {
  const Vector f0 = f(x);
  Matrix j(f0.size(), x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    j.col(i) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return j;
}

/// Largest ||G v|| over `count` random unit directions.
inline double ball_search(const Matrix& g, mpcnn::Prng& prng, int count) {
  double best = 0.0;
  for (int i = 0; i < count; ++i) {
    Vector d = mpcnn::standard_normal(prng, g.cols());
    d.normalize();
    best = std::max(best, (g * d).norm());
  }
  return best;
}

/// Membership in Pre(target) for a single-input system: each target row
/// bounds the scalar u to a half-line; the point is in Pre iff the resulting
/// interval meets [u_lo, u_hi].
inline bool in_pre_scalar_input(const mpcnn::Polytope& target, const mpcnn::LinearSystem& sys, double u_lo, double u_hi,
                                const Vector& x) {
  double lo = u_lo, hi = u_hi;
  const Vector ax = target.a_mat() * (sys.a_mat * x);
  const Vector ab = target.a_mat() * sys.b_mat.col(0);
  for (Eigen::Index i = 0; i < ab.size(); ++i) {
    const double room = target.b_vec()(i) - ax(i);
    if (std::abs(ab(i)) < 1e-14) {
      if (room < 0.0) return false;
    } else if (ab(i) > 0.0) {
      hi = std::min(hi, room / ab(i));
    } else {
      lo = std::max(lo, room / ab(i));
    }
  }
  return lo <= hi;
}

/// Upper-tail p-value of a chi-square statistic.
inline double chi_square_p_value(double statistic, double dof) {
  boost::math::chi_squared dist(dof);
  return boost::math::cdf(boost::math::complement(dist, statistic));
}

struct PlantedQp {
  mpcnn::QpProblem prob;
  Vector z;
  Vector y;
};

/// Strictly convex QP with a known primal-dual solution: each row is made
/// active at its upper bound, active at its lower bound, an equality, or
/// inactive, and q is chosen so that stationarity holds.
inline PlantedQp planted_qp(mpcnn::Prng& prng, Eigen::Index n, Eigen::Index m) {
  Matrix r(n, n);
  for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = prng.uniform(-1.0, 1.0);
  PlantedQp out;
  out.prob.p_mat = r * r.transpose() + 0.5 * Matrix::Identity(n, n);
  out.prob.a_mat.resize(m, n);
  for (Eigen::Index i = 0; i < out.prob.a_mat.size(); ++i) out.prob.a_mat.data()[i] = prng.uniform(-1.0, 1.0);
  out.z.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) out.z(i) = prng.uniform(-2.0, 2.0);
  const Vector az = out.prob.a_mat * out.z;
  out.y = Vector::Zero(m);
  out.prob.lower.resize(m);
  out.prob.upper.resize(m);
  // Active rows are capped so the active normals stay independent.
  Eigen::Index active = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const std::size_t kind = active < n / 2 ? prng.below(4) : 3;
    const double gap1 = prng.uniform(0.1, 1.0), gap2 = prng.uniform(0.1, 1.0);
    switch (kind) {
      case 0:
        out.prob.upper(i) = az(i);
        out.prob.lower(i) = az(i) - gap1;
        out.y(i) = prng.uniform(0.1, 2.0);
        ++active;
        break;
      case 1:
        out.prob.lower(i) = az(i);
        out.prob.upper(i) = prng.below(2) ? mpcnn::kInf : az(i) + gap1;
        out.y(i) = -prng.uniform(0.1, 2.0);
        ++active;
        break;
      case 2:
        out.prob.lower(i) = out.prob.upper(i) = az(i);
        out.y(i) = prng.uniform(-2.0, 2.0);
        ++active;
        break;
      default:
        out.prob.lower(i) = prng.below(3) == 0 ? -mpcnn::kInf : az(i) - gap1;
        out.prob.upper(i) = az(i) + gap2;
        break;
    }
  }
  out.prob.q_vec = -out.prob.p_mat * out.z - out.prob.a_mat.transpose() * out.y;
  return out;
}

/// Plain-loop evaluation of a ReLU network.
inline Vector mlp_reference(const mpcnn::Mlp& net, const Vector& x) {
  std::vector<double> act(x.data(), x.data() + x.size());
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    const Matrix& w = net.weights[l];
    std::vector<double> next(static_cast<std::size_t>(w.rows()));
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      double s = net.biases[l](i);
      for (Eigen::Index j = 0; j < w.cols(); ++j) s += w(i, j) * act[static_cast<std::size_t>(j)];
      next[static_cast<std::size_t>(i)] = (l + 1 < net.weights.size()) ? std::max(0.0, s) : s;
    }
    act = std::move(next);
  }
  return Eigen::Map<Vector>(act.data(), static_cast<Eigen::Index>(act.size()));
}

/// Scalar DARE p = q + a^2 p - a^2 b^2 p^2 / (b^2 p + r) by bisection on the
/// positive root.
inline double scalar_dare(double a, double b, double q, double r) {
  auto f = [&](double p) { return q + a * a * p - a * a * b * b * p * p / (b * b * p + r) - p; };
  double lo = 0.0, hi = 1.0;
  while (f(hi) > 0.0) hi *= 2.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) > 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Feasibility of {u in U : A x + B u in target} by LP vertex enumeration over
/// the (u, t) slack problem: min t s.t. rows <= t, which for the small input
/// dimensions here is cheap.
inline double admissible_gap_by_vertices(const Vector& x, const mpcnn::LinearSystem& sys, const mpcnn::Polytope& u_set,
                                         const mpcnn::Polytope& target) {
  const Eigen::Index m = sys.input_dim();
  const Eigen::Index ru = u_set.num_rows(), rt = target.num_rows();
  Matrix a = Matrix::Zero(ru + rt + 1, m + 1);
  Vector b(ru + rt + 1);
  a.topLeftCorner(ru, m) = u_set.a_mat();
  a.block(0, m, ru, 1).setConstant(-1.0);
  b.head(ru) = u_set.b_vec();
  a.block(ru, 0, rt, m) = target.a_mat() * sys.b_mat;
  a.block(ru, m, rt, 1).setConstant(-1.0);
  b.segment(ru, rt) = target.b_vec() - target.a_mat() * sys.a_mat * x;
  // t >= -1 keeps the problem bounded.
  a(ru + rt, m) = -1.0;
  b(ru + rt) = 1.0;
  Vector c = Vector::Zero(m + 1);
  c(m) = -1.0;
  const VertexLp lp = lp_by_vertices(c, a, b, 1e-12);
  return -lp.value;
}

}  // namespace oracle
