#include "support/oracles.hpp"

#include <mpcnn/mpc.hpp>
#include <mpcnn/optimize.hpp>

#include <gtest/gtest.h>

using namespace mpcnn;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

QpProblem box_qp(const Matrix& p, const Vector& q, double lo, double hi) {
  const Eigen::Index n = q.size();
  return {p, q, Matrix::Identity(n, n), Vector::Constant(n, lo), Vector::Constant(n, hi)};
}

double max_abs(const Vector& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

}  // namespace

TEST(QpSolve, SeparableBoxQp) {
  const QpSolution s = qp_solve(box_qp(Matrix::Identity(2, 2), vec({-2, 0}), -1, 1));
  ASSERT_EQ(s.status, QpStatus::Solved);
  EXPECT_LE(max_abs(s.z_star - vec({1, 0})), 1e-6);
}

TEST(QpSolve, LinearProgramMode) {
  const QpSolution s = qp_solve(box_qp(Matrix::Zero(2, 2), vec({-1, -1}), -1, 1));
  ASSERT_EQ(s.status, QpStatus::Solved);
  EXPECT_LE(max_abs(s.z_star - vec({1, 1})), 1e-6);
}

TEST(QpSolve, UnconstrainedMpcMatchesCondensedOracle) {
  MpcSpec spec = double_integrator_2d();
  const Vector x0 = vec({1, 1});
  QpProblem qp = build_mpc_qp(spec, x0);
  // Keep only the dynamics rows; drop the inequality rows entirely.
  const Eigen::Index rows = layout_of(spec).num_dynamics_rows();
  qp.a_mat = Matrix(qp.a_mat.topRows(rows));
  qp.lower = Vector(qp.lower.head(rows));
  qp.upper = Vector(qp.upper.head(rows));
  const QpSolution s = qp_solve(qp);
  ASSERT_EQ(s.status, QpStatus::Solved);
  const Vector u_ref = oracle::condensed_unconstrained_inputs(spec, x0);
  const MpcLayout lay = layout_of(spec);
  Vector x = x0;
  for (Eigen::Index k = 0; k < lay.horizon; ++k) {
    const Vector u = u_ref.segment(k * lay.m, lay.m);
    EXPECT_LE(max_abs(s.z_star.segment(lay.input(k), lay.m) - u), 1e-6);
    x = spec.sys.step(x, u);
    EXPECT_LE(max_abs(s.z_star.segment(lay.state(k + 1), lay.n) - x), 1e-6);
  }
}

TEST(QpSolve, RecoversPlantedKktSolutions) {
  Prng prng(2025);
  double worst_z = 0.0, worst_y = 0.0;
  for (int t = 0; t < 500; ++t) {
    const auto n = static_cast<Eigen::Index>(1 + prng.below(20));
    const auto m = static_cast<Eigen::Index>(prng.below(41));
    const oracle::PlantedQp pq = oracle::planted_qp(prng, n, m);
    const QpSolution s = qp_solve(pq.prob);
    ASSERT_EQ(s.status, QpStatus::Solved) << "instance " << t;
    worst_z = std::max(worst_z, max_abs(s.z_star - pq.z));
    worst_y = std::max(worst_y, max_abs(s.y_star - pq.y));
    const KktResiduals r = kkt_residuals(pq.prob, s);
    ASSERT_LE(r.prim, 1e-5);
    ASSERT_LE(r.dual, 1e-5);
  }
  EXPECT_LE(worst_z, 1e-5);
  EXPECT_LE(worst_y, 1e-5);
}

TEST(QpSolve, InvariantToObjectiveScaling) {
  Prng prng(4);
  for (int t = 0; t < 20; ++t) {
    oracle::PlantedQp pq = oracle::planted_qp(prng, 6, 10);
    const QpSolution a = qp_solve(pq.prob);
    pq.prob.p_mat *= 250.0;
    pq.prob.q_vec *= 250.0;
    const QpSolution b = qp_solve(pq.prob);
    ASSERT_EQ(a.status, QpStatus::Solved);
    ASSERT_EQ(b.status, QpStatus::Solved);
    EXPECT_LE(max_abs(a.z_star - b.z_star), 1e-6);
    EXPECT_LE(max_abs(250.0 * a.y_star - b.y_star), 1e-4 * 250.0);
  }
}

TEST(QpSolve, DetectsPrimalInfeasibility) {
  Matrix a(2, 1);
  a << 1, 1;
  const QpProblem qp{Matrix::Identity(1, 1), Vector::Zero(1), a, vec({1, -kInf}), vec({kInf, 0})};
  EXPECT_EQ(qp_solve(qp).status, QpStatus::Infeasible);
}

TEST(QpSolve, DetectsUnboundedLp) {
  Matrix a(1, 2);
  a << 1, 0;
  const QpProblem qp{Matrix::Zero(2, 2), vec({0, -1}), a, vec({-1}), vec({1})};
  EXPECT_EQ(qp_solve(qp).status, QpStatus::Unbounded);
}

TEST(QpSolve, IterationCapReportsMaxIter) {
  Prng prng(9);
  const oracle::PlantedQp pq = oracle::planted_qp(prng, 10, 20);
  SolverSettings st;
  st.max_iter = 5;
  st.polish = false;
  st.polish_every = 0;
  EXPECT_EQ(qp_solve(pq.prob, st).status, QpStatus::MaxIter);
}

TEST(QpSolve, RejectsInvalidInput) {
  QpProblem qp = box_qp(Matrix::Identity(2, 2), Vector::Zero(2), -1, 1);
  qp.lower(0) = 2.0;
  EXPECT_THROW(qp_solve(qp), Error);
  QpProblem asym = box_qp(Matrix::Identity(2, 2), Vector::Zero(2), -1, 1);
  asym.p_mat(0, 1) = 1.0;
  EXPECT_THROW(qp_solve(asym), Error);
  SolverSettings bad;
  bad.alpha = 2.0;
  EXPECT_THROW(qp_solve(box_qp(Matrix::Identity(2, 2), Vector::Zero(2), -1, 1), bad), Error);
}

TEST(KktResiduals, PerturbationRaisesDualResidual) {
  Prng prng(10);
  const oracle::PlantedQp pq = oracle::planted_qp(prng, 5, 8);
  QpSolution s = qp_solve(pq.prob);
  const double before = kkt_residuals(pq.prob, s).dual;
  s.z_star(0) += 0.1;
  EXPECT_GT(kkt_residuals(pq.prob, s).dual, before);
}

TEST(KktResiduals, ConstructedUnconstrainedOptimumIsExact) {
  Matrix p(2, 2);
  p << 2, 0.5, 0.5, 1;
  const Vector z = vec({0.3, -0.7});
  const QpProblem qp{p, -p * z, Matrix(0, 2), Vector(0), Vector(0)};
  QpSolution s;
  s.z_star = z;
  s.y_star = Vector(0);
  const KktResiduals r = kkt_residuals(qp, s);
  EXPECT_EQ(r.prim, 0.0);
  EXPECT_EQ(r.dual, 0.0);
  EXPECT_EQ(r.comp, 0.0);
}

TEST(QpJacobian, UnconstrainedIsMinusPInverse) {
  Matrix p(2, 2);
  p << 3, 1, 1, 2;
  const QpProblem qp{p, vec({1, -1}), Matrix(0, 2), Vector(0), Vector(0)};
  const QpSolution s = qp_solve(qp);
  ASSERT_EQ(s.status, QpStatus::Solved);
  const Matrix jac = qp_solution_jacobian(qp, s, Matrix::Identity(2, 2), Matrix(0, 2));
  EXPECT_LE((jac + oracle::gauss_inverse(p)).cwiseAbs().maxCoeff(), 1e-9);
  const Matrix fd = oracle::fd_jacobian(
      [&](const Vector& q) {
        QpProblem pert = qp;
        pert.q_vec = q;
        return Vector(qp_solve(pert).z_star);
      },
      qp.q_vec);
  EXPECT_LE((jac - fd).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(QpJacobian, ClampedScalarHasZeroSensitivity) {
  // min (z - 3)^2 s.t. z <= 2, written with q = -2 q_hat.
  const QpProblem qp{Matrix::Constant(1, 1, 2.0), vec({-6}), Matrix::Identity(1, 1), vec({-kInf}), vec({2})};
  const QpSolution s = qp_solve(qp);
  ASSERT_NEAR(s.z_star(0), 2.0, 1e-9);
  const Matrix jac = qp_solution_jacobian(qp, s, Matrix::Constant(1, 1, -2.0), Matrix::Zero(1, 1));
  EXPECT_NEAR(jac(0, 0), 0.0, 1e-12);
}

TEST(QpJacobian, PlantedProblemsMatchFiniteDifferences) {
  Prng prng(77);
  int checked = 0;
  for (int t = 0; t < 30; ++t) {
    const oracle::PlantedQp pq = oracle::planted_qp(prng, 6, 9);
    const QpSolution s = qp_solve(pq.prob);
    ASSERT_EQ(s.status, QpStatus::Solved);
    // theta shifts q along a random direction and every bound by theta * d.
    const Vector dq = standard_normal(prng, 6);
    const Vector db = standard_normal(prng, 9);
    Matrix jac;
    try {
      jac = qp_solution_jacobian(pq.prob, s, Matrix(dq), Matrix(db));
    } catch (const Error& e) {
      ASSERT_EQ(e.code(), ErrorCode::DegenerateActiveSet);
      continue;
    }
    auto solve_at = [&](const Vector& th) {
      QpProblem p = pq.prob;
      p.q_vec += th(0) * dq;
      for (Eigen::Index i = 0; i < 9; ++i) {
        if (std::abs(p.lower(i)) < 0.5 * kInf) p.lower(i) += th(0) * db(i);
        if (std::abs(p.upper(i)) < 0.5 * kInf) p.upper(i) += th(0) * db(i);
      }
      return Vector(qp_solve(p).z_star);
    };
    const Matrix fd = oracle::fd_jacobian(solve_at, Vector::Zero(1));
    EXPECT_LE((jac - fd).cwiseAbs().maxCoeff(), 1e-4) << "instance " << t;
    ++checked;
  }
  EXPECT_GE(checked, 20);
}

TEST(LpMaximize, MatchesVertexEnumeration) {
  Prng prng(31);
  for (int t = 0; t < 300; ++t) {
    const auto n = static_cast<Eigen::Index>(1 + prng.below(3));
    const auto m = static_cast<Eigen::Index>(2 * n + prng.below(6));
    Matrix a(m + 2 * n, n);
    Vector b(m + 2 * n);
    for (Eigen::Index i = 0; i < m; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) a(i, j) = prng.uniform(-1, 1);
      b(i) = prng.uniform(-0.5, 1.5);
    }
    a.bottomRows(2 * n) << Matrix::Identity(n, n), -Matrix::Identity(n, n);
    b.tail(2 * n).setConstant(4.0);
    const Vector c = standard_normal(prng, n);
    const LpResult lp = lp_maximize(c, a, b);
    const oracle::VertexLp ref = oracle::lp_by_vertices(c, a, b);
    if (!ref.feasible) {
      ASSERT_EQ(lp.status, LpStatus::Infeasible) << "instance " << t;
      continue;
    }
    ASSERT_EQ(lp.status, LpStatus::Optimal) << "instance " << t;
    ASSERT_NEAR(lp.value, ref.value, 1e-8 * (1 + std::abs(ref.value))) << "instance " << t;
    ASSERT_LE((a * lp.x - b).maxCoeff(), 1e-8);
  }
}

TEST(LpMaximize, ClassifiesUnboundedAndInfeasible) {
  Matrix a(1, 2);
  a << 1, 0;
  EXPECT_EQ(lp_maximize(vec({0, 1}), a, vec({1})).status, LpStatus::Unbounded);
  Matrix b(2, 1);
  b << 1, -1;
  EXPECT_EQ(lp_maximize(vec({1}), b, vec({0, -1})).status, LpStatus::Infeasible);
}

TEST(QpSolve, LinearProgramModeMatchesVertexEnumeration) {
  Prng prng(32);
  for (int t = 0; t < 40; ++t) {
    const Eigen::Index n = 2;
    Matrix a(6, n);
    Vector b(6);
    for (Eigen::Index i = 0; i < 4; ++i) {
      a.row(i) = standard_normal(prng, n).transpose();
      b(i) = prng.uniform(0.5, 1.5);
    }
    a.bottomRows(2) << 1, 0, 0, 1;
    b.tail(2).setConstant(3.0);
    Matrix full(8, n);
    full << a, -Matrix::Identity(n, n);
    Vector bf(8);
    bf << b, 3.0, 3.0;
    const Vector c = standard_normal(prng, n);
    const oracle::VertexLp ref = oracle::lp_by_vertices(c, full, bf);
    ASSERT_TRUE(ref.feasible);
    const QpProblem qp{Matrix::Zero(n, n), -c, full, Vector::Constant(8, -kInf), bf};
    const QpSolution s = qp_solve(qp);
    ASSERT_EQ(s.status, QpStatus::Solved);
    EXPECT_NEAR(c.dot(s.z_star), ref.value, 1e-5 * (1 + std::abs(ref.value))) << "instance " << t;
  }
}
