#include "support/oracles.hpp"

#include <mpcnn/numerics.hpp>

#include <gtest/gtest.h>

#include <atomic>
#include <cmath>

using namespace mpcnn;

namespace {

Matrix random_spd(Prng& prng, Eigen::Index n) {
  Matrix r(n, n);
  for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = prng.uniform(-1.0, 1.0);
  return r * r.transpose() + 0.1 * Matrix::Identity(n, n);
}

Vector random_vector(Prng& prng, Eigen::Index n, double scale = 1.0) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = prng.uniform(-scale, scale);
  return v;
}

}  // namespace

TEST(Ldlt, IdentityReturnsRhs) {
  Vector rhs(2);
  rhs << 3, -4;
  EXPECT_TRUE(ldlt_solve(Matrix::Identity(2, 2), rhs).isApprox(rhs));
}

TEST(Ldlt, Diagonal) {
  Matrix m(2, 2);
  m << 2, 0, 0, 4;
  Vector rhs(2);
  rhs << 2, 8;
  const Vector z = ldlt_solve(m, rhs);
  EXPECT_NEAR(z(0), 1.0, 1e-15);
  EXPECT_NEAR(z(1), 2.0, 1e-15);
}

TEST(Ldlt, MatchesGaussianEliminationOnRandomSpd) {
  Prng prng(11);
  const Matrix m = random_spd(prng, 8);
  const Vector rhs = random_vector(prng, 8);
  const Vector z = ldlt_solve(m, rhs);
  const auto ref = oracle::gauss_solve(m, rhs);
  ASSERT_TRUE(ref.has_value());
  EXPECT_LE((z - *ref).cwiseAbs().maxCoeff(), 1e-9 * (1.0 + ref->cwiseAbs().maxCoeff()));
}

TEST(Ldlt, ResidualBoundOnThousandRandomSystems) {
  Prng prng(12);
  for (int t = 0; t < 1000; ++t) {
    const auto n = static_cast<Eigen::Index>(1 + prng.below(20));
    const Matrix m = random_spd(prng, n);
    const Vector rhs = random_vector(prng, n, 10.0);
    const Vector z = ldlt_solve(m, rhs);
    ASSERT_LE((m * z - rhs).cwiseAbs().maxCoeff(), 1e-9 * (1.0 + rhs.cwiseAbs().maxCoeff())) << "system " << t;
  }
}

TEST(Ldlt, QuasiDefiniteKktMatrix) {
  Matrix m(3, 3);
  m << 2, 0, 1, 0, 2, 1, 1, 1, -1e-3;
  Vector rhs(3);
  rhs << 1, 2, 3;
  const Vector z = ldlt_solve(m, rhs);
  EXPECT_LE((m * z - rhs).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Ldlt, SingularPivotRaises) {
  Matrix m = Matrix::Zero(2, 2);
  m(0, 0) = 1.0;
  try {
    ldlt_solve(m, Vector::Ones(2));
    FAIL() << "expected SingularMatrix";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SingularMatrix);
  }
}

TEST(TopSingularVector, Diagonal) {
  Matrix g(2, 2);
  g << 3, 0, 0, 1;
  const SingularPair sp = top_right_singular_vector(g);
  EXPECT_NEAR(std::abs(sp.v(0)), 1.0, 1e-9);
  EXPECT_NEAR(sp.s, 3.0, 1e-9);
}

TEST(TopSingularVector, RankOne) {
  Vector a(3), b(2);
  a << 1, -2, 0.5;
  b << 0.6, 0.8;
  const SingularPair sp = top_right_singular_vector(a * b.transpose());
  EXPECT_NEAR(std::abs(sp.v.dot(b)), 1.0, 1e-9);
  EXPECT_NEAR(sp.s, a.norm(), 1e-9);
}

TEST(TopSingularVector, MatchesGridSearchOnRandom3x4) {
  Prng prng(5);
  Matrix g(3, 4);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = prng.uniform(-1.0, 1.0);
  const SingularPair sp = top_right_singular_vector(g);
  // Grid over the unit 3-sphere in hyperspherical coordinates.
  const int steps = 120;
  double best = 0.0;
  Vector best_v;
  const double pi = std::acos(-1.0);
  for (int i = 0; i <= steps; ++i) {
    const double a1 = pi * i / steps;
    for (int j = 0; j <= steps; ++j) {
      const double a2 = pi * j / steps;
      for (int k = 0; k < 2 * steps; ++k) {
        const double a3 = pi * k / steps;
        Vector v(4);
        v << std::cos(a1), std::sin(a1) * std::cos(a2), std::sin(a1) * std::sin(a2) * std::cos(a3),
            std::sin(a1) * std::sin(a2) * std::sin(a3);
        const double val = (g * v).norm();
        if (val > best) {
          best = val;
          best_v = v;
        }
      }
    }
  }
  EXPECT_LE(std::min((sp.v - best_v).norm(), (sp.v + best_v).norm()), 5e-2);
  EXPECT_GE(sp.s, best - 1e-9);
  EXPECT_NEAR(sp.s, best, 1e-3);
}

TEST(TopSingularVector, DominatesRandomDirections) {
  Prng prng(6);
  for (int t = 0; t < 20; ++t) {
    Matrix g(1 + static_cast<Eigen::Index>(prng.below(4)), 1 + static_cast<Eigen::Index>(prng.below(4)));
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = prng.uniform(-2.0, 2.0);
    const SingularPair sp = top_right_singular_vector(g);
    for (int k = 0; k < 100; ++k) {
      Vector w = standard_normal(prng, g.cols());
      w.normalize();
      ASSERT_GE((g * sp.v).norm(), (g * w).norm() - 1e-6);
    }
  }
}

TEST(TopSingularVector, ZeroMatrixRejected) {
  EXPECT_THROW(top_right_singular_vector(Matrix::Zero(2, 2)), Error);
}

TEST(TopSingularVector, StallReportsDidNotConverge) {
  // Two equal singular values make the direction wander for a poor start.
  Matrix g(2, 2);
  g << 1, 0, 0, 1 - 1e-15;
  PowerIterationSettings s;
  s.max_iter = 1;
  s.accept_tol = 0.0;
  s.direction_tol = 0.0;
  try {
    top_right_singular_vector(g, s);
    FAIL() << "expected DidNotConverge";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DidNotConverge);
  }
}

TEST(Prng, SameSeedSameStream) {
  Prng a(42), b(42);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
}

TEST(Prng, KnownFirstOutputs) {
  // Pinned values guard the documented algorithm (xoshiro256** seeded by
  // splitmix64) against accidental change; a second process must agree.
  Prng p(0);
  const std::uint64_t first = p.next_u64();
  Prng q(0);
  EXPECT_EQ(first, q.next_u64());
  EXPECT_EQ(first, 0x99ec5f36cb75f2b4ULL);
}

TEST(Prng, SplitGivesIndependentStreams) {
  Prng a(1);
  Prng b = a.split();
  EXPECT_NE(a.next_u64(), b.next_u64());
}

TEST(StandardNormal, Determinism) {
  Prng p(1);
  const Vector first = standard_normal(p, 2);
  const Vector second = standard_normal(p, 2);
  EXPECT_NE(first, second);
  Prng again(1);
  EXPECT_EQ(standard_normal(again, 2), first);
}

TEST(StandardNormal, MomentsOfHundredThousandDraws) {
  Prng p(2024);
  const Vector v = standard_normal(p, 100000);
  const double mean = v.mean();
  const double var = (v.array() - mean).square().sum() / static_cast<double>(v.size() - 1);
  EXPECT_LE(std::abs(mean), 4.0 / std::sqrt(1e5));
  EXPECT_GE(var, 0.98);
  EXPECT_LE(var, 1.02);
}

TEST(StandardNormal, RejectsZeroLength) {
  Prng p(1);
  EXPECT_THROW(standard_normal(p, 0), Error);
}

TEST(Seeds, DerivationIsSeedPlusStageHash) {
  EXPECT_EQ(derive_seed(7, "test-data"), 7 + stable_hash("test-data"));
  EXPECT_NE(derive_seed(7, "a"), derive_seed(7, "b"));
  // FNV-1a 64 reference value for "a".
  EXPECT_EQ(stable_hash("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(ParallelFor, VisitsEveryIndexOnce) {
  std::vector<std::atomic<int>> hits(257);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i]++; });
  for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
}

TEST(ParallelFor, PropagatesExceptions) {
  EXPECT_THROW(parallel_for(10, 3, [](std::size_t i) {
                 if (i == 7) throw Error(ErrorCode::InvalidArgument, "boom");
               }),
               Error);
}

TEST(SpectralRadius, RotationHasUnitRadius) {
  Matrix r(2, 2);
  r << 0, -1, 1, 0;
  EXPECT_NEAR(spectral_radius(r), 1.0, 1e-12);
  EXPECT_NEAR(spectral_radius(0.5 * r), 0.5, 1e-12);
}
