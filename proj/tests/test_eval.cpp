#include <mpcnn/eval.hpp>

#include <gtest/gtest.h>

#include <sstream>

using namespace mpcnn;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

struct Fixture2d {
  MpcSpec spec = double_integrator_2d();
  Polytope cinf = max_control_invariant(spec.sys, spec.x_set, spec.u_set).set;
  ProjectionSpec ps = ProjectionSpec::build(spec.sys, spec.u_set, cinf);
};

const Fixture2d& fx() {
  static const Fixture2d f;
  return f;
}

HitAndRunConfig seeded(std::uint64_t s) {
  HitAndRunConfig c;
  c.seed = s;
  return c;
}

}  // namespace

TEST(Nmse, ExactMatchHitsFloor) {
  const std::vector<Vector> t{vec({1, 2}), vec({-3, 0})};
  EXPECT_EQ(nmse(t, t), -300.0);
}

TEST(Nmse, DoubledPredictionsGiveZeroDb) {
  const std::vector<Vector> t{vec({1}), vec({-2}), vec({0.5})};
  std::vector<Vector> p;
  for (const auto& v : t) p.push_back(2.0 * v);
  EXPECT_NEAR(nmse(p, t), 0.0, 1e-12);
}

TEST(Nmse, TenthOfEnergyIsMinusTenDb) {
  const std::vector<Vector> t{vec({1, 0}), vec({0, 3})};
  // error energy 1.0 = 0.1 * reference energy 10.
  const std::vector<Vector> p{vec({1.6, 0.0}), vec({0.0, 3.8})};
  EXPECT_NEAR(nmse(p, t), -10.0, 1e-12);
}

TEST(Nmse, GuardsBadInput) {
  try {
    nmse({vec({1})}, {vec({0})});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ZeroReference);
  }
  EXPECT_THROW(nmse({vec({1})}, {}), Error);
}

TEST(Simulate, OriginStaysAtOrigin) {
  for (const Controller& c : {Controller::mpc(fx().spec), Controller::lqr(fx().spec),
                              Controller::mpc(fx().spec, Rollout::OpenLoop)}) {
    const TrajectoryResult tr = simulate(c, fx().spec, Vector::Zero(2));
    EXPECT_EQ(tr.cost, 0.0);
    for (const auto& x : tr.states) EXPECT_EQ(x, Vector::Zero(2));
    EXPECT_EQ(tr.violations, 0);
  }
}

TEST(Simulate, OpenLoopRolloutCostIsJStar) {
  Prng prng(3);
  for (int t = 0; t < 20; ++t) {
    const Vector x0 = vec({prng.uniform(-4, 4), prng.uniform(-2, 2)});
    if (!fx().cinf.contains(x0)) continue;
    const TrajectoryResult tr = simulate(Controller::mpc(fx().spec, Rollout::OpenLoop), fx().spec, x0);
    EXPECT_NEAR(tr.cost, solve_mpc(fx().spec, x0).j_star, 1e-6 * (1 + tr.cost));
    EXPECT_EQ(tr.violations, 0);
  }
}

TEST(Simulate, RecedingEqualsOpenLoopWhenTerminalWeightIsRiccati) {
  // With Q_N = P (DARE) and inactive constraints the receding law is the
  // fixed LQR gain, so re-solving reproduces the first plan.
  MpcSpec s = fx().spec;
  s.qn_mat = dare_solve(s.sys, s.q_mat, s.r_mat);
  const Vector x0 = vec({1, 0});
  const TrajectoryResult tr = simulate(Controller::mpc(s), s, x0);
  EXPECT_NEAR(tr.cost, solve_mpc(s, x0).j_star, 1e-6);
}

TEST(Simulate, FailingControllerIsReported) {
  try {
    simulate(Controller::mpc(fx().spec), fx().spec, vec({4.9, 4.9}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ControllerFailure);
  }
}

TEST(Simulate, LqrInputsAreClippedToInputSet) {
  const TrajectoryResult tr = simulate(Controller::lqr(fx().spec), fx().spec, vec({-4.5, 3}), 10);
  for (const auto& u : tr.inputs) EXPECT_LE(std::abs(u(0)), 2.0 + 1e-9);
}

TEST(Simulate, ProjectionNetworkNeverViolates) {
  Prng prng(5);
  const std::vector<Vector> x0s = hit_and_run(fx().cinf, 100, seeded(6));
  for (int t = 0; t < 5; ++t) {
    const Mlp net = Mlp::random({2, 8, 1}, prng);
    Mlp wild = net;
    wild.weights.back() *= 20.0;  // large raw outputs
    for (const Mlp& m : {net, wild}) {
      for (const Vector& x0 : x0s) {
        const TrajectoryResult tr = simulate(Controller::projection_nn(m, fx().ps), fx().spec, x0, 10);
        ASSERT_EQ(tr.violations, 0);
      }
    }
  }
}

TEST(NormalizedCost, ZeroInitialStateRaises) {
  const TrajectoryResult tr = simulate(Controller::mpc(fx().spec), fx().spec, Vector::Zero(2));
  try {
    normalized_cost(tr, fx().spec);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ZeroInitialState);
  }
}

TEST(NormalizedCost, IdentitySystemWithZeroInputIsTwo) {
  MpcSpec s;
  s.sys.a_mat = Matrix::Identity(2, 2);
  s.sys.b_mat = vec({0, 1});
  s.q_mat = s.qn_mat = Matrix::Identity(2, 2);
  s.r_mat = Matrix::Identity(1, 1);
  s.horizon = 1;
  s.x_set = Polytope::symmetric_box(Vector::Constant(2, 10.0));
  s.u_set = Polytope::symmetric_box(Vector::Ones(1));
  const TrajectoryResult tr = simulate(Controller::bbnn(Mlp::zeros({2, 1})), s, vec({1.5, -0.5}));
  EXPECT_DOUBLE_EQ(normalized_cost(tr, s), 2.0);
}

TEST(CostComparison, OpenLoopOptimumLowerBoundsFeasibleRollouts) {
  Prng prng(9);
  const Mlp net = Mlp::random({2, 8, 1}, prng);
  const std::vector<Controller> ctrls{Controller::mpc(fx().spec, Rollout::OpenLoop), Controller::mpc(fx().spec),
                                      Controller::lqr(fx().spec), Controller::projection_nn(net, fx().ps)};
  const CostTable table = cost_comparison(fx().spec, fx().cinf, ctrls, 30, seeded(10), 2);
  ASSERT_EQ(table.rows.size(), 30u * 4u);
  ASSERT_EQ(table.summary.size(), 4u);
  for (std::size_t t = 0; t < 30; ++t) {
    const double j_star = table.j_n(t, "MpcOracle");
    for (const CostRow& r : table.rows) {
      if (r.traj_id == t && r.violations == 0) {
        EXPECT_LE(j_star, r.j_n + 1e-6) << r.controller;
      }
    }
  }
  EXPECT_EQ(table.summary[3].total_violations, 0);
  EXPECT_THROW(table.j_n(0, "Nobody"), Error);
}

TEST(CostComparison, SummaryAndCsv) {
  const std::vector<CostRow> rows{{0, "A", 1.0, 0}, {1, "A", 3.0, 2}, {2, "A", 2.0, 0}, {0, "B", 4.0, 1}};
  const auto summary = summarize(rows, {"A", "B"});
  EXPECT_DOUBLE_EQ(summary[0].mean, 2.0);
  EXPECT_DOUBLE_EQ(summary[0].median, 2.0);
  EXPECT_EQ(summary[0].total_violations, 2);
  EXPECT_EQ(summary[0].trajectories_with_violations, 1);
  CostTable table;
  table.rows = rows;
  table.summary = summary;
  std::ostringstream a, b;
  write_cost_csv(a, table);
  write_cost_summary_csv(b, table);
  EXPECT_EQ(a.str().substr(0, a.str().find('\n')), "traj_id,controller,j_n,violations");
  EXPECT_EQ(b.str().substr(0, b.str().find('\n')), "controller,mean_j_n,median_j_n,total_violations,trajectories_with_violations");
  EXPECT_NE(a.str().find("1,A,3,2"), std::string::npos);
}

TEST(CostComparison, ThreadCountDoesNotChangeTable) {
  const std::vector<Controller> ctrls{Controller::mpc(fx().spec, Rollout::OpenLoop), Controller::lqr(fx().spec)};
  std::ostringstream a, b;
  write_cost_csv(a, cost_comparison(fx().spec, fx().cinf, ctrls, 12, seeded(11), 1));
  write_cost_csv(b, cost_comparison(fx().spec, fx().cinf, ctrls, 12, seeded(11), 3));
  EXPECT_EQ(a.str(), b.str());
}

TEST(NmseCurve, RowLayoutAndValidation) {
  const Dataset test = generate(fx().spec, fx().cinf, 50, seeded(12));
  NmseCurveConfig cfg;
  cfg.sizes = {20, 40};
  cfg.seeds = {1, 2};
  cfg.train.epochs = 3;
  cfg.widths = {2, 8, 1};
  const auto rows = nmse_curve(fx().spec, fx().cinf, fx().ps, test, cfg);
  EXPECT_EQ(rows.size(), 2u * 2u * 2u);
  for (const auto& r : rows) EXPECT_TRUE(std::isfinite(r.nmse_db));
  EXPECT_NO_THROW(mean_nmse(rows, 40, Architecture::ProjectionNN));
  EXPECT_THROW(mean_nmse(rows, 30, Architecture::BBNN), Error);

  cfg.sizes = {20};
  cfg.seeds = {1};
  EXPECT_EQ(nmse_curve(fx().spec, fx().cinf, fx().ps, test, cfg).size(), 2u);

  cfg.sizes = {40, 20};
  EXPECT_THROW(nmse_curve(fx().spec, fx().cinf, fx().ps, test, cfg), Error);
  cfg.sizes = {20};
  EXPECT_THROW(nmse_curve(fx().spec, fx().ps, test, cfg, {}), Error);
  EXPECT_THROW(nmse_curve(fx().spec, fx().ps, test, cfg, {test.head(10)}), Error);

  std::ostringstream os;
  write_nmse_csv(os, rows);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "size,arch,seed,nmse_db");
}

TEST(NmseCurve, NestedTrainingSetsComeFromOnePool) {
  const Dataset test = generate(fx().spec, fx().cinf, 30, seeded(13));
  NmseCurveConfig cfg;
  cfg.sizes = {10, 25};
  cfg.seeds = {4};
  cfg.train.epochs = 2;
  cfg.widths = {2, 4, 1};
  const Dataset pool = nmse_training_pool(fx().spec, fx().cinf, 4, 25, TargetMode::FirstInput, cfg.sampler);
  const auto direct = nmse_curve(fx().spec, fx().cinf, fx().ps, test, cfg);
  const auto pooled = nmse_curve(fx().spec, fx().ps, test, cfg, {pool});
  ASSERT_EQ(direct.size(), pooled.size());
  for (std::size_t i = 0; i < direct.size(); ++i) EXPECT_EQ(direct[i].nmse_db, pooled[i].nmse_db);
}

TEST(EndToEnd, BlackBoxNetworkBeatsZeroDb) {
  const Dataset train_set = generate(fx().spec, fx().cinf, 1000, seeded(14));
  const Dataset test = generate(fx().spec, fx().cinf, 500, seeded(15));
  TrainConfig cfg;
  cfg.epochs = 100;
  const TrainResult r = train(Mlp::random({2, 32, 32, 1}, 16), train_set, cfg, Architecture::BBNN);
  const double db = nmse(predict(Architecture::BBNN, r.net, nullptr, test), test.targets);
  EXPECT_TRUE(std::isfinite(db));
  EXPECT_LT(db, 0.0);
}
