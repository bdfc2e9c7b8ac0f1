#include "gsde/dynamics.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <string>
#include <vector>

namespace {

using gsde::ControlPolicy;
using gsde::ControlValue;
using gsde::Domain;
using gsde::PathStreams;
using gsde::Refinement;
using gsde::SdeModel;
using gsde::SimulationConfig;
using gsde::expr::Expression;

using Vec = std::vector<double>;

std::vector<Expression> exprs(std::initializer_list<const char*> texts, int n) {
  std::vector<Expression> out;
  for (const char* t : texts) out.push_back(gsde::expr::parse(t, n));
  return out;
}

ControlValue scalar_control(double gamma, double mu) {
  return {Eigen::MatrixXd::Constant(1, 1, gamma), Eigen::VectorXd::Constant(1, mu)};
}

SdeModel brownian_1d() { return SdeModel(1, 1, exprs({"0"}, 1), exprs({"1"}, 1)); }

TEST(Step, Examples) {
  const auto bm = brownian_1d();
  EXPECT_NEAR(gsde::step(bm, scalar_control(0, 1), Vec{0}, 0.1, Vec{0})[0], 0.1, 1e-15);
  EXPECT_NEAR(gsde::step(bm, scalar_control(2, 0), Vec{0}, 0.01, Vec{1})[0], 0.2, 1e-15);
  const SdeModel with_h(1, 1, exprs({"0"}, 1), exprs({"0"}, 1), exprs({"1"}, 1));
  EXPECT_NEAR(gsde::step(with_h, scalar_control(2, 0), Vec{0}, 0.01, Vec{0})[0], 0.04, 1e-15);
}

TEST(SdeModel, ValidatesShapes) {
  EXPECT_THROW(SdeModel(2, 1, exprs({"0"}, 2), exprs({"1", "1"}, 2)), gsde::DimensionError);
  EXPECT_THROW(SdeModel(1, 1, exprs({"0"}, 1), exprs({"1", "1"}, 1)), gsde::DimensionError);
  EXPECT_THROW(SdeModel(1, 1, exprs({"x2"}, 2), exprs({"1"}, 1)), gsde::DimensionError);
  // h_12 != h_21
  EXPECT_THROW(SdeModel(1, 2, exprs({"0"}, 1), exprs({"1", "0"}, 1), exprs({"0", "1", "2", "0"}, 1)),
               std::invalid_argument);
}

TEST(SimulateToExit, DeterministicDriftOnTheGrid) {
  const auto bm = brownian_1d();
  const auto policy = ControlPolicy::constant(scalar_control(0, 1), "drift");
  const auto q = Domain::interval(-1, 0.95);
  SimulationConfig cfg{0.1, 10.0, Refinement::Grid, false};
  PathStreams rng(1, 0);
  const auto s = gsde::simulate_to_exit(bm, policy, q, Vec{0}, cfg, rng);
  EXPECT_NEAR(s.tau_open, 1.0, 1e-12);
  EXPECT_NEAR(s.exit_point[0], 1.0, 1e-12);
  EXPECT_NEAR(s.tau_closed, 1.0, 1e-12);
  EXPECT_FALSE(s.censored);
}

TEST(SimulateToExit, DeterministicDriftInterpolated) {
  const auto bm = brownian_1d();
  const auto policy = ControlPolicy::constant(scalar_control(0, 1), "drift");
  const auto q = Domain::interval(-1, 0.95);
  SimulationConfig cfg{0.1, 10.0, Refinement::Interpolate, false};
  PathStreams rng(1, 0);
  const auto s = gsde::simulate_to_exit(bm, policy, q, Vec{0}, cfg, rng);
  EXPECT_NEAR(s.tau_open, 0.95, 1e-12);
  EXPECT_NEAR(s.exit_point[0], 0.95, 1e-12);
  EXPECT_NEAR(s.tau_closed, 1.0, 1e-12);
}

TEST(SimulateToExit, ClassicalMeanExitTime) {
  // E[tau] = x (1 - x) for standard Brownian motion on (0, 1)
  const auto bm = brownian_1d();
  const auto policy = ControlPolicy::constant(scalar_control(1, 0), "bm");
  const auto q = Domain::interval(0, 1);
  SimulationConfig cfg{1e-3, 20.0, Refinement::Bridge, true};
  const int n = 20000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    PathStreams rng(3, static_cast<std::uint64_t>(i));
    const double t = gsde::simulate_to_exit(bm, policy, q, Vec{0.5}, cfg, rng).tau_open;
    s += t;
    s2 += t * t;
  }
  const double mean = s / n;
  const double se = std::sqrt((s2 / n - mean * mean) / n);
  EXPECT_NEAR(mean, 0.25, 3 * se + 0.002);
}

TEST(SimulateToExit, ZeroVolatilityNeverExits) {
  const auto bm = brownian_1d();
  const auto policy = ControlPolicy::constant(scalar_control(0, 0), "still");
  SimulationConfig cfg{0.01, 1.0, Refinement::Bridge, false};
  PathStreams rng(1, 0);
  const auto s = gsde::simulate_to_exit(bm, policy, Domain::interval(0, 1), Vec{0.5}, cfg, rng);
  EXPECT_TRUE(s.censored);
  EXPECT_DOUBLE_EQ(s.tau_open, 1.0);
  EXPECT_DOUBLE_EQ(s.exit_point[0], 0.5);
}

TEST(SimulateToExit, RunningCostIsLeftEndpointIntegral) {
  const auto bm = brownian_1d();
  const auto policy = ControlPolicy::constant(scalar_control(0, 1), "drift");
  const auto f = gsde::expr::parse("x1", 1);
  SimulationConfig cfg{0.1, 10.0, Refinement::Grid, false};
  PathStreams rng(1, 0);
  const auto s = gsde::simulate_to_exit(bm, policy, Domain::interval(-1, 0.95), Vec{0}, cfg, rng, &f);
  // sum_{k=0}^{9} 0.1 k * 0.1
  EXPECT_NEAR(s.running_cost, 0.45, 1e-12);
}

TEST(SimulateToExit, OpenExitNeverAfterClosedExit) {
  const SdeModel m(2, 2, exprs({"0.3*x2", "-0.2"}, 2), exprs({"1", "0.2*x1", "0", "1"}, 2));
  const auto theta = gsde::UncertaintySet::diag_box(2, 0.5, 1.5, {0.3, 0.3});
  const std::vector<Domain> qs{Domain::box({-1, -1}, {1, 1}), Domain::ball({0, 0}, 1),
                               Domain::annulus({0, 0}, 0.2, 1)};
  for (const auto& q : qs) {
    for (const auto& policy : gsde::vertex_policies(theta)) {
      for (auto mode : {Refinement::Grid, Refinement::Interpolate, Refinement::Bridge}) {
        SimulationConfig cfg{0.01, 50.0, mode, false};
        for (std::uint64_t i = 0; i < 40; ++i) {
          PathStreams rng(8, i);
          const auto s = gsde::simulate_to_exit(m, policy, q, Vec{0.5, 0.1}, cfg, rng);
          ASSERT_LE(s.tau_open, s.tau_closed);
        }
      }
    }
  }
}

TEST(SimulateToExit, IsDeterministicPerStream) {
  const auto bm = brownian_1d();
  const auto policy = ControlPolicy::constant(scalar_control(1.5, 0.2), "p");
  SimulationConfig cfg{1e-3, 10.0, Refinement::Bridge, false};
  for (std::uint64_t i = 0; i < 50; ++i) {
    PathStreams r1(99, i), r2(99, i);
    const auto a = gsde::simulate_to_exit(bm, policy, Domain::interval(0, 1), Vec{0.3}, cfg, r1);
    const auto b = gsde::simulate_to_exit(bm, policy, Domain::interval(0, 1), Vec{0.3}, cfg, r2);
    ASSERT_EQ(a.tau_open, b.tau_open);
    ASSERT_EQ(a.tau_closed, b.tau_closed);
    ASSERT_EQ(a.exit_point, b.exit_point);
    ASSERT_EQ(a.steps, b.steps);
  }
}

TEST(SimulateToExit, StartOnBoundaryHasZeroOpenExit) {
  const auto bm = brownian_1d();
  const auto policy = ControlPolicy::constant(scalar_control(1, 0), "bm");
  SimulationConfig cfg{1e-3, 10.0, Refinement::Bridge, false};
  PathStreams rng(1, 0);
  const auto s = gsde::simulate_to_exit(bm, policy, Domain::interval(0, 1), Vec{0.0}, cfg, rng);
  EXPECT_EQ(s.tau_open, 0.0);
  EXPECT_GE(s.tau_closed, 1e-3);
}

struct ItoFixture {
  Expression h;
  std::vector<Expression> grad, hess;
};

gsde::RecordedPath record(const SdeModel& m, const ControlPolicy& policy, double dt, std::uint64_t path) {
  SimulationConfig cfg{dt, 1.0, Refinement::Grid, false};
  PathStreams rng(5, path);
  gsde::RecordedPath rec;
  gsde::simulate_to_exit(m, policy, Domain::interval(-100, 100), Vec{0.2}, cfg, rng, nullptr, &rec);
  return rec;
}

TEST(ItoResidual, FrozenPathIsZero) {
  const SdeModel m(1, 1, exprs({"0"}, 1), exprs({"0"}, 1));
  const auto policy = ControlPolicy::constant(scalar_control(0, 0), "frozen");
  const auto rec = record(m, policy, 0.01, 0);
  const ItoFixture sq{gsde::expr::parse("x1^2", 1), exprs({"2*x1"}, 1), exprs({"2"}, 1)};
  EXPECT_EQ(gsde::ito_residual(m, sq.h, sq.grad, sq.hess, rec), 0.0);
}

TEST(ItoResidual, LinearTestFunctionIsExact) {
  const auto bm = brownian_1d();
  const auto policy = ControlPolicy::constant(scalar_control(1.3, 0.4), "p");
  const ItoFixture lin{gsde::expr::parse("3*x1 - 2", 1), exprs({"3"}, 1), exprs({"0"}, 1)};
  for (std::uint64_t i = 0; i < 20; ++i) {
    const auto rec = record(bm, policy, 0.01, i);
    EXPECT_NEAR(gsde::ito_residual(bm, lin.h, lin.grad, lin.hess, rec), 0.0, 1e-11);
  }
}

TEST(ItoResidual, QuadraticResidualShrinksWithDt) {
  const auto bm = brownian_1d();
  const auto policy = ControlPolicy::constant(scalar_control(1, 0), "bm");
  const ItoFixture sq{gsde::expr::parse("x1^2", 1), exprs({"2*x1"}, 1), exprs({"2"}, 1)};
  std::vector<double> means;
  for (double dt : {1e-2, 1e-3, 1e-4}) {
    double s = 0;
    const int n = 300;
    for (int i = 0; i < n; ++i) s += gsde::ito_residual(bm, sq.h, sq.grad, sq.hess, record(bm, policy, dt, static_cast<std::uint64_t>(i)));
    means.push_back(s / n);
  }
  EXPECT_GT(means[0], means[1]);
  EXPECT_GT(means[1], means[2]);
  // |sum (dB^2 - dt)| has mean sqrt(2 dt T / pi) * sqrt(... ) ~ sqrt(dt): each decade shrinks by ~sqrt(10)
  EXPECT_NEAR(means[0] / means[2], 10.0, 3.0);
}

TEST(Nondegeneracy, Examples) {
  const SdeModel id(2, 2, exprs({"0", "0"}, 2), exprs({"1", "0", "0", "1"}, 2));
  const auto a = gsde::nondegeneracy_check(id, Domain::ball({0, 0}, 1), 256);
  EXPECT_NEAR(a.lambda_hat, 1.0, 1e-12);
  EXPECT_NEAR(a.c_sigma_sq_hat, 1.0, 1e-12);

  const SdeModel diag(2, 2, exprs({"0", "0"}, 2), exprs({"1", "0", "0", "2"}, 2));
  const auto b = gsde::nondegeneracy_check(diag, Domain::box({0, 0}, {1, 1}), 256);
  EXPECT_NEAR(b.lambda_hat, 1.0, 1e-12);
  EXPECT_NEAR(b.c_sigma_sq_hat, 4.0, 1e-12);

  const SdeModel lin(1, 1, exprs({"0"}, 1), exprs({"1 + 0.5*x1"}, 1));
  const auto c = gsde::nondegeneracy_check(lin, Domain::interval(0, 1), 256);
  EXPECT_NEAR(c.lambda_hat, 1.0, 1e-12);
  EXPECT_NEAR(c.c_sigma_sq_hat, 2.25, 1e-12);
}

TEST(Policies, VertexPoliciesAreMembers) {
  const auto theta = gsde::UncertaintySet::diag_box(2, 1, 2, {0.5, 0});
  const auto ps = gsde::vertex_policies(theta);
  ASSERT_EQ(ps.size(), theta.vertices().size());
  EXPECT_EQ(ps[0].id(), "v0");
  for (const auto& p : ps) EXPECT_NO_THROW(gsde::check_policy_membership(p, theta));
  const auto rogue = ControlPolicy::constant(
      {Eigen::MatrixXd::Identity(2, 2) * 3.0, Eigen::VectorXd::Zero(2)}, "rogue");
  EXPECT_THROW(gsde::check_policy_membership(rogue, theta), std::invalid_argument);
}

TEST(Policies, FeedbackLookupUsesNearestNode) {
  auto field = std::make_shared<gsde::FeedbackField>();
  field->dim = 1;
  field->origin = {0.0};
  field->spacing = {0.25};
  field->counts = {5};
  field->node_vertex = {0, 0, 1, 1, 1};
  field->controls = {{scalar_control(1, 0), Eigen::MatrixXd::Constant(1, 1, 1.0), 0},
                     {scalar_control(2, 0), Eigen::MatrixXd::Constant(1, 1, 4.0), 1}};
  const auto p = ControlPolicy::feedback(field, "pde");
  EXPECT_DOUBLE_EQ(p.at(0, Vec{0.3}).value.gamma(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(p.at(0, Vec{0.4}).value.gamma(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(p.at(0, Vec{-5}).value.gamma(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(p.at(0, Vec{5}).value.gamma(0, 0), 2.0);
}

}  // namespace
