#include "gsde/montecarlo.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace {

using gsde::ControlValue;
using gsde::Domain;
using gsde::Functional;
using gsde::McConfig;
using gsde::Mode;
using gsde::SdeModel;
using gsde::UncertaintySet;
using gsde::expr::Expression;
using gsde::testing::Gen;

using Vec = std::vector<double>;

Expression ex(const char* text, int n = 1) { return gsde::expr::parse(text, n); }

SdeModel bm1() { return SdeModel(1, 1, {ex("0")}, {ex("1")}); }

UncertaintySet singleton1(double gamma, double mu) {
  return UncertaintySet::singleton({Eigen::MatrixXd::Constant(1, 1, gamma), Eigen::VectorXd::Constant(1, mu)});
}

McConfig cfg(std::size_t paths, double dt, std::uint64_t seed = 7) {
  McConfig c;
  c.paths = paths;
  c.dt = dt;
  c.seed = seed;
  return c;
}

// Closed forms of the one-dimensional oracles.
double exit_time_oracle(double x, double s2) { return x * (1 - x) / s2; }
double drift_oracle(double x, double beta) { return (1 - std::exp(-2 * beta * x)) / (1 - std::exp(-2 * beta)); }

TEST(EstimateValue, ClassicalExitTime) {
  const auto theta = singleton1(1, 0);
  const Functional fn{ex("0"), ex("-1"), Mode::Upper};
  const auto est = gsde::estimate_value(bm1(), theta, Domain::interval(0, 1), fn, gsde::vertex_policies(theta),
                                        Vec{0.5}, cfg(20000, 1e-3));
  EXPECT_NEAR(est.value, exit_time_oracle(0.5, 1), 3 * est.std_error + 0.002);
  EXPECT_EQ(est.n_paths, 20000u);
  EXPECT_EQ(est.censored_fraction, 0.0);
}

TEST(EstimateValue, VolatilityUncertaintyUpperAndLower) {
  const auto theta = UncertaintySet::diag_box(1, 1, 2, {0});
  const auto policies = gsde::vertex_policies(theta);
  Functional fn{ex("0"), ex("-1"), Mode::Upper};
  const auto up = gsde::estimate_value(bm1(), theta, Domain::interval(0, 1), fn, policies, Vec{0.5}, cfg(20000, 1e-3));
  EXPECT_NEAR(up.value, exit_time_oracle(0.5, 1), 3 * up.std_error + 0.002);
  EXPECT_EQ(up.argmax_policy, "v0");
  fn.mode = Mode::Lower;
  const auto lo = gsde::estimate_value(bm1(), theta, Domain::interval(0, 1), fn, policies, Vec{0.5}, cfg(20000, 1e-3));
  EXPECT_NEAR(lo.value, exit_time_oracle(0.5, 4), 3 * lo.std_error + 0.001);
  EXPECT_EQ(lo.argmax_policy, "v1");
}

TEST(EstimateValue, DriftUncertaintyBoundaryPayoff) {
  const auto theta = UncertaintySet::diag_box(1, 1, 1, {0.5});
  const Functional fn{ex("x1"), ex("0"), Mode::Upper};
  const auto est = gsde::estimate_value(bm1(), theta, Domain::interval(0, 1), fn, gsde::vertex_policies(theta),
                                        Vec{0.5}, cfg(20000, 1e-3));
  EXPECT_NEAR(est.value, drift_oracle(0.5, 0.5), 0.01);
  EXPECT_NEAR(drift_oracle(0.5, 0.5), 0.62246, 1e-5);
  EXPECT_EQ(est.argmax_policy, "v1");
}

TEST(EstimateValue, ValueDominatesEveryPolicyMean) {
  const auto theta = UncertaintySet::diag_box(1, 0.8, 1.6, {0.4});
  const auto policies = gsde::vertex_policies(theta);
  Gen g(31);
  for (int t = 0; t < 6; ++t) {
    const Functional up{ex("x1^2"), ex(t % 2 ? "x1 - 0.5" : "-1"), Mode::Upper};
    Functional lo = up;
    lo.mode = Mode::Lower;
    const Vec x{g.uniform(0.1, 0.9)};
    const auto a = gsde::estimate_value(bm1(), theta, Domain::interval(0, 1), up, policies, x, cfg(3000, 2e-3, t));
    const auto b = gsde::estimate_value(bm1(), theta, Domain::interval(0, 1), lo, policies, x, cfg(3000, 2e-3, t));
    for (const auto& p : a.per_policy) ASSERT_GE(a.value, p.mean - 2 * p.std_error);
    for (const auto& p : b.per_policy) ASSERT_LE(b.value, p.mean + 2 * p.std_error);
    ASSERT_GE(a.value, b.value - 2 * std::hypot(a.std_error, b.std_error));
  }
}

TEST(EstimateValue, ThreadCountDoesNotChangeResults) {
  const auto theta = UncertaintySet::diag_box(1, 1, 2, {0.3});
  const Functional fn{ex("x1"), ex("-1"), Mode::Upper};
  auto c1 = cfg(3000, 1e-3);
  c1.threads = 1;
  auto c3 = c1;
  c3.threads = 3;
  const auto a = gsde::estimate_value(bm1(), theta, Domain::interval(0, 1), fn, gsde::vertex_policies(theta), Vec{0.4}, c1);
  const auto b = gsde::estimate_value(bm1(), theta, Domain::interval(0, 1), fn, gsde::vertex_policies(theta), Vec{0.4}, c3);
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ(a.std_error, b.std_error);
}

TEST(EstimateValue, TranslationInvariance) {
  // Shifting the domain, start point and coefficients together only changes rounding in the state update.
  const auto theta = UncertaintySet::diag_box(2, 0.8, 1.5, {0.2, 0.2});
  const SdeModel m(2, 2, {ex("0.3*x2", 2), ex("-0.2*x1", 2)}, {ex("1", 2), ex("0", 2), ex("0.1*x1", 2), ex("1", 2)});
  const SdeModel shifted(2, 2, {ex("0.3*(x2 + 1)", 2), ex("-0.2*(x1 - 2)", 2)},
                         {ex("1", 2), ex("0", 2), ex("0.1*(x1 - 2)", 2), ex("1", 2)});
  const Functional fn{ex("x1^2 - x2", 2), ex("-1", 2), Mode::Upper};
  const Functional fn_shifted{ex("(x1 - 2)^2 - (x2 + 1)", 2), ex("-1", 2), Mode::Upper};
  auto c = cfg(2000, 2e-3);
  c.t_max = 20.0;
  const auto a = gsde::estimate_value(m, theta, Domain::ball({0, 0}, 1), fn, gsde::vertex_policies(theta),
                                      Vec{0.3, -0.2}, c);
  const auto b = gsde::estimate_value(shifted, theta, Domain::ball({2, -1}, 1), fn_shifted,
                                      gsde::vertex_policies(theta), Vec{2.3, -1.2}, c);
  EXPECT_NEAR(a.value, b.value, 1e-3);
  EXPECT_EQ(a.argmax_policy, b.argmax_policy);
}

TEST(EstimateValue, RejectsPoliciesOutsideTheSet) {
  const auto theta = singleton1(1, 0);
  const auto rogue = gsde::ControlPolicy::constant(
      {Eigen::MatrixXd::Constant(1, 1, 3.0), Eigen::VectorXd::Zero(1)}, "rogue");
  const Functional fn{ex("0"), ex("-1"), Mode::Upper};
  EXPECT_THROW(gsde::estimate_value(bm1(), theta, Domain::interval(0, 1), fn, {rogue}, Vec{0.5}, cfg(10, 1e-2)),
               std::invalid_argument);
}

TEST(ExitMoments, UnitIntervalBrownianMotion) {
  const auto theta = singleton1(1, 0);
  const auto m = gsde::estimate_exit_moments(bm1(), theta, Domain::interval(0, 1), gsde::vertex_policies(theta),
                                             Vec{0.5}, cfg(20000, 1e-3));
  // closed-set exit is unrefined, so allow an O(sqrt(dt)) overshoot
  EXPECT_NEAR(m.tau.value, 0.25, 3 * m.tau.std_error + 0.03);
  EXPECT_NEAR(m.tau_sq.value, 25.0 / 240.0, 3 * m.tau_sq.std_error + 0.03);
}

TEST(ExitMoments, BoundaryStartIsNearlyImmediate) {
  const auto theta = singleton1(1, 0);
  const auto m = gsde::estimate_exit_moments(bm1(), theta, Domain::interval(0, 1), gsde::vertex_policies(theta),
                                             Vec{0.0}, cfg(4000, 1e-4));
  // excursions from the boundary make both moments O(sqrt(dt)), not O(dt)
  EXPECT_LT(m.tau.value, 0.02);
  EXPECT_LT(m.tau_sq.value, 0.01);
}

TEST(LyapunovBounds, UnitIntervalValues) {
  const gsde::ModelBounds mb{0.0, 1.0, 1.0};
  gsde::EllipticityParams ep;
  ep.sigma_low_sq = 1.0;
  ep.sigma_high_sq = 1.0;
  const auto lb = gsde::lyapunov_bounds(mb, ep, Domain::interval(0, 1));
  const double e = std::numbers::e;
  EXPECT_DOUBLE_EQ(lb.alpha, 2.0);
  EXPECT_DOUBLE_EQ(lb.a, 0.5);
  EXPECT_NEAR(lb.c_h, e * e / 2, 1e-12);
  EXPECT_NEAR(lb.c_tau, e * e, 1e-12);
  EXPECT_NEAR(lb.c_tau_sq, e * e * e * e, 1e-12);
}

TEST(LyapunovBounds, DefiningInequalityHolds) {
  Gen g(41);
  for (int t = 0; t < 500; ++t) {
    // ranges keep alpha * |y| well inside double range
    const gsde::ModelBounds mb{g.uniform(0, 2), g.uniform(0.1, 2), g.uniform(0.5, 2)};
    gsde::EllipticityParams ep;
    ep.sigma_low_sq = g.uniform(0.5, 2);
    ep.sigma_high_sq = ep.sigma_low_sq + 1;
    ep.beta = g.uniform(0, 1);
    const double lo = g.uniform(-1, 1);
    const auto q = Domain::box({lo, 0}, {lo + g.uniform(0.1, 1), 1});
    const auto lb = gsde::lyapunov_bounds(mb, ep, q);
    const double c = mb.c_b + ep.beta * mb.c_sigma;
    const double k = ep.sigma_low_sq * mb.lambda * lb.alpha * lb.alpha - 2 * lb.alpha * c;
    ASSERT_GE(lb.a * std::exp(lb.alpha * lo) * k / 2, 1.0 - 1e-12);
    ASSERT_NEAR(lb.c_h, lb.a * std::exp(lb.alpha * q.upper()[0]), 1e-9 * lb.c_h);
    ASSERT_NEAR(lb.c_tau, 2 * lb.c_h, 1e-12 * lb.c_tau);
    ASSERT_NEAR(lb.c_tau_sq, 2 * lb.c_h * lb.c_tau, 1e-12 * lb.c_tau_sq);
  }
}

TEST(LyapunovBounds, DegenerateThrows) {
  gsde::EllipticityParams ep;
  EXPECT_THROW(gsde::lyapunov_bounds({0, 1, 1}, ep, Domain::interval(0, 1)), std::domain_error);
}

TEST(LyapunovBounds, DominateEmpiricalMoments) {
  struct Case {
    SdeModel model;
    UncertaintySet theta;
    Domain domain;
    Vec x0;
  };
  const std::vector<Case> cases{
      {bm1(), singleton1(1, 0), Domain::interval(0, 1), {0.5}},
      {bm1(), UncertaintySet::diag_box(1, 1, 2, {0.5}), Domain::interval(0, 1), {0.3}},
      {SdeModel(2, 2, {ex("0", 2), ex("0", 2)}, {ex("1", 2), ex("0", 2), ex("0", 2), ex("1", 2)}),
       UncertaintySet::diag_box(2, 1, 2, {0, 0}), Domain::ball({0, 0}, 1), {0, 0}},
  };
  for (const auto& c : cases) {
    const auto mb = gsde::effective_model_bounds(c.model, c.theta, c.domain);
    const auto lb = gsde::lyapunov_bounds(mb, gsde::ellipticity_params(c.theta, true), c.domain);
    const auto m = gsde::estimate_exit_moments(c.model, c.theta, c.domain, gsde::vertex_policies(c.theta), c.x0,
                                               cfg(2000, 1e-3));
    EXPECT_LE(m.tau.value, lb.c_tau);
    EXPECT_LE(m.tau_sq.value, lb.c_tau_sq);
  }
}

TEST(GMartingale, Examples) {
  const auto box = UncertaintySet::diag_box(1, 1, 2, {0});
  const auto a = gsde::gmartingale_check(box, Eigen::MatrixXd::Constant(1, 1, 2), Eigen::VectorXd::Zero(1), 1,
                                         cfg(1000, 1e-3));
  EXPECT_DOUBLE_EQ(a.target, 4.0);
  EXPECT_NEAR(a.estimate.value, 4.0, 1e-12);

  const auto s = gsde::gmartingale_check(singleton1(1, 0), Eigen::MatrixXd::Constant(1, 1, 2),
                                         Eigen::VectorXd::Zero(1), 1, cfg(1000, 1e-3));
  EXPECT_DOUBLE_EQ(s.target, 1.0);
  EXPECT_NEAR(s.estimate.value, 1.0, 1e-12);

  const auto d = gsde::gmartingale_check(UncertaintySet::diag_box(1, 1, 1, {0.5}), Eigen::MatrixXd::Zero(1, 1),
                                         Eigen::VectorXd::Constant(1, 2), 1, cfg(20000, 1e-3));
  EXPECT_DOUBLE_EQ(d.target, 1.0);
  EXPECT_NEAR(d.estimate.value, 1.0, 3 * d.estimate.std_error);
}

TEST(GMartingale, RandomSetsWithinThreeStandardErrors) {
  Gen g(43);
  int misses = 0;
  const int trials = 30;
  for (int t = 0; t < trials; ++t) {
    const int d = g.integer(1, 2);
    const auto box = UncertaintySet::diag_box(d, g.uniform(0.5, 1), g.uniform(1, 2),
                                              std::vector<double>(static_cast<std::size_t>(d), g.uniform(0, 1)));
    const auto r = gsde::gmartingale_check(box, g.diagonal(d), g.vector(d), g.uniform(0.5, 2),
                                           cfg(4000, 1e-3, static_cast<std::uint64_t>(t)));
    if (std::fabs(r.estimate.value - r.target) > 3 * r.estimate.std_error + 1e-12) ++misses;
  }
  // max of noisy means is biased upward, so a few misses at 3 SE are expected
  EXPECT_LE(misses, 3);
}

TEST(IntegralBound, Examples) {
  const auto box = UncertaintySet::diag_box(1, 1, 2, {0.5});
  const auto a = gsde::check_integral_bound(box, 1, cfg(20000, 1e-3));
  EXPECT_DOUBLE_EQ(a.rhs, 8.5);
  EXPECT_DOUBLE_EQ(a.closed_form, 4.25);
  EXPECT_NEAR(a.lhs, 4.25, 3 * a.lhs_se);
  EXPECT_LE(a.lhs, a.rhs);

  const auto s1 = gsde::check_integral_bound(singleton1(1, 0), 1, cfg(20000, 1e-3));
  EXPECT_NEAR(s1.lhs, 1, 3 * s1.lhs_se);
  EXPECT_DOUBLE_EQ(s1.rhs, 2);
  const auto s2 = gsde::check_integral_bound(singleton1(1, 0), 2, cfg(20000, 1e-3));
  EXPECT_NEAR(s2.lhs, 2, 3 * s2.lhs_se);
  EXPECT_DOUBLE_EQ(s2.rhs, 4);
}

TEST(IntegralBound, LhsNeverExceedsRhs) {
  Gen g(44);
  for (int t = 0; t < 20; ++t) {
    const auto box = UncertaintySet::diag_box(1, g.uniform(0.2, 1), g.uniform(1, 2.5), {g.uniform(0, 1.5)});
    const auto r = gsde::check_integral_bound(box, g.uniform(0.1, 3), cfg(2000, 1e-3, static_cast<std::uint64_t>(t)));
    ASSERT_LE(r.lhs, r.rhs);
  }
}

TEST(Dpp, ZeroTimeShortcut) {
  const auto theta = singleton1(1, 0);
  const Functional fn{ex("0"), ex("-1"), Mode::Upper};
  const auto table = [](std::span<const double> x) { return x[0] * (1 - x[0]); };
  // x0 outside the inner domain: the stopping time is zero
  const auto r = gsde::dpp_check(bm1(), theta, Domain::interval(0, 1), Domain::interval(0.6, 0.9), fn,
                                 gsde::vertex_policies(theta), Vec{0.5}, cfg(4000, 1e-3), table);
  EXPECT_DOUBLE_EQ(r.rhs, 0.25);
  EXPECT_NEAR(r.residual, std::fabs(r.lhs - 0.25), 1e-15);
}

TEST(Dpp, ClassicalAndVolatilityUncertainty) {
  const auto table = [](std::span<const double> x) { return x[0] * (1 - x[0]); };
  const Functional fn{ex("0"), ex("-1"), Mode::Upper};
  for (const auto& theta : {singleton1(1, 0), UncertaintySet::diag_box(1, 1, 2, {0})}) {
    const auto r = gsde::dpp_check(bm1(), theta, Domain::interval(0, 1), Domain::interval(0.25, 0.75), fn,
                                   gsde::vertex_policies(theta), Vec{0.5}, cfg(20000, 1e-3), table);
    EXPECT_NEAR(r.rhs, 0.25, 3 * r.rhs_se + 0.002);
    EXPECT_LE(r.residual, 3 * r.combined_se + 0.002);
  }
}

TEST(ExitTimeGap, BrownianGapShrinks) {
  const auto theta = singleton1(1, 0);
  const auto pts = gsde::exit_time_gap(bm1(), theta, Domain::interval(0, 1), Vec{0.5}, {1e-2, 1e-3, 1e-4},
                                       cfg(4000, 1e-3));
  ASSERT_EQ(pts.size(), 3u);
  EXPECT_GT(pts[0].mean, pts[1].mean);
  EXPECT_GT(pts[1].mean, pts[2].mean);
  EXPECT_LT(pts[1].mean, 0.05);
}

TEST(ExitTimeGap, TransversalDriftGapIsAtMostOneStep) {
  const auto theta = singleton1(0, 1);
  auto c = cfg(10, 0.1);
  c.t_max = 5.0;
  const auto pts = gsde::exit_time_gap(bm1(), theta, Domain::interval(0, 1), Vec{0.5}, {0.1, 0.03}, c);
  for (const auto& p : pts) {
    EXPECT_GE(p.mean, 0.0);
    EXPECT_LE(p.mean, p.dt + 1e-12);
  }
}

TEST(ExitTimeGap, BallGapShrinks) {
  const SdeModel m(2, 2, {ex("0", 2), ex("0", 2)}, {ex("1", 2), ex("0", 2), ex("0", 2), ex("1", 2)});
  const auto theta = UncertaintySet::singleton({Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(2)});
  const auto pts = gsde::exit_time_gap(m, theta, Domain::ball({0, 0}, 1), Vec{0, 0}, {1e-2, 1e-3, 1e-4}, cfg(1500, 1e-3));
  EXPECT_GT(pts[0].mean, pts[1].mean);
  EXPECT_GT(pts[1].mean, pts[2].mean);
}

TEST(BoundaryExitDecay, BrownianScalesLikeRootDt) {
  const auto theta = singleton1(1, 0);
  const auto pts = gsde::boundary_exit_decay(bm1(), theta, Domain::interval(0, 1), Vec{0.0}, {1e-2, 1e-3, 1e-4},
                                             cfg(4000, 1e-3));
  EXPECT_GT(pts[0].mean, pts[1].mean);
  EXPECT_GT(pts[1].mean, pts[2].mean);
  EXPECT_LT(pts[2].mean, 0.05);
  // two decades of dt buy one decade of mean exit time
  EXPECT_NEAR(pts[0].mean / pts[2].mean, 10.0, 4.0);
}

TEST(BoundaryExitDecay, OutwardDriftLeavesInOneStep) {
  const auto theta = singleton1(0, 1);
  const auto pts = gsde::boundary_exit_decay(bm1(), theta, Domain::interval(0, 1), Vec{1.0}, {0.1, 0.01}, cfg(10, 0.1));
  EXPECT_NEAR(pts[0].mean, 0.1, 1e-12);
  EXPECT_NEAR(pts[1].mean, 0.01, 1e-12);
}

TEST(BoundaryExitDecay, BallBoundaryDecreases) {
  const SdeModel m(2, 2, {ex("0", 2), ex("0", 2)}, {ex("1", 2), ex("0", 2), ex("0", 2), ex("1", 2)});
  const auto theta = UncertaintySet::singleton({Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(2)});
  const auto pts = gsde::boundary_exit_decay(m, theta, Domain::ball({0, 0}, 1), Vec{1, 0}, {1e-2, 1e-3, 1e-4},
                                             cfg(2000, 1e-3));
  EXPECT_GT(pts[0].mean, pts[1].mean);
  EXPECT_GT(pts[1].mean, pts[2].mean);
}

TEST(Continuity, NearbyPointsUnderCommonRandomNumbers) {
  const auto theta = singleton1(1, 0);
  const Functional fn{ex("0"), ex("-1"), Mode::Upper};
  const auto r = gsde::continuity_modulus(bm1(), theta, Domain::interval(0, 1), {{0.5}, {0.55}}, fn,
                                          gsde::vertex_policies(theta), cfg(20000, 1e-3));
  ASSERT_EQ(r.estimates.size(), 2u);
  EXPECT_LE(r.max_abs_deviation, 0.01);
  EXPECT_NEAR(r.estimates[0].value - r.estimates[1].value, 0.0025, 0.005);
}

TEST(Continuity, IdenticalPointsHaveZeroDeviation) {
  const auto theta = UncertaintySet::diag_box(1, 1, 2, {0.2});
  const Functional fn{ex("x1"), ex("-1"), Mode::Upper};
  const auto r = gsde::continuity_modulus(bm1(), theta, Domain::interval(0, 1), {{0.3}, {0.3}}, fn,
                                          gsde::vertex_policies(theta), cfg(2000, 1e-3));
  EXPECT_EQ(r.max_abs_deviation, 0.0);
  EXPECT_EQ(r.max_ratio, 0.0);
}

TEST(Continuity, BoundaryPointReturnsThePayoff) {
  const auto theta = UncertaintySet::diag_box(1, 1, 2, {0});
  const Functional fn{ex("1 + x1"), ex("-1"), Mode::Upper};
  const auto r = gsde::continuity_modulus(bm1(), theta, Domain::interval(0, 1), {{1.0}, {0.0}}, fn,
                                          gsde::vertex_policies(theta), cfg(1000, 1e-3));
  EXPECT_DOUBLE_EQ(r.estimates[0].value, 2.0);
  EXPECT_DOUBLE_EQ(r.estimates[1].value, 1.0);
}

}  // namespace
