#include "gsde/uncertainty.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace {

using gsde::ControlValue;
using gsde::UncertaintySet;
using gsde::testing::Gen;

Eigen::MatrixXd m1(double v) { return Eigen::MatrixXd::Constant(1, 1, v); }
Eigen::VectorXd v1(double v) { return Eigen::VectorXd::Constant(1, v); }

ControlValue control(std::initializer_list<double> gamma_diag, std::initializer_list<double> mu) {
  const int d = static_cast<int>(mu.size());
  ControlValue c{Eigen::MatrixXd::Zero(d, d), Eigen::VectorXd::Zero(d)};
  int i = 0;
  for (double g : gamma_diag) c.gamma(i, i) = g, ++i;
  i = 0;
  for (double m : mu) c.mu(i++) = m;
  return c;
}

// Closed form of G on a diag box: 1/2 sum (s_hi^2 a_ii^+ - s_lo^2 a_ii^-) + sum beta_i |p_i|.
double diag_box_oracle(double lo, double hi, const std::vector<double>& beta, const Eigen::MatrixXd& a,
                       const Eigen::VectorXd& p) {
  double g = 0;
  for (int i = 0; i < a.rows(); ++i) {
    const double aii = a(i, i);
    g += 0.5 * (aii > 0 ? hi * hi * aii : lo * lo * aii) + beta[static_cast<std::size_t>(i)] * std::fabs(p(i));
  }
  return g;
}

Eigen::MatrixXd random_psd(Gen& g, int d) {
  const Eigen::MatrixXd b = g.symmetric(d, 1.0);
  return b * b.transpose();
}

TEST(EvalG, Examples) {
  const auto box = UncertaintySet::diag_box(1, 1.0, 2.0, {0.0});
  EXPECT_DOUBLE_EQ(gsde::eval_G(box, m1(2), v1(0)), 4.0);
  EXPECT_DOUBLE_EQ(gsde::eval_G(box, m1(-2), v1(0)), -1.0);
  const auto one = UncertaintySet::singleton(control({1.0}, {0.0}));
  EXPECT_DOUBLE_EQ(gsde::eval_G(one, m1(2), v1(5)), 1.0);
  const auto drift = UncertaintySet::diag_box(1, 1.0, 1.0, {0.5});
  EXPECT_DOUBLE_EQ(gsde::eval_G(drift, m1(0), v1(2)), 1.0);
}

TEST(ArgmaxControl, Examples) {
  const auto box = UncertaintySet::diag_box(1, 1.0, 2.0, {0.5});
  EXPECT_DOUBLE_EQ(gsde::argmax_control(box, m1(2), v1(0)).gamma(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(gsde::argmax_control(box, m1(-2), v1(0)).gamma(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(gsde::argmax_control(box, m1(0), v1(2)).mu(0), 0.5);
  EXPECT_DOUBLE_EQ(gsde::argmax_control(box, m1(0), v1(-2)).mu(0), -0.5);
}

TEST(EllipticityParams, Examples) {
  const auto box = gsde::ellipticity_params(UncertaintySet::diag_box(2, 1.0, 2.0, {0.5, 0.5}));
  EXPECT_DOUBLE_EQ(box.sigma_low_sq, 1.0);
  EXPECT_DOUBLE_EQ(box.sigma_high_sq, 4.0);
  EXPECT_NEAR(box.beta, std::sqrt(0.5), 1e-15);

  const auto one = gsde::ellipticity_params(UncertaintySet::singleton(control({1.0, 1.0}, {0.0, 0.0})));
  EXPECT_DOUBLE_EQ(one.sigma_low_sq, 1.0);
  EXPECT_DOUBLE_EQ(one.sigma_high_sq, 1.0);
  EXPECT_DOUBLE_EQ(one.beta, 0.0);

  const auto list = gsde::ellipticity_params(
      UncertaintySet::vertex_list({control({1.0}, {0.0}), control({3.0}, {0.0})}));
  EXPECT_DOUBLE_EQ(list.sigma_low_sq, 1.0);
  EXPECT_DOUBLE_EQ(list.sigma_high_sq, 9.0);
  EXPECT_DOUBLE_EQ(list.beta, 0.0);
}

TEST(EllipticityParams, DegenerateSetThrowsWhenUniformityRequired) {
  const auto s = UncertaintySet::diag_box(1, 0.0, 1.0, {0.0});
  EXPECT_TRUE(gsde::ellipticity_params(s).degenerate);
  EXPECT_THROW(gsde::ellipticity_params(s, true), std::domain_error);
}

TEST(UncertaintySet, DiagBoxRejectsCrossTerms) {
  const auto box = UncertaintySet::diag_box(2, 1.0, 2.0, {0.0, 0.0});
  Eigen::MatrixXd a(2, 2);
  a << 1, 0.5, 0.5, 1;
  EXPECT_THROW(gsde::eval_G(box, a, Eigen::VectorXd::Zero(2)), std::invalid_argument);
}

TEST(UncertaintySet, DiagBoxVertexOrderIsLexicographic) {
  const auto box = UncertaintySet::diag_box(1, 1.0, 2.0, {0.5});
  ASSERT_EQ(box.vertices().size(), 4u);
  EXPECT_EQ(box.vertices()[0], control({1.0}, {-0.5}));
  EXPECT_EQ(box.vertices()[1], control({1.0}, {0.5}));
  EXPECT_EQ(box.vertices()[2], control({2.0}, {-0.5}));
  EXPECT_EQ(box.vertices()[3], control({2.0}, {0.5}));
}

TEST(UncertaintySet, DimensionMismatchIsReported) {
  const auto box = UncertaintySet::diag_box(2, 1.0, 2.0, {});
  EXPECT_THROW(gsde::eval_G(box, m1(1), v1(0)), gsde::DimensionError);
  EXPECT_THROW(UncertaintySet::vertex_list({control({1.0}, {0.0}), control({1.0, 1.0}, {0.0, 0.0})}),
               gsde::DimensionError);
}

TEST(GProperty, DiagBoxMatchesClosedForm) {
  Gen g(11);
  for (int t = 0; t < 500; ++t) {
    const int d = g.integer(1, 3);
    const double lo = g.uniform(0.0, 1.5), hi = lo + g.uniform(0.0, 1.5);
    std::vector<double> beta;
    for (int i = 0; i < d; ++i) beta.push_back(g.coin(0.3) ? 0.0 : g.uniform(0, 1));
    const auto box = UncertaintySet::diag_box(d, lo, hi, beta);
    const auto a = g.diagonal(d);
    const auto p = g.vector(d);
    ASSERT_NEAR(gsde::eval_G(box, a, p), diag_box_oracle(lo, hi, beta, a, p), 1e-12);
  }
}

TEST(GProperty, MonotoneInA) {
  Gen g(12);
  for (int t = 0; t < 400; ++t) {
    const int d = g.integer(1, 3);
    std::vector<ControlValue> verts;
    for (int k = 0; k < g.integer(1, 5); ++k) {
      ControlValue c{g.symmetric(d, 1.5), g.vector(d, 1.0)};
      verts.push_back(c);
    }
    const auto list = UncertaintySet::vertex_list(verts);
    const Eigen::MatrixXd a2 = g.symmetric(d);
    const Eigen::VectorXd p = g.vector(d);
    const Eigen::MatrixXd a1 = a2 + random_psd(g, d);
    ASSERT_GE(gsde::eval_G(list, a1, p), gsde::eval_G(list, a2, p) - 1e-12);

    const auto box = UncertaintySet::diag_box(d, 0.5, 1.5, std::vector<double>(static_cast<std::size_t>(d), 0.3));
    const auto b2 = g.diagonal(d);
    Eigen::MatrixXd b1 = b2;
    for (int i = 0; i < d; ++i) b1(i, i) += g.uniform(0, 2);
    ASSERT_GE(gsde::eval_G(box, b1, p), gsde::eval_G(box, b2, p) - 1e-12);
  }
}

TEST(GProperty, SubadditiveAndPositivelyHomogeneous) {
  Gen g(13);
  for (int t = 0; t < 400; ++t) {
    const int d = g.integer(1, 3);
    std::vector<ControlValue> verts;
    for (int k = 0; k < g.integer(1, 6); ++k) verts.push_back({g.symmetric(d, 1.5), g.vector(d, 1.0)});
    const auto list = UncertaintySet::vertex_list(verts);
    const auto box = UncertaintySet::diag_box(d, g.uniform(0, 1), 1.0 + g.uniform(0, 1),
                                              std::vector<double>(static_cast<std::size_t>(d), g.uniform(0, 1)));
    const auto a1 = g.symmetric(d), a2 = g.symmetric(d);
    const auto d1 = g.diagonal(d), d2 = g.diagonal(d);
    const auto p1 = g.vector(d), p2 = g.vector(d);
    const double c = g.uniform(0, 3);

    ASSERT_LE(gsde::eval_G(list, a1 + a2, p1 + p2), gsde::eval_G(list, a1, p1) + gsde::eval_G(list, a2, p2) + 1e-12);
    ASSERT_LE(gsde::eval_G(box, d1 + d2, p1 + p2), gsde::eval_G(box, d1, p1) + gsde::eval_G(box, d2, p2) + 1e-12);
    ASSERT_NEAR(gsde::eval_G(list, c * a1, c * p1), c * gsde::eval_G(list, a1, p1), 1e-11);
    ASSERT_NEAR(gsde::eval_G(box, c * d1, c * p1), c * gsde::eval_G(box, d1, p1), 1e-11);
  }
}

TEST(GProperty, EllipticitySandwich) {
  Gen g(14);
  for (int t = 0; t < 400; ++t) {
    const int d = g.integer(1, 3);
    std::vector<ControlValue> verts;
    for (int k = 0; k < g.integer(1, 5); ++k) verts.push_back({g.symmetric(d, 1.5), g.vector(d, 1.0)});
    const auto list = UncertaintySet::vertex_list(verts);
    const auto box = UncertaintySet::diag_box(d, g.uniform(0.2, 1), 1.0 + g.uniform(0, 1),
                                              std::vector<double>(static_cast<std::size_t>(d), g.uniform(0, 1)));
    const auto p1 = g.vector(d), p2 = g.vector(d);
    const double dp = (p1 - p2).norm();

    auto check = [&](const UncertaintySet& s, const Eigen::MatrixXd& a1, const Eigen::MatrixXd& a2) {
      const auto e = gsde::ellipticity_params(s);
      const double tr = (a1 - a2).trace();
      const double diff = gsde::eval_G(s, a1, p1) - gsde::eval_G(s, a2, p2);
      ASSERT_GE(diff, 0.5 * e.sigma_low_sq * tr - e.beta * dp - 1e-10);
      ASSERT_LE(diff, 0.5 * e.sigma_high_sq * tr + e.beta * dp + 1e-10);
    };
    const auto a2 = g.symmetric(d);
    check(list, a2 + random_psd(g, d), a2);
    const auto b2 = g.diagonal(d);
    Eigen::MatrixXd b1 = b2;
    for (int i = 0; i < d; ++i) b1(i, i) += g.uniform(0, 2);
    check(box, b1, b2);
  }
}

TEST(GProperty, SingletonIsLinear) {
  Gen g(15);
  for (int t = 0; t < 200; ++t) {
    const int d = g.integer(1, 3);
    const auto s = UncertaintySet::singleton({g.symmetric(d), g.vector(d)});
    const auto a1 = g.symmetric(d), a2 = g.symmetric(d);
    const auto p1 = g.vector(d), p2 = g.vector(d);
    const double x = g.uniform(-2, 2), y = g.uniform(-2, 2);
    ASSERT_NEAR(gsde::eval_G(s, x * a1 + y * a2, x * p1 + y * p2),
                x * gsde::eval_G(s, a1, p1) + y * gsde::eval_G(s, a2, p2), 1e-10);
  }
}

TEST(GProperty, ArgmaxAttainsG) {
  Gen g(16);
  for (int t = 0; t < 300; ++t) {
    const int d = g.integer(1, 3);
    std::vector<ControlValue> verts;
    for (int k = 0; k < g.integer(1, 6); ++k) verts.push_back({g.symmetric(d, 1.5), g.vector(d, 1.0)});
    const auto list = UncertaintySet::vertex_list(verts);
    const Eigen::MatrixXd a = g.symmetric(d);
    const Eigen::VectorXd p = g.vector(d);
    ASSERT_EQ(gsde::control_objective(gsde::argmax_control(list, a, p), a, p), gsde::eval_G(list, a, p));
    const auto idx = gsde::argmax_vertex(list, a, p);
    ASSERT_EQ(gsde::control_objective(list.vertices()[idx], a, p), gsde::eval_G(list, a, p));

    const auto box = UncertaintySet::diag_box(d, 0.5, 2.0, std::vector<double>(static_cast<std::size_t>(d), 0.4));
    const auto b = g.diagonal(d);
    ASSERT_EQ(gsde::control_objective(gsde::argmax_control(box, b, p), b, p), gsde::eval_G(box, b, p));
    ASSERT_EQ(box.vertices()[gsde::argmax_vertex(box, b, p)], gsde::argmax_control(box, b, p));
  }
}

}  // namespace
