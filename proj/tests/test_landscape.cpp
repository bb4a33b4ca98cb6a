// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include <gtest/gtest.h>

#include "ehrenfest/landscape.hpp"

using namespace ehrenfest;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

// eigvals [1], signal [0.5], y2 1: L(gamma) = 1 - (0.5 - gamma)^2 below 0.5.
MomentData scalar_instance(double a = 1.0) { return make_synthetic(vec({a}), vec({0.5}), 1.0, 0); }

NetConfig net(int depth, int width = 1, double noise = 0.0) {
  NetConfig c;
  c.depth = depth;
  c.width = width;
  c.noise_var = noise;
  return c;
}

// Direct transcription of the effective loss with explicit powers.
double reference_loss(double b, double gamma, const NetConfig& c, const MomentData& d) {
  const int D = c.depth;
  const double d0 = c.width;
  double s = 0.0;
  for (Eigen::Index i = 0; i < d.dim(); ++i) {
    const double m = d.xy_rot()[i];
    const double num = std::pow(d0, 2 * D) * std::pow(b, 2 * D) * m * m;
    const double den =
        std::pow(d0, D) * std::pow(c.noise_var + d0, D) * std::pow(b, 2 * D) * d.eigvals()[i] + gamma;
    s += num / den;
  }
  return -s + d.y2() + gamma * D * d0 * d0 * b * b;
}

}  // namespace

TEST(EffectiveLoss, EqualsLabelMomentAtOrigin) {
  const auto d = scalar_instance();
  for (double g : {0.0, 0.1, 2.0}) EXPECT_EQ(effective_loss(0.0, g, net(1), d), 1.0);
}

TEST(EffectiveLoss, HandValues) {
  const auto d = scalar_instance();
  EXPECT_NEAR(effective_loss(0.5, 0.25, net(1), d), 0.9375, 1e-15);
  EXPECT_NEAR(effective_loss(0.1, 0.25, net(1), d), -0.01 * 0.25 / 0.26 + 1.0 + 0.25 * 0.01, 1e-15);
}

TEST(EffectiveLoss, FineScanMinimumMatchesHandValue) {
  const auto d = scalar_instance();
  double best = 1e9;
  for (int k = 0; k <= 20000; ++k) best = std::min(best, effective_loss(k * 1e-4, 0.25, net(1), d));
  EXPECT_NEAR(best, 0.9375, 1e-9);
}

TEST(EffectiveLoss, MatchesDirectFormula) {
  const auto d = make_synthetic(vec({1.5, 0.7, 0.2}), vec({1.0, -0.6, 0.3}), 3.0, 7);
  for (int D : {1, 2, 3})
    for (int d0 : {1, 2, 4})
      for (double s2 : {0.0, 0.5})
        for (double b : {0.01, 0.1, 0.3, 0.8})
          for (double g : {0.0, 0.05, 0.5}) {
            const auto c = net(D, d0, s2);
            const double ref = reference_loss(b, g, c, d);
            EXPECT_NEAR(effective_loss(b, g, c, d), ref, 1e-12 * (1.0 + std::abs(ref)))
                << "D=" << D << " d0=" << d0 << " b=" << b << " g=" << g;
          }
}

TEST(EffectiveLoss, RejectsInvalidInputs) {
  const auto d = scalar_instance();
  EXPECT_THROW((void)effective_loss(-0.1, 0.1, net(1), d), InvalidInput);
  EXPECT_THROW((void)effective_loss(0.1, -0.1, net(1), d), InvalidInput);
  EXPECT_THROW((void)effective_loss(0.1, 0.1, net(0), d), InvalidInput);
  NetConfig p4 = net(2);
  p4.reg_exponent = 4;
  EXPECT_THROW((void)effective_loss(0.1, 0.1, p4, d), InvalidInput);
}

TEST(EffectiveLossDgrad, StationaryAtOriginAndMinimiser) {
  const auto d = scalar_instance();
  for (int D : {1, 2, 3}) EXPECT_EQ(effective_loss_dgrad(0.0, 0.3, net(D), d), 0.0);
  EXPECT_NEAR(effective_loss_dgrad(0.5, 0.25, net(1), d), 0.0, 1e-14);
}

TEST(EffectiveLossDgrad, PositiveInTrivialPhase) {
  const auto d = scalar_instance();
  const double g = effective_loss_dgrad(0.5, 0.6, net(1), d);
  EXPECT_GT(g, 0.0);
  const double h = 1e-6;
  const double fd = (effective_loss(0.5 + h, 0.6, net(1), d) - effective_loss(0.5 - h, 0.6, net(1), d)) / (2 * h);
  EXPECT_GT(fd, 0.0);
}

TEST(EffectiveLossDgamma, ScalarInstance) {
  // L(gamma) = 0.75 + gamma - gamma^2 on the feature branch: L' = 1 - 2 gamma.
  const auto d = scalar_instance();
  for (double g : {0.1, 0.25, 0.4}) {
    const double b = std::sqrt(0.5 - g);
    EXPECT_NEAR(effective_loss_dgamma(b, g, net(1), d), 1.0 - 2.0 * g, 1e-14);
  }
}

TEST(MinimizeB, ScalarInstance) {
  const auto d = scalar_instance();
  const auto r = minimize_b(0.25, net(1), d);
  EXPECT_NEAR(r.b, 0.5, 1e-9);
  EXPECT_NEAR(r.loss, 0.9375, 1e-14);
  const auto t = minimize_b(0.6, net(1), d);
  EXPECT_EQ(t.b, 0.0);
  EXPECT_EQ(t.loss, 1.0);
  const auto c = minimize_b(0.5, net(1), d);
  EXPECT_EQ(c.b, 0.0);
  EXPECT_EQ(c.loss, 1.0);
}

TEST(MinimizeB, ClosedFormBranch) {
  const auto d = scalar_instance();
  for (double g : {0.01, 0.1, 0.3, 0.45, 0.499}) {
    const auto r = minimize_b(g, net(1), d);
    EXPECT_NEAR(r.b * r.b, 0.5 - g, 1e-9) << g;
    EXPECT_NEAR(r.loss, 0.75 + g - g * g, 1e-12) << g;
  }
}

TEST(MinimizeB, ZeroSignalStaysTrivial) {
  const auto d = make_synthetic(vec({1.0, 2.0}), vec({0.0, 0.0}), 1.0, 0);
  const auto r = minimize_b(0.1, net(2, 2), d);
  EXPECT_EQ(r.b, 0.0);
  EXPECT_EQ(r.loss, 1.0);
}

TEST(RidgeLoss, ClosedForms) {
  const auto d = make_synthetic(vec({1.0, 1.0}), vec({1.0, 0.0}), 2.0, 0);
  EXPECT_NEAR(ridge_loss(1.0, d).loss, 1.5, 1e-14);
  EXPECT_NEAR(ridge_loss(0.0, d).loss, 1.0, 1e-14);
  EXPECT_NEAR(ridge_loss(1e9, d).loss, 2.0, 2e-6);
  const auto r = ridge_loss(1.0, d);
  EXPECT_NEAR((r.weights - d.xy() / 2.0).norm(), 0.0, 1e-14);
  EXPECT_FALSE(r.singular);
}

TEST(RidgeLoss, SingularCovarianceAtZeroGamma) {
  const auto d = make_synthetic(vec({1.0, 0.0}), vec({1.0, 0.0}), 2.0, 0);
  const auto r = ridge_loss(0.0, d);
  EXPECT_TRUE(r.singular);
  EXPECT_NEAR(r.loss, 1.0, 1e-14);
  // minimum norm: no weight along the null direction
  EXPECT_NEAR((d.rotation().transpose() * r.weights)[1], 0.0, 1e-14);
}

TEST(RidgeLoss, DerivativesMatchClosedForm) {
  // L = y2 - sum m^2/(a+g): L' = sum m^2/(a+g)^2, L'' = -2 sum m^2/(a+g)^3
  const auto d = make_synthetic(vec({1.0, 1.0}), vec({1.0, 0.0}), 2.0, 0);
  EXPECT_NEAR(ridge_loss_derivative(1.0, d, 1), 0.25, 1e-14);
  EXPECT_NEAR(ridge_loss_derivative(1.0, d, 2), -0.25, 1e-14);
  EXPECT_NEAR(ridge_loss_derivative(1.0, d, 0), 1.5, 1e-14);
}

TEST(CriticalGamma, IsSignalNorm) {
  EXPECT_NEAR(critical_gamma_d1(scalar_instance()), 0.5, 1e-15);
  EXPECT_EQ(critical_gamma_d1(make_synthetic(vec({1.0}), vec({0.0}), 1.0, 0)), 0.0);
  EXPECT_NEAR(critical_gamma_d1(make_synthetic(vec({1.0, 1.0}), vec({3.0, 4.0}), 30.0, 0)), 5.0, 1e-14);
}

TEST(LandauCoefficients, ScalarInstances) {
  const auto a = landau_coefficients(net(1), scalar_instance());
  EXPECT_NEAR(a.gamma_star, 0.5, 1e-15);
  EXPECT_NEAR(a.beta1, -1.0, 1e-14);
  EXPECT_NEAR(a.beta2, 0.0, 1e-14);
  EXPECT_NEAR(a.beta2_expansion, 0.0, 1e-14);
  const auto b = landau_coefficients(net(1), scalar_instance(2.0));
  EXPECT_NEAR(b.beta1, -0.5, 1e-14);
  EXPECT_NEAR(b.beta2, 1.5, 1e-14);
  // s = 0.5 (0.5 - gamma) exactly on this instance: no quadratic term
  EXPECT_NEAR(b.beta2_expansion, 0.0, 1e-14);
}

TEST(LandauCoefficients, IsotropicCovarianceHasNoQuadraticTerm) {
  const auto d = make_synthetic(vec({1.0, 1.0, 1.0}), vec({0.4, -0.2, 0.1}), 5.0, 4);
  const auto c = landau_coefficients(net(1, 2, 0.3), d);
  EXPECT_NEAR(c.beta2, 0.0, 1e-14);
  EXPECT_NEAR(c.beta2_expansion, 0.0, 1e-14);
}

TEST(LandauCoefficients, QuadraticTermMatchesMinimiser) {
  // Second-order fit of s = d0 b*^2 against delta on a non-isotropic instance.
  const auto d = make_synthetic(vec({2.0, 0.5}), vec({0.6, 0.4}), 5.0, 2);
  const auto c = net(1, 2, 0.5);
  const auto lc = landau_coefficients(c, d);
  const double h = 2e-3;
  auto s = [&](double delta) {
    const auto r = minimize_b(lc.gamma_star + delta, c, d);
    return c.width * r.b * r.b;
  };
  const double s1 = s(-h), s2 = s(-2 * h);
  // s(-h) = -b1 h + b2 h^2, s(-2h) = -2 b1 h + 4 b2 h^2
  const double b2 = (s2 - 2 * s1) / (2 * h * h);
  const double b1 = -(4 * s1 - s2) / (2 * h);
  EXPECT_NEAR(b1, lc.beta1, 1e-4 * std::abs(lc.beta1));
  EXPECT_NEAR(b2, lc.beta2_expansion, 0.02 * std::abs(lc.beta2_expansion));
  EXPECT_GT(std::abs(lc.beta2 - lc.beta2_expansion), 0.1 * std::abs(lc.beta2_expansion));
}

TEST(LandauCoefficients, UndefinedWithoutSignal) {
  EXPECT_THROW((void)landau_coefficients(net(1), make_synthetic(vec({1.0}), vec({0.0}), 1.0, 0)),
               Undefined);
  EXPECT_THROW((void)landau_coefficients(net(2), scalar_instance()), InvalidInput);
}

TEST(SecondDerivativeLeft, FormulaValues) {
  EXPECT_NEAR(second_derivative_left_formula(net(1), scalar_instance()), -1.0, 1e-14);
  EXPECT_NEAR(second_derivative_left_formula(net(1), scalar_instance(2.0)), -0.5, 1e-14);
  EXPECT_NEAR(second_derivative_left_formula(net(1, 1, 1e12), scalar_instance()), 0.0, 1e-11);
}

TEST(SecondDerivativeLeft, ExpansionMatchesExactCurve) {
  // L = 1 - (0.5 - gamma)^2 gives L''(0.5-) = -2.
  EXPECT_NEAR(second_derivative_left_expansion(net(1), scalar_instance()), -2.0, 1e-14);
}

TEST(BStarBounds, HandValues) {
  // e0 = 0.5, a_max = 1
  const auto d = make_synthetic(vec({1.0, 0.3}), vec({0.5, 0.0}), 1.0, 5);
  const auto b = bstar_bounds(0.1, net(2, 2, 0.5), d);
  EXPECT_NEAR(b.lower, 0.1, 1e-14);
  EXPECT_NEAR(b.upper, std::cbrt(0.04), 1e-14);
  EXPECT_FALSE(b.empty);
  const auto at = bstar_bounds(0.5, net(2, 2, 0.5), d);
  EXPECT_NEAR(at.lower, 0.5, 1e-14);
}

TEST(BStarBounds, DeepLimit) {
  const auto d = scalar_instance();
  const auto b = bstar_bounds(0.3, net(400, 2, 0.5), d);
  EXPECT_NEAR(b.lower, 0.5, 1e-3);
  EXPECT_NEAR(b.upper, 1.0 / 2.5, 1e-2);
}

TEST(BStarBounds, DegenerateWithoutSignal) {
  const auto b = bstar_bounds(0.1, net(2), make_synthetic(vec({1.0}), vec({0.0}), 1.0, 0));
  EXPECT_TRUE(b.degenerate);
  EXPECT_EQ(b.lower, 0.0);
  EXPECT_EQ(b.upper, 0.0);
}

TEST(BStarBounds, SafeUpperBoundHoldsWhenSignalAvoidsTopEigenspace) {
  // Signal only along the small eigenvalue: the a_max version undercuts b*.
  const auto d = make_synthetic(vec({10.0, 0.1}), vec({0.0, 0.3}), 2.0, 1);
  const auto c = net(2, 1, 0.0);
  const double g = 0.01;
  const auto r = minimize_b(g, c, d);
  ASSERT_GT(r.b, 0.0);
  const auto b = bstar_bounds(g, c, d);
  EXPECT_GT(r.b, b.upper);
  EXPECT_LE(r.b, b.upper_safe);
  EXPECT_GE(r.b, b.lower);
}

TEST(MeanField, HandValues) {
  MeanFieldModel m;
  m.exy = 0.5;
  EXPECT_EQ(meanfield_loss(0.0, 0.25, net(1), m), 0.0);
  EXPECT_NEAR(meanfield_loss(1.0, 0.25, net(1), m), 0.75, 1e-15);
  EXPECT_NEAR(meanfield_loss(1.0, 0.25, net(2), m), 0.75, 1e-15);
  EXPECT_NEAR(meanfield_loss(-1.0, 0.25, net(2), m), 1.75, 1e-15);
  // even depth-1 polynomial is symmetric
  EXPECT_NEAR(meanfield_loss(-0.7, 0.25, net(1), m), meanfield_loss(0.7, 0.25, net(1), m), 1e-15);
}

TEST(MeanField, GeneralRegulariser) {
  MeanFieldModel m;
  m.exy = 0.5;
  NetConfig c = net(2);
  c.reg_exponent = 4;
  // b = 2: 4^3 ... c0 ex2 b^6 - c1 exy b^3 + gamma b^4
  EXPECT_NEAR(meanfield_loss(2.0, 0.1, c, m), 64.0 - 4.0 + 1.6, 1e-12);
}

TEST(DepthLimit, IsLabelMoment) {
  EXPECT_EQ(depth_limit_loss(scalar_instance()), 1.0);
  const auto z = make_synthetic(vec({1.0}), vec({0.0}), 0.0, 0);
  EXPECT_EQ(depth_limit_loss(z), 0.0);
  EXPECT_EQ(depth_limit_loss(scalar_instance()), effective_loss(0.0, 0.3, net(3), scalar_instance()));
}
