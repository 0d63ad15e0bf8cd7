#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "unnorm/objectives.hpp"
#include "unnorm/truncated_gaussian.hpp"

using namespace unnorm;

namespace {

TruncGaussParams reference_truth() {
  Mat s(3, 3);
  s << 1.0, 0.5, 1.0, 0.5, 1.5, 0.3, 1.0, 0.3, 2.0;
  return {Eigen::Vector3d(1.0, -1.0, 0.5), s};
}

Mat random_spd(int p, std::mt19937_64& gen) {
  std::normal_distribution<double> z;
  Mat a(p, p);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j) a(i, j) = z(gen);
  return a * a.transpose() + 0.5 * Mat::Identity(p, p);
}

Points random_positive_points(int p, int count, std::mt19937_64& gen) {
  std::exponential_distribution<double> e(1.0);
  Points x(p, count);
  for (int j = 0; j < count; ++j)
    for (int i = 0; i < p; ++i) x(i, j) = e(gen);
  return x;
}

}  // namespace

TEST(NaturalParam, OneDimensional) {
  const Vec theta = natural_from_moment({Vec::Constant(1, 1.0), Mat::Constant(1, 1, 2.0)});
  ASSERT_EQ(theta.size(), 2);
  EXPECT_DOUBLE_EQ(theta(0), 0.5);
  EXPECT_DOUBLE_EQ(theta(1), -0.25);
}

TEST(NaturalParam, IdentityCovariance) {
  const Vec theta = natural_from_moment({Vec::Zero(2), Mat::Identity(2, 2)});
  Vec expected(5);
  expected << 0.0, 0.0, -0.5, 0.0, -0.5;
  EXPECT_LT((theta - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(NaturalParam, LogKernelMatchesQuadraticForm) {
  const auto truth = reference_truth();
  const Vec theta = natural_from_moment(truth);
  const Mat prec = oracle::gauss_jordan_inverse(truth.sigma);
  std::mt19937_64 gen(11);
  const Points x = random_positive_points(3, 10, gen);
  const Vec lk = trunc_gauss_suff_stat(x).transpose() * theta;
  // theta^T S(x) + 1/2 (x - mu)^T P (x - mu) must be the same constant for every x.
  std::vector<double> consts;
  for (int j = 0; j < 10; ++j) {
    const Vec d = x.col(j) - truth.mu;
    consts.push_back(lk(j) + 0.5 * d.dot(prec * d));
  }
  for (double c : consts) EXPECT_NEAR(c, consts.front(), 1e-12);
  EXPECT_NEAR(consts.front(), 0.5 * truth.mu.dot(prec * truth.mu), 1e-12);
}

TEST(NaturalParam, NonSpdIsRejected) {
  Mat s(2, 2);
  s << 1.0, 2.0, 2.0, 1.0;
  EXPECT_THROW(natural_from_moment({Vec::Zero(2), s}), DomainError);
}

TEST(MomentParam, InverseOfOneDimensionalExample) {
  Vec theta(2);
  theta << 0.5, -0.25;
  const auto params = moment_from_natural(theta);
  ASSERT_TRUE(params.has_value());
  EXPECT_NEAR(params->mu(0), 1.0, 1e-15);
  EXPECT_NEAR(params->sigma(0, 0), 2.0, 1e-15);
}

TEST(MomentParam, ZeroPrecisionIsOutOfDomain) {
  Vec theta(5);
  theta << 1.0, 2.0, 0.0, 0.0, 0.0;
  EXPECT_FALSE(moment_from_natural(theta).has_value());
  EXPECT_FALSE(trunc_gauss_in_domain(theta));
  EXPECT_FALSE(trunc_gauss_model(2).in_domain(theta));
}

TEST(MomentParam, RandomRoundTrip) {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> z;
  for (int rep = 0; rep < 100; ++rep) {
    const int p = 1 + rep % 4;
    TruncGaussParams params{Vec(p), random_spd(p, gen)};
    for (int i = 0; i < p; ++i) params.mu(i) = z(gen);
    const auto back = moment_from_natural(natural_from_moment(params));
    ASSERT_TRUE(back.has_value());
    EXPECT_LT(oracle::rel_err(back->sigma, params.sigma), 1e-12);
    EXPECT_LT(oracle::rel_err(back->mu, params.mu), 1e-12);
  }
}

TEST(ExpFamily, InducedDerivatives) {
  const ModelSpec model = trunc_gauss_model(3);
  std::mt19937_64 gen(5);
  const Points x = random_positive_points(3, 4, gen);
  const Vec theta = natural_from_moment(reference_truth());
  const Mat s = trunc_gauss_suff_stat(x);
  EXPECT_EQ(model.log_h(theta, x), Vec(s.transpose() * theta));
  EXPECT_EQ(model.grad_log_h(theta, x), s);
  EXPECT_EQ(model.grad_log_h(theta * 2.0, x), s);
  EXPECT_TRUE(model.hess_log_h(theta, x.col(0)).isZero(0.0));
  EXPECT_TRUE(model.linear_in_theta);
}

TEST(ExpFamily, GradientsMatchFiniteDifferences) {
  const ModelSpec model = trunc_gauss_model(2);
  std::mt19937_64 gen(8);
  std::normal_distribution<double> z;
  for (int rep = 0; rep < 10; ++rep) {
    const Points x = random_positive_points(2, 1, gen);
    Vec theta(5);
    for (int i = 0; i < 5; ++i) theta(i) = z(gen);
    const Vec fd = oracle::fd_gradient([&](const Vec& t) { return model.log_h(t, x)(0); }, theta);
    EXPECT_LT(oracle::rel_err(model.grad_log_h(theta, x).col(0), fd), 1e-5);
    const Mat hfd = oracle::fd_jacobian(
        [&](const Vec& t) -> Vec { return model.grad_log_h(t, x).col(0); }, theta);
    EXPECT_LT(hfd.cwiseAbs().maxCoeff(), 1e-4);
  }
}

TEST(OracleModel, HalfNormalMass) {
  const auto om = oracle_1d_model(0.0, 1.0);
  EXPECT_NEAR(om.model.log_Z(om.theta_star), std::log(std::sqrt(2.0 * std::numbers::pi) * 0.5),
              1e-14);
}

TEST(OracleModel, LogZMatchesQuadrature) {
  const auto om = oracle_1d_model(1.0, 2.0);
  const Vec t = om.theta_star;
  const double z = oracle::simpson(
      [&](double x) { return std::exp(t(0) * x + t(1) * x * x); }, 0.0, 40.0, 200000);
  EXPECT_NEAR(om.model.log_Z(t), std::log(z), 1e-8);
}

TEST(OracleModel, LogZDerivativesMatchFiniteDifferences) {
  const auto om = oracle_1d_model(1.0, 2.0);
  for (const Vec& t : {om.theta_star, Vec(Eigen::Vector2d(-0.7, -0.9)),
                       Vec(Eigen::Vector2d(2.0, -0.3))}) {
    const Vec fd = oracle::fd_gradient(om.model.log_Z, t);
    EXPECT_LT(oracle::rel_err(om.model.grad_log_Z(t), fd), 1e-8);
    const Mat hfd = oracle::fd_jacobian(om.model.grad_log_Z, t);
    EXPECT_LT(oracle::rel_err(om.model.hess_log_Z(t), hfd), 1e-6);
  }
}

TEST(OracleModel, OutsideThetaIsInfinite) {
  const auto om = oracle_1d_model(1.0, 2.0);
  EXPECT_TRUE(std::isinf(om.model.log_Z(Vec(Eigen::Vector2d(0.3, 0.1)))));
  EXPECT_FALSE(om.model.in_domain(Vec(Eigen::Vector2d(0.3, 0.0))));
}

TEST(OracleModel, NuStarVanishesAtProposal) {
  const auto om = oracle_1d_model(0.0, 4.0);
  const Proposal psi = half_normal_proposal(4.0, 1);
  EXPECT_NEAR(*psi.log_Z - om.model.log_Z(*psi.natural), 0.0, 1e-14);
}

TEST(OracleModel, RejectsNonPositiveVariance) {
  EXPECT_THROW(oracle_1d_model(1.0, 0.0), DomainError);
  EXPECT_THROW(oracle_1d_model(1.0, -2.0), DomainError);
}

TEST(Orthant, MatchesIndependentNestedQuadrature) {
  // Nested adaptive quadrature in scipy (conditioning on x1 then x2).
  const auto truth = reference_truth();
  EXPECT_NEAR(orthant_probability(truth.mu, truth.sigma), 0.14912789157050757, 1e-12);
}

TEST(Orthant, ClosedFormCases) {
  EXPECT_NEAR(orthant_probability(Vec::Zero(2), Mat::Identity(2, 2)), 0.25, 1e-12);
  // Bivariate orthant with correlation r: 1/4 + asin(r) / (2 pi).
  Mat s(2, 2);
  s << 1.0, 0.6, 0.6, 1.0;
  EXPECT_NEAR(orthant_probability(Vec::Zero(2), s), 0.25 + std::asin(0.6) / (2 * std::numbers::pi),
              1e-12);
  EXPECT_NEAR(orthant_probability(Vec::Zero(3), Mat::Identity(3, 3)), 0.125, 1e-12);
}

TEST(Orthant, LogZAgreesWithOneDimensionalClosedForm) {
  const auto om = oracle_1d_model(1.0, 2.0);
  EXPECT_NEAR(trunc_gauss_log_Z(om.truth), om.model.log_Z(om.theta_star), 1e-13);
}

TEST(Concavity, ExpFamilyNceObjective) {
  std::mt19937_64 gen(21);
  const ModelSpec model = trunc_gauss_model(2);
  const Proposal psi = half_normal_proposal(2.0, 2);
  const Dataset data = Dataset::build(random_positive_points(2, 40, gen),
                                      random_positive_points(2, 60, gen), psi);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 50; ++rep) {
    Vec a(6), b(6);
    for (int i = 0; i < 6; ++i) {
      a(i) = z(gen);
      b(i) = z(gen);
    }
    const double t = u(gen);
    auto f = [&](const Vec& xi) {
      return nce_loglik(ExtendedParam::from_stacked(xi), data, model).value;
    };
    EXPECT_GE(f(t * a + (1 - t) * b), t * f(a) + (1 - t) * f(b) - 1e-10);
  }
}
