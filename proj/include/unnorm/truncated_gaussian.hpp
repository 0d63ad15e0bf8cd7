#pragma once

// The multivariate Gaussian truncated to the positive orthant as an
// exponential family, theta = (Sigma^{-1} mu, triu(-Sigma^{-1} / 2)) and
// S(x) = (x, triu(x x^T)).
//
// Layout: the triu block is the row-major upper triangle (i <= j). The
// off-diagonal entries of the statistic are 2 x_i x_j, so theta^T S(x) equals
// mu^T Sigma^{-1} x - x^T Sigma^{-1} x / 2 exactly.

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "unnorm/model.hpp"
#include "unnorm/numeric.hpp"

namespace unnorm {

struct TruncGaussParams {
  Vec mu;
  Mat sigma;

  int p() const { return static_cast<int>(mu.size()); }

  void validate() const {
    if (mu.size() < 1 || sigma.rows() != mu.size() || sigma.cols() != mu.size())
      throw std::invalid_argument("TruncGaussParams: dimension mismatch");
    if (!mu.allFinite() || !sigma.allFinite())
      throw std::invalid_argument("TruncGaussParams: non-finite entries");
    if (asymmetry(sigma) > 1e-12 * (1.0 + sigma.cwiseAbs().maxCoeff()))
      throw DomainError("TruncGaussParams: sigma is not symmetric");
    if (!is_positive_definite(sigma)) throw DomainError("TruncGaussParams: sigma is not SPD");
  }
};

/// q = p + p(p+1)/2.
constexpr int natural_dim(int p) { return p + p * (p + 1) / 2; }

/// Inverse of natural_dim; throws when q is not of that form.
inline int orthant_dim_from_natural(Eigen::Index q) {
  for (int p = 1; natural_dim(p) <= q; ++p) {
    if (natural_dim(p) == q) return p;
  }
  throw std::invalid_argument("natural parameter length is not p + p(p+1)/2");
}

/// Symmetric matrix from its row-major upper triangle.
inline Mat unpack_triu(const Eigen::Ref<const Vec>& packed, int p) {
  Mat out(p, p);
  Eigen::Index k = 0;
  for (int i = 0; i < p; ++i) {
    for (int j = i; j < p; ++j) {
      out(i, j) = packed(k);
      out(j, i) = packed(k);
      ++k;
    }
  }
  return out;
}

inline Vec pack_triu(const Mat& a) {
  const int p = static_cast<int>(a.rows());
  Vec out(p * (p + 1) / 2);
  Eigen::Index k = 0;
  for (int i = 0; i < p; ++i)
    for (int j = i; j < p; ++j) out(k++) = a(i, j);
  return out;
}

inline Vec natural_from_moment(const TruncGaussParams& params) {
  params.validate();
  const int p = params.p();
  Eigen::LLT<Mat> llt(params.sigma);
  const Mat precision = llt.solve(Mat::Identity(p, p));
  Vec theta(natural_dim(p));
  theta.head(p) = precision * params.mu;
  theta.tail(theta.size() - p) = pack_triu(-0.5 * precision);
  return theta;
}

/// Precision matrix -2 * unpack(triu block) implied by a natural parameter.
inline Mat precision_from_natural(const Vec& theta) {
  const int p = orthant_dim_from_natural(theta.size());
  return -2.0 * unpack_triu(theta.tail(theta.size() - p), p);
}

/// Returns nullopt when the implied precision is not positive definite, i.e.
/// theta lies outside Theta.
inline std::optional<TruncGaussParams> moment_from_natural(const Vec& theta) {
  const int p = orthant_dim_from_natural(theta.size());
  const Mat precision = precision_from_natural(theta);
  if (!theta.allFinite()) return std::nullopt;
  Eigen::LLT<Mat> llt(precision);
  if (llt.info() != Eigen::Success) return std::nullopt;
  TruncGaussParams out;
  out.sigma = symmetrized(llt.solve(Mat::Identity(p, p)));
  out.mu = out.sigma * theta.head(p);
  return out;
}

inline bool trunc_gauss_in_domain(const Vec& theta) {
  return theta.allFinite() && is_positive_definite(precision_from_natural(theta));
}

/// S(x) for each column of x (p x N) -> q x N.
inline Mat trunc_gauss_suff_stat(const Points& x) {
  const int p = static_cast<int>(x.rows());
  Mat s(natural_dim(p), x.cols());
  s.topRows(p) = x;
  Eigen::Index k = p;
  for (int i = 0; i < p; ++i) {
    for (int j = i; j < p; ++j) {
      const double c = (i == j) ? 1.0 : 2.0;
      s.row(k++) = c * x.row(i).cwiseProduct(x.row(j));
    }
  }
  return s;
}

inline ModelSpec trunc_gauss_model(int p) {
  if (p < 1) throw std::invalid_argument("trunc_gauss_model: p must be >= 1");
  return make_exp_family_model(natural_dim(p), trunc_gauss_suff_stat, trunc_gauss_in_domain);
}

/// P(W in (0, inf)^p) for W ~ N(mu, Sigma), by nested adaptive Gauss-Kronrod
/// quadrature over the leading coordinate. Supported for p <= 4.
inline double orthant_probability(const Vec& mu, const Mat& sigma) {
  const Eigen::Index p = mu.size();
  if (p < 1 || p > 4) throw std::invalid_argument("orthant_probability supports 1 <= p <= 4");
  const double s1 = std::sqrt(sigma(0, 0));
  if (p == 1) return normal_cdf(mu(0) / s1);

  const double upper = mu(0) + 12.0 * s1;
  if (upper <= 0.0) return 0.0;
  const double lower = std::max(0.0, mu(0) - 12.0 * s1);

  const Eigen::Index r = p - 1;
  const Vec cross = sigma.col(0).tail(r);
  const Mat cond_cov = sigma.bottomRightCorner(r, r) - cross * cross.transpose() / sigma(0, 0);
  auto integrand = [&](double w) {
    const Vec cond_mean = mu.tail(r) + cross * ((w - mu(0)) / sigma(0, 0));
    return normal_pdf((w - mu(0)) / s1) / s1 * orthant_probability(cond_mean, cond_cov);
  };
  using boost::math::quadrature::gauss_kronrod;
  double err = 0.0;
  return gauss_kronrod<double, 61>::integrate(integrand, lower, upper, 15, 1e-13, &err);
}

/// log Z(mu, Sigma) = (p/2) log(2 pi) + log|Sigma|/2 + mu^T Sigma^{-1} mu / 2
///                    + log P(W > 0),
/// for the kernel exp(theta^T S(x)) in natural coordinates.
inline double trunc_gauss_log_Z(const TruncGaussParams& params) {
  params.validate();
  const int p = params.p();
  Eigen::LLT<Mat> llt(params.sigma);
  const Mat l = llt.matrixL();
  const double log_det = 2.0 * l.diagonal().array().log().sum();
  const double quad = params.mu.dot(llt.solve(params.mu));
  double log_orthant = 0.0;
  if (p == 1) {
    log_orthant = log_normal_cdf(params.mu(0) / std::sqrt(params.sigma(0, 0)));
  } else {
    log_orthant = std::log(orthant_probability(params.mu, params.sigma));
  }
  return 0.5 * p * std::log(2.0 * std::numbers::pi) + 0.5 * log_det + 0.5 * quad + log_orthant;
}

/// Raw moments E[X^k], k = 0..4, of N(mu, sigma2) truncated to (0, inf).
inline std::array<double, 5> truncated_normal_moments(double mu, double sigma2) {
  if (!(sigma2 > 0.0)) throw DomainError("truncated_normal_moments: sigma2 must be > 0");
  const double s = std::sqrt(sigma2);
  std::array<double, 5> m{};
  m[0] = 1.0;
  m[1] = mu + s * inverse_mills(mu / s);
  for (int k = 2; k <= 4; ++k) m[k] = mu * m[k - 1] + (k - 1) * sigma2 * m[k - 2];
  return m;
}

/// A tractable 1-D model with its truth, used as a test oracle.
struct OracleModel {
  ModelSpec model;
  TruncGaussParams truth;
  Vec theta_star;
};

/// The 1-D truncated normal family with closed-form log Z and derivatives;
/// (mu, sigma2) fixes the truth.
inline OracleModel oracle_1d_model(double mu, double sigma2) {
  if (!(sigma2 > 0.0)) throw DomainError("oracle_1d_model: sigma2 must be > 0");
  OracleModel out;
  out.model = trunc_gauss_model(1);
  out.truth.mu = Vec::Constant(1, mu);
  out.truth.sigma = Mat::Constant(1, 1, sigma2);
  out.theta_star = natural_from_moment(out.truth);

  // theta = (mu / s2, -1 / (2 s2)).
  auto moments = [](const Vec& theta) {
    const double s2 = -0.5 / theta(1);
    return truncated_normal_moments(theta(0) * s2, s2);
  };
  out.model.log_Z = [](const Vec& theta) {
    if (!(theta(1) < 0.0)) return std::numeric_limits<double>::infinity();
    const double s2 = -0.5 / theta(1);
    const double m = theta(0) * s2;
    return 0.5 * std::log(2.0 * std::numbers::pi * s2) + log_normal_cdf(m / std::sqrt(s2)) +
           0.5 * m * m / s2;
  };
  out.model.grad_log_Z = [moments](const Vec& theta) -> Vec {
    if (!(theta(1) < 0.0)) throw DomainError("log Z is infinite outside Theta");
    const auto m = moments(theta);
    return Eigen::Vector2d(m[1], m[2]);
  };
  out.model.hess_log_Z = [moments](const Vec& theta) -> Mat {
    if (!(theta(1) < 0.0)) throw DomainError("log Z is infinite outside Theta");
    const auto m = moments(theta);
    Mat h(2, 2);
    h << m[2] - m[1] * m[1], m[3] - m[1] * m[2], m[3] - m[1] * m[2], m[4] - m[2] * m[2];
    return h;
  };
  return out;
}

/// Independent half-normal coordinates with scale sqrt(lambda): N(0, lambda I)
/// truncated to the positive orthant.
inline Proposal half_normal_proposal(double lambda, int p) {
  if (!(lambda > 0.0)) throw DomainError("half_normal_proposal: lambda must be > 0");
  if (p < 1) throw std::invalid_argument("half_normal_proposal: p must be >= 1");
  Proposal prop;
  prop.name = "half-normal";
  prop.log_h = [lambda](const Points& x) -> Vec {
    return -0.5 / lambda * x.colwise().squaredNorm().transpose();
  };
  prop.log_Z = p * (0.5 * std::log(2.0 * std::numbers::pi * lambda) - std::log(2.0));
  prop.natural = natural_from_moment({Vec::Zero(p), lambda * Mat::Identity(p, p)});
  return prop;
}

/// The truth itself used as proposal (psi = theta*).
inline Proposal trunc_gauss_proposal(const TruncGaussParams& params) {
  Proposal prop;
  prop.name = "truth";
  const Vec theta = natural_from_moment(params);
  prop.log_h = [theta](const Points& x) -> Vec {
    return trunc_gauss_suff_stat(x).transpose() * theta;
  };
  prop.log_Z = trunc_gauss_log_Z(params);
  prop.natural = theta;
  return prop;
}

}  // namespace unnorm
