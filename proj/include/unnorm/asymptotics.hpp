#pragma once

// Asymptotic comparisons of NCE and MC-MLE.
//
// Fixed n, m -> inf: m (xi_NCE - xi_IS) converges to n H^{-1} v, where H is
// the Hessian of the Poisson transform at the MLE and
//   v = (1/n) sum grad g(y_i) w(y_i) - E_psi[grad g w^2],  w = e^g / h_psi.
//
// n, m -> inf with m/n -> tau, IID artificial points: sandwich variances
//   V_IS  = J^{-1} (Sigma + Gamma/tau) J^{-1}
//   V_NCE = J_tau^{-1} (Sigma_tau + Gamma_tau/tau) J_tau^{-1}
// with Q = f_theta/f_psi, R = tau f_psi / (tau f_psi + f_theta) and
//   J = E_theta[G],  Sigma = Var_theta(grad g),  Gamma = Var_psi(grad g Q),
//   J_tau = E_theta[G R],  Sigma_tau = Var_theta(grad g R),
//   Gamma_tau = Var_psi(grad g Q R),
// where G = grad g grad g^T. Expectations are Monte Carlo averages over draws
// of the truth (Y) and of the proposal (X).

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "unnorm/linalg.hpp"
#include "unnorm/model.hpp"
#include "unnorm/numeric.hpp"
#include "unnorm/objectives.hpp"
#include "unnorm/sampling.hpp"
#include "unnorm/stats.hpp"
#include "unnorm/truncated_gaussian.hpp"

namespace unnorm {

// ---------------------------------------------------------------------------
// Fixed-n limit

struct Theorem2Limit {
  /// Limit of m (xi_NCE - xi_IS) as m -> inf.
  Vec limit;
  Vec v;
  Mat hessian;
};

/// E_psi[grad g(X) (e^{g(X)} / h_psi(X))^2] by adaptive quadrature on (0, inf);
/// one-dimensional sample spaces only.
inline Vec squared_weight_moment_quadrature(const ExtendedParam& xi, const ModelSpec& model,
                                            const Proposal& proposal) {
  if (!proposal.log_Z) throw UnsupportedOperation("quadrature needs the proposal's log Z");
  const Eigen::Index d = model.dim;
  Vec out(d + 1);
  for (Eigen::Index c = 0; c <= d; ++c) {
    auto integrand = [&](double t) {
      Points x(1, 1);
      x(0, 0) = t;
      const double g = model.log_h(xi.theta, x)(0) + xi.nu;
      const double log_h_psi = proposal.log_h(x)(0);
      const double grad = c < d ? model.grad_log_h(xi.theta, x)(c, 0) : 1.0;
      const double e = std::exp(2.0 * g - log_h_psi - *proposal.log_Z);
      return e == 0.0 ? 0.0 : grad * e;
    };
    double err = 0.0;
    out(c) = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
        integrand, 0.0, std::numeric_limits<double>::infinity(), 15, 1e-12, &err);
  }
  return out;
}

/// The same expectation as a Monte Carlo average over draws of psi.
inline Vec squared_weight_moment_mc(const ExtendedParam& xi, const ModelSpec& model,
                                    const Proposal& proposal, const Points& draws) {
  const auto t = detail::point_terms(model, xi.theta, draws, proposal.log_h(draws));
  const Vec w2 = (2.0 * (t.log_ratio.array() + xi.nu)).exp().matrix();
  return detail::weighted_column_sum(t.grad_g, w2) / static_cast<double>(draws.cols());
}

/// Limit of m (xi_NCE - xi_IS) at the MLE xi_hat, given the expectation
/// E_psi[grad g w^2] (from either helper above). The Hessian of the Poisson
/// transform requires a model with closed-form log Z.
inline Theorem2Limit theorem2_limit(const ExtendedParam& xi_hat, const Points& observed,
                                    const ModelSpec& model, const Proposal& proposal,
                                    const Vec& squared_weight_moment) {
  if (!proposal.log_Z) throw UnsupportedOperation("theorem2_limit needs the proposal's log Z");
  const Vec log_h_psi_y = proposal.log_h(observed);
  const ObjectiveEval pe =
      detail::poisson_eval(xi_hat, observed, log_h_psi_y, *proposal.log_Z, model);

  const auto ty = detail::point_terms(model, xi_hat.theta, observed, log_h_psi_y);
  const Vec w = (ty.log_ratio.array() + xi_hat.nu).exp().matrix();
  const double n = static_cast<double>(observed.cols());

  Theorem2Limit out;
  out.v = detail::weighted_column_sum(ty.grad_g, w) / n - squared_weight_moment;
  out.hessian = pe.hessian;
  Eigen::FullPivLU<Mat> lu(pe.hessian);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible())
    throw DomainError("Hessian of the Poisson transform at the MLE is not invertible");
  out.limit = n * lu.solve(out.v);
  return out;
}

// ---------------------------------------------------------------------------
// Q and R weights

/// Per-point Q = f_theta/f_psi and R = tau f_psi / (tau f_psi + f_theta) in
/// log space.
struct QRWeights {
  Vec log_q;
  Vec log_r;
  Vec log_one_minus_r;
  double tau = 1.0;

  static QRWeights from_log_q(const Vec& log_q, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("tau must be > 0");
    QRWeights w;
    w.tau = tau;
    w.log_q = log_q;
    const double lt = std::log(tau);
    w.log_r = log_q.unaryExpr([lt](double lq) { return -log1p_exp(lq - lt); });
    w.log_one_minus_r = log_q.unaryExpr([lt](double lq) { return -log1p_exp(lt - lq); });
    return w;
  }

  Vec q() const { return log_q.array().exp(); }
  Vec r() const { return log_r.array().exp(); }
  Vec one_minus_r() const { return log_one_minus_r.array().exp(); }
};

// ---------------------------------------------------------------------------
// Sandwich variances

enum class VarianceKind { nce, is, mle };

inline std::string_view to_string(VarianceKind k) {
  switch (k) {
    case VarianceKind::nce: return "NCE";
    case VarianceKind::is: return "IS";
    case VarianceKind::mle: return "MLE";
  }
  return "?";
}

struct VarianceReport {
  Mat J;
  Mat Sigma;
  Mat Gamma;
  Mat V;
  /// Bootstrap standard error of every entry of V.
  Mat V_se;
  double tau = 1.0;
  VarianceKind kind = VarianceKind::mle;
  Eigen::Index n_mc = 0;
  std::uint64_t seed = 0;
};

/// Everything needed to estimate the variances at xi* = (theta*, nu*).
struct VarianceProblem {
  ModelSpec model;
  ExtendedParam xi_star;
  Proposal proposal;
  std::function<Points(Eigen::Index, RngStream&)> sample_truth;
  std::function<Points(Eigen::Index, RngStream&)> sample_proposal;
};

/// Truncated Gaussian truth with a half-normal proposal of variance lambda.
/// nu* = log Z(psi) - log Z(theta*) uses the quadrature orthant probability.
inline VarianceProblem trunc_gauss_problem(const TruncGaussParams& truth, double lambda) {
  VarianceProblem pb;
  const int p = truth.p();
  pb.model = trunc_gauss_model(p);
  pb.proposal = half_normal_proposal(lambda, p);
  pb.xi_star = {natural_from_moment(truth), *pb.proposal.log_Z - trunc_gauss_log_Z(truth)};
  pb.sample_truth = [truth](Eigen::Index count, RngStream& rng) {
    return sample_truth_iid(truth, count, rng).points;
  };
  pb.sample_proposal = [lambda, p](Eigen::Index count, RngStream& rng) {
    return sample_proposal_iid(lambda, p, count, rng);
  };
  return pb;
}

/// Proposal equal to the truth: psi = theta*, nu* = 0.
inline VarianceProblem trunc_gauss_ideal_problem(const TruncGaussParams& truth) {
  VarianceProblem pb;
  pb.model = trunc_gauss_model(truth.p());
  const Vec theta = natural_from_moment(truth);
  pb.proposal.name = "truth";
  pb.proposal.log_h = [theta](const Points& x) -> Vec {
    return trunc_gauss_suff_stat(x).transpose() * theta;
  };
  pb.proposal.natural = theta;
  pb.xi_star = {theta, 0.0};
  auto sampler = [truth](Eigen::Index count, RngStream& rng) {
    return sample_truth_iid(truth, count, rng).points;
  };
  pb.sample_truth = sampler;
  pb.sample_proposal = sampler;
  return pb;
}

/// Sums (not means) of the per-point summands over one batch of Y and X draws.
struct MomentSums {
  Mat yy, yy_r, yy_r2, yy_rinv, yy_r1mr;  // sum G * {1, R, R^2, 1/R, R(1-R)} over Y
  Vec y, y_r;                             // sum grad g * {1, R} over Y
  Mat xx_q2, xx_q2r2;                     // sum G * {Q^2, Q^2 R^2} over X
  Vec x_q, x_qr;                          // sum grad g * {Q, QR} over X
  double ny = 0.0;
  double nx = 0.0;

  static MomentSums zero(Eigen::Index k) {
    MomentSums s;
    for (Mat* m : {&s.yy, &s.yy_r, &s.yy_r2, &s.yy_rinv, &s.yy_r1mr, &s.xx_q2, &s.xx_q2r2})
      *m = Mat::Zero(k, k);
    for (Vec* v : {&s.y, &s.y_r, &s.x_q, &s.x_qr}) *v = Vec::Zero(k);
    return s;
  }

  MomentSums& operator+=(const MomentSums& o) {
    yy += o.yy; yy_r += o.yy_r; yy_r2 += o.yy_r2; yy_rinv += o.yy_rinv; yy_r1mr += o.yy_r1mr;
    y += o.y; y_r += o.y_r;
    xx_q2 += o.xx_q2; xx_q2r2 += o.xx_q2r2;
    x_q += o.x_q; x_qr += o.x_qr;
    ny += o.ny; nx += o.nx;
    return *this;
  }
};

namespace detail {

inline Mat weighted_gram(const Mat& g, const Vec& w) {
  return (g.array().rowwise() * w.transpose().array()).matrix() * g.transpose();
}

inline Vec log_q_at(const VarianceProblem& pb, const Points& pts) {
  return pb.model.log_h(pb.xi_star.theta, pts).array() + pb.xi_star.nu -
         pb.proposal.log_h(pts).array();
}

inline Mat grad_g_at(const VarianceProblem& pb, const Points& pts) {
  const Mat grad = pb.model.grad_log_h(pb.xi_star.theta, pts);
  Mat out(grad.rows() + 1, grad.cols());
  out.topRows(grad.rows()) = grad;
  out.row(grad.rows()).setOnes();
  return out;
}

inline void accumulate_truth_side(MomentSums& s, const VarianceProblem& pb, const Points& y,
                                  double tau) {
  const Mat g = grad_g_at(pb, y);
  const auto w = QRWeights::from_log_q(log_q_at(pb, y), tau);
  const Vec r = w.r();
  const Vec ones = Vec::Ones(y.cols());
  s.yy += weighted_gram(g, ones);
  s.yy_r += weighted_gram(g, r);
  s.yy_r2 += weighted_gram(g, r.cwiseProduct(r));
  s.yy_rinv += weighted_gram(g, (-w.log_r).array().exp().matrix());
  s.yy_r1mr += weighted_gram(g, (w.log_r + w.log_one_minus_r).array().exp().matrix());
  s.y += g.rowwise().sum();
  s.y_r += g * r;
  s.ny += static_cast<double>(y.cols());
}

inline void accumulate_proposal_side(MomentSums& s, const VarianceProblem& pb, const Points& x,
                                     double tau) {
  const Mat g = grad_g_at(pb, x);
  const auto w = QRWeights::from_log_q(log_q_at(pb, x), tau);
  const Vec q = w.q();
  const Vec qr = (w.log_q + w.log_r).array().exp().matrix();
  s.xx_q2 += weighted_gram(g, q.cwiseProduct(q));
  s.xx_q2r2 += weighted_gram(g, qr.cwiseProduct(qr));
  s.x_q += g * q;
  s.x_qr += g * qr;
  s.nx += static_cast<double>(x.cols());
}

}  // namespace detail

/// The matrix A^+ E[grad g Z] E[grad g Z]^T A^+ with A = E[G Z], using
/// the pseudo-inverse with cutoff 1e-10 lambda_max. Equals diag(0, ..., 0, 1)
/// whenever the last entry of grad g is the constant 1.
inline Mat last_coordinate_projector(const Mat& second_moment, const Vec& first_moment) {
  const Mat pinv = symmetric_pinv(second_moment, 1e-10);
  return pinv * first_moment * first_moment.transpose() * pinv;
}

/// Point estimates assembled from moment sums at one tau.
struct VarianceEstimates {
  double tau = 1.0;
  Mat J, Sigma, Gamma, V_is;
  Mat J_tau, Sigma_tau, Gamma_tau, V_nce;
  Mat V_mle;
  Mat V_is_reduced, V_nce_reduced;
  Mat M_one, M_r;
  /// E[G R^{-1}] - E[G] E[G R]^{-1} E[G]; PSD by matrix Jensen.
  Mat jensen_gap;
  /// E_psi[G Q^2 R^2] and tau E_theta[G R (1 - R)]; equal by change of measure.
  Mat gamma_tau_psi_side, gamma_tau_theta_side;

  const Mat& V(VarianceKind k) const {
    return k == VarianceKind::nce ? V_nce : (k == VarianceKind::is ? V_is : V_mle);
  }
};

inline VarianceEstimates assemble_variances(const MomentSums& s, double tau) {
  VarianceEstimates e;
  e.tau = tau;
  const Mat e_yy = s.yy / s.ny, e_yy_r = s.yy_r / s.ny, e_yy_r2 = s.yy_r2 / s.ny;
  const Mat e_yy_rinv = s.yy_rinv / s.ny, e_yy_r1mr = s.yy_r1mr / s.ny;
  const Vec e_y = s.y / s.ny, e_y_r = s.y_r / s.ny;

  e.J = e_yy;
  e.Sigma = symmetrized(e_yy - e_y * e_y.transpose());
  e.J_tau = e_yy_r;
  e.Sigma_tau = symmetrized(e_yy_r2 - e_y_r * e_y_r.transpose());
  if (s.nx > 0.0) {
    const Mat e_xx_q2 = s.xx_q2 / s.nx, e_xx_q2r2 = s.xx_q2r2 / s.nx;
    const Vec e_x_q = s.x_q / s.nx, e_x_qr = s.x_qr / s.nx;
    e.Gamma = symmetrized(e_xx_q2 - e_x_q * e_x_q.transpose());
    e.Gamma_tau = symmetrized(e_xx_q2r2 - e_x_qr * e_x_qr.transpose());
    e.gamma_tau_psi_side = e_xx_q2r2;
  } else {
    e.Gamma = Mat::Zero(e.J.rows(), e.J.cols());
    e.Gamma_tau = e.Gamma;
    e.gamma_tau_psi_side = e.Gamma;
  }
  e.gamma_tau_theta_side = tau * e_yy_r1mr;

  const Mat j_inv = checked_inverse(e.J, "J (Fisher information)");
  const Mat jt_inv = checked_inverse(e.J_tau, "J_tau");
  e.V_mle = symmetrized(j_inv * e.Sigma * j_inv);
  e.V_is = symmetrized(j_inv * (e.Sigma + e.Gamma / tau) * j_inv);
  e.V_nce = symmetrized(jt_inv * (e.Sigma_tau + e.Gamma_tau / tau) * jt_inv);

  e.M_one = last_coordinate_projector(e_yy, e_y);
  e.M_r = last_coordinate_projector(e_yy_r, e_y_r);
  const double f = 1.0 + 1.0 / tau;
  e.V_is_reduced = symmetrized(j_inv * e_yy_rinv * j_inv - f * e.M_one);
  e.V_nce_reduced = symmetrized(jt_inv - f * e.M_r);
  e.jensen_gap = symmetrized(e_yy_rinv - e_yy * jt_inv * e_yy);
  return e;
}

/// Monte Carlo variance estimates at one tau with bootstrap replicates.
struct VarianceStudy {
  VarianceEstimates estimate;
  std::vector<VarianceEstimates> bootstrap;
  Eigen::Index n_mc = 0;
  std::uint64_t seed = 0;

  /// Bootstrap standard deviation of a scalar functional of the estimates.
  double bootstrap_se(const std::function<double(const VarianceEstimates&)>& f) const {
    if (bootstrap.size() < 2) return std::numeric_limits<double>::quiet_NaN();
    std::vector<double> vals;
    vals.reserve(bootstrap.size());
    for (const auto& b : bootstrap) vals.push_back(f(b));
    return std::sqrt(sample_variance(vals));
  }

  /// Entrywise bootstrap standard errors of a matrix functional.
  Mat bootstrap_se_matrix(const std::function<Mat(const VarianceEstimates&)>& f) const {
    const Mat centre = f(estimate);
    Mat sum = Mat::Zero(centre.rows(), centre.cols());
    Mat sum_sq = sum;
    for (const auto& b : bootstrap) {
      const Mat v = f(b);
      sum += v;
      sum_sq += v.cwiseProduct(v);
    }
    const double k = static_cast<double>(bootstrap.size());
    const Mat mean = sum / k;
    return ((sum_sq - k * mean.cwiseProduct(mean)) / (k - 1.0)).cwiseMax(0.0).cwiseSqrt();
  }

  VarianceReport report(VarianceKind kind) const {
    VarianceReport r;
    r.kind = kind;
    r.tau = estimate.tau;
    r.n_mc = n_mc;
    r.seed = seed;
    switch (kind) {
      case VarianceKind::nce:
        r.J = estimate.J_tau; r.Sigma = estimate.Sigma_tau; r.Gamma = estimate.Gamma_tau;
        break;
      case VarianceKind::is:
        r.J = estimate.J; r.Sigma = estimate.Sigma; r.Gamma = estimate.Gamma;
        break;
      case VarianceKind::mle:
        r.J = estimate.J; r.Sigma = estimate.Sigma;
        r.Gamma = Mat::Zero(estimate.J.rows(), estimate.J.cols());
        break;
    }
    r.V = estimate.V(kind);
    r.V_se = bootstrap_se_matrix([kind](const VarianceEstimates& e) { return e.V(kind); });
    return r;
  }
};

struct MonteCarloOptions {
  Eigen::Index mc_size = 1000000;
  Eigen::Index batches = 500;
  int bootstrap_resamples = 200;
  std::uint64_t seed = 1;
  /// Skip the proposal draws (only V_MLE and the reduced forms are then valid).
  bool truth_only = false;
};

/// Per-batch moment sums for a fixed pair of samples.
struct MomentBatches {
  std::vector<MomentSums> batches;
  double tau = 1.0;

  MomentSums total() const {
    MomentSums t = MomentSums::zero(batches.front().yy.rows());
    for (const auto& b : batches) t += b;
    return t;
  }
};

inline MomentBatches moment_batches(const VarianceProblem& pb, const Points& y, const Points& x,
                                    double tau, Eigen::Index n_batches) {
  if (n_batches < 2) throw std::invalid_argument("need at least two batches");
  const Eigen::Index k = pb.model.dim + 1;
  MomentBatches mb;
  mb.tau = tau;
  mb.batches.reserve(static_cast<size_t>(n_batches));
  for (Eigen::Index b = 0; b < n_batches; ++b) {
    MomentSums s = MomentSums::zero(k);
    const Eigen::Index y0 = b * y.cols() / n_batches, y1 = (b + 1) * y.cols() / n_batches;
    detail::accumulate_truth_side(s, pb, y.middleCols(y0, y1 - y0), tau);
    if (x.cols() > 0) {
      const Eigen::Index x0 = b * x.cols() / n_batches, x1 = (b + 1) * x.cols() / n_batches;
      detail::accumulate_proposal_side(s, pb, x.middleCols(x0, x1 - x0), tau);
    }
    mb.batches.push_back(std::move(s));
  }
  return mb;
}

/// Point estimates plus a batch bootstrap: Y-batches and X-batches are
/// resampled independently with replacement.
inline VarianceStudy study_from_batches(const MomentBatches& mb, int resamples, RngStream& rng) {
  VarianceStudy st;
  st.estimate = assemble_variances(mb.total(), mb.tau);
  const size_t nb = mb.batches.size();
  const Eigen::Index k = mb.batches.front().yy.rows();
  st.bootstrap.reserve(static_cast<size_t>(resamples));
  for (int r = 0; r < resamples; ++r) {
    MomentSums s = MomentSums::zero(k);
    for (size_t i = 0; i < nb; ++i) {
      const auto& by = mb.batches[rng.index(nb)];
      s.yy += by.yy; s.yy_r += by.yy_r; s.yy_r2 += by.yy_r2; s.yy_rinv += by.yy_rinv;
      s.yy_r1mr += by.yy_r1mr; s.y += by.y; s.y_r += by.y_r; s.ny += by.ny;
      const auto& bx = mb.batches[rng.index(nb)];
      s.xx_q2 += bx.xx_q2; s.xx_q2r2 += bx.xx_q2r2; s.x_q += bx.x_q; s.x_qr += bx.x_qr;
      s.nx += bx.nx;
    }
    st.bootstrap.push_back(assemble_variances(s, mb.tau));
  }
  return st;
}

/// Draws mc_size truth points and mc_size proposal points, then estimates
/// every variance at tau with bootstrap standard errors.
inline VarianceStudy estimate_variances(const VarianceProblem& pb, double tau,
                                        const MonteCarloOptions& opts) {
  RngStream y_rng(opts.seed, stream_key({1, 0}));
  RngStream x_rng(opts.seed, stream_key({2, 0}));
  RngStream b_rng(opts.seed, stream_key({3, 0}));
  const Points y = pb.sample_truth(opts.mc_size, y_rng);
  const Points x = opts.truth_only ? Points(y.rows(), 0) : pb.sample_proposal(opts.mc_size, x_rng);
  VarianceStudy st = study_from_batches(moment_batches(pb, y, x, tau, opts.batches),
                                        opts.bootstrap_resamples, b_rng);
  st.n_mc = opts.mc_size;
  st.seed = opts.seed;
  return st;
}

inline VarianceReport asy_variance(VarianceKind kind, const VarianceProblem& pb, double tau,
                                   const MonteCarloOptions& opts) {
  MonteCarloOptions o = opts;
  if (kind == VarianceKind::mle) o.truth_only = true;
  return estimate_variances(pb, tau, o).report(kind);
}

/// The reduced forms (V_IS, V_NCE), built from truth draws only:
///   V_IS  = E[G]^{-1} E[G/R] E[G]^{-1} - (1 + 1/tau) M
///   V_NCE = E[G R]^{-1} - (1 + 1/tau) M
inline std::pair<Mat, Mat> reduced_variance_forms(const VarianceProblem& pb, double tau,
                                                  const MonteCarloOptions& opts) {
  MonteCarloOptions o = opts;
  o.truth_only = true;
  o.bootstrap_resamples = 0;
  const auto st = estimate_variances(pb, tau, o);
  return {st.estimate.V_is_reduced, st.estimate.V_nce_reduced};
}

/// lambda_min of the symmetrised difference V_is - V_nce.
inline double loewner_gap(const Mat& v_is, const Mat& v_nce) {
  if (v_is.rows() != v_nce.rows() || v_is.cols() != v_nce.cols() || v_is.rows() != v_is.cols())
    throw std::invalid_argument("loewner_gap: dimension mismatch");
  return min_eigenvalue(v_is - v_nce);
}

/// Experimental: Gamma for correlated artificial points, the long-run
/// covariance of phi(X_j) along a chain (initial positive sequence truncation).
/// phi = grad g Q R for NCE and grad g Q for IS.
inline Mat chain_gamma(VarianceKind kind, const VarianceProblem& pb, const Points& chain,
                       double tau) {
  const Mat g = detail::grad_g_at(pb, chain);
  const auto w = QRWeights::from_log_q(detail::log_q_at(pb, chain), tau);
  const Vec weight = kind == VarianceKind::nce ? Vec((w.log_q + w.log_r).array().exp()) : w.q();
  return initial_positive_sequence_covariance(g.array().rowwise() * weight.transpose().array());
}

}  // namespace unnorm
