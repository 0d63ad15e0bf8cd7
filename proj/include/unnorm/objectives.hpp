#pragma once

// Objective functions over the extended parameter xi = (theta, nu), each with
// its exact gradient and Hessian:
//
//   poisson_loglik  (1/n) sum log(h_theta/h_psi)(y_i) + nu - e^nu Z(theta)/Z(psi)
//   is_loglik       (1/n) sum log(h_theta/h_psi)(y_i) + nu
//                     - (e^nu/m) sum (h_theta/h_psi)(x_j)
//   is_loglik_ratio the same with nu profiled out, as a function of theta
//   nce_loglik      sum_i log q(y_i) + sum_j log(1 - q(x_j)),
//                     logit q(x) = log(h_theta/h_psi)(x) + nu + log(n/m)
//
// Writing g(x) = log h_theta(x) + nu, grad g = (grad log h_theta, 1).

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "unnorm/linalg.hpp"
#include "unnorm/model.hpp"
#include "unnorm/numeric.hpp"

namespace unnorm {

class UnsupportedOperation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Observed points y_1..y_n and artificial points x_1..x_m (columns), with the
/// proposal log-kernel log h_psi evaluated once at every point.
struct Dataset {
  Points observed;
  Points artificial;
  Vec log_h_psi_observed;
  Vec log_h_psi_artificial;
  std::optional<double> proposal_log_Z;
  /// Natural parameter of psi when it lies in the model family.
  std::optional<Vec> proposal_natural;

  static Dataset build(Points y, Points x, const Proposal& proposal) {
    Dataset d;
    d.log_h_psi_observed = proposal.log_h(y);
    d.log_h_psi_artificial = proposal.log_h(x);
    d.observed = std::move(y);
    d.artificial = std::move(x);
    d.proposal_log_Z = proposal.log_Z;
    d.proposal_natural = proposal.natural;
    d.validate();
    return d;
  }

  Eigen::Index n() const { return observed.cols(); }
  Eigen::Index m() const { return artificial.cols(); }
  double tau() const { return static_cast<double>(m()) / static_cast<double>(n()); }

  void validate() const {
    if (n() < 1 || m() < 1) throw std::invalid_argument("Dataset: need n >= 1 and m >= 1");
    if (observed.rows() != artificial.rows())
      throw std::invalid_argument("Dataset: observed and artificial dimensions differ");
    if (!observed.allFinite() || !artificial.allFinite())
      throw std::invalid_argument("Dataset: non-finite data point");
    if (log_h_psi_observed.size() != n() || log_h_psi_artificial.size() != m())
      throw std::invalid_argument("Dataset: proposal log-kernel has wrong length");
    if (!log_h_psi_observed.allFinite() || !log_h_psi_artificial.allFinite())
      throw std::invalid_argument("Dataset: point outside the proposal support");
  }
};

struct ObjectiveEval {
  double value = 0.0;
  Vec gradient;
  Mat hessian;
};

namespace detail {

/// Per-point log(h_theta / h_psi) and grad g for one block of points.
struct PointTerms {
  Vec log_ratio;  // log h_theta(x) - log h_psi(x)
  Mat grad_g;     // (d+1) x N
};

inline PointTerms point_terms(const ModelSpec& model, const Vec& theta, const Points& x,
                              const Vec& log_h_psi) {
  PointTerms t;
  t.log_ratio = model.log_h(theta, x) - log_h_psi;
  if (t.log_ratio.hasNaN()) throw std::invalid_argument("NaN in log importance ratio");
  const Mat grad = model.grad_log_h(theta, x);
  t.grad_g.resize(grad.rows() + 1, grad.cols());
  t.grad_g.topRows(grad.rows()) = grad;
  t.grad_g.row(grad.rows()).setOnes();
  return t;
}

/// sum_k w_k * column_k with compensated accumulation per row.
inline Vec weighted_column_sum(const Mat& cols, const Vec& w) {
  Vec out(cols.rows());
  for (Eigen::Index r = 0; r < cols.rows(); ++r) {
    CompensatedSum acc;
    for (Eigen::Index k = 0; k < cols.cols(); ++k) acc.add(w(k) * cols(r, k));
    out(r) = acc.value();
  }
  return out;
}

inline Vec column_mean(const Mat& cols) {
  return weighted_column_sum(cols, Vec::Ones(cols.cols())) / static_cast<double>(cols.cols());
}

/// sum_k w_k * hess_g(x_k); zero for models linear in theta.
inline Mat weighted_hessian_sum(const ModelSpec& model, const Vec& theta, const Points& x,
                                const Vec& w) {
  const Eigen::Index d = model.dim;
  Mat out = Mat::Zero(d + 1, d + 1);
  if (model.linear_in_theta) return out;
  for (Eigen::Index k = 0; k < x.cols(); ++k) {
    out.topLeftCorner(d, d) += w(k) * model.hessian_at(theta, x.col(k));
  }
  return out;
}

inline void check_param(const ExtendedParam& xi, const ModelSpec& model) {
  if (xi.theta.size() != model.dim)
    throw std::invalid_argument("parameter dimension does not match the model");
  if (!xi.all_finite()) throw std::invalid_argument("non-finite parameter");
}

}  // namespace detail

namespace detail {

inline ObjectiveEval poisson_eval(const ExtendedParam& xi, const Points& observed,
                                  const Vec& log_h_psi_observed, double proposal_log_Z,
                                  const ModelSpec& model) {
  if (!model.has_log_Z())
    throw UnsupportedOperation("poisson_loglik needs a model with a closed-form log Z");
  check_param(xi, model);
  const Eigen::Index d = model.dim;
  const Eigen::Index n = observed.cols();
  const auto ty = point_terms(model, xi.theta, observed, log_h_psi_observed);

  // c = e^nu Z(theta) / Z(psi)
  const double c = std::exp(xi.nu + model.log_Z(xi.theta) - proposal_log_Z);

  ObjectiveEval out;
  out.value = compensated_mean({ty.log_ratio.data(), static_cast<size_t>(ty.log_ratio.size())}) +
              xi.nu - c;
  if (!std::isfinite(out.value)) {
    out.gradient = Vec::Constant(d + 1, std::numeric_limits<double>::quiet_NaN());
    out.hessian = Mat::Constant(d + 1, d + 1, std::numeric_limits<double>::quiet_NaN());
    return out;
  }
  Vec dz(d + 1);
  dz << model.grad_log_Z(xi.theta), 1.0;
  out.gradient = column_mean(ty.grad_g) - c * dz;

  Mat hz = Mat::Zero(d + 1, d + 1);
  hz.topLeftCorner(d, d) = model.hess_log_Z(xi.theta);
  out.hessian = weighted_hessian_sum(model, xi.theta, observed,
                                     Vec::Constant(n, 1.0 / static_cast<double>(n))) -
                c * (hz + dz * dz.transpose());
  out.hessian = symmetrized(out.hessian);
  return out;
}

}  // namespace detail

/// Needs log Z for both the model and the proposal; the artificial points are
/// not used.
inline ObjectiveEval poisson_loglik(const ExtendedParam& xi, const Dataset& data,
                                    const ModelSpec& model) {
  if (!data.proposal_log_Z)
    throw UnsupportedOperation("poisson_loglik needs the proposal's log Z");
  return detail::poisson_eval(xi, data.observed, data.log_h_psi_observed, *data.proposal_log_Z,
                              model);
}

inline ObjectiveEval is_loglik(const ExtendedParam& xi, const Dataset& data,
                               const ModelSpec& model) {
  detail::check_param(xi, model);
  const auto ty = detail::point_terms(model, xi.theta, data.observed, data.log_h_psi_observed);
  const auto tx = detail::point_terms(model, xi.theta, data.artificial, data.log_h_psi_artificial);
  const double n = static_cast<double>(data.n());
  const double log_m = std::log(static_cast<double>(data.m()));

  const std::span<const double> lr_x(tx.log_ratio.data(), static_cast<size_t>(tx.log_ratio.size()));
  const double log_mean_w = log_sum_exp(lr_x) - log_m;

  ObjectiveEval out;
  out.value = compensated_mean({ty.log_ratio.data(), static_cast<size_t>(ty.log_ratio.size())}) +
              xi.nu - std::exp(xi.nu + log_mean_w);
  // e^nu h_theta/h_psi (x_j) / m
  const Vec w = (tx.log_ratio.array() + (xi.nu - log_m)).exp().matrix();
  out.gradient = detail::column_mean(ty.grad_g) - detail::weighted_column_sum(tx.grad_g, w);
  out.hessian = detail::weighted_hessian_sum(model, xi.theta, data.observed, Vec::Constant(data.n(), 1.0 / n)) -
                detail::weighted_hessian_sum(model, xi.theta, data.artificial, w) -
                tx.grad_g * w.asDiagonal() * tx.grad_g.transpose();
  out.hessian = symmetrized(out.hessian);
  return out;
}

/// The nu that maximises is_loglik at fixed theta: -log of the mean importance
/// weight (1/m) sum h_theta(x_j)/h_psi(x_j).
inline double profile_nu(const Vec& theta, const Dataset& data, const ModelSpec& model) {
  const Vec lr = model.log_h(theta, data.artificial) - data.log_h_psi_artificial;
  if (lr.hasNaN()) throw std::invalid_argument("NaN in log importance ratio");
  return -(log_sum_exp({lr.data(), static_cast<size_t>(lr.size())}) -
           std::log(static_cast<double>(data.m())));
}

/// The ratio form of the MC-MLE objective, a function of theta only. It equals
/// max_nu is_loglik(theta, nu) + 1.
inline double is_loglik_ratio(const Vec& theta, const Dataset& data, const ModelSpec& model) {
  const Vec lr_y = model.log_h(theta, data.observed) - data.log_h_psi_observed;
  if (lr_y.hasNaN()) throw std::invalid_argument("NaN in log importance ratio");
  return compensated_mean({lr_y.data(), static_cast<size_t>(lr_y.size())}) +
         profile_nu(theta, data, model);
}

/// is_loglik_ratio with its gradient and Hessian in theta.
inline ObjectiveEval is_loglik_ratio_eval(const Vec& theta, const Dataset& data,
                                          const ModelSpec& model) {
  const Eigen::Index d = model.dim;
  const auto ty = detail::point_terms(model, theta, data.observed, data.log_h_psi_observed);
  const auto tx = detail::point_terms(model, theta, data.artificial, data.log_h_psi_artificial);
  const std::span<const double> lr_x(tx.log_ratio.data(), static_cast<size_t>(tx.log_ratio.size()));
  const double lse = log_sum_exp(lr_x);

  ObjectiveEval out;
  out.value = compensated_mean({ty.log_ratio.data(), static_cast<size_t>(ty.log_ratio.size())}) -
              (lse - std::log(static_cast<double>(data.m())));
  // Self-normalised weights.
  const Vec pi = (tx.log_ratio.array() - lse).exp().matrix();
  const Mat fx = tx.grad_g.topRows(d);
  const Vec mean_x = detail::weighted_column_sum(fx, pi);
  out.gradient = detail::column_mean(ty.grad_g).head(d) - mean_x;

  const double n = static_cast<double>(data.n());
  Mat hy = detail::weighted_hessian_sum(model, theta, data.observed, Vec::Constant(data.n(), 1.0 / n));
  Mat hx = detail::weighted_hessian_sum(model, theta, data.artificial, pi);
  out.hessian = hy.topLeftCorner(d, d) - hx.topLeftCorner(d, d) -
                (fx * pi.asDiagonal() * fx.transpose() - mean_x * mean_x.transpose());
  out.hessian = symmetrized(out.hessian);
  return out;
}

inline ObjectiveEval nce_loglik(const ExtendedParam& xi, const Dataset& data,
                                const ModelSpec& model) {
  detail::check_param(xi, model);
  const auto ty = detail::point_terms(model, xi.theta, data.observed, data.log_h_psi_observed);
  const auto tx = detail::point_terms(model, xi.theta, data.artificial, data.log_h_psi_artificial);
  const double offset = xi.nu + std::log(static_cast<double>(data.n())) -
                        std::log(static_cast<double>(data.m()));

  // Log-odds s; log q = -log1p(e^{-s}), log(1-q) = -log1p(e^{s}).
  const Vec s_y = ty.log_ratio.array() + offset;
  const Vec s_x = tx.log_ratio.array() + offset;

  CompensatedSum value;
  Vec one_minus_q_y(s_y.size()), curv_y(s_y.size());
  for (Eigen::Index i = 0; i < s_y.size(); ++i) {
    value.add(-log1p_exp(-s_y(i)));
    one_minus_q_y(i) = logistic(-s_y(i));
    curv_y(i) = logistic(s_y(i)) * one_minus_q_y(i);
  }
  Vec q_x(s_x.size()), curv_x(s_x.size());
  for (Eigen::Index j = 0; j < s_x.size(); ++j) {
    value.add(-log1p_exp(s_x(j)));
    q_x(j) = logistic(s_x(j));
    curv_x(j) = q_x(j) * logistic(-s_x(j));
  }

  ObjectiveEval out;
  out.value = value.value();
  out.gradient = detail::weighted_column_sum(ty.grad_g, one_minus_q_y) -
                 detail::weighted_column_sum(tx.grad_g, q_x);
  out.hessian = detail::weighted_hessian_sum(model, xi.theta, data.observed, one_minus_q_y) -
                detail::weighted_hessian_sum(model, xi.theta, data.artificial, q_x) -
                ty.grad_g * curv_y.asDiagonal() * ty.grad_g.transpose() -
                tx.grad_g * curv_x.asDiagonal() * tx.grad_g.transpose();
  out.hessian = symmetrized(out.hessian);
  return out;
}

}  // namespace unnorm
