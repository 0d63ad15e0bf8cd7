#pragma once

// Parameters and evaluator bundles for un-normalised models
// f_theta(x) = h_theta(x) / Z(theta).

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

#include "unnorm/linalg.hpp"

namespace unnorm {

/// The extended parameter (theta, nu): theta is the model parameter and nu a
/// free log-normalising offset, so that a maximiser of the Poisson transform
/// has nu = log(Z(psi) / Z(theta)).
struct ExtendedParam {
  Vec theta;
  double nu = 0.0;

  ExtendedParam() = default;
  ExtendedParam(Vec t, double n) : theta(std::move(t)), nu(n) {}

  Eigen::Index dim() const { return theta.size(); }

  /// (theta, nu) as one vector of length dim() + 1.
  Vec stacked() const {
    Vec out(theta.size() + 1);
    out << theta, nu;
    return out;
  }

  static ExtendedParam from_stacked(const Vec& xi) {
    if (xi.size() < 2) throw std::invalid_argument("extended parameter needs d >= 1");
    return {xi.head(xi.size() - 1), xi(xi.size() - 1)};
  }

  bool all_finite() const { return theta.allFinite() && std::isfinite(nu); }
};

/// Evaluators for log h_theta and its theta-derivatives. Evaluation is batched
/// over the columns of a Points matrix.
struct ModelSpec {
  int dim = 0;
  /// log h_theta(x_k) for every column x_k.
  std::function<Vec(const Vec& theta, const Points& x)> log_h;
  /// Column k holds grad_theta log h_theta(x_k); dim x N.
  std::function<Mat(const Vec& theta, const Points& x)> grad_log_h;
  /// Hessian in theta at one point.
  std::function<Mat(const Vec& theta, const Eigen::Ref<const Vec>& x)> hess_log_h;
  /// Set when log h is linear in theta, so hess_log_h is identically zero and
  /// the objectives may skip it.
  bool linear_in_theta = false;
  /// Membership of theta in the parameter space Theta.
  std::function<bool(const Vec& theta)> domain_check;
  /// Sufficient statistic S(x) for exponential families (dim x N), else empty.
  std::function<Mat(const Points& x)> suff_stat;

  /// Only oracle models with a closed-form normalising constant set these.
  std::function<double(const Vec& theta)> log_Z;
  std::function<Vec(const Vec& theta)> grad_log_Z;
  std::function<Mat(const Vec& theta)> hess_log_Z;

  bool has_log_Z() const { return static_cast<bool>(log_Z) && grad_log_Z && hess_log_Z; }
  bool is_exp_family() const { return static_cast<bool>(suff_stat); }

  bool in_domain(const Vec& theta) const {
    return theta.allFinite() && (!domain_check || domain_check(theta));
  }

  Mat hessian_at(const Vec& theta, const Eigen::Ref<const Vec>& x) const {
    if (linear_in_theta || !hess_log_h) return Mat::Zero(dim, dim);
    return hess_log_h(theta, x);
  }
};

/// Builds the model h_theta(x) = exp(theta^T S(x)).
inline ModelSpec make_exp_family_model(int dim, std::function<Mat(const Points&)> suff_stat,
                                       std::function<bool(const Vec&)> domain_check = {}) {
  if (dim < 1) throw std::invalid_argument("model dimension must be >= 1");
  ModelSpec m;
  m.dim = dim;
  m.suff_stat = std::move(suff_stat);
  m.domain_check = std::move(domain_check);
  m.linear_in_theta = true;
  auto stat = m.suff_stat;
  m.log_h = [stat](const Vec& theta, const Points& x) -> Vec {
    return stat(x).transpose() * theta;
  };
  m.grad_log_h = [stat](const Vec&, const Points& x) -> Mat { return stat(x); };
  m.hess_log_h = [dim](const Vec&, const Eigen::Ref<const Vec>&) -> Mat {
    return Mat::Zero(dim, dim);
  };
  return m;
}

/// The distribution P_psi of the artificial points, known through its
/// un-normalised log-density.
struct Proposal {
  std::string name;
  std::function<Vec(const Points& x)> log_h;
  /// log Z(psi) when known; required by the Poisson transform.
  std::optional<double> log_Z;
  /// Natural parameter when psi belongs to the model family.
  std::optional<Vec> natural;
};

}  // namespace unnorm
