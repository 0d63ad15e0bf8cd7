#pragma once

// Damped Newton maximisation of the NCE and extended MC-MLE objectives.
//
// The search runs unconstrained over R^{d+1}; membership of theta-hat in Theta
// is checked afterwards and reported, never enforced.

#include <cmath>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "unnorm/linalg.hpp"
#include "unnorm/model.hpp"
#include "unnorm/objectives.hpp"

namespace unnorm {

enum class FitStatus { converged, max_iters, diverged, stalled };

inline std::string_view to_string(FitStatus s) {
  switch (s) {
    case FitStatus::converged: return "converged";
    case FitStatus::max_iters: return "max-iters";
    case FitStatus::diverged: return "diverged";
    case FitStatus::stalled: return "stalled";
  }
  return "unknown";
}

enum class ObjectiveKind { nce, is };

inline std::string_view to_string(ObjectiveKind k) {
  return k == ObjectiveKind::nce ? "nce" : "mcmle";
}

struct SolverOptions {
  /// Absolute tolerance on the gradient norm; <= 0 selects default_grad_tol.
  double grad_tol = 0.0;
  int max_iters = 200;
  double backtrack = 0.5;
  double armijo = 1e-4;
  /// |xi| beyond this bound is reported as divergence.
  double divergence_bound = 1e8;
  bool record_trace = false;
};

struct FitResult {
  ExtendedParam xi_hat;
  FitStatus status = FitStatus::max_iters;
  double final_grad_norm = 0.0;
  double objective = 0.0;
  bool in_domain = false;
  int iterations = 0;
  /// Objective value after each accepted step (when requested).
  std::vector<double> trace;

  /// A usable estimate: converged, with theta-hat inside Theta.
  bool exists() const { return status == FitStatus::converged && in_domain; }
};

/// 1e-10 (n + m) on the summed NCE scale. The MC-MLE objective is an average
/// over the n observations, so its tolerance is the same quantity divided by n.
inline double default_grad_tol(ObjectiveKind kind, const Dataset& data) {
  const double total = static_cast<double>(data.n() + data.m());
  return kind == ObjectiveKind::nce ? 1e-10 * total : 1e-10 * total / static_cast<double>(data.n());
}

struct NewtonResult {
  Vec x;
  FitStatus status = FitStatus::max_iters;
  double value = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  std::vector<double> trace;
};

namespace detail {

/// Solves (-H) d = g. Falls back to a ridge 1e-8 trace(-H)/k, grown tenfold
/// until the system is positive definite, then to steepest ascent.
inline Vec newton_direction(const Mat& hessian, const Vec& gradient) {
  const Mat neg = symmetrized(-hessian);
  Eigen::LLT<Mat> llt(neg);
  if (llt.info() == Eigen::Success) {
    Vec d = llt.solve(gradient);
    if (d.allFinite()) return d;
  }
  const double k = static_cast<double>(neg.rows());
  double ridge = 1e-8 * std::max(std::abs(neg.trace()) / k, 1e-300);
  for (int attempt = 0; attempt < 40; ++attempt, ridge *= 10.0) {
    Eigen::LLT<Mat> reg(neg + ridge * Mat::Identity(neg.rows(), neg.cols()));
    if (reg.info() == Eigen::Success) {
      Vec d = reg.solve(gradient);
      if (d.allFinite()) return d;
    }
  }
  return gradient;
}

}  // namespace detail

/// Maximises f by damped Newton with Armijo backtracking.
inline NewtonResult newton_maximize(const std::function<ObjectiveEval(const Vec&)>& f, Vec x0,
                                    double grad_tol, const SolverOptions& opts) {
  NewtonResult res;
  res.x = std::move(x0);
  ObjectiveEval cur = f(res.x);
  if (!std::isfinite(cur.value) || !cur.gradient.allFinite()) {
    res.status = FitStatus::diverged;
    res.value = cur.value;
    res.grad_norm = std::numeric_limits<double>::infinity();
    return res;
  }
  if (opts.record_trace) res.trace.push_back(cur.value);

  for (;;) {
    res.value = cur.value;
    res.grad_norm = cur.gradient.norm();
    if (res.grad_norm <= grad_tol) {
      res.status = FitStatus::converged;
      return res;
    }
    if (res.iterations >= opts.max_iters) {
      res.status = FitStatus::max_iters;
      return res;
    }

    const Vec dir = detail::newton_direction(cur.hessian, cur.gradient);
    const double slope = cur.gradient.dot(dir);
    double step = 1.0;
    bool accepted = false;
    bool any_finite = false;
    ObjectiveEval next;
    Vec x_next;
    while (step > 1e-20) {
      x_next = res.x + step * dir;
      next = f(x_next);
      const bool finite = std::isfinite(next.value) && next.gradient.allFinite();
      any_finite = any_finite || finite;
      if (finite && next.value >= cur.value + opts.armijo * step * slope) {
        accepted = true;
        break;
      }
      // Near the optimum the Armijo gain drops below rounding: accept a full
      // step that shrinks the gradient without losing objective value.
      if (finite && step == 1.0 && next.gradient.norm() < res.grad_norm &&
          next.value >= cur.value - 1e-13 * std::abs(cur.value)) {
        accepted = true;
        break;
      }
      step *= opts.backtrack;
    }
    if (!accepted) {
      res.status = any_finite ? FitStatus::stalled : FitStatus::diverged;
      return res;
    }
    res.x = std::move(x_next);
    cur = std::move(next);
    ++res.iterations;
    if (opts.record_trace) res.trace.push_back(cur.value);
    if (res.x.cwiseAbs().maxCoeff() > opts.divergence_bound) {
      res.value = cur.value;
      res.grad_norm = cur.gradient.norm();
      res.status = FitStatus::diverged;
      return res;
    }
  }
}

inline ExtendedParam default_init(const Dataset& data, const ModelSpec& model) {
  ExtendedParam xi;
  if (data.proposal_natural && data.proposal_natural->size() == model.dim) {
    xi.theta = *data.proposal_natural;
  } else {
    xi.theta = Vec::Zero(model.dim);
  }
  xi.nu = 0.0;
  return xi;
}

inline FitResult fit(ObjectiveKind kind, const Dataset& data, const ModelSpec& model,
                     const ExtendedParam& init, const SolverOptions& opts = {}) {
  if (!init.all_finite()) throw std::invalid_argument("fit: non-finite initial value");
  if (init.theta.size() != model.dim) throw std::invalid_argument("fit: init has wrong dimension");
  const double tol = opts.grad_tol > 0.0 ? opts.grad_tol : default_grad_tol(kind, data);

  auto objective = [&](const Vec& xi) {
    const auto p = ExtendedParam::from_stacked(xi);
    return kind == ObjectiveKind::nce ? nce_loglik(p, data, model) : is_loglik(p, data, model);
  };
  const NewtonResult nr = newton_maximize(objective, init.stacked(), tol, opts);

  FitResult out;
  out.xi_hat = ExtendedParam::from_stacked(nr.x);
  out.status = nr.status;
  out.final_grad_norm = nr.grad_norm;
  out.objective = nr.value;
  out.iterations = nr.iterations;
  out.in_domain = model.in_domain(out.xi_hat.theta);
  out.trace = nr.trace;
  return out;
}

/// MC-MLE through the theta-only ratio objective, with nu recovered from the
/// closed-form profile afterwards.
inline FitResult fit_is_profiled(const Dataset& data, const ModelSpec& model, const Vec& theta0,
                                 const SolverOptions& opts = {}) {
  const double tol = opts.grad_tol > 0.0 ? opts.grad_tol : default_grad_tol(ObjectiveKind::is, data);
  auto objective = [&](const Vec& theta) { return is_loglik_ratio_eval(theta, data, model); };
  const NewtonResult nr = newton_maximize(objective, theta0, tol, opts);
  FitResult out;
  out.xi_hat = {nr.x, profile_nu(nr.x, data, model)};
  out.status = nr.status;
  out.final_grad_norm = nr.grad_norm;
  out.objective = nr.value;
  out.iterations = nr.iterations;
  out.in_domain = model.in_domain(nr.x);
  out.trace = nr.trace;
  return out;
}

/// Exact MLE in the extended parametrisation: maximises the Poisson transform.
/// Requires closed-form log Z for the model and the proposal.
inline FitResult fit_poisson(const Points& observed, const ModelSpec& model,
                             const Proposal& proposal, const ExtendedParam& init,
                             const SolverOptions& opts = {}) {
  if (!proposal.log_Z) throw UnsupportedOperation("fit_poisson needs the proposal's log Z");
  const Vec log_h_psi = proposal.log_h(observed);
  const double tol = opts.grad_tol > 0.0 ? opts.grad_tol : 1e-12;
  auto objective = [&](const Vec& xi) {
    return detail::poisson_eval(ExtendedParam::from_stacked(xi), observed, log_h_psi,
                                *proposal.log_Z, model);
  };
  const NewtonResult nr = newton_maximize(objective, init.stacked(), tol, opts);
  FitResult out;
  out.xi_hat = ExtendedParam::from_stacked(nr.x);
  out.status = nr.status;
  out.final_grad_norm = nr.grad_norm;
  out.objective = nr.value;
  out.iterations = nr.iterations;
  out.in_domain = model.in_domain(out.xi_hat.theta);
  out.trace = nr.trace;
  return out;
}

}  // namespace unnorm
