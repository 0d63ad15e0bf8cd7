#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace unnorm {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
/// A set of points, one point per column.
using Points = Eigen::MatrixXd;

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

inline Mat symmetrized(const Mat& a) { return 0.5 * (a + a.transpose()); }

inline double asymmetry(const Mat& a) {
  return (a - a.transpose()).cwiseAbs().maxCoeff();
}

/// Positive definiteness by Cholesky, no tolerance.
inline bool is_positive_definite(const Mat& a) {
  if (a.rows() != a.cols() || a.rows() == 0) return false;
  if (!a.allFinite()) return false;
  Eigen::LLT<Mat> llt(a);
  return llt.info() == Eigen::Success;
}

inline Vec symmetric_eigenvalues(const Mat& a) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrized(a), Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw std::runtime_error("eigenvalue solver failed");
  return es.eigenvalues();
}

inline double min_eigenvalue(const Mat& a) { return symmetric_eigenvalues(a).minCoeff(); }
inline double max_eigenvalue(const Mat& a) { return symmetric_eigenvalues(a).maxCoeff(); }

/// Moore-Penrose pseudo-inverse of a symmetric matrix; eigenvalues below
/// rel_cutoff * max|eigenvalue| are treated as zero.
inline Mat symmetric_pinv(const Mat& a, double rel_cutoff = 1e-10) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrized(a));
  if (es.info() != Eigen::Success) throw std::runtime_error("eigenvalue solver failed");
  const Vec& ev = es.eigenvalues();
  const double cutoff = rel_cutoff * ev.cwiseAbs().maxCoeff();
  Vec inv = Vec::Zero(ev.size());
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (std::abs(ev(i)) > cutoff) inv(i) = 1.0 / ev(i);
  }
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

/// Inverse of a symmetric matrix that must be nonsingular; `what` names the
/// matrix in the error message.
inline Mat checked_inverse(const Mat& a, const std::string& what) {
  Eigen::FullPivLU<Mat> lu(a);
  lu.setThreshold(1e-13);
  if (!lu.isInvertible()) throw DomainError(what + " is singular");
  return lu.inverse();
}

}  // namespace unnorm
