#pragma once

// Domain types and loss functions for the orthogonal factor model
//   Sigma = Lambda Lambda^T + Psi.

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>

namespace prenet {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// p x p sample covariance with its sample size. Validated on construction;
// log|S| is cached when S is positive definite.
class SampleCovariance {
 public:
  SampleCovariance(Matrix s, int n) : s_(std::move(s)), n_(n) {
    if (s_.rows() != s_.cols() || s_.rows() == 0) {
      throw std::invalid_argument("SampleCovariance: matrix must be square and non-empty");
    }
    if (n_ < 1) {
      throw std::invalid_argument("SampleCovariance: sample size must be positive");
    }
    const double scale = s_.cwiseAbs().maxCoeff();
    if ((s_ - s_.transpose()).cwiseAbs().maxCoeff() > 1e-10 * (scale > 0 ? scale : 1.0)) {
      throw std::invalid_argument("SampleCovariance: matrix is not symmetric");
    }
    if ((s_.diagonal().array() < 0).any()) {
      throw std::invalid_argument("SampleCovariance: negative diagonal entry");
    }
    s_ = 0.5 * (s_ + s_.transpose());
    Eigen::LLT<Matrix> llt(s_);
    if (llt.info() == Eigen::Success) {
      const double ld = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
      if (std::isfinite(ld)) log_det_ = ld;
    }
  }

  const Matrix& s() const { return s_; }
  int n() const { return n_; }
  int p() const { return static_cast<int>(s_.rows()); }
  double operator()(int i, int j) const { return s_(i, j); }

  bool positive_definite() const { return log_det_.has_value(); }
  // Empty when S is singular.
  std::optional<double> log_det() const { return log_det_; }

 private:
  Matrix s_;
  int n_;
  std::optional<double> log_det_;
};

// Loadings (p x m) and unique variances (length p, strictly positive).
struct FactorParams {
  Matrix loadings;
  Vector psi;

  int p() const { return static_cast<int>(loadings.rows()); }
  int m() const { return static_cast<int>(loadings.cols()); }

  void validate() const {
    if (psi.size() != loadings.rows()) {
      throw std::invalid_argument("FactorParams: psi length does not match loading rows");
    }
    if (!loadings.allFinite()) {
      throw std::invalid_argument("FactorParams: non-finite loading");
    }
    if (!(psi.array() > 0).all() || !psi.allFinite()) {
      throw std::invalid_argument("FactorParams: unique variances must be positive");
    }
  }
};

enum class QuadraticWeight { Identity, InverseS };

// S = X_c^T X_c / n (ML divisor). With `correlation`, rescaled to unit diagonal.
inline SampleCovariance sample_covariance(const Matrix& data, bool centered = true,
                                          bool correlation = false) {
  const auto n = data.rows();
  if (n < 2) throw std::invalid_argument("sample_covariance: need at least two observations");
  if (data.cols() < 1) throw std::invalid_argument("sample_covariance: need at least one variable");
  Matrix xc = data;
  if (centered) xc.rowwise() -= data.colwise().mean();
  Matrix s = (xc.transpose() * xc) / static_cast<double>(n);
  if (correlation) {
    Vector d = s.diagonal();
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      if (!(d(i) > 0)) {
        throw std::invalid_argument("sample_covariance: column " + std::to_string(i + 1) +
                                    " has zero variance; cannot form a correlation matrix");
      }
    }
    Vector inv_sd = d.array().sqrt().inverse();
    s = inv_sd.asDiagonal() * s * inv_sd.asDiagonal();
    s.diagonal().setOnes();
  }
  s = 0.5 * (s + s.transpose());
  return SampleCovariance(std::move(s), static_cast<int>(n));
}

inline Matrix sigma_from_params(const FactorParams& params) {
  Matrix sigma = params.loadings * params.loadings.transpose();
  sigma.diagonal() += params.psi;
  return sigma;
}

namespace detail {

// tr(Sigma^-1 S) and log|Sigma| through the Woodbury identity and the matrix
// determinant lemma; O(p^2 m) instead of O(p^3).
struct SigmaTerms {
  double trace_inv_sigma_s;
  double log_det_sigma;
};

inline SigmaTerms sigma_terms(const FactorParams& params, const Matrix& s) {
  const Matrix& lam = params.loadings;
  const Vector psi_inv = params.psi.cwiseInverse();
  const int m = static_cast<int>(lam.cols());
  double tr = (psi_inv.array() * s.diagonal().array()).sum();
  double log_det = params.psi.array().log().sum();
  if (m > 0) {
    Matrix w = psi_inv.asDiagonal() * lam;  // Psi^-1 Lambda
    Matrix mm = lam.transpose() * w;
    mm.diagonal().array() += 1.0;
    Eigen::LLT<Matrix> llt(mm);
    if (llt.info() != Eigen::Success) throw std::runtime_error("factor model: singular M matrix");
    log_det += 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    Matrix sw = s * w;                                  // S Psi^-1 Lambda
    Matrix inner = w.transpose() * sw;                  // Lambda^T Psi^-1 S Psi^-1 Lambda
    tr -= llt.solve(inner).trace();
  }
  return {tr, log_det};
}

// Discrepancy without the -log|S| constant. Used when S is singular (p >= n).
inline double shifted_discrepancy(const FactorParams& params, const SampleCovariance& cov) {
  const auto t = sigma_terms(params, cov.s());
  return 0.5 * (t.trace_inv_sigma_s + t.log_det_sigma - cov.p());
}

}  // namespace detail

// 1/2 { tr(Sigma^-1 S) - log|Sigma^-1 S| - p }. Zero iff Sigma == S.
inline double discrepancy_loss(const FactorParams& params, const SampleCovariance& cov) {
  if (params.p() != cov.p()) throw std::invalid_argument("discrepancy_loss: dimension mismatch");
  if (!cov.positive_definite()) {
    throw std::domain_error("discrepancy_loss: S is not positive definite, |Sigma^-1 S| <= 0");
  }
  if (!(params.psi.array() > 0).all()) {
    throw std::domain_error("discrepancy_loss: Sigma is singular");
  }
  const auto t = detail::sigma_terms(params, cov.s());
  const double value = 0.5 * (t.trace_inv_sigma_s + t.log_det_sigma - *cov.log_det() - cov.p());
  return value < 0.0 ? 0.0 : value;
}

// Loss minimized by the solvers: the discrepancy when S is positive definite,
// otherwise the discrepancy up to the (infinite) -log|S| constant.
inline double fitting_loss(const FactorParams& params, const SampleCovariance& cov) {
  if (cov.positive_definite()) return discrepancy_loss(params, cov);
  return detail::shifted_discrepancy(params, cov);
}

// ||W (S - Lambda Lambda^T - Psi)||_F^2 with W = I, or W = Gamma^-1 = S for
// Gamma = S^-1 (applied on the left only).
inline double quadratic_loss(const FactorParams& params, const SampleCovariance& cov,
                             QuadraticWeight weight = QuadraticWeight::Identity) {
  if (params.p() != cov.p()) throw std::invalid_argument("quadratic_loss: dimension mismatch");
  Matrix residual = cov.s() - sigma_from_params(params);
  if (weight == QuadraticWeight::Identity) return residual.squaredNorm();
  Eigen::FullPivLU<Matrix> lu(cov.s());
  if (!lu.isInvertible()) throw std::domain_error("quadratic_loss: S is singular");
  return (cov.s() * residual).squaredNorm();
}

}  // namespace prenet
