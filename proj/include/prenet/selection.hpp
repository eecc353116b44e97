#pragma once

// Information criteria over fitted models.

#include "prenet/model.hpp"
#include "prenet/solver.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace prenet {

enum class Criterion { AIC, BIC, EBIC };

inline std::string_view criterion_name(Criterion c) {
  switch (c) {
    case Criterion::AIC: return "AIC";
    case Criterion::BIC: return "BIC";
    case Criterion::EBIC: return "EBIC";
  }
  return "?";
}

inline Criterion parse_criterion(std::string_view s) {
  if (s == "aic" || s == "AIC") return Criterion::AIC;
  if (s == "bic" || s == "BIC") return Criterion::BIC;
  if (s == "ebic" || s == "EBIC") return Criterion::EBIC;
  throw std::invalid_argument("unknown criterion '" + std::string(s) + "'");
}

struct CriteriaTriple {
  double aic = 0.0;
  double bic = 0.0;
  double ebic = 0.0;
  int p0 = 0;  // nonzero loadings + p unique variances
  double log_likelihood = 0.0;

  double get(Criterion c) const {
    switch (c) {
      case Criterion::AIC: return aic;
      case Criterion::BIC: return bic;
      case Criterion::EBIC: return ebic;
    }
    return bic;
  }
};

inline int count_nonzero(const Matrix& lambda, double zero_tol = 0.0) {
  if (zero_tol < 0) throw std::invalid_argument("count_nonzero: zero_tol must be nonnegative");
  return static_cast<int>((lambda.array().abs() > zero_tol).count());
}

// Gaussian log-likelihood  -n/2 { log|Sigma| + tr(Sigma^-1 S) + p log(2 pi) }.
inline double gaussian_log_likelihood(const FactorParams& params, const SampleCovariance& cov) {
  const auto t = detail::sigma_terms(params, cov.s());
  return -0.5 * cov.n() *
         (t.log_det_sigma + t.trace_inv_sigma_s + cov.p() * std::log(2.0 * std::numbers::pi));
}

// AIC = -2l + 2 p0, BIC = -2l + log(N) p0, EBIC = BIC + 2 p0 delta log(p m), N = n.
inline CriteriaTriple criteria(const FitResult& fit, const SampleCovariance& cov, int m,
                               double delta = 1.0) {
  if (!(delta >= 0.0 && delta <= 1.0)) throw std::invalid_argument("criteria: delta must lie in [0,1]");
  CriteriaTriple c;
  c.p0 = count_nonzero(fit.params.loadings) + cov.p();
  c.log_likelihood = gaussian_log_likelihood(fit.params, cov);
  const double neg2l = -2.0 * c.log_likelihood;
  c.aic = neg2l + 2.0 * c.p0;
  c.bic = neg2l + std::log(static_cast<double>(cov.n())) * c.p0;
  c.ebic = c.bic + 2.0 * c.p0 * delta * std::log(static_cast<double>(cov.p()) * m);
  return c;
}

// Index of the smallest criterion value; the earliest index (largest rho on a
// decreasing grid) wins ties.
inline std::size_t select_index(const std::vector<CriteriaTriple>& values, Criterion which) {
  if (values.empty()) throw std::invalid_argument("select: empty path");
  std::size_t best = 0;
  for (std::size_t k = 1; k < values.size(); ++k)
    if (values[k].get(which) < values[best].get(which)) best = k;
  return best;
}

}  // namespace prenet
