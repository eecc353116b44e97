#pragma once

// Solution paths over a rho grid with warm starts.

#include "prenet/selection.hpp"
#include "prenet/solver.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace prenet {

struct SolutionPath {
  PenaltyFamily family = PenaltyFamily::Prenet;
  double gamma = 1.0;
  Vector weights;                       // wprenet only
  std::vector<double> rhos;             // strictly decreasing
  std::vector<FitResult> fits;          // one per rho
  std::vector<CriteriaTriple> criteria; // one per rho

  std::size_t size() const { return rhos.size(); }

  PenaltySpec spec_at(std::size_t k) const { return PenaltySpec{family, rhos[k], gamma, weights}; }
};

struct PathOptions {
  int K = 30;
  double delta_ratio = 1e-3;  // rho_1 = rho_K * delta_ratio * sqrt(gamma)
  double ebic_delta = 1.0;
};

// K log-spaced values from hi down to lo (both included).
inline std::vector<double> log_grid(double hi, double lo, int K) {
  if (K < 2) throw std::invalid_argument("log_grid: K must be >= 2");
  if (!(hi > lo && lo > 0)) throw std::invalid_argument("log_grid: need hi > lo > 0");
  std::vector<double> g(static_cast<std::size_t>(K));
  const double lhi = std::log(hi), llo = std::log(lo);
  for (int k = 0; k < K; ++k) g[k] = std::exp(lhi + (llo - lhi) * k / (K - 1));
  g.front() = hi;
  g.back() = lo;
  return g;
}

// Fits `spec` at each rho in the given order, each warm-started from the
// previous solution (the first from `start`).
inline std::vector<FitResult> fit_sequence(const SampleCovariance& cov, int m, PenaltySpec spec,
                                           const std::vector<double>& rhos, const FactorParams& start,
                                           FitConfig config) {
  config.init = InitMethod::WarmStart;
  std::vector<FitResult> fits;
  fits.reserve(rhos.size());
  FactorParams current = start;
  for (double rho : rhos) {
    spec.rho = rho;
    fits.push_back(fit(cov, m, spec, config, current));
    current = fits.back().params;
  }
  return fits;
}

// Largest rho needed by a separable penalty to zero every loading at the ML
// solution: max_ij |b_ij| / (gamma psi_i), gamma := 1 for lasso and MC.
inline double separable_rho_top(const FactorParams& ml, const SampleCovariance& cov,
                                const PenaltySpec& spec) {
  const EStepQuantities eq = e_step(ml, cov);
  const double g = spec.family == PenaltyFamily::ElasticNet ? spec.gamma : 1.0;
  if (!(g > 0)) throw std::invalid_argument("path: elastic net path needs gamma > 0");
  double top = 0.0;
  for (Eigen::Index i = 0; i < eq.b.rows(); ++i)
    for (Eigen::Index j = 0; j < eq.b.cols(); ++j)
      top = std::max(top, std::abs(eq.b(i, j)) / (g * ml.psi(i)));
  return top;
}

inline void attach_criteria(SolutionPath& path, const SampleCovariance& cov, int m, double delta) {
  path.criteria.clear();
  for (const auto& f : path.fits) path.criteria.push_back(criteria(f, cov, m, delta));
}

// Path over an explicit strictly decreasing grid, warm-started from `start`
// at rhos[0]. Works for every family, including those without a rho_max.
inline SolutionPath solution_path_on_grid(const SampleCovariance& cov, int m, const PenaltySpec& spec,
                                          const std::vector<double>& rhos, const FactorParams& start,
                                          const FitConfig& config, double ebic_delta = 1.0) {
  for (std::size_t k = 1; k < rhos.size(); ++k)
    if (!(rhos[k] < rhos[k - 1])) throw std::invalid_argument("path: grid must be strictly decreasing");
  SolutionPath path;
  path.family = spec.family;
  path.gamma = spec.gamma;
  path.weights = spec.weights;
  if (spec.family == PenaltyFamily::WeightedPrenet && path.weights.size() == 0)
    path.weights = ml_weights(cov, m, config);
  path.rhos = rhos;
  path.fits = fit_sequence(cov, m, path.spec_at(0), rhos, start, config);
  attach_criteria(path, cov, m, ebic_delta);
  return path;
}

// Regularization path with K grid points.
//
// Prenet families: rho_K = rho_max (PSS multi-start fit), rho_1 = rho_K * delta * sqrt(gamma);
// fits proceed from rho_K downwards, each warm-started from the previous one.
//
// Separable families (lasso, elastic net, MC): Lambda = 0 is a fixed point of
// EM, so a path that starts where every loading is zero cannot leave it. The
// grid runs from the level that zeroes the ML loadings down to that times
// delta, and fits proceed upwards from the multi-start ML solution. Results
// are stored in decreasing-rho order either way.
inline SolutionPath solution_path(const SampleCovariance& cov, int m, PenaltySpec spec,
                                  const FitConfig& config, const PathOptions& opts = {}) {
  detail::check_dims(cov, m);
  config.validate();
  spec.validate(cov.p());
  if (opts.K < 2) throw std::invalid_argument("path: K must be >= 2");
  SolutionPath path;
  path.family = spec.family;
  path.gamma = spec.gamma;

  if (spec.family == PenaltyFamily::Prenet || spec.family == PenaltyFamily::WeightedPrenet) {
    if (spec.family == PenaltyFamily::WeightedPrenet && spec.weights.size() == 0)
      spec.weights = ml_weights(cov, m, config);
    path.weights = spec.weights;
    RhoMaxResult top = rho_max_with_fit(cov, m, spec, config);
    if (!(top.rho_max > 0)) throw std::runtime_error("path: rho_max is zero; PSS fit is degenerate");
    path.rhos = log_grid(top.rho_max, top.rho_max * opts.delta_ratio * std::sqrt(spec.gamma), opts.K);
    path.fits = fit_sequence(cov, m, spec, path.rhos, top.pss.params, config);
  } else if (is_separable(spec.family)) {
    PenaltySpec ml_spec{PenaltyFamily::Lasso, 0.0, 1.0, {}};
    FitConfig ml_cfg = config;
    ml_cfg.init = InitMethod::RandomOrthonormal;
    const FitResult ml = fit(cov, m, ml_spec, ml_cfg);
    const double hi = separable_rho_top(ml.params, cov, spec);
    if (!(hi > 0)) throw std::runtime_error("path: ML loadings are all zero");
    const double g = spec.family == PenaltyFamily::ElasticNet ? spec.gamma : 1.0;
    path.rhos = log_grid(hi, hi * opts.delta_ratio * std::sqrt(g), opts.K);
    std::vector<double> ascending(path.rhos.rbegin(), path.rhos.rend());
    auto fits = fit_sequence(cov, m, spec, ascending, ml.params, config);
    path.fits.assign(std::make_move_iterator(fits.rbegin()), std::make_move_iterator(fits.rend()));
  } else {
    throw std::invalid_argument("path: " + std::string(family_name(spec.family)) +
                                " has no automatic grid; use solution_path_on_grid");
  }
  attach_criteria(path, cov, m, opts.ebic_delta);
  return path;
}

inline std::size_t select_along_path(const SolutionPath& path, Criterion which) {
  return select_index(path.criteria, which);
}

}  // namespace prenet
