#pragma once

// Generalized EM with coordinate-descent M-steps for penalized maximum
// likelihood factor analysis, plus the closed-form solver for perfect simple
// structure (PSS) and the smallest rho that yields it.

#include "prenet/model.hpp"
#include "prenet/penalty.hpp"
#include "prenet/random.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

namespace prenet {

// Conditional moments of the factors given the data, computed from the
// current iterate:
//   M = Lambda^T Psi^-1 Lambda + I
//   b_i = M^-1 Lambda^T Psi^-1 s_i        (row i of b)
//   A = M^-1 + M^-1 Lambda^T Psi^-1 S Psi^-1 Lambda M^-1
struct EStepQuantities {
  Matrix m_matrix;
  Matrix a_matrix;
  Matrix b;
};

enum class InitMethod { RandomOrthonormal, GivenParams, WarmStart };

struct FitConfig {
  int max_em_iter = 1000;
  int max_cd_iter = 50;
  double tol = 1e-7;  // relative objective change |f_k - f_{k+1}| / (|f_k| + 1)
  int n_starts = 20;
  std::uint64_t seed = 20240607;
  InitMethod init = InitMethod::RandomOrthonormal;
  // When non-empty, unique variances are held at these values.
  Vector fixed_psi;

  void validate() const {
    if (max_em_iter < 1 || max_cd_iter < 1 || n_starts < 1) {
      throw std::invalid_argument("FitConfig: iteration caps and n_starts must be >= 1");
    }
    if (!(tol > 0)) throw std::invalid_argument("FitConfig: tol must be positive");
  }
};

struct FitResult {
  FactorParams params;
  std::vector<double> objective_trace;
  bool converged = false;
  int n_em_iter = 0;

  double objective() const { return objective_trace.back(); }
};

inline EStepQuantities e_step(const FactorParams& params, const SampleCovariance& cov) {
  const Matrix& lam = params.loadings;
  const int m = params.m();
  assert((params.psi.array() > 0).all());
  const Vector psi_inv = params.psi.cwiseInverse();
  Matrix w = psi_inv.asDiagonal() * lam;  // Psi^-1 Lambda
  EStepQuantities eq;
  eq.m_matrix = lam.transpose() * w;
  eq.m_matrix.diagonal().array() += 1.0;
  Eigen::LLT<Matrix> llt(eq.m_matrix);
  if (llt.info() != Eigen::Success) throw std::runtime_error("e_step: M is not positive definite");
  Matrix m_inv = llt.solve(Matrix::Identity(m, m));
  m_inv = 0.5 * (m_inv + m_inv.transpose());
  Matrix wm = w * m_inv;         // Psi^-1 Lambda M^-1   (p x m)
  eq.b = cov.s() * wm;           // rows are b_i^T
  eq.a_matrix = m_inv + wm.transpose() * eq.b;
  eq.a_matrix = 0.5 * (eq.a_matrix + eq.a_matrix.transpose());
  return eq;
}

inline double soft_threshold(double theta, double threshold) {
  const double mag = std::abs(theta) - threshold;
  if (mag <= 0.0) return 0.0;
  return theta > 0 ? mag : -mag;
}

inline double psi_floor(double s_ii) { return std::max(1e-3 * s_ii, 1e-8); }

// Expected complete-data penalized negative log-likelihood (per observation),
// up to a constant:
//   1/2 sum_i [ log psi_i + (s_ii - 2 l_i^T b_i + l_i^T A l_i) / psi_i ] + rho P(Lambda)
// It majorizes the penalized discrepancy around the E-step iterate.
inline double surrogate_objective(const Matrix& lambda, const Vector& psi,
                                  const EStepQuantities& eq, const SampleCovariance& cov,
                                  const PenaltySpec& spec) {
  double q = 0.0;
  for (Eigen::Index i = 0; i < lambda.rows(); ++i) {
    const auto li = lambda.row(i);
    const double quad = cov(i, i) - 2.0 * li.dot(eq.b.row(i)) +
                        li * eq.a_matrix * li.transpose();
    q += 0.5 * (std::log(psi(i)) + quad / psi(i));
  }
  return q + penalty_term(lambda, spec);
}

namespace detail {

// argmin over x of 1/2 a x^2 - c x + psi * mc(x; rho, gamma); exact, by
// enumerating the stationary points of each quadratic piece plus the knots.
inline double mc_coordinate(double a, double c, double psi, double rho, double gamma) {
  if (std::isinf(gamma)) return soft_threshold(c / a, psi * rho / a);
  const double knot = rho * gamma;
  auto f = [&](double x) { return 0.5 * a * x * x - c * x + psi * mc_scalar(x, rho, gamma); };
  double best = 0.0, best_val = f(0.0);
  auto consider = [&](double x) {
    const double v = f(x);
    if (v < best_val || (v == best_val && std::abs(x) < std::abs(best))) {
      best = x;
      best_val = v;
    }
  };
  consider(knot);
  consider(-knot);
  const double outer = c / a;
  if (std::abs(outer) >= knot) consider(outer);
  const double curv = a - psi / gamma;
  if (curv > 0) {
    const double pos = (c - psi * rho) / curv;
    if (pos > 0 && pos < knot) consider(pos);
    const double neg = (c + psi * rho) / curv;
    if (neg < 0 && neg > -knot) consider(neg);
  }
  return best;
}

// Root of (lin) x + (cub) x^3 = c with lin > 0, cub >= 0 (strictly monotone).
inline double monotone_cubic_root(double lin, double cub, double c) {
  double x = c / lin;
  if (cub == 0.0 || c == 0.0) return x;
  // Newton from the linear solution approaches the root monotonically.
  for (int it = 0; it < 200; ++it) {
    const double g = lin * x + cub * x * x * x - c;
    const double dg = lin + 3.0 * cub * x * x;
    const double step = g / dg;
    x -= step;
    if (std::abs(step) <= 1e-15 * (1.0 + std::abs(x))) break;
  }
  return x;
}

}  // namespace detail

// Exact minimizer of the surrogate over lambda(i, j) with every other entry
// of `lambda` and psi_i held fixed. Prenet follows the closed form
//   soft_threshold(c / (a_jj + beta), psi_i rho xi / (a_jj + beta)),
//   c = b_ij - sum_{k != j} a_kj l_ik,
//   beta = rho psi_i (1 - gamma) sum_{k != j} l_ik^2,  xi = gamma sum_{k != j} |l_ik|.
inline double cd_update_loading(int i, int j, const Matrix& lambda, const EStepQuantities& eq,
                                double psi_i, const PenaltySpec& spec) {
  const auto m = lambda.cols();
  const double a = eq.a_matrix(j, j);
  assert(a > 0);
  double c = eq.b(i, j);
  double sq_other = 0.0, abs_other = 0.0;
  for (Eigen::Index k = 0; k < m; ++k) {
    if (k == j) continue;
    c -= eq.a_matrix(k, j) * lambda(i, k);
    sq_other += lambda(i, k) * lambda(i, k);
    abs_other += std::abs(lambda(i, k));
  }
  const double rho = spec.rho;
  const double g = spec.gamma;
  switch (spec.family) {
    case PenaltyFamily::Prenet:
    case PenaltyFamily::WeightedPrenet: {
      const double w = spec.family == PenaltyFamily::WeightedPrenet ? spec.weights(i) : 1.0;
      const double beta = rho * psi_i * (1.0 - g) * w * w * sq_other;
      const double xi = g * w * abs_other;
      const double denom = a + beta;
      return soft_threshold(c / denom, psi_i * rho * xi / denom);
    }
    case PenaltyFamily::Quartimin:
      return c / (a + 2.0 * rho * psi_i * sq_other);
    case PenaltyFamily::ElasticNet: {
      const double denom = a + rho * psi_i * (1.0 - g);
      return soft_threshold(c / denom, rho * psi_i * g / denom);
    }
    case PenaltyFamily::Lasso:
      return soft_threshold(c / a, rho * psi_i / a);
    case PenaltyFamily::MC:
      return detail::mc_coordinate(a, c, psi_i, rho, g);
    case PenaltyFamily::VarimaxAdjusted: {
      const double p = static_cast<double>(lambda.rows());
      double col_other = 0.0;
      for (Eigen::Index r = 0; r < lambda.rows(); ++r)
        if (r != i) col_other += lambda(r, j) * lambda(r, j);
      const double lin = a + 4.0 * rho * psi_i * (sq_other + col_other / p);
      const double cub = 4.0 * rho * psi_i / p;
      return detail::monotone_cubic_root(lin, cub, c);
    }
  }
  return 0.0;
}

// Coordinate descent sweeps over all loadings on the surrogate. Never
// increases the surrogate.
inline Matrix update_loadings(const FactorParams& params, const EStepQuantities& eq,
                              const SampleCovariance& cov, const PenaltySpec& spec,
                              int max_cd_iter, double tol) {
  Matrix lambda = params.loadings;
  const Vector& psi = params.psi;
  double q_prev = surrogate_objective(lambda, psi, eq, cov, spec);
  for (int sweep = 0; sweep < max_cd_iter; ++sweep) {
    for (Eigen::Index i = 0; i < lambda.rows(); ++i) {
      for (Eigen::Index j = 0; j < lambda.cols(); ++j) {
        lambda(i, j) = cd_update_loading(static_cast<int>(i), static_cast<int>(j), lambda, eq,
                                         psi(i), spec);
      }
    }
    const double q = surrogate_objective(lambda, psi, eq, cov, spec);
    const double decrease = q_prev - q;
    q_prev = q;
    if (decrease <= tol * (std::abs(q) + 1.0)) break;
  }
  return lambda;
}

// psi_i = s_ii - 2 l_i^T b_i + l_i^T A l_i, clamped below at max(1e-3 s_ii, 1e-8).
inline Vector update_unique_variances(const Matrix& lambda_new, const EStepQuantities& eq,
                                      const SampleCovariance& cov) {
  Vector psi(lambda_new.rows());
  for (Eigen::Index i = 0; i < lambda_new.rows(); ++i) {
    const auto li = lambda_new.row(i);
    const double v = cov(i, i) - 2.0 * li.dot(eq.b.row(i)) + li * eq.a_matrix * li.transpose();
    psi(i) = std::max(v, psi_floor(cov(i, i)));
  }
  return psi;
}

// Lambda_0 with orthonormal columns, row i scaled by 0.7 sqrt(s_ii);
// psi_0 = 0.5 diag(S).
inline FactorParams random_orthonormal_start(const SampleCovariance& cov, int m, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int p = cov.p();
  Matrix g(p, m);
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < p; ++i) g(i, j) = normal(rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(p, m);
  FactorParams start;
  start.loadings = cov.s().diagonal().cwiseSqrt().asDiagonal() * q * 0.7;
  start.psi = (0.5 * cov.s().diagonal()).cwiseMax(Vector::Constant(p, 1e-8));
  for (int i = 0; i < p; ++i) start.psi(i) = std::max(start.psi(i), psi_floor(cov(i, i)));
  return start;
}

namespace detail {

inline bool relative_change_below(double prev, double next, double tol) {
  return std::abs(prev - next) / (std::abs(prev) + 1.0) < tol;
}

inline void check_dims(const SampleCovariance& cov, int m) {
  if (m < 1 || m >= cov.p()) throw std::invalid_argument("number of factors must satisfy 1 <= m < p");
}

inline void apply_fixed_psi(FactorParams& params, const FitConfig& config) {
  if (config.fixed_psi.size() == 0) return;
  if (config.fixed_psi.size() != params.psi.size())
    throw std::invalid_argument("FitConfig: fixed_psi length does not match p");
  params.psi = config.fixed_psi;
}

// GEM run from one starting point.
inline FitResult run_gem(const SampleCovariance& cov, const PenaltySpec& spec,
                         const FitConfig& config, FactorParams params) {
  apply_fixed_psi(params, config);
  FitResult result;
  result.objective_trace.push_back(fitting_objective(params, cov, spec));
  for (int it = 1; it <= config.max_em_iter; ++it) {
    const EStepQuantities eq = e_step(params, cov);
    params.loadings = update_loadings(params, eq, cov, spec, config.max_cd_iter, config.tol);
    if (config.fixed_psi.size() == 0) params.psi = update_unique_variances(params.loadings, eq, cov);
    const double obj = fitting_objective(params, cov, spec);
    const double prev = result.objective_trace.back();
    result.objective_trace.push_back(obj);
    result.n_em_iter = it;
    if (relative_change_below(prev, obj, config.tol)) {
      result.converged = true;
      break;
    }
  }
  result.params = std::move(params);
  return result;
}

inline bool lower_objective(const FitResult& a, const FitResult& b) { return a.objective() < b.objective(); }

// Multi-start driver: keeps the best result under `better` (lowest final
// objective by default), first start winning ties.
template <typename RunOne, typename Better = decltype(&lower_objective)>
FitResult best_of_starts(const SampleCovariance& cov, int m, const FitConfig& config,
                         const std::optional<FactorParams>& start, RunOne&& run_one,
                         Better better = &lower_objective) {
  if (config.init != InitMethod::RandomOrthonormal) {
    if (!start) throw std::invalid_argument("fit: initial parameters required for this init method");
    if (start->p() != cov.p() || start->m() != m)
      throw std::invalid_argument("fit: initial parameters have the wrong shape");
    start->validate();
    return run_one(*start);
  }
  std::optional<FitResult> best;
  for (int r = 0; r < config.n_starts; ++r) {
    FitResult res = run_one(random_orthonormal_start(cov, m, derive_seed(config.seed, r)));
    if (!best || better(res, *best)) best = std::move(res);
  }
  return std::move(*best);
}

}  // namespace detail

inline FitResult fit(const SampleCovariance& cov, int m, PenaltySpec spec, const FitConfig& config,
                     const std::optional<FactorParams>& start = std::nullopt);

// w_i = 1 / sum_q lhat_iq^2 from an unpenalized (ML) fit.
inline Vector ml_weights(const SampleCovariance& cov, int m, const FitConfig& config) {
  PenaltySpec ml{PenaltyFamily::Lasso, 0.0, 1.0, {}};
  FitConfig cfg = config;
  cfg.init = InitMethod::RandomOrthonormal;
  cfg.fixed_psi.resize(0);
  const FitResult r = fit(cov, m, ml, cfg);
  Vector comm = r.params.loadings.rowwise().squaredNorm();
  return comm.cwiseMax(Vector::Constant(comm.size(), 1e-8)).cwiseInverse();
}

// Penalized ML fit by GEM. The objective trace is non-increasing.
inline FitResult fit(const SampleCovariance& cov, int m, PenaltySpec spec, const FitConfig& config,
                     const std::optional<FactorParams>& start) {
  detail::check_dims(cov, m);
  config.validate();
  spec.validate(cov.p());
  if (spec.family == PenaltyFamily::WeightedPrenet && spec.weights.size() == 0) {
    spec.weights = ml_weights(cov, m, config);
  }
  return detail::best_of_starts(cov, m, config, start, [&](const FactorParams& init) {
    return detail::run_gem(cov, spec, config, init);
  });
}

// One PSS M-step row: j = argmax_k b_ik^2 / a_kk (lowest index on ties),
// l_ij = b_ij / a_jj, zeros elsewhere. An all-zero b_i gives a zero row.
inline void pss_row(const EStepQuantities& eq, Eigen::Index i, Matrix& lambda) {
  auto row = lambda.row(i);
  row.setZero();
  Eigen::Index best = -1;
  double best_score = 0.0;
  for (Eigen::Index k = 0; k < eq.b.cols(); ++k) {
    const double score = eq.b(i, k) * eq.b(i, k) / eq.a_matrix(k, k);
    if (score > best_score) {
      best_score = score;
      best = k;
    }
  }
  if (best >= 0) row(best) = eq.b(i, best) / eq.a_matrix(best, best);
}

namespace detail {

inline FitResult run_pss(const SampleCovariance& cov, const FitConfig& config, FactorParams params,
                         int max_iter, double tol, bool polish) {
  apply_fixed_psi(params, config);
  const PenaltySpec none{PenaltyFamily::Lasso, 0.0, 1.0, {}};
  FitResult result;
  result.objective_trace.push_back(fitting_objective(params, cov, none));
  for (int it = 1; it <= max_iter; ++it) {
    const EStepQuantities eq = e_step(params, cov);
    FactorParams next = params;
    for (Eigen::Index i = 0; i < next.loadings.rows(); ++i) pss_row(eq, i, next.loadings);
    if (config.fixed_psi.size() == 0) next.psi = update_unique_variances(next.loadings, eq, cov);
    const double obj = fitting_objective(next, cov, none);
    const double prev = result.objective_trace.back();
    const double step = std::max((next.loadings - params.loadings).cwiseAbs().maxCoeff(),
                                 (next.psi - params.psi).cwiseAbs().maxCoeff());
    params = std::move(next);
    result.objective_trace.push_back(obj);
    result.n_em_iter = it;
    const bool done = polish ? step <= 1e-13 : relative_change_below(prev, obj, tol);
    if (done) {
      result.converged = true;
      break;
    }
  }
  result.params = std::move(params);
  return result;
}

}  // namespace detail

// At most one nonzero entry in every row.
inline bool has_pss(const Matrix& lambda) {
  for (Eigen::Index i = 0; i < lambda.rows(); ++i) {
    int nz = 0;
    for (Eigen::Index j = 0; j < lambda.cols(); ++j) nz += lambda(i, j) != 0.0;
    if (nz > 1) return false;
  }
  return true;
}

inline int occupied_columns(const Matrix& lambda) {
  return static_cast<int>((lambda.array() != 0.0).colwise().any().count());
}

// EM restricted to perfect simple structure; every iterate has at most one
// nonzero per row. Multi-start prefers solutions that occupy more columns and
// then the lowest final loss: an all-zero column is absorbing under EM (its b
// column vanishes), so a start that empties one can never use m factors again
// and the penalized path built on it would be stuck there. The winner is then
// iterated to a numerical fixed point.
inline FitResult pss_fit(const SampleCovariance& cov, int m, const FitConfig& config,
                         const std::optional<FactorParams>& start = std::nullopt) {
  detail::check_dims(cov, m);
  config.validate();
  auto better = [](const FitResult& a, const FitResult& b) {
    const int ca = occupied_columns(a.params.loadings), cb = occupied_columns(b.params.loadings);
    if (ca != cb) return ca > cb;
    return a.objective() < b.objective();
  };
  FitResult best = detail::best_of_starts(
      cov, m, config, start,
      [&](const FactorParams& init) {
        return detail::run_pss(cov, config, init, config.max_em_iter, config.tol, false);
      },
      better);
  FitResult polished = detail::run_pss(cov, config, best.params, 20 * config.max_em_iter, 0.0, true);
  best.objective_trace.insert(best.objective_trace.end(), polished.objective_trace.begin() + 1,
                              polished.objective_trace.end());
  best.n_em_iter += polished.n_em_iter;
  best.params = std::move(polished.params);
  return best;
}

// rho_max is rounded up by this relative amount so that the PSS fixed point
// survives floating-point rounding in the threshold comparison.
inline constexpr double kRhoMaxMargin = 1e-7;

struct RhoMaxResult {
  double rho_max;
  FitResult pss;
};

// Smallest rho at which the PSS solution is a fixed point of the prenet GEM:
//   max_i max_{k != j(i)} |b_ik - a_kj l_ij| / (gamma w_i psi_i |l_ij|)
// evaluated at the converged PSS solution (j(i) is the nonzero column of row
// i; zero rows are skipped; w_i = 1 unless weighted).
inline RhoMaxResult rho_max_with_fit(const SampleCovariance& cov, int m, const PenaltySpec& spec,
                                     const FitConfig& config) {
  if (spec.family != PenaltyFamily::Prenet && spec.family != PenaltyFamily::WeightedPrenet) {
    throw std::invalid_argument("rho_max: defined for the prenet families only");
  }
  if (!(spec.gamma > 0.0 && spec.gamma <= 1.0)) {
    throw std::invalid_argument("rho_max: gamma must lie in (0,1]");
  }
  if (m < 2) throw std::invalid_argument("rho_max: needs at least two factors");
  if (spec.family == PenaltyFamily::WeightedPrenet && spec.weights.size() != cov.p()) {
    throw std::invalid_argument("rho_max: wprenet needs weights");
  }
  RhoMaxResult out{0.0, pss_fit(cov, m, config)};
  const FactorParams& est = out.pss.params;
  const EStepQuantities eq = e_step(est, cov);
  double best = 0.0;
  for (Eigen::Index i = 0; i < est.loadings.rows(); ++i) {
    Eigen::Index j = -1;
    for (Eigen::Index k = 0; k < m; ++k)
      if (est.loadings(i, k) != 0.0) j = k;
    if (j < 0) continue;
    const double lij = est.loadings(i, j);
    const double w = spec.family == PenaltyFamily::WeightedPrenet ? spec.weights(i) : 1.0;
    for (Eigen::Index k = 0; k < m; ++k) {
      if (k == j) continue;
      const double ratio =
          std::abs(eq.b(i, k) - eq.a_matrix(j, k) * lij) / (spec.gamma * w * est.psi(i) * std::abs(lij));
      best = std::max(best, ratio);
    }
  }
  out.rho_max = best * (1.0 + kRhoMaxMargin);
  // The ratio assumes an exact fixed point. A PSS fit that has not fully
  // settled (typically a Heywood row converging slowly) can leave it a hair
  // short, so confirm with one warm-started penalized fit and step rho up
  // until the structure survives.
  if (best > 0.0) {
    FitConfig warm = config;
    warm.init = InitMethod::WarmStart;
    PenaltySpec s = spec;
    double bump = 1e-6;
    for (int attempt = 0; attempt < 12; ++attempt) {
      s.rho = out.rho_max;
      if (has_pss(fit(cov, m, s, warm, out.pss.params).params.loadings)) break;
      out.rho_max *= 1.0 + bump;
      bump *= 4.0;
    }
  }
  return out;
}

inline double rho_max(const SampleCovariance& cov, int m, double gamma, const FitConfig& config) {
  return rho_max_with_fit(cov, m, PenaltySpec{PenaltyFamily::Prenet, 0.0, gamma, {}}, config).rho_max;
}


}  // namespace prenet
