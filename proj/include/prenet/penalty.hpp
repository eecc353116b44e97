#pragma once

#include "prenet/model.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>

namespace prenet {

enum class PenaltyFamily { Prenet, WeightedPrenet, ElasticNet, Lasso, MC, Quartimin, VarimaxAdjusted };

inline std::string_view family_name(PenaltyFamily f) {
  switch (f) {
    case PenaltyFamily::Prenet: return "prenet";
    case PenaltyFamily::WeightedPrenet: return "wprenet";
    case PenaltyFamily::ElasticNet: return "enet";
    case PenaltyFamily::Lasso: return "lasso";
    case PenaltyFamily::MC: return "mc";
    case PenaltyFamily::Quartimin: return "quartimin";
    case PenaltyFamily::VarimaxAdjusted: return "varimax";
  }
  return "unknown";
}

inline PenaltyFamily parse_family(std::string_view name) {
  for (auto f : {PenaltyFamily::Prenet, PenaltyFamily::WeightedPrenet, PenaltyFamily::ElasticNet,
                 PenaltyFamily::Lasso, PenaltyFamily::MC, PenaltyFamily::Quartimin,
                 PenaltyFamily::VarimaxAdjusted}) {
    if (family_name(f) == name) return f;
  }
  throw std::invalid_argument("unknown penalty family '" + std::string(name) + "'");
}

// True for penalties that act on each loading separately.
inline bool is_separable(PenaltyFamily f) {
  return f == PenaltyFamily::ElasticNet || f == PenaltyFamily::Lasso || f == PenaltyFamily::MC;
}

// Penalty family plus tuning parameters.
//
// gamma domain depends on the family: [0,1] for Prenet/WeightedPrenet/ElasticNet,
// (1, inf] for MC (inf gives the lasso), ignored otherwise. `weights` (one per
// row) is used only by WeightedPrenet; when empty the solver derives them from
// the ML loadings.
//
// Scaling conventions:
//  - Quartimin is sum_i sum_{j<k} l_ij^2 l_ik^2 without the 1/2, so
//    Prenet(gamma = 0) == 0.5 * Quartimin.
//  - MC already contains rho: penalty_value returns the whole rho*P term and
//    penalty_term does not multiply again.
struct PenaltySpec {
  PenaltyFamily family = PenaltyFamily::Prenet;
  double rho = 0.0;
  double gamma = 1.0;
  Vector weights;

  void validate(Eigen::Index p) const {
    if (!(rho >= 0.0) || !std::isfinite(rho)) {
      throw std::invalid_argument("penalty: rho must be finite and nonnegative");
    }
    switch (family) {
      case PenaltyFamily::Prenet:
      case PenaltyFamily::WeightedPrenet:
      case PenaltyFamily::ElasticNet:
        if (!(gamma >= 0.0 && gamma <= 1.0)) {
          throw std::invalid_argument("penalty: gamma must lie in [0,1] for " +
                                      std::string(family_name(family)));
        }
        break;
      case PenaltyFamily::MC:
        if (!(gamma > 1.0)) throw std::invalid_argument("penalty: MC requires gamma > 1");
        break;
      default:
        break;
    }
    if (family == PenaltyFamily::WeightedPrenet) {
      if (weights.size() != 0 && weights.size() != p) {
        throw std::invalid_argument("penalty: weight vector length does not match rows");
      }
      if (weights.size() != 0 && !(weights.array() > 0).all()) {
        throw std::invalid_argument("penalty: weights must be positive");
      }
    } else if (weights.size() != 0) {
      throw std::invalid_argument("penalty: weights are only allowed for wprenet");
    }
  }
};

namespace detail {

inline double mc_scalar(double x, double rho, double gamma) {
  const double t = std::abs(x);
  if (std::isinf(gamma)) return rho * t;
  if (t < rho * gamma) return rho * (t - t * t / (2.0 * rho * gamma));
  return rho * rho * gamma / 2.0;
}

}  // namespace detail

// P(Lambda) for the family. For MC the returned value is the full rho*P.
inline double penalty_value(const Matrix& lambda, const PenaltySpec& spec) {
  spec.validate(lambda.rows());
  if (spec.family == PenaltyFamily::WeightedPrenet && spec.weights.size() == 0) {
    throw std::invalid_argument("penalty_value: wprenet needs explicit weights");
  }
  const auto p = lambda.rows();
  const auto m = lambda.cols();
  const double g = spec.gamma;
  double total = 0.0;
  switch (spec.family) {
    case PenaltyFamily::Prenet:
    case PenaltyFamily::WeightedPrenet:
      for (Eigen::Index i = 0; i < p; ++i) {
        const double w = spec.family == PenaltyFamily::WeightedPrenet ? spec.weights(i) : 1.0;
        for (Eigen::Index j = 0; j + 1 < m; ++j) {
          for (Eigen::Index k = j + 1; k < m; ++k) {
            const double a = lambda(i, j), b = lambda(i, k);
            total += g * w * std::abs(a) * std::abs(b) + 0.5 * (1.0 - g) * w * w * a * a * b * b;
          }
        }
      }
      return total;
    case PenaltyFamily::Quartimin:
      for (Eigen::Index i = 0; i < p; ++i)
        for (Eigen::Index j = 0; j + 1 < m; ++j)
          for (Eigen::Index k = j + 1; k < m; ++k)
            total += lambda(i, j) * lambda(i, j) * lambda(i, k) * lambda(i, k);
      return total;
    case PenaltyFamily::ElasticNet:
      return g * lambda.cwiseAbs().sum() + 0.5 * (1.0 - g) * lambda.squaredNorm();
    case PenaltyFamily::Lasso:
      return lambda.cwiseAbs().sum();
    case PenaltyFamily::MC:
      for (Eigen::Index i = 0; i < p; ++i)
        for (Eigen::Index j = 0; j < m; ++j) total += detail::mc_scalar(lambda(i, j), spec.rho, g);
      return total;
    case PenaltyFamily::VarimaxAdjusted: {
      // sum_k sum_{l != k} sum_i l_ik^2 l_il^2 + (1/p) sum_k (sum_i l_ik^2)^2
      const Matrix sq = lambda.array().square().matrix();
      for (Eigen::Index i = 0; i < p; ++i) {
        const double r = sq.row(i).sum();
        total += r * r - sq.row(i).squaredNorm();
      }
      total += sq.colwise().sum().squaredNorm() / static_cast<double>(p);
      return total;
    }
  }
  return total;
}

// The additive term of the penalized objective: rho * P, or the MC value as is.
inline double penalty_term(const Matrix& lambda, const PenaltySpec& spec) {
  if (spec.family == PenaltyFamily::MC) return penalty_value(lambda, spec);
  if (spec.rho == 0.0) return 0.0;
  return spec.rho * penalty_value(lambda, spec);
}

// l(Lambda, Psi) + rho P(Lambda) with the discrepancy as loss.
inline double penalized_objective(const FactorParams& params, const SampleCovariance& cov,
                                  const PenaltySpec& spec) {
  return discrepancy_loss(params, cov) + penalty_term(params.loadings, spec);
}

// Objective tracked by the solvers (see fitting_loss for singular S).
inline double fitting_objective(const FactorParams& params, const SampleCovariance& cov,
                                const PenaltySpec& spec) {
  return fitting_loss(params, cov) + penalty_term(params.loadings, spec);
}

// Note on normalized loadings: replacing l_ij by l_ij / ||l_i|| inside the
// prenet penalty gives a scale-invariant function (P(a L) == P(L)), so it is
// not offered as a family. Use WeightedPrenet with w_i = 1 / ||l_i^ML||^2.

}  // namespace prenet
