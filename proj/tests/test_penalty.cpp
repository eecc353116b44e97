#include "oracles.hpp"

#include <gtest/gtest.h>

#include <limits>

using namespace prenet;

namespace {

const PenaltyFamily kAll[] = {PenaltyFamily::Prenet,     PenaltyFamily::WeightedPrenet, PenaltyFamily::ElasticNet,
                              PenaltyFamily::Lasso,      PenaltyFamily::MC,             PenaltyFamily::Quartimin,
                              PenaltyFamily::VarimaxAdjusted};

PenaltySpec spec_for(PenaltyFamily f, int p, double rho = 0.7) {
  PenaltySpec s{f, rho, 0.4, {}};
  if (f == PenaltyFamily::MC) s.gamma = 3.0;
  if (f == PenaltyFamily::WeightedPrenet) s.weights = Vector::LinSpaced(p, 0.5, 2.0);
  return s;
}

}  // namespace

TEST(Penalty, PrenetHandComputed) {
  Matrix l(2, 3);
  l << 1, -2, 0.5, 0, 3, 0;
  // row 0 pairs: (1,-2) (1,.5) (-2,.5); row 1: all products zero
  const double abs_sum = 2 + 0.5 + 1;
  const double sq_sum = 4 + 0.25 + 1;
  for (double g : {0.0, 0.3, 1.0}) {
    PenaltySpec s{PenaltyFamily::Prenet, 1.0, g, {}};
    EXPECT_NEAR(penalty_value(l, s), g * abs_sum + 0.5 * (1 - g) * sq_sum, 1e-14);
  }
}

TEST(Penalty, PrenetGammaZeroIsHalfQuartimin) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix l = oracle::random_matrix(9, 4, seed);
    const double pre = penalty_value(l, {PenaltyFamily::Prenet, 1.0, 0.0, {}});
    const double qm = penalty_value(l, {PenaltyFamily::Quartimin, 1.0, 0.0, {}});
    EXPECT_NEAR(pre, 0.5 * qm, 1e-12);
    EXPECT_NEAR(qm, oracle::quartimin_criterion(l), 1e-12);
  }
}

TEST(Penalty, PssMatrixHasZeroPrenetPenalty) {
  Matrix l = Matrix::Zero(6, 3);
  l(0, 0) = 0.9;
  l(1, 2) = -0.4;
  l(4, 1) = 1.3;
  for (double g : {0.0, 0.5, 1.0}) EXPECT_EQ(penalty_value(l, {PenaltyFamily::Prenet, 1.0, g, {}}), 0.0);
  EXPECT_EQ(penalty_value(l, {PenaltyFamily::Quartimin, 1.0, 0.0, {}}), 0.0);
}

TEST(Penalty, SignAndColumnPermutationInvariance) {
  const Matrix l = oracle::random_matrix(7, 3, 77);
  Matrix flipped = l;
  flipped.col(1) *= -1.0;
  flipped(3, 0) *= -1.0;
  Matrix permuted(7, 3);
  permuted << l.col(2), l.col(0), l.col(1);
  for (auto f : kAll) {
    const PenaltySpec s = spec_for(f, 7);
    const double base = penalty_value(l, s);
    EXPECT_NEAR(penalty_value(flipped, s), base, 1e-12) << family_name(f);
    EXPECT_NEAR(penalty_value(permuted, s), base, 1e-12) << family_name(f);
  }
}

TEST(Penalty, RidgePartIsRotationInvariant) {
  // the elastic-net ridge term ||Lambda||^2 / 2 is unchanged by orthogonal rotations
  const Matrix l = oracle::random_matrix(8, 3, 12);
  Eigen::HouseholderQR<Matrix> qr(oracle::random_matrix(3, 3, 13));
  const Matrix t = qr.householderQ();
  const PenaltySpec ridge{PenaltyFamily::ElasticNet, 1.0, 0.0, {}};
  EXPECT_NEAR(penalty_value(l, ridge), penalty_value(l * t, ridge), 1e-12);
  // the prenet penalty is not: it prefers simple structure
  const PenaltySpec pre{PenaltyFamily::Prenet, 1.0, 0.0, {}};
  EXPECT_GT(std::abs(penalty_value(l, pre) - penalty_value(l * t, pre)), 1e-6);
}

TEST(Penalty, VarimaxIsHomogeneousOfDegreeFour) {
  const Matrix l = oracle::random_matrix(6, 3, 88);
  const PenaltySpec s{PenaltyFamily::VarimaxAdjusted, 1.0, 0.0, {}};
  for (double c : {0.5, 2.0, -1.5}) EXPECT_NEAR(penalty_value(c * l, s), std::pow(c, 4) * penalty_value(l, s), 1e-10);
}

TEST(Penalty, VarimaxMatchesDirectFormula) {
  const Matrix l = oracle::random_matrix(5, 3, 89);
  double direct = 0.0;
  const int p = 5, m = 3;
  for (int k = 0; k < m; ++k)
    for (int q = 0; q < m; ++q) {
      if (q == k) continue;
      for (int i = 0; i < p; ++i) direct += l(i, k) * l(i, k) * l(i, q) * l(i, q);
    }
  for (int k = 0; k < m; ++k) {
    double col = 0.0;
    for (int i = 0; i < p; ++i) col += l(i, k) * l(i, k);
    direct += col * col / p;
  }
  EXPECT_NEAR(penalty_value(l, {PenaltyFamily::VarimaxAdjusted, 1.0, 0.0, {}}), direct, 1e-12);
}

TEST(Penalty, McPiecewiseAndLassoLimit) {
  const double rho = 0.5, g = 3.0;
  EXPECT_NEAR(detail::mc_scalar(0.3, rho, g), rho * (0.3 - 0.09 / (2 * rho * g)), 1e-15);
  EXPECT_NEAR(detail::mc_scalar(-2.0, rho, g), rho * rho * g / 2, 1e-15);
  // continuous at the knot rho*gamma
  const double knot = rho * g;
  EXPECT_NEAR(detail::mc_scalar(knot - 1e-9, rho, g), detail::mc_scalar(knot, rho, g), 1e-8);
  const Matrix l = oracle::random_matrix(4, 2, 5);
  const double inf = std::numeric_limits<double>::infinity();
  EXPECT_NEAR(penalty_term(l, {PenaltyFamily::MC, rho, inf, {}}), penalty_term(l, {PenaltyFamily::Lasso, rho, 1.0, {}}),
              1e-12);
}

TEST(Penalty, ElasticNetEndpoints) {
  const Matrix l = oracle::random_matrix(4, 3, 6);
  EXPECT_NEAR(penalty_value(l, {PenaltyFamily::ElasticNet, 1.0, 1.0, {}}), l.cwiseAbs().sum(), 1e-13);
  EXPECT_NEAR(penalty_value(l, {PenaltyFamily::ElasticNet, 1.0, 0.0, {}}), 0.5 * l.squaredNorm(), 1e-13);
}

TEST(Penalty, WeightedPrenetWithUnitWeightsIsPrenet) {
  const Matrix l = oracle::random_matrix(5, 3, 8);
  const PenaltySpec w{PenaltyFamily::WeightedPrenet, 1.0, 0.3, Vector::Ones(5)};
  EXPECT_NEAR(penalty_value(l, w), penalty_value(l, {PenaltyFamily::Prenet, 1.0, 0.3, {}}), 1e-13);
}

TEST(Penalty, Validation) {
  EXPECT_THROW((PenaltySpec{PenaltyFamily::Prenet, -1.0, 0.5, {}}.validate(3)), std::invalid_argument);
  EXPECT_THROW((PenaltySpec{PenaltyFamily::Prenet, 1.0, 1.5, {}}.validate(3)), std::invalid_argument);
  EXPECT_THROW((PenaltySpec{PenaltyFamily::MC, 1.0, 1.0, {}}.validate(3)), std::invalid_argument);
  EXPECT_THROW((PenaltySpec{PenaltyFamily::Lasso, 1.0, 1.0, Vector::Ones(3)}.validate(3)), std::invalid_argument);
  EXPECT_THROW((PenaltySpec{PenaltyFamily::WeightedPrenet, 1.0, 1.0, Vector::Ones(2)}.validate(3)),
               std::invalid_argument);
  EXPECT_THROW(parse_family("ridge"), std::invalid_argument);
  for (auto f : kAll) EXPECT_EQ(parse_family(family_name(f)), f);
}

TEST(Penalty, ObjectiveAddsScaledPenalty) {
  FactorParams fp{oracle::random_matrix(5, 2, 50, 0.5), Vector::Constant(5, 0.6)};
  const SampleCovariance cov = sample_covariance(oracle::random_matrix(40, 5, 51));
  const PenaltySpec s{PenaltyFamily::Prenet, 0.8, 0.5, {}};
  EXPECT_NEAR(penalized_objective(fp, cov, s), discrepancy_loss(fp, cov) + 0.8 * penalty_value(fp.loadings, s),
              1e-13);
}
