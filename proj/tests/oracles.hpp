#pragma once

// Independent reference computations used only by the tests. Each one takes
// the slow, obvious route (explicit inverses, loops, brute-force search) so it
// shares no code path with the library.

#include "prenet/prenet.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

namespace oracle {

using prenet::Matrix;
using prenet::Vector;

inline Matrix random_matrix(int rows, int cols, std::uint64_t seed, double scale = 1.0) {
  prenet::Rng rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  Matrix a(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) a(i, j) = normal(rng);
  return a;
}

inline Matrix covariance_loop(const Matrix& x) {
  const auto n = x.rows(), p = x.cols();
  std::vector<double> mean(static_cast<std::size_t>(p), 0.0);
  for (Eigen::Index j = 0; j < p; ++j) {
    for (Eigen::Index t = 0; t < n; ++t) mean[j] += x(t, j);
    mean[j] /= static_cast<double>(n);
  }
  Matrix s(p, p);
  for (Eigen::Index a = 0; a < p; ++a)
    for (Eigen::Index b = 0; b < p; ++b) {
      double acc = 0.0;
      for (Eigen::Index t = 0; t < n; ++t) acc += (x(t, a) - mean[a]) * (x(t, b) - mean[b]);
      s(a, b) = acc / static_cast<double>(n);
    }
  return s;
}

inline Matrix sigma(const Matrix& lambda, const Vector& psi) {
  Matrix s = lambda * lambda.transpose();
  for (Eigen::Index i = 0; i < psi.size(); ++i) s(i, i) += psi(i);
  return s;
}

// 1/2 { tr(Sigma^-1 S) - log|Sigma^-1 S| - p } with explicit inverse and LU determinants.
inline double discrepancy(const Matrix& lambda, const Vector& psi, const Matrix& s) {
  const Matrix sig = sigma(lambda, psi);
  const Matrix inv = sig.inverse();
  const double tr = (inv * s).trace();
  const double logdet = std::log((inv * s).determinant());
  return 0.5 * (tr - logdet - static_cast<double>(s.rows()));
}

inline double log_likelihood(const Matrix& lambda, const Vector& psi, const Matrix& s, int n) {
  const Matrix sig = sigma(lambda, psi);
  const double p = static_cast<double>(s.rows());
  return -0.5 * n * (std::log(sig.determinant()) + (sig.inverse() * s).trace() + p * std::log(2 * std::numbers::pi));
}

// Conditional factor moments from Sigma^-1 directly:
//   E[f|x] = Lambda^T Sigma^-1 x,  Var[f|x] = I - Lambda^T Sigma^-1 Lambda.
struct Moments {
  Matrix b;  // S Sigma^-1 Lambda
  Matrix a;  // I - L^T Sigma^-1 L + L^T Sigma^-1 S Sigma^-1 L
};

inline Moments conditional_moments(const Matrix& lambda, const Vector& psi, const Matrix& s) {
  const Matrix inv = sigma(lambda, psi).inverse();
  const auto m = lambda.cols();
  Moments out;
  out.b = s * inv * lambda;
  out.a = Matrix::Identity(m, m) - lambda.transpose() * inv * lambda +
          lambda.transpose() * inv * s * inv * lambda;
  return out;
}

// Global minimizer of f on [lo, hi]: dense grid, then golden section on the
// best bracket.
inline double minimize_1d(const std::function<double(double)>& f, double lo, double hi, int grid = 4001) {
  double best = lo, best_v = f(lo);
  const double h = (hi - lo) / (grid - 1);
  for (int k = 1; k < grid; ++k) {
    const double x = lo + k * h;
    const double v = f(x);
    if (v < best_v) {
      best_v = v;
      best = x;
    }
  }
  double a = std::max(lo, best - h), b = std::min(hi, best + h);
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - r * (b - a), d = a + r * (b - a);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < 200 && b - a > 1e-14; ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = f(d);
    }
  }
  const double x = 0.5 * (a + b);
  // an exact zero (soft threshold) beats a nearby point of equal value
  if (lo <= 0.0 && hi >= 0.0 && f(0.0) <= f(x)) return 0.0;
  return f(x) < best_v ? x : best;
}

inline double quartimin_criterion(const Matrix& l) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < l.rows(); ++i)
    for (Eigen::Index j = 0; j < l.cols(); ++j)
      for (Eigen::Index k = j + 1; k < l.cols(); ++k) s += l(i, j) * l(i, j) * l(i, k) * l(i, k);
  return s;
}

inline Matrix plane_rotate(const Matrix& l, Eigen::Index a, Eigen::Index b, double t) {
  Matrix r = l;
  r.col(a) = std::cos(t) * l.col(a) - std::sin(t) * l.col(b);
  r.col(b) = std::sin(t) * l.col(a) + std::cos(t) * l.col(b);
  return r;
}

// Orthogonal rotation minimizing the quartimin criterion by Jacobi sweeps of
// plane rotations, each angle found by 1-D global search.
inline Matrix quartimin_rotation(Matrix l) {
  for (int sweep = 0; sweep < 200; ++sweep) {
    const double before = quartimin_criterion(l);
    for (Eigen::Index a = 0; a < l.cols(); ++a)
      for (Eigen::Index b = a + 1; b < l.cols(); ++b) {
        const double t = minimize_1d(
            [&](double x) { return quartimin_criterion(plane_rotate(l, a, b, x)); }, -std::numbers::pi / 4,
            std::numbers::pi / 4, 721);
        const Matrix cand = plane_rotate(l, a, b, t);
        if (quartimin_criterion(cand) < quartimin_criterion(l)) l = cand;
      }
    if (before - quartimin_criterion(l) < 1e-16) break;
  }
  return l;
}

// All 2^m sign patterns times all m! column orders, smallest Frobenius distance.
inline double best_aligned_distance(const Matrix& est, const Matrix& truth) {
  const auto m = est.cols();
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(m));
  for (Eigen::Index j = 0; j < m; ++j) perm[j] = j;
  double best = std::numeric_limits<double>::infinity();
  do {
    for (long mask = 0; mask < (1L << m); ++mask) {
      Matrix cand(est.rows(), m);
      for (Eigen::Index j = 0; j < m; ++j) cand.col(j) = ((mask >> j) & 1 ? -1.0 : 1.0) * est.col(perm[j]);
      best = std::min(best, (cand - truth).norm());
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

// Minimizes ||S - L L^T||^2 over every labeling of p variables into m
// nonempty clusters (m^p label vectors) and every orthonormal PSS L with that
// zero pattern; within a labeling the optimum is the top eigenvector of each
// diagonal block.
inline double modified_kmeans_exhaustive(const Matrix& s, int m, std::vector<int>* labels_out = nullptr) {
  const int p = static_cast<int>(s.rows());
  std::vector<int> labels(static_cast<std::size_t>(p), 0);
  double best = std::numeric_limits<double>::infinity();
  long total = 1;
  for (int i = 0; i < p; ++i) total *= m;
  for (long code = 0; code < total; ++code) {
    long c = code;
    for (int i = 0; i < p; ++i) {
      labels[i] = static_cast<int>(c % m);
      c /= m;
    }
    Matrix l = Matrix::Zero(p, m);
    bool ok = true;
    for (int j = 0; j < m && ok; ++j) {
      std::vector<int> idx;
      for (int i = 0; i < p; ++i)
        if (labels[i] == j) idx.push_back(i);
      if (idx.empty()) {
        ok = false;
        break;
      }
      Matrix block(idx.size(), idx.size());
      for (std::size_t x = 0; x < idx.size(); ++x)
        for (std::size_t y = 0; y < idx.size(); ++y) block(x, y) = s(idx[x], idx[y]);
      Eigen::SelfAdjointEigenSolver<Matrix> es(block);
      for (std::size_t x = 0; x < idx.size(); ++x) l(idx[x], j) = es.eigenvectors()(x, idx.size() - 1);
    }
    if (!ok) continue;
    const double v = (s - l * l.transpose()).squaredNorm();
    if (v < best) {
      best = v;
      if (labels_out) *labels_out = labels;
    }
  }
  return best;
}

}  // namespace oracle
