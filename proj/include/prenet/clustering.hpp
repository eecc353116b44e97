#pragma once

// Variables clustering: PSS loadings as a partition, k-means on the columns
// of the data matrix, the orthonormal-PSS ("modified k-means") brute force,
// partition agreement and data reconstruction.

#include "prenet/model.hpp"
#include "prenet/random.hpp"
#include "prenet/solver.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

namespace prenet {

// Cluster id per variable, 1..m; kUnassigned marks a variable with no cluster
// (zero loading row).
struct ClusterAssignment {
  static constexpr int kUnassigned = 0;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  bool fully_assigned() const {
    return std::none_of(labels.begin(), labels.end(), [](int l) { return l == kUnassigned; });
  }
  int max_label() const { return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()); }
};

inline ClusterAssignment clusters_from_pss(const Matrix& lambda) {
  if (!has_pss(lambda)) throw std::invalid_argument("clusters_from_pss: loadings are not a perfect simple structure");
  ClusterAssignment out;
  out.labels.assign(static_cast<std::size_t>(lambda.rows()), ClusterAssignment::kUnassigned);
  for (Eigen::Index i = 0; i < lambda.rows(); ++i)
    for (Eigen::Index j = 0; j < lambda.cols(); ++j)
      if (lambda(i, j) != 0.0) out.labels[i] = static_cast<int>(j) + 1;
  return out;
}

// Indicator loadings: l_ij = 1/sqrt(p_j) for i in cluster j, else 0.
inline Matrix indicator_loading(const ClusterAssignment& assign, int p, int m) {
  if (static_cast<int>(assign.size()) != p) throw std::invalid_argument("indicator_loading: label count != p");
  std::vector<int> sizes(static_cast<std::size_t>(m), 0);
  for (int l : assign.labels) {
    if (l == ClusterAssignment::kUnassigned) throw std::invalid_argument("indicator_loading: unassigned variable");
    if (l < 1 || l > m) throw std::invalid_argument("indicator_loading: label out of range");
    ++sizes[l - 1];
  }
  for (int j = 0; j < m; ++j)
    if (sizes[j] == 0) throw std::invalid_argument("indicator_loading: empty cluster " + std::to_string(j + 1));
  Matrix lam = Matrix::Zero(p, m);
  for (int i = 0; i < p; ++i) {
    const int j = assign.labels[i] - 1;
    lam(i, j) = 1.0 / std::sqrt(static_cast<double>(sizes[j]));
  }
  return lam;
}

// sum_j sum_{i in C_j} ||x_i - mu_j||^2 over the columns x_i of `data`.
inline double kmeans_objective(const Matrix& data, const ClusterAssignment& assign) {
  const int m = assign.max_label();
  Matrix centroids = Matrix::Zero(data.rows(), m);
  std::vector<int> sizes(static_cast<std::size_t>(m), 0);
  for (std::size_t i = 0; i < assign.size(); ++i) {
    const int l = assign.labels[i];
    if (l == ClusterAssignment::kUnassigned) continue;
    centroids.col(l - 1) += data.col(static_cast<Eigen::Index>(i));
    ++sizes[l - 1];
  }
  for (int j = 0; j < m; ++j)
    if (sizes[j] > 0) centroids.col(j) /= sizes[j];
  double total = 0.0;
  for (std::size_t i = 0; i < assign.size(); ++i) {
    const int l = assign.labels[i];
    if (l == ClusterAssignment::kUnassigned) continue;
    total += (data.col(static_cast<Eigen::Index>(i)) - centroids.col(l - 1)).squaredNorm();
  }
  return total;
}

// The same objective from inner products g_ii' = x_i^T x_i':
//   sum_i g_ii - sum_j (1/p_j) sum_{i,i' in C_j} g_ii'.
inline double kmeans_objective_from_gram(const Matrix& gram, const ClusterAssignment& assign) {
  const int m = assign.max_label();
  double total = 0.0;
  for (int j = 1; j <= m; ++j) {
    std::vector<Eigen::Index> members;
    for (std::size_t i = 0; i < assign.size(); ++i)
      if (assign.labels[i] == j) members.push_back(static_cast<Eigen::Index>(i));
    if (members.empty()) continue;
    double block = 0.0;
    for (auto a : members) {
      total += gram(a, a);
      for (auto b : members) block += gram(a, b);
    }
    total -= block / static_cast<double>(members.size());
  }
  return total;
}

struct KMeansResult {
  ClusterAssignment assignment;
  double objective = 0.0;
  std::vector<double> trace;  // objective after each Lloyd iteration of the winning start
};

struct KMeansOptions {
  int n_starts = 20;
  std::uint64_t seed = 20240607;
  int max_iter = 300;
  bool standardize = false;
};

namespace detail {

inline KMeansResult lloyd(const Matrix& cols, int m, Rng& rng, int max_iter) {
  const auto p = cols.cols();
  // k-means++ seeding over the column vectors.
  std::vector<Eigen::Index> seeds;
  std::uniform_int_distribution<Eigen::Index> first(0, p - 1);
  seeds.push_back(first(rng));
  Vector d2(p);
  for (Eigen::Index i = 0; i < p; ++i) d2(i) = (cols.col(i) - cols.col(seeds[0])).squaredNorm();
  while (static_cast<int>(seeds.size()) < m) {
    const double total = d2.sum();
    Eigen::Index pick = 0;
    if (total > 0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double r = u(rng), acc = 0.0;
      for (pick = 0; pick < p - 1; ++pick) {
        acc += d2(pick);
        if (acc >= r && d2(pick) > 0) break;
      }
    } else {
      for (pick = 0; pick < p; ++pick)
        if (std::find(seeds.begin(), seeds.end(), pick) == seeds.end()) break;
    }
    seeds.push_back(pick);
    for (Eigen::Index i = 0; i < p; ++i)
      d2(i) = std::min(d2(i), (cols.col(i) - cols.col(pick)).squaredNorm());
  }
  Matrix centroids(cols.rows(), m);
  for (int j = 0; j < m; ++j) centroids.col(j) = cols.col(seeds[j]);

  KMeansResult res;
  res.assignment.labels.assign(static_cast<std::size_t>(p), 1);
  std::vector<int> prev;
  for (int it = 0; it < max_iter; ++it) {
    // assignment step, lowest index on ties
    for (Eigen::Index i = 0; i < p; ++i) {
      int best = 0;
      double best_d = (cols.col(i) - centroids.col(0)).squaredNorm();
      for (int j = 1; j < m; ++j) {
        const double d = (cols.col(i) - centroids.col(j)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = j;
        }
      }
      res.assignment.labels[i] = best + 1;
    }
    // empty clusters take the column farthest from its centroid
    for (int j = 0; j < m; ++j) {
      if (std::find(res.assignment.labels.begin(), res.assignment.labels.end(), j + 1) !=
          res.assignment.labels.end())
        continue;
      Eigen::Index far = 0;
      double far_d = -1.0;
      for (Eigen::Index i = 0; i < p; ++i) {
        const int own = res.assignment.labels[i];
        const auto n_own = std::count(res.assignment.labels.begin(), res.assignment.labels.end(), own);
        if (n_own < 2) continue;
        const double d = (cols.col(i) - centroids.col(own - 1)).squaredNorm();
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      res.assignment.labels[far] = j + 1;
    }
    // update step
    centroids.setZero();
    std::vector<int> sizes(static_cast<std::size_t>(m), 0);
    for (Eigen::Index i = 0; i < p; ++i) {
      centroids.col(res.assignment.labels[i] - 1) += cols.col(i);
      ++sizes[res.assignment.labels[i] - 1];
    }
    for (int j = 0; j < m; ++j) centroids.col(j) /= sizes[j];
    res.trace.push_back(kmeans_objective(cols, res.assignment));
    if (res.assignment.labels == prev) break;
    prev = res.assignment.labels;
  }
  res.objective = res.trace.back();
  return res;
}

}  // namespace detail

// Lloyd's algorithm on the (centered, optionally standardized) columns of an
// n x p data matrix. Keeps the best of n_starts k-means++ starts.
inline KMeansResult kmeans_variables(const Matrix& data, int m, const KMeansOptions& opts = {}) {
  if (m < 1 || m > data.cols()) throw std::invalid_argument("kmeans_variables: need 1 <= m <= p");
  if (opts.n_starts < 1) throw std::invalid_argument("kmeans_variables: n_starts must be >= 1");
  Matrix cols = data.rowwise() - data.colwise().mean();
  if (opts.standardize) {
    for (Eigen::Index j = 0; j < cols.cols(); ++j) {
      const double nrm = cols.col(j).norm();
      if (nrm > 0) cols.col(j) /= nrm;
    }
  }
  std::optional<KMeansResult> best;
  for (int r = 0; r < opts.n_starts; ++r) {
    Rng rng(derive_seed(opts.seed, static_cast<std::uint64_t>(r)));
    KMeansResult res = detail::lloyd(cols, m, rng, opts.max_iter);
    if (!best || res.objective < best->objective) best = std::move(res);
  }
  return std::move(*best);
}

struct ModifiedKMeansResult {
  Matrix loadings;
  ClusterAssignment assignment;
  double objective = 0.0;  // ||S - Lambda Lambda^T||_F^2
};

// Exhaustive minimizer of ||S - Lambda Lambda^T||^2 subject to
// l_ij l_ik = 0 (j != k) and Lambda^T Lambda = I. For a fixed partition the
// best column is the leading eigenvector of the cluster's block of S, so the
// search runs over partitions into m nonempty clusters. Test oracle; p <= 12.
inline ModifiedKMeansResult modified_kmeans_bruteforce(const SampleCovariance& cov, int m) {
  const int p = cov.p();
  if (p > 12) throw std::invalid_argument("modified_kmeans_bruteforce: p must be <= 12");
  if (m < 1 || m > p) throw std::invalid_argument("modified_kmeans_bruteforce: need 1 <= m <= p");
  const Matrix& s = cov.s();
  const double s_norm2 = s.squaredNorm();

  ModifiedKMeansResult best;
  double best_gain = -std::numeric_limits<double>::infinity();
  std::vector<int> labels(static_cast<std::size_t>(p), 0);

  auto evaluate = [&]() {
    Matrix lam = Matrix::Zero(p, m);
    double gain = 0.0;
    for (int j = 0; j < m; ++j) {
      std::vector<int> members;
      for (int i = 0; i < p; ++i)
        if (labels[i] == j) members.push_back(i);
      Matrix block(members.size(), members.size());
      for (std::size_t a = 0; a < members.size(); ++a)
        for (std::size_t b = 0; b < members.size(); ++b) block(a, b) = s(members[a], members[b]);
      Eigen::SelfAdjointEigenSolver<Matrix> es(block);
      const auto top = static_cast<Eigen::Index>(members.size()) - 1;
      gain += es.eigenvalues()(top);
      for (std::size_t a = 0; a < members.size(); ++a) lam(members[a], j) = es.eigenvectors()(a, top);
    }
    if (gain > best_gain) {
      best_gain = gain;
      best.loadings = lam;
      best.assignment.labels.resize(static_cast<std::size_t>(p));
      for (int i = 0; i < p; ++i) best.assignment.labels[i] = labels[i] + 1;
    }
  };

  // restricted growth strings: each partition into exactly m blocks once
  std::function<void(int, int)> rec = [&](int i, int used) {
    if (p - i < m - used) return;
    if (i == p) {
      if (used == m) evaluate();
      return;
    }
    for (int l = 0; l < used; ++l) {
      labels[i] = l;
      rec(i + 1, used);
    }
    if (used < m) {
      labels[i] = used;
      rec(i + 1, used + 1);
    }
  };
  rec(0, 0);
  // ||S - L L^T||^2 = ||S||^2 - 2 tr(L^T S L) + m  for orthonormal L
  best.objective = s_norm2 - 2.0 * best_gain + m;
  return best;
}

// Hubert-Arabie adjusted Rand index.
inline double adjusted_rand_index(const ClusterAssignment& a, const ClusterAssignment& b) {
  if (a.size() != b.size()) throw std::invalid_argument("adjusted_rand_index: length mismatch");
  if (!a.fully_assigned() || !b.fully_assigned())
    throw std::invalid_argument("adjusted_rand_index: unassigned variables");
  const int ka = a.max_label(), kb = b.max_label();
  std::vector<std::vector<long long>> table(static_cast<std::size_t>(ka),
                                            std::vector<long long>(static_cast<std::size_t>(kb), 0));
  for (std::size_t i = 0; i < a.size(); ++i) ++table[a.labels[i] - 1][b.labels[i] - 1];
  auto choose2 = [](long long x) { return static_cast<double>(x) * (x - 1) / 2.0; };
  double index = 0.0, sum_a = 0.0, sum_b = 0.0;
  std::vector<long long> col(static_cast<std::size_t>(kb), 0);
  for (int r = 0; r < ka; ++r) {
    long long row = 0;
    for (int c = 0; c < kb; ++c) {
      index += choose2(table[r][c]);
      row += table[r][c];
      col[c] += table[r][c];
    }
    sum_a += choose2(row);
  }
  for (int c = 0; c < kb; ++c) sum_b += choose2(col[c]);
  const double total = choose2(static_cast<long long>(a.size()));
  const double expected = sum_a * sum_b / total;
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;  // both partitions trivial
  return (index - expected) / (max_index - expected);
}

enum class ReconstructionMethod { PosteriorMean, Projection };

// PosteriorMean: Lambda M^-1 Lambda^T Psi^-1 x,  M = Lambda^T Psi^-1 Lambda + I.
// Projection:    Lambda (Lambda^T Lambda)^-1 Lambda^T x.
inline Matrix reconstruction_operator(const Matrix& lambda, const Vector& psi, ReconstructionMethod method) {
  if (method == ReconstructionMethod::PosteriorMean) {
    if (psi.size() != lambda.rows() || !(psi.array() > 0).all())
      throw std::invalid_argument("reconstruct: posterior mean needs positive unique variances");
    Matrix w = psi.cwiseInverse().asDiagonal() * lambda;
    Matrix mm = lambda.transpose() * w;
    mm.diagonal().array() += 1.0;
    return lambda * mm.llt().solve(w.transpose());
  }
  Matrix gram = lambda.transpose() * lambda;
  Eigen::FullPivLU<Matrix> lu(gram);
  if (!lu.isInvertible()) throw std::domain_error("reconstruct: Lambda^T Lambda is singular");
  return lambda * lu.solve(lambda.transpose());
}

inline Vector reconstruct(const Matrix& lambda, const Vector& psi, const Vector& x, ReconstructionMethod method) {
  return reconstruction_operator(lambda, psi, method) * x;
}

// Mean over rows x_t of ||x_t - xhat_t||^2.
inline double reconstruction_error(const Matrix& lambda, const Vector& psi, const Matrix& rows,
                                   ReconstructionMethod method) {
  const Matrix op = reconstruction_operator(lambda, psi, method);
  const Matrix resid = rows - rows * op.transpose();
  return resid.squaredNorm() / static_cast<double>(rows.rows());
}

}  // namespace prenet
