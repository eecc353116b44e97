#pragma once

// Simulation designs, sampling, scoring and the Monte Carlo study driver.

#include "prenet/model.hpp"
#include "prenet/path.hpp"
#include "prenet/random.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace prenet {

enum class ModelTag { A, B, C, D };

inline char model_letter(ModelTag t) { return "ABCD"[static_cast<int>(t)]; }

inline ModelTag parse_model(std::string_view s) {
  if (s.size() == 1) {
    switch (s[0]) {
      case 'A': case 'a': return ModelTag::A;
      case 'B': case 'b': return ModelTag::B;
      case 'C': case 'c': return ModelTag::C;
      case 'D': case 'd': return ModelTag::D;
      default: break;
    }
  }
  throw std::invalid_argument("unknown simulation model '" + std::string(s) + "'");
}

struct SimModel {
  ModelTag tag = ModelTag::A;
  Matrix lambda_true;
  Vector psi_true;
  std::uint64_t seed = 0;

  int p() const { return static_cast<int>(lambda_true.rows()); }
  int m() const { return static_cast<int>(lambda_true.cols()); }
  Matrix sigma() const { return sigma_from_params({lambda_true, psi_true}); }
};

// Two-factor design on six variables, given column-wise.
inline Matrix six_by_two(std::initializer_list<double> f1, std::initializer_list<double> f2) {
  Matrix lam(6, 2);
  int i = 0;
  for (double v : f1) lam(i++, 0) = v;
  i = 0;
  for (double v : f2) lam(i++, 1) = v;
  return lam;
}

// Loading matrix used for the small dense illustration (same as Model B).
inline Matrix dense_illustration_loadings() {
  return six_by_two({0.9, 0.8, 0.7, 0.2, 0.2, 0.2}, {0.2, 0.2, 0.2, 0.9, 0.8, 0.7});
}

// Loadings and unique variances psi = diag(I - Lambda Lambda^T).
// Model D: Model C with 100 of its 300 zeros replaced by U(0.4, 0.6) draws;
// rows whose communality reaches 1 are rescaled to communality 0.95.
inline SimModel make_model(ModelTag tag, std::uint64_t seed = 0) {
  SimModel model;
  model.tag = tag;
  model.seed = seed;
  switch (tag) {
    case ModelTag::A:
      model.lambda_true = six_by_two({0.95, 0.9, 0.85, 0, 0, 0}, {0, 0, 0, 0.8, 0.75, 0.7});
      break;
    case ModelTag::B:
      model.lambda_true = dense_illustration_loadings();
      break;
    case ModelTag::C:
    case ModelTag::D: {
      model.lambda_true = Matrix::Zero(100, 4);
      const double level[4] = {0.8, 0.75, 0.7, 0.65};
      for (int j = 0; j < 4; ++j) model.lambda_true.block(25 * j, j, 25, 1).setConstant(level[j]);
      if (tag == ModelTag::D) {
        std::vector<std::pair<int, int>> zeros;
        for (int i = 0; i < 100; ++i)
          for (int j = 0; j < 4; ++j)
            if (model.lambda_true(i, j) == 0.0) zeros.emplace_back(i, j);
        Rng rng(derive_seed(seed, 0xD));
        std::shuffle(zeros.begin(), zeros.end(), rng);
        std::uniform_real_distribution<double> u(0.4, 0.6);
        for (int k = 0; k < 100; ++k) model.lambda_true(zeros[k].first, zeros[k].second) = u(rng);
        for (int i = 0; i < 100; ++i) {
          const double comm = model.lambda_true.row(i).squaredNorm();
          if (comm >= 1.0) model.lambda_true.row(i) *= std::sqrt(0.95 / comm);
        }
      }
      break;
    }
  }
  model.psi_true = (1.0 - model.lambda_true.rowwise().squaredNorm().array()).matrix();
  return model;
}

// n draws from N(0, Sigma) via the Cholesky factor of Sigma.
inline Matrix sample_mvn(const Matrix& sigma, int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample_mvn: n must be >= 1");
  Eigen::LLT<Matrix> llt(sigma);
  if (llt.info() != Eigen::Success) throw std::runtime_error("sample_mvn: Sigma is not positive definite");
  const Matrix l = llt.matrixL();
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix z(n, sigma.rows());
  for (int t = 0; t < n; ++t)
    for (Eigen::Index j = 0; j < sigma.rows(); ++j) z(t, j) = normal(rng);
  return z * l.transpose();
}

inline Matrix sample_mvn(const SimModel& model, int n, std::uint64_t seed) {
  return sample_mvn(model.sigma(), n, seed);
}

// Column permutation and sign flips of `estimate` closest to `truth` in
// Frobenius norm. Exhaustive over permutations for m <= 8 (the sign of each
// column is then optimal independently); greedy matching beyond that.
inline Matrix align_loadings(const Matrix& estimate, const Matrix& truth) {
  if (estimate.rows() != truth.rows() || estimate.cols() != truth.cols())
    throw std::invalid_argument("align_loadings: shape mismatch");
  const auto m = estimate.cols();
  // cost[j][k]: squared distance between truth column j and +/- estimate column k
  Matrix cost(m, m);
  Matrix sign(m, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index k = 0; k < m; ++k) {
      const double plus = (truth.col(j) - estimate.col(k)).squaredNorm();
      const double minus = (truth.col(j) + estimate.col(k)).squaredNorm();
      cost(j, k) = std::min(plus, minus);
      sign(j, k) = minus < plus ? -1.0 : 1.0;
    }
  }
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(m));
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<Eigen::Index> best = perm;
  if (m <= 8) {
    double best_cost = std::numeric_limits<double>::infinity();
    do {
      double c = 0.0;
      for (Eigen::Index j = 0; j < m; ++j) c += cost(j, perm[j]);
      if (c < best_cost) {
        best_cost = c;
        best = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
  } else {
    std::vector<bool> used_t(m, false), used_e(m, false);
    for (Eigen::Index step = 0; step < m; ++step) {
      double bc = std::numeric_limits<double>::infinity();
      Eigen::Index bj = 0, bk = 0;
      for (Eigen::Index j = 0; j < m; ++j)
        for (Eigen::Index k = 0; k < m; ++k)
          if (!used_t[j] && !used_e[k] && cost(j, k) < bc) {
            bc = cost(j, k);
            bj = j;
            bk = k;
          }
      used_t[bj] = used_e[bk] = true;
      best[bj] = bk;
    }
  }
  Matrix out(estimate.rows(), m);
  for (Eigen::Index j = 0; j < m; ++j) out.col(j) = sign(j, best[j]) * estimate.col(best[j]);
  return out;
}

struct SimMetrics {
  double mse = 0.0;               // ||Lambda - Lambda_hat||^2 / (p m)
  double tpr = 0.0;
  std::optional<double> fpr;      // undefined when the truth has no zeros
};

inline SimMetrics sim_metrics(const Matrix& estimate, const Matrix& truth, double zero_tol = 0.0) {
  if (estimate.rows() != truth.rows() || estimate.cols() != truth.cols())
    throw std::invalid_argument("sim_metrics: shape mismatch");
  SimMetrics out;
  out.mse = (truth - estimate).squaredNorm() / static_cast<double>(truth.size());
  long long tp = 0, pos = 0, fp = 0, neg = 0;
  for (Eigen::Index i = 0; i < truth.rows(); ++i) {
    for (Eigen::Index j = 0; j < truth.cols(); ++j) {
      const bool est_nz = std::abs(estimate(i, j)) > zero_tol;
      if (truth(i, j) != 0.0) {
        ++pos;
        tp += est_nz;
      } else {
        ++neg;
        fp += est_nz;
      }
    }
  }
  out.tpr = pos > 0 ? static_cast<double>(tp) / pos : 1.0;
  if (neg > 0) out.fpr = static_cast<double>(fp) / neg;
  return out;
}

struct EstimatorSpec {
  std::string label;
  PenaltySpec spec;  // rho is ignored; the path supplies it
};

// lasso, MC (gamma = 3), prenet gamma = 1 and gamma = 0.01.
inline std::vector<EstimatorSpec> standard_estimators() {
  return {{"lasso", {PenaltyFamily::Lasso, 0.0, 1.0, {}}},
          {"MC", {PenaltyFamily::MC, 0.0, 3.0, {}}},
          {"prenet_1", {PenaltyFamily::Prenet, 0.0, 1.0, {}}},
          {"prenet_.01", {PenaltyFamily::Prenet, 0.0, 0.01, {}}}};
}

inline EstimatorSpec parse_estimator(std::string_view s) {
  for (auto& e : standard_estimators())
    if (e.label == s) return e;
  // family[:gamma], e.g. prenet:0.5 or mc:5
  const auto colon = s.find(':');
  EstimatorSpec e;
  e.label = std::string(s);
  e.spec.family = parse_family(s.substr(0, colon));
  e.spec.gamma = e.spec.family == PenaltyFamily::MC ? 3.0 : 1.0;
  if (colon != std::string_view::npos) e.spec.gamma = std::stod(std::string(s.substr(colon + 1)));
  return e;
}

struct StudyConfig {
  ModelTag tag = ModelTag::A;
  int n = 500;
  int replicates = 100;
  std::vector<EstimatorSpec> estimators = standard_estimators();
  std::vector<Criterion> criteria = {Criterion::AIC, Criterion::BIC, Criterion::EBIC};
  std::uint64_t seed = 20240607;
  int threads = 1;
  FitConfig fit;
  PathOptions path;
  bool regenerate_model_per_replicate = true;  // Model D only
};

struct StudyRow {
  ModelTag tag = ModelTag::A;
  int n = 0;
  Criterion criterion = Criterion::BIC;
  std::string estimator;
  double mse = 0.0;
  double tpr = 0.0;
  std::optional<double> fpr;
  int replicates = 0;
  int failures = 0;
};

struct ReplicateOutcome {
  bool ok = false;
  std::string error;
  // [estimator][criterion]
  std::vector<std::vector<SimMetrics>> metrics;
};

// One replicate: simulate, fit each estimator's path, select per criterion,
// align to the truth and score.
inline ReplicateOutcome run_replicate(const StudyConfig& cfg, int r) {
  ReplicateOutcome out;
  try {
    const std::uint64_t model_seed =
        cfg.regenerate_model_per_replicate ? derive_seed(cfg.seed, r, 0) : derive_seed(cfg.seed, 0);
    const SimModel model = make_model(cfg.tag, model_seed);
    const Matrix x = sample_mvn(model, cfg.n, derive_seed(cfg.seed, r, 1));
    // the population mean is known to be zero
    const SampleCovariance cov = sample_covariance(x, /*centered=*/false);
    for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
      FitConfig fc = cfg.fit;
      fc.seed = derive_seed(cfg.seed, r, 2 + e);
      const SolutionPath path = solution_path(cov, model.m(), cfg.estimators[e].spec, fc, cfg.path);
      std::vector<SimMetrics> per_criterion;
      for (Criterion c : cfg.criteria) {
        const auto k = select_along_path(path, c);
        const Matrix aligned = align_loadings(path.fits[k].params.loadings, model.lambda_true);
        per_criterion.push_back(sim_metrics(aligned, model.lambda_true));
      }
      out.metrics.push_back(std::move(per_criterion));
    }
    out.ok = true;
  } catch (const std::exception& ex) {
    out.ok = false;
    out.error = ex.what();
    out.metrics.clear();
  }
  return out;
}

// Runs all replicates (in parallel when threads > 1) and averages in
// replicate order, so the table does not depend on the thread count.
inline std::vector<StudyRow> run_study(const StudyConfig& cfg) {
  if (cfg.replicates < 1) throw std::invalid_argument("run_study: replicate count must be >= 1");
  if (cfg.estimators.empty() || cfg.criteria.empty())
    throw std::invalid_argument("run_study: need at least one estimator and criterion");
  std::vector<ReplicateOutcome> outcomes(static_cast<std::size_t>(cfg.replicates));
  const int workers = std::max(1, std::min(cfg.threads, cfg.replicates));
  std::atomic<int> next{0};
  auto work = [&] {
    for (int r = next++; r < cfg.replicates; r = next++) outcomes[r] = run_replicate(cfg, r);
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }

  std::vector<StudyRow> rows;
  for (std::size_t c = 0; c < cfg.criteria.size(); ++c) {
    for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
      StudyRow row;
      row.tag = cfg.tag;
      row.n = cfg.n;
      row.criterion = cfg.criteria[c];
      row.estimator = cfg.estimators[e].label;
      double fpr_sum = 0.0;
      int fpr_count = 0;
      for (const auto& o : outcomes) {
        if (!o.ok) {
          ++row.failures;
          continue;
        }
        const SimMetrics& mtr = o.metrics[e][c];
        row.mse += mtr.mse;
        row.tpr += mtr.tpr;
        if (mtr.fpr) {
          fpr_sum += *mtr.fpr;
          ++fpr_count;
        }
        ++row.replicates;
      }
      if (row.replicates > 0) {
        row.mse /= row.replicates;
        row.tpr /= row.replicates;
      }
      if (fpr_count > 0) row.fpr = fpr_sum / fpr_count;
      rows.push_back(row);
    }
  }
  return rows;
}

// Tab-separated table, one line per (criterion, estimator).
inline std::string format_study_table(const std::vector<StudyRow>& rows) {
  std::ostringstream os;
  os << "model\tn\tcriterion\testimator\tmse\ttpr\tfpr\treplicates\tfailures\n";
  os << std::fixed << std::setprecision(6);
  for (const auto& r : rows) {
    os << model_letter(r.tag) << '\t' << r.n << '\t' << criterion_name(r.criterion) << '\t' << r.estimator
       << '\t' << r.mse << '\t' << r.tpr << '\t';
    if (r.fpr) os << *r.fpr;
    else os << "-";
    os << '\t' << r.replicates << '\t' << r.failures << '\n';
  }
  return os.str();
}

}  // namespace prenet
