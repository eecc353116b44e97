// prenet command-line front end: fit, path, cluster, simulate.

#include "prenet/prenet.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using json = nlohmann::json;
using namespace prenet;

constexpr const char* kVersion = "0.1.0";
constexpr std::uint64_t kDefaultSeed = 20240607;

struct CommonOptions {
  std::string input;
  int m = 0;
  std::uint64_t seed = kDefaultSeed;
  int n_starts = 20;
  double tol = 1e-7;
  int max_iter = 1000;
  bool correlation = false;
  std::string json_path;
  int threads = 1;
};

struct PenaltyOptions {
  std::string penalty = "prenet";
  std::optional<double> gamma;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool needs_input) {
  if (needs_input) cmd->add_option("input", o.input, "Data table (rows = observations)")->required();
  cmd->add_option("--seed", o.seed, "Master random seed")->capture_default_str();
  cmd->add_option("--n-starts", o.n_starts, "Random starts per multi-start fit")->capture_default_str();
  cmd->add_option("--tol", o.tol, "Relative objective tolerance")->capture_default_str();
  cmd->add_option("--max-iter", o.max_iter, "EM iteration limit")->capture_default_str();
  cmd->add_option("--json", o.json_path, "Write a structured JSON report to PATH");
  cmd->add_option("--threads", o.threads, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
}

void add_model_flags(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--m", o.m, "Number of factors")->required()->check(CLI::PositiveNumber);
  cmd->add_flag("--correlation", o.correlation, "Analyse the correlation matrix");
}

void add_penalty_flags(CLI::App* cmd, PenaltyOptions& p) {
  cmd->add_option("--penalty", p.penalty, "prenet, wprenet, lasso, enet, mc, quartimin or varimax")
      ->capture_default_str();
  cmd->add_option("--gamma", p.gamma, "Penalty shape parameter (default 1; 3 for mc)");
}

FitConfig fit_config(const CommonOptions& o) {
  FitConfig c;
  c.seed = o.seed;
  c.n_starts = o.n_starts;
  c.tol = o.tol;
  c.max_em_iter = o.max_iter;
  c.validate();
  return c;
}

PenaltySpec penalty_spec(const PenaltyOptions& p) {
  PenaltySpec s;
  s.family = parse_family(p.penalty);
  s.gamma = p.gamma.value_or(s.family == PenaltyFamily::MC ? 3.0 : 1.0);
  return s;
}

SampleCovariance load_covariance(const CommonOptions& o, Matrix* data_out = nullptr) {
  const Table t = read_table_file(o.input);
  if (o.m >= t.values.cols())
    throw std::invalid_argument("--m must be smaller than the number of variables (" +
                                std::to_string(t.values.cols()) + ")");
  if (data_out) *data_out = t.values;
  return sample_covariance(t.values, true, o.correlation);
}

json matrix_json(const Matrix& a) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(a.size()));
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) data.push_back(a(i, j));
  return {{"rows", a.rows()}, {"cols", a.cols()}, {"data", data}};
}

json vector_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json params_json(const FactorParams& p) {
  return {{"loadings", matrix_json(p.loadings)}, {"psi", vector_json(p.psi)}};
}

json criteria_json(const CriteriaTriple& c) {
  return {{"p0", c.p0}, {"log_likelihood", c.log_likelihood}, {"aic", c.aic}, {"bic", c.bic}, {"ebic", c.ebic}};
}

json metadata_json(const std::string& command, const CommonOptions& o, json config) {
  config["seed"] = o.seed;
  config["n_starts"] = o.n_starts;
  config["tol"] = o.tol;
  config["max_iter"] = o.max_iter;
  config["threads"] = o.threads;
  if (!o.input.empty()) config["input"] = o.input;
  if (o.m > 0) config["m"] = o.m;
  config["correlation"] = o.correlation;
  return {{"command", command}, {"seed", o.seed}, {"version", kVersion}, {"config", std::move(config)}};
}

void write_json(const std::string& path, const json& doc) {
  if (path.empty()) return;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << doc.dump(2) << '\n';
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

void print_params(std::ostream& os, const FactorParams& p) {
  os << "variable";
  for (int j = 0; j < p.m(); ++j) os << "\tF" << j + 1;
  os << "\tpsi\n";
  os << std::fixed << std::setprecision(4);
  for (int i = 0; i < p.p(); ++i) {
    os << 'V' << i + 1;
    for (int j = 0; j < p.m(); ++j) os << '\t' << p.loadings(i, j);
    os << '\t' << p.psi(i) << '\n';
  }
  os << std::defaultfloat;
}

// ---- fit -------------------------------------------------------------------

struct FitCmd {
  CommonOptions common;
  PenaltyOptions pen;
  std::string rho = "auto";
};

int run_fit(const FitCmd& c) {
  const SampleCovariance cov = load_covariance(c.common);
  const FitConfig cfg = fit_config(c.common);
  PenaltySpec spec = penalty_spec(c.pen);
  if (spec.family == PenaltyFamily::WeightedPrenet) spec.weights = ml_weights(cov, c.common.m, cfg);

  FitResult result;
  if (c.rho == "auto") {
    if (spec.family != PenaltyFamily::Prenet && spec.family != PenaltyFamily::WeightedPrenet)
      throw std::invalid_argument("--rho auto needs --penalty prenet or wprenet; pass a numeric --rho");
    RhoMaxResult top = rho_max_with_fit(cov, c.common.m, spec, cfg);
    spec.rho = top.rho_max;
    result = std::move(top.pss);
  } else {
    std::size_t used = 0;
    try {
      spec.rho = std::stod(c.rho, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != c.rho.size()) throw std::invalid_argument("--rho must be a number or 'auto'");
    result = fit(cov, c.common.m, spec, cfg);
  }

  const double objective = fitting_objective(result.params, cov, spec);
  const double loss = fitting_loss(result.params, cov);
  const CriteriaTriple crit = criteria(result, cov, c.common.m);

  std::cout << std::setprecision(10) << "penalty\t" << family_name(spec.family) << "\nrho\t" << spec.rho
            << "\ngamma\t" << spec.gamma << "\nobjective\t" << objective << "\nloss\t" << loss
            << "\nconverged\t" << (result.converged ? "yes" : "no") << "\niterations\t" << result.n_em_iter
            << "\npss\t" << (has_pss(result.params.loadings) ? "yes" : "no") << "\n\n";
  print_params(std::cout, result.params);

  json config{{"penalty", family_name(spec.family)}, {"rho", spec.rho}, {"rho_arg", c.rho}, {"gamma", spec.gamma}};
  if (spec.weights.size() > 0) config["weights"] = vector_json(spec.weights);
  write_json(c.common.json_path,
             {{"params", params_json(result.params)},
              {"objective", objective},
              {"loss", loss},
              {"converged", result.converged},
              {"n_em_iter", result.n_em_iter},
              {"criteria", criteria_json(crit)},
              {"metadata", metadata_json("fit", c.common, std::move(config))}});
  return 0;
}

// ---- path ------------------------------------------------------------------

struct PathCmd {
  CommonOptions common;
  PenaltyOptions pen;
  int K = 30;
  std::string criterion = "bic";
  double delta_ratio = 1e-3;
  double ebic_delta = 1.0;
  std::optional<double> rho_hi, rho_lo;
};

int run_path(const PathCmd& c) {
  const SampleCovariance cov = load_covariance(c.common);
  const FitConfig cfg = fit_config(c.common);
  const PenaltySpec spec = penalty_spec(c.pen);
  const Criterion which = parse_criterion(c.criterion);

  SolutionPath path;
  if (c.rho_hi || c.rho_lo) {
    if (!c.rho_hi || !c.rho_lo) throw std::invalid_argument("--rho-hi and --rho-lo must be given together");
    FitConfig ml_cfg = cfg;
    const FitResult ml = fit(cov, c.common.m, PenaltySpec{PenaltyFamily::Lasso, 0.0, 1.0, {}}, ml_cfg);
    path = solution_path_on_grid(cov, c.common.m, spec, log_grid(*c.rho_hi, *c.rho_lo, c.K), ml.params, cfg,
                                 c.ebic_delta);
  } else {
    path = solution_path(cov, c.common.m, spec, cfg, PathOptions{c.K, c.delta_ratio, c.ebic_delta});
  }
  const std::size_t sel = select_along_path(path, which);

  std::cout << "rho\tp0\tloss\taic\tbic\tebic\n" << std::setprecision(8);
  json records = json::array();
  for (std::size_t k = 0; k < path.size(); ++k) {
    const double loss = fitting_loss(path.fits[k].params, cov);
    const auto& cr = path.criteria[k];
    std::cout << path.rhos[k] << '\t' << cr.p0 << '\t' << loss << '\t' << cr.aic << '\t' << cr.bic << '\t' << cr.ebic
              << (k == sel ? "\t*" : "") << '\n';
    records.push_back({{"rho", path.rhos[k]},
                       {"p0", cr.p0},
                       {"loss", loss},
                       {"aic", cr.aic},
                       {"bic", cr.bic},
                       {"ebic", cr.ebic},
                       {"converged", path.fits[k].converged}});
  }
  std::cout << "\nselected by " << criterion_name(which) << ": rho = " << path.rhos[sel] << "\n\n";
  print_params(std::cout, path.fits[sel].params);

  json config{{"penalty", family_name(spec.family)}, {"gamma", spec.gamma}, {"K", c.K},
              {"criterion", criterion_name(which)}, {"delta_ratio", c.delta_ratio}, {"ebic_delta", c.ebic_delta}};
  if (path.weights.size() > 0) config["weights"] = vector_json(path.weights);
  write_json(c.common.json_path,
             {{"params", params_json(path.fits[sel].params)},
              {"path", records},
              {"criteria", {{"selected_index", sel}, {"selected_rho", path.rhos[sel]},
                            {"criterion", criterion_name(which)}, {"values", criteria_json(path.criteria[sel])}}},
              {"metadata", metadata_json("path", c.common, std::move(config))}});
  return 0;
}

// ---- cluster ---------------------------------------------------------------

struct ClusterCmd {
  CommonOptions common;
  std::string method = "prenet";
  std::optional<double> holdout;
  std::string reference;
};

struct ClusterFit {
  ClusterAssignment assignment;
  std::optional<FactorParams> params;  // prenet only
};

ClusterFit cluster_with(const std::string& method, const Matrix& data, const CommonOptions& o) {
  ClusterFit out;
  if (method == "prenet") {
    const SampleCovariance cov = sample_covariance(data, true, o.correlation);
    FitResult r = pss_fit(cov, o.m, fit_config(o));
    out.assignment = clusters_from_pss(r.params.loadings);
    out.params = std::move(r.params);
  } else if (method == "kmeans") {
    KMeansOptions ko;
    ko.seed = o.seed;
    ko.n_starts = o.n_starts;
    ko.standardize = o.correlation;
    out.assignment = kmeans_variables(data, o.m, ko).assignment;
  } else {
    throw std::invalid_argument("--method must be prenet or kmeans");
  }
  return out;
}

int run_cluster(const ClusterCmd& c) {
  const Table t = read_table_file(c.common.input);
  const int p = static_cast<int>(t.values.cols());
  if (c.common.m > p) throw std::invalid_argument("--m must not exceed the number of variables");
  if (c.method == "prenet" && c.common.m >= p)
    throw std::invalid_argument("--method prenet needs --m smaller than the number of variables");

  Matrix train = t.values, test;
  if (c.holdout) {
    const double f = *c.holdout;
    if (!(f > 0.0 && f < 1.0)) throw std::invalid_argument("--holdout must lie in (0,1)");
    const auto n = t.values.rows();
    const auto n_test = static_cast<Eigen::Index>(std::ceil(f * static_cast<double>(n)));
    if (n_test < 1 || n - n_test < 2) throw std::invalid_argument("--holdout leaves too few rows");
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(c.common.seed, 0x401d));
    std::shuffle(order.begin(), order.end(), rng);
    std::sort(order.begin(), order.begin() + n_test);
    std::sort(order.begin() + n_test, order.end());
    test.resize(n_test, p);
    train.resize(n - n_test, p);
    for (Eigen::Index r = 0; r < n_test; ++r) test.row(r) = t.values.row(order[r]);
    for (Eigen::Index r = n_test; r < n; ++r) train.row(r - n_test) = t.values.row(order[r]);
  }

  const ClusterFit main = cluster_with(c.method, train, c.common);
  std::cout << "variable\tcluster\n";
  for (int i = 0; i < p; ++i) {
    std::cout << (t.header.empty() ? "V" + std::to_string(i + 1) : t.header[i]) << '\t';
    if (main.assignment.labels[i] == ClusterAssignment::kUnassigned) std::cout << "-\n";
    else std::cout << main.assignment.labels[i] << '\n';
  }

  json report{{"method", c.method}, {"labels", main.assignment.labels}};
  if (main.params) report["params"] = params_json(*main.params);

  if (!c.reference.empty()) {
    ClusterAssignment ref{read_labels_file(c.reference)};
    if (static_cast<int>(ref.size()) != p)
      throw std::invalid_argument("reference labels: expected " + std::to_string(p) + " labels, found " +
                                  std::to_string(ref.size()));
    if (main.assignment.fully_assigned()) {
      const double ari = adjusted_rand_index(main.assignment, ref);
      std::cout << "\nARI\t" << std::setprecision(6) << ari << '\n';
      report["ari"] = ari;
    } else {
      std::cout << "\nARI\t- (some variables have no cluster)\n";
      report["ari"] = nullptr;
    }
  }

  if (c.holdout) {
    // both methods on the same split; test rows centred (and scaled) by training moments
    const ClusterFit pre = c.method == "prenet" ? main : cluster_with("prenet", train, c.common);
    const ClusterFit km = c.method == "kmeans" ? main : cluster_with("kmeans", train, c.common);
    const Eigen::RowVectorXd mean = train.colwise().mean();
    Matrix centred = test.rowwise() - mean;
    if (c.common.correlation) {
      const Eigen::RowVectorXd sd =
          ((train.rowwise() - mean).colwise().squaredNorm() / static_cast<double>(train.rows())).cwiseSqrt();
      centred = centred.array().rowwise() / sd.array();
    }
    const double err_prenet =
        reconstruction_error(pre.params->loadings, pre.params->psi, centred, ReconstructionMethod::PosteriorMean);
    const double err_kmeans = reconstruction_error(indicator_loading(km.assignment, p, c.common.m),
                                                   Vector::Ones(p), centred, ReconstructionMethod::Projection);
    std::cout << "\nholdout rows\t" << test.rows() << "\nreconstruction error (prenet, posterior mean)\t"
              << std::setprecision(8) << err_prenet << "\nreconstruction error (kmeans, projection)\t" << err_kmeans
              << '\n';
    report["holdout"] = {{"fraction", *c.holdout},
                         {"test_rows", test.rows()},
                         {"prenet_error", err_prenet},
                         {"kmeans_error", err_kmeans}};
  }

  json config{{"method", c.method}};
  if (c.holdout) config["holdout"] = *c.holdout;
  if (!c.reference.empty()) config["reference"] = c.reference;
  report["metadata"] = metadata_json("cluster", c.common, std::move(config));
  write_json(c.common.json_path, report);
  return 0;
}

// ---- simulate --------------------------------------------------------------

struct SimulateCmd {
  CommonOptions common;
  std::string model = "A";
  int n = 500;
  int replicates = 100;
  std::vector<std::string> estimators;
  std::vector<std::string> criteria;
  std::string table;
  int K = 30;
};

int run_simulate(const SimulateCmd& c) {
  StudyConfig base;
  base.seed = c.common.seed;
  base.threads = c.common.threads;
  base.replicates = c.replicates;
  base.fit = fit_config(c.common);
  base.path.K = c.K;
  if (!c.estimators.empty()) {
    base.estimators.clear();
    for (const auto& e : c.estimators) base.estimators.push_back(parse_estimator(e));
  }
  if (!c.criteria.empty()) {
    base.criteria.clear();
    for (const auto& s : c.criteria) base.criteria.push_back(parse_criterion(s));
  }

  std::vector<StudyConfig> runs;
  if (!c.table.empty()) {
    if (c.table != "paper") throw std::invalid_argument("--table accepts only 'paper'");
    for (ModelTag tag : {ModelTag::A, ModelTag::B, ModelTag::C, ModelTag::D})
      for (int n : {50, 100, 500}) {
        StudyConfig s = base;
        s.tag = tag;
        s.n = n;
        runs.push_back(s);
      }
  } else {
    StudyConfig s = base;
    s.tag = parse_model(c.model);
    s.n = c.n;
    runs.push_back(s);
  }

  std::vector<StudyRow> all;
  for (const auto& s : runs) {
    const auto rows = run_study(s);
    all.insert(all.end(), rows.begin(), rows.end());
  }
  std::cout << format_study_table(all);

  if (!c.common.json_path.empty()) {
    json rows = json::array();
    for (const auto& r : all) {
      rows.push_back({{"model", std::string(1, model_letter(r.tag))},
                      {"n", r.n},
                      {"criterion", criterion_name(r.criterion)},
                      {"estimator", r.estimator},
                      {"mse", r.mse},
                      {"tpr", r.tpr},
                      {"fpr", r.fpr ? json(*r.fpr) : json(nullptr)},
                      {"replicates", r.replicates},
                      {"failures", r.failures}});
    }
    json config{{"replicates", c.replicates}, {"K", c.K}};
    if (!c.table.empty()) config["table"] = c.table;
    else config.update({{"model", c.model}, {"n", c.n}});
    write_json(c.common.json_path,
               {{"rows", rows}, {"metadata", metadata_json("simulate", c.common, std::move(config))}});
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Penalized factor analysis with the prenet penalty", "prenet"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  FitCmd fit_cmd;
  auto* fit_app = app.add_subcommand("fit", "Fit at one rho (or rho_max with --rho auto)");
  add_common(fit_app, fit_cmd.common, true);
  add_model_flags(fit_app, fit_cmd.common);
  add_penalty_flags(fit_app, fit_cmd.pen);
  fit_app->add_option("--rho", fit_cmd.rho, "Penalty weight, or 'auto' for rho_max (PSS fit)")->capture_default_str();

  PathCmd path_cmd;
  auto* path_app = app.add_subcommand("path", "Solution path over a rho grid with model selection");
  add_common(path_app, path_cmd.common, true);
  add_model_flags(path_app, path_cmd.common);
  add_penalty_flags(path_app, path_cmd.pen);
  path_app->add_option("--K", path_cmd.K, "Grid size")->capture_default_str()->check(CLI::Range(2, 100000));
  path_app->add_option("--criterion", path_cmd.criterion, "aic, bic or ebic")->capture_default_str();
  path_app->add_option("--delta", path_cmd.delta_ratio, "Smallest rho as a fraction of the largest")
      ->capture_default_str();
  path_app->add_option("--ebic-delta", path_cmd.ebic_delta, "EBIC prior exponent in [0,1]")->capture_default_str();
  path_app->add_option("--rho-hi", path_cmd.rho_hi, "Explicit grid top (with --rho-lo)");
  path_app->add_option("--rho-lo", path_cmd.rho_lo, "Explicit grid bottom (with --rho-hi)");

  ClusterCmd cluster_cmd;
  auto* cluster_app = app.add_subcommand("cluster", "Cluster variables by PSS fit or k-means");
  add_common(cluster_app, cluster_cmd.common, true);
  add_model_flags(cluster_app, cluster_cmd.common);
  cluster_app->add_option("--method", cluster_cmd.method, "prenet or kmeans")->capture_default_str();
  cluster_app->add_option("--holdout", cluster_cmd.holdout, "Fraction of rows held out for reconstruction error");
  cluster_app->add_option("--reference", cluster_cmd.reference, "Reference labels file; reports the ARI");

  SimulateCmd sim_cmd;
  auto* sim_app = app.add_subcommand("simulate", "Monte Carlo study over the simulation models");
  add_common(sim_app, sim_cmd.common, false);
  sim_app->add_option("--model", sim_cmd.model, "A, B, C or D")->capture_default_str();
  sim_app->add_option("--n", sim_cmd.n, "Observations per data set")->capture_default_str();
  sim_app->add_option("--T,--replicates", sim_cmd.replicates, "Data sets per design")->capture_default_str();
  sim_app->add_option("--estimator", sim_cmd.estimators, "family[:gamma], repeatable (default: lasso, mc, prenet:1, prenet:0.01)");
  sim_app->add_option("--criterion", sim_cmd.criteria, "aic, bic or ebic, repeatable (default: all)");
  sim_app->add_option("--K", sim_cmd.K, "Grid size")->capture_default_str()->check(CLI::Range(2, 100000));
  sim_app->add_option("--table", sim_cmd.table, "'paper': every model A-D at n = 50, 100, 500");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*fit_app) return run_fit(fit_cmd);
    if (*path_app) return run_path(path_cmd);
    if (*cluster_app) return run_cluster(cluster_cmd);
    if (*sim_app) return run_simulate(sim_cmd);
  } catch (const std::exception& e) {
    std::cerr << "prenet: error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
