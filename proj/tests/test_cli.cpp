// End-to-end checks of the command-line tool.

#include "oracles.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sys/wait.h>

using namespace prenet;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int status;
  std::string out;
};

Outcome run(const std::string& args) {
  const std::string cmd = std::string(PRENET_CLI) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) throw std::runtime_error("popen failed");
  std::string out;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe)) out += buf;
  const int raw = pclose(pipe);
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, out};
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("prenet_cli_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string write_data(const Matrix& x, const std::string& name, bool header = true) {
    const fs::path path = dir_ / name;
    std::ofstream out(path);
    out << std::setprecision(17);
    if (header)
      for (Eigen::Index j = 0; j < x.cols(); ++j) out << (j ? "," : "") << "v" << j + 1;
    if (header) out << '\n';
    for (Eigen::Index t = 0; t < x.rows(); ++t) {
      for (Eigen::Index j = 0; j < x.cols(); ++j) out << (j ? "," : "") << x(t, j);
      out << '\n';
    }
    return path.string();
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  static json load(const std::string& p) {
    std::ifstream in(p);
    return json::parse(in);
  }

  static Matrix matrix_from(const json& j) {
    Matrix a(j["rows"].get<int>(), j["cols"].get<int>());
    const auto data = j["data"].get<std::vector<double>>();
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      for (Eigen::Index k = 0; k < a.cols(); ++k) a(i, k) = data[static_cast<std::size_t>(i * a.cols() + k)];
    return a;
  }

  static FactorParams params_from(const json& j) {
    const auto psi = j["psi"].get<std::vector<double>>();
    return {matrix_from(j["loadings"]), Eigen::Map<const Vector>(psi.data(), static_cast<Eigen::Index>(psi.size()))};
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, FitAutoGivesPssMatchingLibrary) {
  const Matrix x = sample_mvn(make_model(ModelTag::A), 300, 21);
  const std::string data = write_data(x, "a.csv");
  const Outcome r = run("fit " + data + " --m 2 --gamma 0.01 --rho auto --json " + path("fit.json"));
  ASSERT_EQ(r.status, 0) << r.out;
  const json doc = load(path("fit.json"));
  const FactorParams got = params_from(doc["params"]);
  EXPECT_TRUE(has_pss(got.loadings));
  EXPECT_EQ(occupied_columns(got.loadings), 2);
  const SampleCovariance cov = sample_covariance(read_table_file(data).values);
  const FitResult lib = pss_fit(cov, 2, FitConfig{});
  EXPECT_LT((got.loadings - lib.params.loadings).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(doc["metadata"]["config"]["rho"].get<double>(), rho_max(cov, 2, 0.01, FitConfig{}), 1e-12);
  EXPECT_EQ(doc["metadata"]["seed"].get<std::uint64_t>(), 20240607u);
  EXPECT_TRUE(doc["metadata"].contains("version"));
}

TEST_F(Cli, FitJsonRoundTripReproducesObjective) {
  const Matrix x = sample_mvn(make_model(ModelTag::B), 120, 22);
  const std::string data = write_data(x, "b.csv", false);
  for (const std::string pen : {"prenet", "wprenet", "lasso", "mc", "enet", "quartimin", "varimax"}) {
    const std::string gamma = pen == "mc" ? "3" : "0.5";
    const std::string rho = pen == "prenet" || pen == "wprenet" ? "auto" : "0.05";
    const Outcome r = run("fit " + data + " --m 2 --n-starts 3 --penalty " + pen + " --gamma " + gamma + " --rho " + rho +
                      " --json " + path(pen + ".json"));
    ASSERT_EQ(r.status, 0) << pen << ": " << r.out;
    const json doc = load(path(pen + ".json"));
    const json& cfg = doc["metadata"]["config"];
    PenaltySpec spec{parse_family(cfg["penalty"].get<std::string>()), cfg["rho"].get<double>(),
                     cfg["gamma"].get<double>(), {}};
    if (cfg.contains("weights")) {
      const auto w = cfg["weights"].get<std::vector<double>>();
      spec.weights = Eigen::Map<const Vector>(w.data(), static_cast<Eigen::Index>(w.size()));
    }
    const SampleCovariance cov = sample_covariance(read_table_file(data).values);
    const double recomputed = fitting_objective(params_from(doc["params"]), cov, spec);
    EXPECT_NEAR(recomputed, doc["objective"].get<double>(), 1e-10) << pen;
  }
}

TEST_F(Cli, FitRhoZeroOneFactorReachesMl) {
  // rank-one signal plus noise
  FactorParams truth{Matrix(5, 1), Vector::Constant(5, 0.3)};
  truth.loadings << 0.9, 0.8, 0.7, 0.6, 0.5;
  const Matrix x = sample_mvn(sigma_from_params(truth), 400, 23);
  const std::string data = write_data(x, "r1.csv");
  const Outcome r = run("fit " + data + " --m 1 --rho 0 --penalty lasso --json " + path("ml.json"));
  ASSERT_EQ(r.status, 0) << r.out;
  const SampleCovariance cov = sample_covariance(x);
  const FitResult lib = fit(cov, 1, {PenaltyFamily::Lasso, 0.0, 1.0, {}}, FitConfig{});
  EXPECT_NEAR(load(path("ml.json"))["loss"].get<double>(), fitting_loss(lib.params, cov), 1e-8);
}

TEST_F(Cli, ErrorsExitNonzeroWithOneLine) {
  const Outcome missing = run("fit /nonexistent/data.csv --m 2");
  EXPECT_NE(missing.status, 0);
  EXPECT_NE(missing.out.find("prenet: error:"), std::string::npos);
  EXPECT_EQ(std::count(missing.out.begin(), missing.out.end(), '\n'), 1);

  const std::string data = write_data(oracle::random_matrix(20, 3, 1), "small.csv");
  EXPECT_NE(run("fit " + data + " --m 3").status, 0);                          // m >= p
  EXPECT_NE(run("fit " + data + " --m 1 --rho abc").status, 0);                // bad rho
  EXPECT_NE(run("fit " + data + " --m 1 --penalty lasso --rho auto").status, 0);  // no rho_max
  EXPECT_NE(run("fit " + data + " --m 1 --penalty ridge --rho 1").status, 0);
  EXPECT_NE(run("frobnicate").status, 0);

  std::ofstream(path("bad.csv")) << "a,b\n1,2\n3,x\n";
  const Outcome bad = run("fit " + path("bad.csv") + " --m 1");
  EXPECT_NE(bad.status, 0);
  EXPECT_NE(bad.out.find("bad.csv:3"), std::string::npos);
}

TEST_F(Cli, PathRecords) {
  const Matrix x = sample_mvn(make_model(ModelTag::A), 500, 24);
  const std::string data = write_data(x, "a.csv");
  const Outcome r = run("path " + data + " --m 2 --gamma 0.01 --K 2 --json " + path("p2.json"));
  ASSERT_EQ(r.status, 0) << r.out;
  const json doc = load(path("p2.json"));
  ASSERT_EQ(doc["path"].size(), 2u);
  for (const auto& rec : doc["path"])
    for (const char* key : {"rho", "p0", "loss", "aic", "bic", "ebic"}) EXPECT_TRUE(rec.contains(key)) << key;

  const Outcome r2 = run("path " + data + " --m 2 --gamma 0.01 --K 10 --criterion bic --json " + path("p10.json"));
  ASSERT_EQ(r2.status, 0) << r2.out;
  const json d10 = load(path("p10.json"));
  ASSERT_EQ(d10["path"].size(), 10u);
  for (std::size_t k = 1; k < 10; ++k)
    EXPECT_LT(d10["path"][k]["rho"].get<double>(), d10["path"][k - 1]["rho"].get<double>());
  const Matrix sel = matrix_from(d10["params"]["loadings"]);
  const Matrix truth = make_model(ModelTag::A).lambda_true;
  const SimMetrics m = sim_metrics(align_loadings(sel, truth), truth);
  EXPECT_EQ(m.tpr, 1.0);
  EXPECT_EQ(*m.fpr, 0.0);

  const Outcome grid = run("path " + data + " --m 2 --penalty quartimin --K 4 --rho-hi 1 --rho-lo 0.001");
  EXPECT_EQ(grid.status, 0) << grid.out;
  EXPECT_NE(run("path " + data + " --m 2 --penalty quartimin").status, 0);
}

TEST_F(Cli, ClusterBlocksBothMethods) {
  Matrix lam = Matrix::Zero(8, 2);
  lam.block(0, 0, 4, 1).setConstant(0.85);
  lam.block(4, 1, 4, 1).setConstant(0.8);
  const Vector psi = (1.0 - lam.rowwise().squaredNorm().array()).matrix();
  const std::string data = write_data(sample_mvn(sigma_from_params({lam, psi}), 400, 25), "blocks.csv");
  std::ofstream(path("ref.txt")) << "7 7 7 7 3 3 3 3\n";
  for (const std::string method : {"prenet", "kmeans"}) {
    const Outcome r = run("cluster " + data + " --m 2 --method " + method + " --reference " + path("ref.txt") +
                      " --holdout 0.25 --json " + path(method + ".json"));
    ASSERT_EQ(r.status, 0) << r.out;
    const json doc = load(path(method + ".json"));
    EXPECT_DOUBLE_EQ(doc["ari"].get<double>(), 1.0) << method;
    EXPECT_EQ(doc["holdout"]["test_rows"].get<int>(), 100);
    EXPECT_GT(doc["holdout"]["prenet_error"].get<double>(), 0.0);
    EXPECT_GT(doc["holdout"]["kmeans_error"].get<double>(), 0.0);
  }
  // same split for both methods: the errors do not depend on which method was requested
  const json a = load(path("prenet.json")), b = load(path("kmeans.json"));
  EXPECT_EQ(a["holdout"]["prenet_error"], b["holdout"]["prenet_error"]);
  EXPECT_EQ(a["holdout"]["kmeans_error"], b["holdout"]["kmeans_error"]);
}

TEST_F(Cli, ClusterKMeansSingletons) {
  const std::string data = write_data(oracle::random_matrix(30, 5, 26), "r.csv");
  const Outcome r = run("cluster " + data + " --m 5 --method kmeans --json " + path("k.json"));
  ASSERT_EQ(r.status, 0) << r.out;
  auto labels = load(path("k.json"))["labels"].get<std::vector<int>>();
  std::sort(labels.begin(), labels.end());
  EXPECT_EQ(labels, (std::vector<int>{1, 2, 3, 4, 5}));
  EXPECT_NE(run("cluster " + data + " --m 2 --method spectral").status, 0);
  EXPECT_NE(run("cluster " + data + " --m 2 --holdout 1.5").status, 0);
}

TEST_F(Cli, SimulateMatchesLibraryAndThreads) {
  const Outcome one = run("simulate --model A --n 100 --T 4 --K 8 --n-starts 3 --threads 1");
  const Outcome four = run("simulate --model A --n 100 --T 4 --K 8 --n-starts 3 --threads 4");
  ASSERT_EQ(one.status, 0) << one.out;
  EXPECT_EQ(one.out, four.out);
  StudyConfig cfg;
  cfg.tag = ModelTag::A;
  cfg.n = 100;
  cfg.replicates = 4;
  cfg.fit.n_starts = 3;
  cfg.path.K = 8;
  EXPECT_EQ(one.out, format_study_table(run_study(cfg)));
}
