#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "common.hpp"
#include "rgm/evaluation.hpp"
#include "rgm/experiment.hpp"
#include "rgm/presets.hpp"
#include "rgm/propositions.hpp"
#include "rgm/report.hpp"

using namespace rgm;

TEST(Evaluate, ArgmaxTiesGoToLowerClass) {
  env::Environment e;
  e.examples = {{{0.0}, 0.0, {}}, {{0.0}, 1.0, {}}, {{0.0}, 1.0, {}}};
  const Matrix out{{0.5, 0.5}, {0.5, 0.5}, {0.0, 1.0}};
  const auto m = eval::evaluate_outputs(out, e, env::Task::kClassification);
  EXPECT_DOUBLE_EQ(m.accuracy, 2.0 / 3.0);
  const double third = std::log(1.0 + std::exp(-1.0));
  EXPECT_NEAR(m.mean_ce, (2 * std::log(2.0) + third) / 3.0, 1e-15);
  EXPECT_TRUE(std::isnan(m.mae));
}

TEST(Evaluate, RegressionMae) {
  env::Environment e;
  e.examples = {{{0.0}, 1.0, {}}, {{0.0}, -1.0, {}}};
  const auto m = eval::evaluate_outputs(Matrix{{1.5}, {0.0}}, e, env::Task::kRegression);
  EXPECT_DOUBLE_EQ(m.mae, 0.75);
  EXPECT_DOUBLE_EQ(m.score(env::Task::kRegression), -0.75);
  EXPECT_TRUE(std::isnan(m.accuracy));
  const auto back = eval::Metrics::from_json(m.to_json());
  EXPECT_TRUE(std::isnan(back.accuracy));
  EXPECT_EQ(back.mae, m.mae);
}

TEST(Bayes, ExactOnEnvironmentInferableInstances) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 10; ++i) {
    const auto inst = props::random_env_inferable_instance(100, 2, 2, rng);
    inst.validate();
    std::vector<int> identity(inst.n_x());
    std::iota(identity.begin(), identity.end(), 0);
    const auto r = props::brute_force_bayes(inst, identity, inst.n_x());
    for (double g : r.gap) EXPECT_LT(std::abs(g), 1e-12);
  }
}

TEST(Bayes, CoarseRepresentationHasPositiveGap) {
  std::mt19937_64 rng(2);
  const auto inst = props::random_env_inferable_instance(20, 2, 2, rng);
  const std::vector<int> constant(inst.n_x(), 0);
  const auto r = props::brute_force_bayes(inst, constant, 1);
  double worst = 0.0;
  for (double g : r.gap) {
    EXPECT_GE(g, -1e-12);
    worst = std::max(worst, g);
  }
  EXPECT_GT(worst, 1e-6);
  // Risks of the returned predictor agree with the standalone evaluation.
  const auto risks = props::env_risks(inst, constant, r.predictor);
  for (std::size_t e = 0; e < risks.size(); ++e) EXPECT_NEAR(risks[e], r.risk[e], 1e-14);
}

TEST(Constraints, TranslationWitness) {
  const auto envs = env::gen_translation_envs(presets::fig2_translation(0));
  const auto id = props::check_constraints(Matrix::identity(2), envs.train);
  EXPECT_TRUE(id.irm_feasible);
  EXPECT_FALSE(id.rgm_feasible);
  EXPECT_GT(id.rgm_gap, 1e-2);
  const auto x2 = props::check_constraints(Matrix{{0.0}, {1.0}}, envs.train);
  EXPECT_TRUE(x2.irm_feasible);
  EXPECT_TRUE(x2.rgm_feasible);
  EXPECT_TRUE(id.converged && x2.converged);
}

TEST(Report, JsonRoundTripAndCsvRowCounts) {
  report::RunReport r;
  r.config = {{"note", "unit"}};
  for (const char* m : {"erm", "rgm"})
    for (std::uint64_t s = 0; s < 3; ++s) {
      report::CellResult c;
      c.method = m;
      c.seed = s;
      c.metrics = {{"test_accuracy", 0.5 + 0.1 * static_cast<double>(s)}, {"lambda", 0.1}};
      c.test.n = 10;
      c.test.accuracy = c.metrics["test_accuracy"];
      r.cells.push_back(c);
    }
  r.cells.back().status = "aborted";
  r.recompute_aggregates();
  const auto& agg = r.aggregate("erm", "test_accuracy");
  EXPECT_EQ(agg.n, 3u);
  EXPECT_NEAR(agg.mean, 0.6, 1e-15);
  EXPECT_NEAR(agg.std, 0.1, 1e-15);
  EXPECT_EQ(r.aggregate("rgm", "test_accuracy").n, 2u);

  const auto back = report::RunReport::from_json(r.to_json());
  EXPECT_EQ(back.to_json(), r.to_json());
  EXPECT_EQ(back.methods(), (std::vector<std::string>{"erm", "rgm"}));

  const std::string csv = report::report_csv(r);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 6 * 2);

  const auto dir = std::filesystem::temp_directory_path() / "rgm_report_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "r.json").string();
  report::write_report(r, path);
  EXPECT_TRUE(std::filesystem::exists(path + ".csv"));
  EXPECT_TRUE(std::filesystem::exists(path + ".agg.csv"));
  EXPECT_EQ(report::read_report(path).to_json(), r.to_json());
  EXPECT_THROW(report::write_report(r, (dir / "missing" / "r.json").string()), Error);
}

TEST(Experiment, CellsAreIndependentOfOrder) {
  exp::ExperimentConfig c;
  c.generator.kind = "translation";
  env::TranslationConfig t;
  t.n_per_env = 200;
  c.generator.params = t.to_json();
  exp::MethodSpec m;
  m.label = "erm";
  m.train.steps = 30;
  m.train.eval_every = 10;
  m.train.arch.phi_hidden = {4};
  m.train.arch.rep_width = 3;
  c.methods.push_back(m);
  m.label = "rgm";
  m.train.method = obj::Method::kRgm;
  m.lambda_grid = {0.01, 0.1};
  c.methods.push_back(m);
  c.seeds = {0, 1};
  const auto a = exp::run_experiment(c);
  std::reverse(c.seeds.begin(), c.seeds.end());
  const auto b = exp::run_experiment(c);
  ASSERT_EQ(a.cells.size(), 4u);
  for (const auto& ca : a.cells)
    for (const auto& cb : b.cells)
      if (ca.method == cb.method && ca.seed == cb.seed) EXPECT_EQ(ca.to_json(), cb.to_json());
  for (const auto& cell : a.cells) {
    EXPECT_EQ(cell.status, "ok");
    for (const auto& r : cell.refit_regrets) EXPECT_GE(r.regret, -1e-6);
  }
}

#ifdef RGM_CLI_PATH
namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(RGM_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

}  // namespace

TEST(Cli, ExitCodes) {
  const auto dir = std::filesystem::temp_directory_path() / "rgm_cli_test";
  std::filesystem::create_directories(dir);
  const std::string data = (dir / "d.txt").string();
  const std::string ckpt = (dir / "p.ckpt").string();
  EXPECT_EQ(run_cli("generate --generator descriptor --set n_examples=300 --set n_descriptors=100 --cluster --out " +
                    data),
            0);
  EXPECT_EQ(run_cli("train --data " + data + " --set method=srgm --set steps=20 --set lambda=0.1 --set lambda_g=0.1 "
                    "--set alpha=1 --out " + ckpt),
            0);
  EXPECT_EQ(run_cli("evaluate --checkpoint " + ckpt + " --data " + data), 0);
  EXPECT_EQ(run_cli("frobnicate"), 1);
  EXPECT_EQ(run_cli("train --data " + data), 1);
  EXPECT_EQ(run_cli("evaluate --checkpoint " + data + " --data " + data), 2);
  EXPECT_EQ(run_cli("generate --generator descriptor --set dim_spurious=4 --out " + data), 2);
  EXPECT_EQ(run_cli("report --preset nothing"), 2);
}
#endif
