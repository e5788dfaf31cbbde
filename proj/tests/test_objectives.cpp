#include <gtest/gtest.h>

#include <cmath>

#include "common.hpp"
#include "rgm/objectives.hpp"
#include "rgm/optim.hpp"

using namespace rgm;
using obj::Method;

namespace {

obj::ObjectiveConfig config(Method m, double lam, double lam_g, double alpha) {
  obj::ObjectiveConfig c;
  c.method = m;
  c.lambda = lam;
  c.lambda_g = lam_g;
  c.alpha = alpha;
  return c;
}

double objective_value(model::PlayerSet& players, const env::MiniBatches& mb, const obj::ObjectiveConfig& c) {
  ad::Tape t;
  return obj::build_game(t, players, mb, c).objective_value;
}

// Gradient check of the objective over every player, perturbations held fixed.
double max_fd_error(Method m, std::uint64_t seed, double lam, double lam_g, double alpha) {
  const auto envs = fixture::toy_descriptor_envs(seed);
  auto players = model::init_players(fixture::toy_arch(envs), 2, seed);
  const auto mb = fixture::toy_batches(envs, seed);
  const auto c = config(m, lam, lam_g, alpha);
  std::vector<Matrix> deltas;
  {
    ad::Tape t;
    deltas = obj::build_game(t, players, mb, c).deltas;
  }
  obj::GameOptions opts;
  opts.with_objective = true;
  if (!deltas.empty()) opts.deltas = &deltas;
  const auto params = players.all_params();
  const auto report = ad::finite_diff_check(params, [&](ad::Tape& t) {
    return *obj::build_game(t, players, mb, c, opts).objective;
  });
  EXPECT_TRUE(report.all_finite);
  return report.max_rel_error;
}

}  // namespace

class ObjectiveGradients : public ::testing::TestWithParam<Method> {};

TEST_P(ObjectiveGradients, FiniteDifferencesOnRandomInstances) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const double err = max_fd_error(GetParam(), seed, 0.3, 0.7, 0.5);
    EXPECT_LT(err, 1e-5) << obj::to_string(GetParam()) << " seed " << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(Methods, ObjectiveGradients,
                         ::testing::Values(Method::kErm, Method::kIrm, Method::kRgm, Method::kSrgm,
                                           Method::kCrossGrad),
                         [](const auto& info) { return obj::to_string(info.param); });

TEST(DescriptorLoss, FiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto envs = fixture::toy_descriptor_envs(seed);
    auto players = model::init_players(fixture::toy_arch(envs), 2, seed);
    const auto mb = fixture::toy_batches(envs, seed);
    auto params = players.g.params();
    for (auto* p : players.encoder.params()) params.push_back(p);
    for (auto* p : players.phi.params()) params.push_back(p);
    const auto report = ad::finite_diff_check(params, [&](ad::Tape& t) {
      const ad::Var z = model::extract_features(t, players.phi, mb.per_env[0].x);
      const auto& b = mb.per_env[0];
      return t.scale(obj::descriptor_ns_loss(t, players.g, players.encoder, z, b.descriptors), 1.0 / static_cast<double>(b.size()));
    });
    EXPECT_LT(report.max_rel_error, 1e-5) << "seed " << seed;
  }
}

TEST(DescriptorLoss, UniformScoresGiveLogOfDistinctCount) {
  const auto envs = fixture::toy_descriptor_envs(0);
  auto players = model::init_players(fixture::toy_arch(envs), 2, 0);
  // Zero the last layer of g: every descriptor gets the same score.
  auto& last = players.g.weight(players.g.num_layers() - 1);
  last.value.fill(0.0);
  players.g.bias(players.g.num_layers() - 1).value.fill(0.0);
  const std::vector<env::Descriptor> d{{1}, {2}, {3}, {1}};
  ad::Tape t;
  const ad::Var z = t.constant(Matrix(4, players.arch.rep_width, 0.3));
  const double loss = t.value(obj::descriptor_ns_loss(t, players.g, players.encoder, z, d)).item();
  EXPECT_NEAR(loss, 4.0 * std::log(3.0), 1e-12);
}

TEST(DescriptorLoss, DegenerateBatchesAreErrors) {
  const auto envs = fixture::toy_descriptor_envs(0);
  auto players = model::init_players(fixture::toy_arch(envs), 2, 0);
  ad::Tape t;
  const ad::Var z = t.constant(Matrix(3, players.arch.rep_width, 0.1));
  const std::vector<env::Descriptor> same{{5}, {5}, {5}};
  EXPECT_THROW(obj::descriptor_ns_loss(t, players.g, players.encoder, z, same), Error);
  const std::vector<env::Descriptor> short_list{{5}, {6}};
  EXPECT_THROW(obj::descriptor_ns_loss(t, players.g, players.encoder, z, short_list), Error);
}

TEST(Reductions, ZeroWeightsCollapseToErm) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto envs = fixture::toy_descriptor_envs(seed);
    auto players = model::init_players(fixture::toy_arch(envs), 2, seed);
    const auto mb = fixture::toy_batches(envs, seed);
    const double erm = objective_value(players, mb, config(Method::kErm, 0, 0, 0));
    EXPECT_EQ(objective_value(players, mb, config(Method::kRgm, 0, 0, 0)), erm);
    EXPECT_EQ(objective_value(players, mb, config(Method::kSrgm, 0, 0, 0)), erm);
    EXPECT_EQ(objective_value(players, mb, config(Method::kIrm, 0, 0, 0)), erm);
    // CrossGrad with alpha = 0 and lambda_g = 0 is twice the ERM loss.
    EXPECT_NEAR(objective_value(players, mb, config(Method::kCrossGrad, 0, 0, 0)), 2.0 * erm, 1e-14);
  }
}

TEST(Reductions, RegretAdditiveOverEnvironments) {
  const auto envs = fixture::toy_descriptor_envs(3);
  auto players = model::init_players(fixture::toy_arch(envs), 2, 3);
  const auto mb = fixture::toy_batches(envs, 3);
  ad::Tape t;
  const auto g = obj::build_game(t, players, mb, config(Method::kRgm, 0.4, 0, 0));
  double sum = 0.0;
  for (const auto& r : g.regrets) sum += r.regret;
  EXPECT_NEAR(g.objective_value, g.main_loss + 0.4 * sum, 1e-14);
  EXPECT_EQ(g.regrets.size(), 2u);
}

TEST(Reductions, AlphaZeroPerturbedRegretEqualsPlainWithCopiedOracle) {
  const auto envs = fixture::toy_descriptor_envs(4);
  auto players = model::init_players(fixture::toy_arch(envs), 2, 4);
  const auto mb = fixture::toy_batches(envs, 4);
  ad::Tape t;
  const auto g = obj::build_game(t, players, mb, config(Method::kSrgm, 0.2, 0.5, 0.0));
  ASSERT_EQ(g.regrets.size(), 4u);
  EXPECT_EQ(g.regrets[0].regret, g.regrets[1].regret);
  EXPECT_EQ(g.regrets[2].regret, g.regrets[3].regret);
}

TEST(Perturbation, ZeroAlphaLinearityAndAscent) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto envs = fixture::toy_descriptor_envs(seed);
    auto players = model::init_players(fixture::toy_arch(envs), 2, seed);
    const auto mb = fixture::toy_batches(envs, seed);
    const auto& b = mb.per_env[0];
    const Matrix z = players.phi.forward(b.x);
    const Matrix d0 = obj::perturbation(players, z, b.descriptors, 0.0);
    for (double v : d0.values()) EXPECT_EQ(v, 0.0);
    const Matrix d1 = obj::perturbation(players, z, b.descriptors, 0.3);
    const Matrix d2 = obj::perturbation(players, z, b.descriptors, 0.6);
    for (std::size_t i = 0; i < d1.size(); ++i) EXPECT_NEAR(d2[i], 2.0 * d1[i], 1e-15 * (1 + std::abs(d2[i])));

    if (std::sqrt(obj::perturbation(players, z, b.descriptors, 1.0).squared_norm()) < 1e-10) continue;
    auto ns = [&](const Matrix& zz) {
      ad::Tape t;
      return t.value(obj::descriptor_ns_loss(t, players.g, players.encoder, t.constant(zz), b.descriptors)).item();
    };
    const Matrix zt = obj::perturb_representation(players, z, b.descriptors, 1e-3);
    EXPECT_GT(ns(zt), ns(z)) << "seed " << seed;
  }
}

TEST(Regret, RoleMismatchesAreErrors) {
  const auto envs = fixture::toy_descriptor_envs(0);
  auto players = model::init_players(fixture::toy_arch(envs), 2, 0);
  const auto mb = fixture::toy_batches(envs, 0);
  ad::Tape t;
  const ad::Var z = model::extract_features(t, players.phi, mb.per_env[0].x);
  const auto task = env::Task::kClassification;
  EXPECT_THROW(obj::regret(t, players.oracle[0], players.oracle[0], z, mb.per_env[0], task, 1.0, false), Error);
  EXPECT_THROW(obj::regret(t, players.heldout[0], players.oracle[1], z, mb.per_env[0], task, 1.0, false), Error);
  EXPECT_THROW(obj::regret(t, players.heldout[0], players.oracle[0], z, mb.per_env[0], task, 1.0, true), Error);
  EXPECT_NO_THROW(obj::regret(t, players.heldout[0], players.perturbed[0], z, mb.per_env[0], task, 1.0, true));
}

TEST(Methods, EntryPointsCheckTheirTag) {
  const auto envs = fixture::toy_descriptor_envs(0);
  auto players = model::init_players(fixture::toy_arch(envs), 2, 0);
  const auto mb = fixture::toy_batches(envs, 0);
  ad::Tape t;
  EXPECT_THROW(obj::rgm_objective(t, players, mb, config(Method::kErm, 0, 0, 0)), Error);
  EXPECT_THROW(obj::srgm_objective(t, players, mb, config(Method::kRgm, 0, 0, 0)), Error);
  EXPECT_NO_THROW(obj::crossgrad_augmented_loss(t, players, mb, config(Method::kCrossGrad, 0, 1, 1)));
  EXPECT_EQ(obj::method_from_string("srgm"), Method::kSrgm);
  EXPECT_THROW(obj::method_from_string("sgd"), Error);
  auto bad = config(Method::kRgm, -1.0, 0, 0);
  EXPECT_THROW(bad.validate(), Error);
}

TEST(Methods, SrgmWithoutDescriptorsIsAnError) {
  env::TranslationConfig c;
  c.n_per_env = 40;
  const auto envs = env::gen_translation_envs(c);
  auto arch = fixture::toy_arch(envs);
  auto players = model::init_players(arch, 2, 0);
  std::mt19937_64 rng(0);
  const auto mb = env::sample_minibatches(envs.train, {8, false}, rng);
  ad::Tape t;
  EXPECT_THROW(obj::build_game(t, players, mb, config(Method::kSrgm, 0.1, 0.1, 1)), Error);
}
