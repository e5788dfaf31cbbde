#include <gtest/gtest.h>

#include <cmath>

#include "common.hpp"
#include "rgm/models.hpp"

using namespace rgm;

TEST(Mlp, InitWithinFanInBounds) {
  std::mt19937_64 rng(0);
  model::Mlp m("m", {{10, 7, 3}, model::Activation::kTanh, model::Activation::kIdentity}, rng);
  ASSERT_EQ(m.num_layers(), 2u);
  for (double v : m.weight(0).value.values()) EXPECT_LE(std::abs(v), 1.0 / std::sqrt(10.0));
  for (double v : m.weight(1).value.values()) EXPECT_LE(std::abs(v), 1.0 / std::sqrt(7.0));
  EXPECT_EQ(m.weight(0).id, "m.W0");
  EXPECT_EQ(m.bias(1).id, "m.b1");
}

TEST(Mlp, TapeAndPlainForwardAgree) {
  std::mt19937_64 rng(1);
  model::Mlp m("m", {{3, 4, 2}, model::Activation::kRelu, model::Activation::kTanh}, rng);
  Matrix x{{0.1, -2.0, 0.5}, {1.0, 1.0, -1.0}};
  ad::Tape t;
  const Matrix a = t.value(m.forward(t, t.constant(x)));
  const Matrix b = m.forward(x);
  EXPECT_TRUE(fixture::bitwise_equal(a, b));
}

TEST(Players, NamesAndFamily) {
  const auto envs = fixture::toy_descriptor_envs(0);
  auto players = model::init_players(fixture::toy_arch(envs), 2, 0);
  players.check_family();
  std::set<std::string> names;
  for (const auto& p : players.players()) names.insert(p.name);
  for (const char* n : {"phi", "f", "g", "enc", "f_e0", "f_-e1", "f~_e1"}) EXPECT_TRUE(names.count(n)) << n;
  // f~_e starts as a copy of f_e.
  EXPECT_TRUE(fixture::bitwise_equal(players.oracle[1].net.weight(0).value,
                                     players.perturbed[1].net.weight(0).value));
  players.heldout.pop_back();
  EXPECT_THROW(players.check_family(), Error);
}

TEST(Players, SeedsAreReproducibleAndDistinct) {
  const auto envs = fixture::toy_descriptor_envs(0);
  auto a = model::init_players(fixture::toy_arch(envs), 2, 3);
  auto b = model::init_players(fixture::toy_arch(envs), 2, 3);
  auto c = model::init_players(fixture::toy_arch(envs), 2, 4);
  const auto pa = a.all_params();
  const auto pb = b.all_params();
  const auto pc = c.all_params();
  std::vector<const ad::Parameter*> ca(pa.begin(), pa.end()), cb(pb.begin(), pb.end()), cc(pc.begin(), pc.end());
  EXPECT_EQ(model::hash_params(ca), model::hash_params(cb));
  EXPECT_NE(model::hash_params(ca), model::hash_params(cc));
  EXPECT_NE(model::player_seed(0, "f_e0"), model::player_seed(0, "f_e1"));
}

TEST(Players, DescriptorMatrixIsSignedBits) {
  const std::vector<env::Descriptor> d{{0x0001}, {0x8000}};
  const Matrix m = model::descriptor_matrix(d);
  ASSERT_EQ(m.cols(), env::kCodeBits);
  EXPECT_EQ(m(0, 0), 1.0);
  EXPECT_EQ(m(0, 1), -1.0);
  EXPECT_EQ(m(1, 15), 1.0);
  EXPECT_EQ(m(1, 0), -1.0);
}
