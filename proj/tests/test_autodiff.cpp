#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "common.hpp"
#include "rgm/autodiff.hpp"
#include "rgm/optim.hpp"

using rgm::Matrix;
using namespace rgm::ad;

namespace {

Matrix randn(std::size_t r, std::size_t c, std::mt19937_64& rng, double s = 1.0) {
  std::normal_distribution<double> n(0.0, s);
  Matrix m(r, c);
  for (double& v : m.values()) v = n(rng);
  return m;
}

}  // namespace

TEST(Autodiff, EveryPrimitivePassesFiniteDifferences) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Parameter w("w", randn(3, 4, rng)), b("b", randn(1, 4, rng)), v("v", randn(4, 3, rng));
    Parameter keys("k", randn(5, 4, rng));
    const Matrix x = randn(6, 3, rng);
    const Matrix target = randn(6, 3, rng);
    const std::vector<int> labels{0, 2, 1, 1, 0, 2};
    const std::vector<int> codes{0, 4, 3, 1, 2, 0};
    std::vector<Parameter*> params{&w, &b, &v, &keys};
    auto build = [&](Tape& t) {
      const Var h = t.tanh(t.affine(t.constant(x), t.parameter(w), t.parameter(b)));
      const Var r = t.relu(t.scale(h, 1.5));
      const Var out = t.affine(t.add(h, r), t.parameter(v), t.constant(Matrix(1, 3)));
      Var loss = t.softmax_cross_entropy(out, labels);
      loss = t.add(loss, t.scale(t.squared_error(out, t.constant(target)), 0.1));
      loss = t.add(loss, t.batch_dot_softmax(h, t.parameter(keys), codes));
      const std::vector<Var> parts{h, t.scale(h, -2.0)};
      loss = t.add(loss, t.scale(t.sum(t.tanh(t.concat_rows(parts))), 0.3));
      return loss;
    };
    const auto report = finite_diff_check(params, build);
    EXPECT_TRUE(report.all_finite);
    EXPECT_LT(report.max_rel_error, 1e-5) << "trial " << trial;
  }
}

TEST(Autodiff, GradReverseNegatesAndScaleMultiplies) {
  Parameter p("p", Matrix{{0.5, -1.0}});
  Tape t;
  const Var x = t.parameter(p);
  t.backward(t.sum(t.grad_reverse(t.grad_scale(t.scale(x, 3.0), 0.25))));
  EXPECT_DOUBLE_EQ(p.grad(0, 0), -0.75);
  EXPECT_DOUBLE_EQ(p.grad(0, 1), -0.75);
  EXPECT_DOUBLE_EQ(t.value(t.grad_reverse(x))(0, 1), -1.0);
}

TEST(Autodiff, DetachBlocksGradient) {
  Parameter p("p", Matrix{{2.0}});
  Tape t;
  const Var x = t.parameter(p);
  t.backward(t.add(t.sum(t.detach(x)), t.scale(t.sum(x), 0.0)));
  EXPECT_EQ(p.grad(0, 0), 0.0);
}

TEST(Autodiff, FrozenParameterReceivesNoGradient) {
  Parameter p("p", Matrix{{2.0}});
  Tape t;
  t.backward(t.sum(t.parameter(p, Binding::kFrozen)));
  EXPECT_EQ(p.grad(0, 0), 0.0);
}

TEST(Autodiff, SoftmaxCrossEntropyValue) {
  Tape t;
  const std::vector<int> y{1};
  const Var l = t.softmax_cross_entropy(t.constant(Matrix{{0.0, 0.0}}), y);
  EXPECT_NEAR(t.value(l).item(), std::log(2.0), 1e-15);
}

TEST(Autodiff, BackwardIsDeterministic) {
  std::mt19937_64 rng(9);
  const Matrix x = randn(40, 7, rng);
  Parameter w1("w", randn(7, 5, rng)), b1("b", randn(1, 5, rng));
  Parameter w2 = w1, b2 = b1;
  auto run = [&](Parameter& w, Parameter& b) {
    Tape t;
    t.backward(t.sum(t.tanh(t.affine(t.constant(x), t.parameter(w), t.parameter(b)))));
  };
  run(w1, b1);
  run(w2, b2);
  EXPECT_TRUE(rgm::fixture::bitwise_equal(w1.grad, w2.grad));
  EXPECT_TRUE(rgm::fixture::bitwise_equal(b1.grad, b2.grad));
}

TEST(Autodiff, ShapeErrorsNameTheOp) {
  Tape t;
  try {
    t.add(t.constant(Matrix(2, 2)), t.constant(Matrix(3, 2)));
    FAIL();
  } catch (const rgm::Error& e) {
    EXPECT_EQ(e.code(), rgm::ErrorCode::kShapeMismatch);
    EXPECT_NE(std::string(e.what()).find("add"), std::string::npos);
  }
  EXPECT_THROW(t.backward(t.constant(Matrix(2, 1))), rgm::Error);
}

TEST(Optim, ClipAndStep) {
  Parameter p("p", Matrix{{1.0, 1.0}});
  p.grad = Matrix{{3.0, 4.0}};
  std::vector<Parameter*> ps{&p};
  EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 1.0), 5.0);
  EXPECT_NEAR(grad_norm(ps), 1.0, 1e-15);
  sgd_step(ps, 0.5);
  EXPECT_NEAR(p.value(0, 0), 1.0 - 0.5 * 0.6, 1e-15);
  EXPECT_EQ(p.grad(0, 0), 0.0);
}

TEST(Optim, NonFiniteGradientLeavesParametersUntouched) {
  Parameter a("a", Matrix{{1.0}}), b("b", Matrix{{2.0}});
  a.grad = Matrix{{0.5}};
  b.grad = Matrix{{std::nan("")}};
  std::vector<Parameter*> ps{&a, &b};
  try {
    sgd_step(ps, 1.0);
    FAIL();
  } catch (const rgm::Error& e) {
    EXPECT_EQ(e.code(), rgm::ErrorCode::kNonFinite);
  }
  EXPECT_EQ(a.value(0, 0), 1.0);
  EXPECT_EQ(b.value(0, 0), 2.0);
}
