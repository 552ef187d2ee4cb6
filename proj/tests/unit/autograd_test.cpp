#include <gtest/gtest.h>

#include <functional>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "sparseattn/autograd.hpp"
#include "sparseattn/errors.hpp"
#include "sparseattn/grad_check.hpp"

namespace sa = sparseattn;
using sa::testing::random_tensor;

namespace {

// Sum of `v` weighted by fixed pseudo-random coefficients, so every output
// coordinate carries a distinct gradient.
sa::Var weighted_sum(sa::Var v) {
  sa::Tape& tape = v.tape();
  const auto w = random_tensor(v.shape(), 4242, 0.5, 1.5);
  return sa::sum(sa::mul(v, tape.constant(w)));
}

struct OpCase {
  std::string name;
  sa::Shape shape;
  double lo, hi;
  std::function<sa::Var(sa::Var)> f;
};

void PrintTo(const OpCase& c, std::ostream* os) { *os << c.name; }

std::vector<OpCase> op_cases() {
  const auto other = random_tensor({3, 4}, 77, 0.5, 2.0);
  const auto rhs = random_tensor({4, 2}, 78);
  return {
      {"matmul_left", {3, 4}, -1, 1,
       [=](sa::Var x) { return weighted_sum(sa::matmul(x, x.tape().constant(rhs))); }},
      {"matmul_right", {4, 2}, -1, 1,
       [=](sa::Var x) { return weighted_sum(sa::matmul(x.tape().constant(other), x)); }},
      {"transpose", {3, 4}, -1, 1, [](sa::Var x) { return weighted_sum(sa::transpose(x)); }},
      {"add", {3, 4}, -1, 1,
       [=](sa::Var x) { return weighted_sum(sa::add(x, x.tape().constant(other))); }},
      {"sub", {3, 4}, -1, 1,
       [=](sa::Var x) { return weighted_sum(sa::sub(x.tape().constant(other), x)); }},
      {"mul", {3, 4}, -1, 1, [](sa::Var x) { return weighted_sum(sa::mul(x, x)); }},
      {"div", {3, 4}, 0.5, 2,
       [=](sa::Var x) { return weighted_sum(sa::div(x.tape().constant(other), x)); }},
      {"scalar_broadcast", {3, 4}, -1, 1,
       [](sa::Var x) { return weighted_sum(sa::mul(x, sa::sum(x))); }},
      {"relu", {3, 4}, -1, 1, [](sa::Var x) { return weighted_sum(sa::relu(x)); }},
      {"sigmoid", {3, 4}, -3, 3, [](sa::Var x) { return weighted_sum(sa::sigmoid(x)); }},
      {"exp", {3, 4}, -2, 2, [](sa::Var x) { return weighted_sum(sa::exp(x)); }},
      {"log", {3, 4}, 0.2, 3, [](sa::Var x) { return weighted_sum(sa::log(x)); }},
      {"pow", {3, 4}, 0.2, 3, [](sa::Var x) { return weighted_sum(sa::pow_scalar(x, 2.5)); }},
      {"sum_axis", {3, 4}, -1, 1, [](sa::Var x) { return weighted_sum(sa::sum(x, 1)); }},
      {"mean_axis", {3, 4}, -1, 1, [](sa::Var x) { return weighted_sum(sa::mean(x, 0)); }},
      {"max_axis", {3, 4}, -1, 1, [](sa::Var x) { return weighted_sum(sa::max(x, 1)); }},
      {"max_all", {3, 4}, -1, 1, [](sa::Var x) { return sa::max(x); }},
      {"log_softmax", {3, 4}, -2, 2, [](sa::Var x) { return weighted_sum(sa::log_softmax(x)); }},
      {"softmax", {3, 4}, -2, 2, [](sa::Var x) { return weighted_sum(sa::softmax(x)); }},
      {"normalize_rows", {3, 4}, -1, 1,
       [](sa::Var x) { return weighted_sum(sa::normalize_rows(x, 1e-12)); }},
      {"gather", {3, 4}, -1, 1,
       [](sa::Var x) {
         const std::vector<std::size_t> idx{0, 5, 5, 11};
         return weighted_sum(sa::gather(x, idx));
       }},
      {"slice_concat", {3, 4}, -1, 1,
       [](sa::Var x) {
         sa::Var top = sa::slice_rows(x, 0, 1);
         return weighted_sum(sa::concat_rows(sa::concat_cols(top, top), sa::concat_cols(x, x)));
       }},
      {"affine", {3, 4}, -1, 1,
       [=](sa::Var x) {
         sa::Tape& t = x.tape();
         return weighted_sum(sa::affine(x, t.constant(rhs), t.constant(sa::Tensor({2}, 0.3))));
       }},
      {"conv2d_input", {2, 5, 5}, -1, 1,
       [](sa::Var x) {
         sa::Tape& t = x.tape();
         return weighted_sum(sa::conv2d(x, t.constant(random_tensor({3, 2, 3, 3}, 5)),
                                        t.constant(random_tensor({3}, 6)), 1));
       }},
      {"conv2d_kernel", {3, 2, 3, 3}, -1, 1,
       [](sa::Var k) {
         sa::Tape& t = k.tape();
         return weighted_sum(sa::conv2d(t.constant(random_tensor({2, 2, 5, 5}, 7)), k,
                                        t.constant(random_tensor({3}, 6)), 1));
       }},
      {"avg_pool", {1, 2, 4, 4}, -1, 1,
       [](sa::Var x) { return weighted_sum(sa::avg_pool2d(x, 2)); }},
      {"batch_norm_batch", {5, 3}, -1, 1,
       [](sa::Var x) {
         sa::Tape& t = x.tape();
         return weighted_sum(sa::batch_norm(x, t.constant(random_tensor({3}, 8, 0.5, 1.5)),
                                            t.constant(random_tensor({3}, 9)), 1e-5, nullptr));
       }},
      {"batch_norm_running", {2, 3, 2, 2}, -1, 1,
       [](sa::Var x) {
         sa::Tape& t = x.tape();
         static const sa::ChannelMoments running{{0.1, -0.2, 0.3}, {0.5, 1.5, 2.0}};
         return weighted_sum(sa::batch_norm(x, t.constant(random_tensor({3}, 8, 0.5, 1.5)),
                                            t.constant(random_tensor({3}, 9)), 1e-5, &running));
       }},
  };
}

}  // namespace

TEST(Autograd, MatmulExamples) {
  sa::Tape tape;
  const auto id = tape.constant(sa::Tensor::matrix({{1, 0}, {0, 1}}));
  const auto m = tape.constant(sa::Tensor::matrix({{1, 2}, {3, 4}}));
  EXPECT_EQ(sa::matmul(id, m).value(), m.value());
  const auto r = sa::matmul(tape.constant(sa::Tensor::matrix({{1, 2}})),
                            tape.constant(sa::Tensor::matrix({{3}, {4}})));
  EXPECT_DOUBLE_EQ(r.value().item(), 11.0);
}

TEST(Autograd, SquareBackward) {
  sa::Tape tape;
  const auto x = tape.variable(sa::Tensor::matrix({{3}}));
  tape.backward(sa::matmul(x, x));
  EXPECT_DOUBLE_EQ(tape.grad(x).item(), 6.0);
}

TEST(Autograd, MatmulShapeErrorNamesShapes) {
  sa::Tape tape;
  try {
    sa::matmul(tape.constant(sa::Tensor({2, 3})), tape.constant(sa::Tensor({2, 3})));
    FAIL();
  } catch (const sa::DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
  }
}

TEST(Autograd, ConvExamples) {
  sa::Tape tape;
  const auto zero = sa::conv2d(tape.constant(sa::Tensor({1, 4, 4})),
                               tape.constant(sa::Tensor({2, 1, 3, 3})),
                               tape.constant(sa::Tensor::vector({0.7, -1.2})), 1);
  ASSERT_EQ(zero.shape(), (sa::Shape{2, 4, 4}));
  for (std::size_t i = 0; i < 16; ++i) EXPECT_DOUBLE_EQ(zero.value()[i], 0.7);
  for (std::size_t i = 16; i < 32; ++i) EXPECT_DOUBLE_EQ(zero.value()[i], -1.2);

  const auto ones = sa::conv2d(tape.constant(sa::Tensor({1, 3, 3}, 1.0)),
                               tape.constant(sa::Tensor({1, 1, 3, 3}, 1.0)),
                               tape.constant(sa::Tensor({1})), 1);
  EXPECT_DOUBLE_EQ(ones.value()[4], 9.0);
  EXPECT_DOUBLE_EQ(ones.value()[0], 4.0);

  const auto same = sa::conv2d(tape.constant(sa::Tensor({1, 32, 32})),
                               tape.constant(sa::Tensor({8, 1, 3, 3})),
                               tape.constant(sa::Tensor({8})), 1);
  EXPECT_EQ(same.shape(), (sa::Shape{8, 32, 32}));

  EXPECT_THROW(sa::conv2d(tape.constant(sa::Tensor({2, 4, 4})),
                          tape.constant(sa::Tensor({1, 1, 3, 3})), tape.constant(sa::Tensor({1})),
                          1),
               sa::DimensionError);
}

TEST(Autograd, ElementwiseExamples) {
  sa::Tape tape;
  const auto x = tape.variable(sa::Tensor::vector({0.0}));
  const auto s = sa::sigmoid(x);
  EXPECT_DOUBLE_EQ(s.value()[0], 0.5);
  tape.backward(sa::sum(s));
  EXPECT_DOUBLE_EQ(tape.grad(x)[0], 0.25);

  sa::Tape t2;
  const auto r = sa::relu(t2.constant(sa::Tensor::vector({-2.5, 3.0})));
  EXPECT_DOUBLE_EQ(r.value()[0], 0.0);
  EXPECT_DOUBLE_EQ(r.value()[1], 3.0);
}

TEST(Autograd, LogDomainError) {
  sa::Tape tape;
  EXPECT_THROW(sa::log(tape.constant(sa::Tensor::vector({1.0, 0.0}))), sa::DomainError);
  EXPECT_THROW(sa::log(tape.constant(sa::Tensor::vector({-1.0}))), sa::DomainError);
}

TEST(Autograd, OnlyScalarBroadcast) {
  sa::Tape tape;
  EXPECT_THROW(sa::add(tape.constant(sa::Tensor({2, 3})), tape.constant(sa::Tensor({3}))),
               sa::DimensionError);
  const auto ok = sa::add(tape.constant(sa::Tensor({2, 3}, 1.0)), tape.constant(sa::Tensor::scalar(2)));
  EXPECT_DOUBLE_EQ(ok.value()[5], 3.0);
}

TEST(Autograd, ReduceExamples) {
  sa::Tape tape;
  EXPECT_DOUBLE_EQ(sa::sum(tape.constant(sa::Tensor::vector({1, 2, 3}))).value().item(), 6.0);
  const auto m = sa::mean(tape.constant(sa::Tensor::matrix({{1, 3}, {3, 5}})), 0);
  EXPECT_EQ(m.value(), sa::Tensor::vector({2, 4}));
  EXPECT_THROW(sa::sum(tape.constant(sa::Tensor({2, 2})), 2), sa::DimensionError);

  const auto x = tape.variable(sa::Tensor::vector({2, 5, 5}));
  tape.backward(sa::max(x));
  EXPECT_EQ(tape.grad(x), sa::Tensor::vector({0, 1, 0}));
}

TEST(Autograd, TapeIsSingleUse) {
  sa::Tape tape;
  const auto x = tape.variable(sa::Tensor::scalar(2.0));
  const auto y = sa::mul(x, x);
  tape.backward(y);
  EXPECT_TRUE(tape.backward_done());
  EXPECT_THROW(tape.backward(y), sa::Error);
}

TEST(Autograd, BackwardNeedsScalarRoot) {
  sa::Tape tape;
  const auto x = tape.variable(sa::Tensor({2}, 1.0));
  EXPECT_THROW(tape.backward(x), sa::DimensionError);
}

TEST(Autograd, NonFiniteGradientRaises) {
  sa::Tape tape;
  const auto x = tape.variable(sa::Tensor::vector({1e-300}));
  // 1e-300^-2 overflows to inf.
  const auto y = sa::sum(sa::pow_scalar(x, -2.0));
  EXPECT_THROW(tape.backward(y), sa::NumericError);
}

TEST(Autograd, ForwardOnlyTapeRecordsNoGradient) {
  sa::Tape tape(false);
  const auto x = tape.variable(sa::Tensor::scalar(3.0));
  const auto y = sa::mul(x, x);
  EXPECT_DOUBLE_EQ(y.value().item(), 9.0);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Autograd, DisconnectedParameterHasZeroGradient) {
  sa::Parameter used{"used", sa::Tensor::vector({1.0, 2.0})};
  sa::Parameter unused{"unused", sa::Tensor::vector({3.0})};
  sa::Tape tape;
  const auto u = tape.param(used);
  tape.param(unused);
  tape.backward(sa::sum(sa::mul(u, u)));
  EXPECT_EQ(tape.param_grad(unused), sa::Tensor::vector({0.0}));
  EXPECT_EQ(tape.param_grad(used), sa::Tensor::vector({2.0, 4.0}));
}

TEST(Autograd, ParameterGradientSumsOverUses) {
  sa::Parameter p{"p", sa::Tensor::vector({2.0})};
  sa::Tape tape;
  const auto a = tape.param(p);
  const auto b = tape.param(p);
  tape.backward(sa::sum(sa::mul(a, b)));
  EXPECT_DOUBLE_EQ(tape.param_grad(p)[0], 4.0);
}

TEST(Autograd, DetachBlocksGradient) {
  sa::Tape tape;
  const auto x = tape.variable(sa::Tensor::vector({1.5, -0.5}));
  tape.backward(sa::sum(sa::mul(x, sa::detach(x))));
  EXPECT_EQ(tape.grad(x), sa::Tensor::vector({1.5, -0.5}));
}

TEST(Autograd, MatmulAssociativity) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    sa::Tape tape(false);
    const auto a = tape.constant(random_tensor({3, 5}, seed * 3 + 1));
    const auto b = tape.constant(random_tensor({5, 4}, seed * 3 + 2));
    const auto c = tape.constant(random_tensor({4, 6}, seed * 3 + 3));
    const auto left = sa::matmul(sa::matmul(a, b), c).value();
    const auto right = sa::matmul(a, sa::matmul(b, c)).value();
    for (std::size_t i = 0; i < left.size(); ++i) {
      const double denom = std::max({std::abs(left[i]), std::abs(right[i]), 1e-12});
      EXPECT_LE(std::abs(left[i] - right[i]) / denom, 1e-9) << "seed " << seed;
    }
  }
}

TEST(Autograd, ChannelMomentsReported) {
  sa::Tape tape;
  const auto x = tape.constant(sa::Tensor::matrix({{1, 10}, {3, 30}}));
  sa::ChannelMoments observed;
  sa::batch_norm(x, tape.constant(sa::Tensor({2}, 1.0)), tape.constant(sa::Tensor({2})), 1e-5,
                 nullptr, &observed);
  EXPECT_EQ(observed.mean, (std::vector<double>{2, 20}));
  EXPECT_EQ(observed.var, (std::vector<double>{1, 100}));
}

TEST(GradCheck, ExactPolynomial) {
  const auto point = random_tensor({4, 3}, 1);
  const double err = sa::grad_check([](sa::Var x) { return sa::sum(sa::mul(x, x)); }, point);
  EXPECT_LT(err, 1e-6);
}

TEST(GradCheck, RejectsEpsOutsideRange) {
  const auto f = [](sa::Var x) { return sa::sum(x); };
  EXPECT_THROW(sa::grad_check(f, sa::Tensor({2}), 1e-2), sa::ArgumentError);
  EXPECT_THROW(sa::grad_check(f, sa::Tensor({2}), 1e-9), sa::ArgumentError);
}

TEST(GradCheck, NonFiniteProbeRaises) {
  const auto f = [](sa::Var x) { return sa::sum(sa::log(x)); };
  // The lower probe leaves the log domain.
  EXPECT_THROW(sa::grad_check(f, sa::Tensor::vector({1e-310})), sa::Error);
}

class OpGradient : public ::testing::TestWithParam<OpCase> {};

TEST_P(OpGradient, MatchesFiniteDifferencesAtTenPoints) {
  const OpCase& c = GetParam();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto point = random_tensor(c.shape, 1000 + seed, c.lo, c.hi);
    EXPECT_LE(sa::grad_check(c.f, point, 1e-5), 1e-4) << c.name << " seed " << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient, ::testing::ValuesIn(op_cases()),
                         [](const auto& info) { return info.param.name; });
