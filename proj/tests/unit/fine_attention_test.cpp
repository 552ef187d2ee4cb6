#include <gtest/gtest.h>

#include <cmath>

#include "helpers.hpp"
#include "sparseattn/errors.hpp"
#include "sparseattn/fine_attention.hpp"
#include "sparseattn/grad_check.hpp"

namespace sa = sparseattn;
using sa::testing::random_tensor;

namespace {

sa::FineAttention make_fine(std::size_t dim, std::size_t heads, std::uint64_t seed = 7) {
  sa::Rng rng(seed);
  return sa::FineAttention(sa::FineConfig{dim, heads, 1e-6}, rng);
}

}  // namespace

TEST(FineAttention, ScalarWorkedExample) {
  // Identity tokens make K = [2, -3], V = [1, 4], Q = [1, 2] in the first
  // column; the second column only mirrors them.
  auto fa = make_fine(2, 1);
  fa.w_k[0].value = sa::Tensor::matrix({{2, 2}, {-3, -3}});
  fa.w_q[0].value = sa::Tensor::matrix({{1, 0}, {2, 0}});
  fa.w_v.value = sa::Tensor::matrix({{1, 0}, {4, 0}});
  sa::Tape tape(false);
  const auto out = sa::fine_forward(fa, tape.constant(sa::Tensor::matrix({{1, 0}, {0, 1}})));

  const auto& a = out.head_attn[0].value();
  EXPECT_NEAR(a.at(0, 0), 1.0, 1e-6);
  EXPECT_NEAR(a.at(1, 0), 5e-7, 1e-9);
  // C = A^T V = 1.0000015, O = Q C, z_fine = O row k.
  EXPECT_NEAR(out.z_fine.value()[0], 2.0, 1e-5);
  EXPECT_NEAR(out.z_fine.value()[0], 2.0 * (a.at(0, 0) + 4.0 * a.at(1, 0)), 1e-15);
  EXPECT_DOUBLE_EQ(out.z_fine.value()[1], 0.0);
  EXPECT_NEAR(out.pixel_importance.value()[0], a.at(0, 0), 1e-15);
}

TEST(FineAttention, ColumnsSumToOne) {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const auto fa = make_fine(4, 2, seed);
    const std::size_t k = 1 + seed % 16;
    sa::Tape tape(false);
    const auto out = sa::fine_forward(fa, tape.constant(random_tensor({k + 1, 4}, seed)));
    ASSERT_EQ(out.head_attn.size(), 2u);
    for (const auto& h : out.head_attn) {
      const auto& a = h.value();
      ASSERT_EQ(a.shape(), (sa::Shape{k + 1, 2}));
      for (std::size_t c = 0; c < 2; ++c) {
        double s = 0.0;
        for (std::size_t r = 0; r <= k; ++r) s += a.at(r, c);
        EXPECT_NEAR(s, 1.0, 1e-9);
      }
    }
    for (double v : out.pixel_importance.value().data()) EXPECT_GE(v, 0.0);
  }
}

TEST(FineAttention, SingleHeadZEqualsClsRow) {
  const auto fa = make_fine(4, 1);
  const auto e = random_tensor({5, 4}, 3);
  sa::Tape tape(false);
  const auto out = sa::fine_forward(fa, tape.constant(e));
  // Rebuild O's CLS row by hand.
  const auto et = tape.constant(e);
  const auto kp = sa::add_scalar(sa::relu(sa::matmul(et, tape.constant(fa.w_k[0].value))), 1e-6);
  const auto a = sa::div(kp, sa::broadcast_rows(sa::sum(kp, 0), 5));
  const auto c = sa::matmul(sa::transpose(a), sa::matmul(et, tape.constant(fa.w_v.value)));
  const auto o = sa::matmul(sa::matmul(et, tape.constant(fa.w_q[0].value)), c);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(out.z_fine.value()[j], o.value().at(4, j));
}

TEST(FineAttention, KeyScaleInvariance) {
  auto fa = make_fine(4, 2, 11);
  const auto e = random_tensor({7, 4}, 12);
  sa::Tape tape(false);
  const auto base = sa::fine_forward(fa, tape.constant(e));
  for (auto& wk : fa.w_k) {
    for (double& v : wk.value.data()) v *= 1000.0;
  }
  const auto scaled = sa::fine_forward(fa, tape.constant(e));
  for (std::size_t h = 0; h < 2; ++h) {
    // The epsilon shift is not scaled, so invariance holds up to ~epsilon.
    EXPECT_LT(sa::testing::max_abs_diff(base.head_attn[h].value(), scaled.head_attn[h].value()),
              1e-5);
  }
}

TEST(FineAttention, Errors) {
  const auto fa = make_fine(4, 2);
  sa::Tape tape(false);
  EXPECT_THROW(sa::fine_forward(fa, tape.constant(sa::Tensor({1, 4}))), sa::ArgumentError);
  EXPECT_THROW(sa::fine_forward(fa, tape.constant(sa::Tensor({3, 5}))), sa::DimensionError);
  sa::Rng rng(1);
  EXPECT_THROW(sa::FineAttention(sa::FineConfig{4, 3, 1e-6}, rng), sa::ConfigError);
  EXPECT_THROW(sa::FineAttention(sa::FineConfig{4, 2, 0.0}, rng), sa::ConfigError);
}

TEST(FineAttention, ParameterGradients) {
  const auto e = random_tensor({6, 4}, 21);
  const auto w = random_tensor({4}, 22);
  const auto wi = random_tensor({6}, 23);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto fa = make_fine(4, 2, 100 + seed);
    const double err = sa::grad_check_parameters(
        [&](sa::Tape& tape) {
          const auto out = sa::fine_forward(fa, tape.constant(e));
          return sa::add(sa::sum(sa::mul(out.z_fine, tape.constant(w))),
                         sa::sum(sa::mul(out.pixel_importance, tape.constant(wi))));
        },
        const_cast<sa::FineAttention&>(fa).parameters());
    EXPECT_LE(err, 1e-4) << "seed " << seed;
  }
}

TEST(FineAttention, TokenGradients) {
  const auto fa = make_fine(4, 2, 5);
  const auto w = random_tensor({4}, 22);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const double err = sa::grad_check(
        [&](sa::Var e) {
          return sa::sum(sa::mul(sa::fine_forward(fa, e).z_fine, e.tape().constant(w)));
        },
        random_tensor({5, 4}, 300 + seed));
    EXPECT_LE(err, 1e-4) << "seed " << seed;
  }
}
