#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "helpers.hpp"
#include "sparseattn/coarse_attention.hpp"
#include "sparseattn/embedding.hpp"
#include "sparseattn/errors.hpp"
#include "sparseattn/grad_check.hpp"

namespace sa = sparseattn;
using sa::testing::random_tensor;

namespace {

sa::CoarseNet make_coarse(std::uint64_t seed = 3) {
  sa::Rng rng(seed);
  return sa::CoarseNet(sa::CoarseConfig{}, rng);
}

}  // namespace

TEST(Coarse, ZeroImageGivesHalfEverywhere) {
  const auto net = make_coarse();
  sa::Tape tape(false);
  const auto out = sa::coarse_forward(net, tape.constant(sa::Tensor({1, 6, 6})), false);
  for (double v : out.attention_map.value().data()) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(Coarse, ShapesForSingleImage) {
  const auto net = make_coarse();
  sa::Tape tape(false);
  const auto out =
      sa::coarse_forward(net, tape.constant(random_tensor({1, 32, 32}, 1, 0, 1)), false);
  EXPECT_EQ(out.attention_map.shape(), (sa::Shape{32, 32}));
  EXPECT_EQ(out.pre_sigmoid.shape(), (sa::Shape{32, 32}));
  EXPECT_EQ(out.z_coarse.shape(), (sa::Shape{8}));
}

TEST(Coarse, ShapesForBatch) {
  const auto net = make_coarse();
  sa::Tape tape(false);
  const auto out =
      sa::coarse_forward(net, tape.constant(random_tensor({3, 1, 9, 7}, 1, 0, 1)), true);
  EXPECT_EQ(out.attention_map.shape(), (sa::Shape{3, 9, 7}));
  EXPECT_EQ(out.z_coarse.shape(), (sa::Shape{3, 8}));
}

TEST(Coarse, MapIsSigmoidOfPreActivation) {
  auto net = make_coarse();
  net.conv2_weight.value = random_tensor(net.conv2_weight.value.shape(), 9, -3, 3);
  sa::Tape tape(false);
  const auto out =
      sa::coarse_forward(net, tape.constant(random_tensor({1, 12, 12}, 4, 0, 1)), false);
  const auto& map = out.attention_map.value();
  const auto again = sa::sigmoid(out.pre_sigmoid).value();
  for (std::size_t i = 0; i < map.size(); ++i) {
    EXPECT_EQ(map[i], again[i]);
    EXPECT_NEAR(map[i], 1.0 / (1.0 + std::exp(-out.pre_sigmoid.value()[i])), 1e-15);
    EXPECT_GT(map[i], 0.0);
    EXPECT_LT(map[i], 1.0);
  }
}

TEST(Coarse, RejectsMultiChannelInput) {
  const auto net = make_coarse();
  sa::Tape tape(false);
  EXPECT_THROW(sa::coarse_forward(net, tape.constant(sa::Tensor({2, 4, 4})), false),
               sa::DimensionError);
  EXPECT_THROW(sa::coarse_forward(net, tape.constant(sa::Tensor({4, 4})), false),
               sa::DimensionError);
}

TEST(Coarse, PoolingIsPermutationInvariantOnConstantImage) {
  auto net = make_coarse();
  net.conv1_bias.value = random_tensor({8}, 2);
  sa::Tape tape(false);
  const auto a = sa::coarse_forward(net, tape.constant(sa::Tensor({1, 8, 8}, 0.4)), false);
  sa::Tensor flipped({1, 8, 8}, 0.4);
  std::reverse(flipped.data().begin(), flipped.data().end());
  const auto b = sa::coarse_forward(net, tape.constant(flipped), false);
  EXPECT_EQ(a.z_coarse.value(), b.z_coarse.value());
}

TEST(Coarse, TrainingBatchReportsMoments) {
  const auto net = make_coarse();
  sa::Tape tape;
  sa::ChannelMoments observed;
  sa::coarse_forward(net, tape.constant(random_tensor({2, 1, 5, 5}, 4, 0, 1)), true, &observed);
  EXPECT_EQ(observed.mean.size(), 8u);
  EXPECT_EQ(observed.var.size(), 8u);
}

TEST(Coarse, RunningVarianceStaysPositive) {
  auto net = make_coarse();
  net.absorb_batch_moments({std::vector<double>(8, 0.2), std::vector<double>(8, 0.0)}, 50);
  for (double v : net.running.var) EXPECT_GT(v, 0.0);
}

namespace {

sa::Embedder make_embedder(std::size_t dim = 4) {
  sa::Rng rng(5);
  return sa::Embedder(sa::EmbedderConfig{dim, 16}, rng);
}

std::vector<sa::SparsePixel> some_pixels(std::size_t k, std::uint64_t seed) {
  const auto t = random_tensor({k, 3}, seed, 0, 1);
  std::vector<sa::SparsePixel> px(k);
  for (std::size_t i = 0; i < k; ++i) {
    px[i].x = t.at(i, 0);
    px[i].y = t.at(i, 1);
    px[i].v = t.at(i, 2);
  }
  return px;
}

}  // namespace

TEST(Embedding, OutputShapeAndClsRow) {
  auto emb = make_embedder();
  emb.cls_token.value = sa::Tensor::vector({1, 2, 3, 4});
  sa::Tape tape(false);
  const auto e = sa::embed_pixels(tape, emb, some_pixels(3, 1));
  ASSERT_EQ(e.shape(), (sa::Shape{4, 4}));
  for (std::size_t c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(e.value().at(3, c), c + 1.0);
}

TEST(Embedding, ZeroWeightsGiveOutputBias) {
  auto emb = make_embedder();
  emb.w1.value = sa::Tensor(emb.w1.value.shape());
  emb.w2.value = sa::Tensor(emb.w2.value.shape());
  emb.b2.value = sa::Tensor::vector({0.5, -1, 2, 0.25});
  sa::Tape tape(false);
  const auto e = sa::embed_pixels(tape, emb, some_pixels(5, 2));
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(e.value().at(r, c), emb.b2.value[c]);
  }
}

TEST(Embedding, SharedFunctionAndPermutation) {
  const auto emb = make_embedder();
  auto px = some_pixels(4, 3);
  px[2] = px[0];
  sa::Tape tape(false);
  const auto e = sa::embed_pixels(tape, emb, px);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(e.value().at(0, c), e.value().at(2, c));

  std::vector<sa::SparsePixel> perm{px[3], px[1], px[0], px[2]};
  const auto p = sa::embed_pixels(tape, emb, perm);
  const std::vector<std::size_t> src{3, 1, 0, 2};
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(p.value().at(r, c), e.value().at(src[r], c));
  }
  for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(p.value().at(4, c), e.value().at(4, c));
}

TEST(Embedding, FeaturesFollowSelectionOrder) {
  const auto px = some_pixels(3, 4);
  const auto f = sa::pixel_features(px);
  ASSERT_EQ(f.shape(), (sa::Shape{3, 3}));
  EXPECT_EQ(f.at(1, 0), px[1].x);
  EXPECT_EQ(f.at(1, 1), px[1].y);
  EXPECT_EQ(f.at(1, 2), px[1].v);
}

TEST(Embedding, EmptyPixelListRejected) {
  const auto emb = make_embedder();
  sa::Tape tape(false);
  EXPECT_THROW(sa::embed_pixels(tape, emb, {}), sa::ArgumentError);
}

TEST(Embedding, ClsTokenIsOnTheTape) {
  const auto emb = make_embedder();
  sa::Tape tape;
  const auto e = sa::embed_pixels(tape, emb, some_pixels(2, 5));
  tape.backward(sa::sum(e));
  EXPECT_EQ(tape.param_grad(emb.cls_token), sa::Tensor({4}, 1.0));
}

TEST(Embedding, GradientsMatchFiniteDifferences) {
  auto emb = make_embedder();
  emb.b1.value = random_tensor(emb.b1.value.shape(), 6, -0.2, 0.2);
  const auto px = some_pixels(4, 6);
  const auto w = random_tensor({5, 4}, 7);
  const double err = sa::grad_check_parameters(
      [&](sa::Tape& tape) {
        return sa::sum(sa::mul(sa::embed_pixels(tape, emb, px), tape.constant(w)));
      },
      emb.parameters());
  EXPECT_LE(err, 1e-4);
}
