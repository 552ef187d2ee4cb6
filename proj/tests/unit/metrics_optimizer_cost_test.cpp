#include <gtest/gtest.h>

#include <cmath>

#include "helpers.hpp"
#include "sparseattn/baseline.hpp"
#include "sparseattn/cost.hpp"
#include "sparseattn/errors.hpp"
#include "sparseattn/metrics.hpp"
#include "sparseattn/model.hpp"
#include "sparseattn/optimizer.hpp"

namespace sa = sparseattn;

TEST(Metrics, PerfectPredictions) {
  const std::vector<std::size_t> y{0, 1, 2, 2, 1};
  const auto r = sa::metrics_from_confusion(sa::confusion_matrix(y, y, 3));
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.f1, 1.0);
  EXPECT_EQ(r.precision, 1.0);
  EXPECT_EQ(r.recall, 1.0);
}

TEST(Metrics, ConstantPredictorOnBalancedSet) {
  const std::vector<std::size_t> y{0, 0, 1, 1, 2, 2};
  const std::vector<std::size_t> p(6, 1);
  const auto r = sa::metrics_from_confusion(sa::confusion_matrix(y, p, 3));
  EXPECT_NEAR(r.accuracy, 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(r.recall, 1.0 / 3.0, 1e-15);
}

TEST(Metrics, WeightedTwoClassExample) {
  const auto r = sa::metrics_from_confusion({{5, 0}, {1, 4}});
  EXPECT_NEAR(r.accuracy, 0.9, 1e-15);
  EXPECT_NEAR(r.recall, 0.9, 1e-15);
  // Class precisions 5/6 and 1 weighted by supports 5 and 5.
  EXPECT_NEAR(r.precision, 0.5 * (5.0 / 6.0) + 0.5 * 1.0, 1e-15);
  const double f0 = 2.0 * (5.0 / 6.0) * 1.0 / (5.0 / 6.0 + 1.0);
  const double f1 = 2.0 * 1.0 * 0.8 / 1.8;
  EXPECT_NEAR(r.f1, 0.5 * f0 + 0.5 * f1, 1e-15);
}

TEST(Metrics, SupportsSumToTotal) {
  const std::vector<std::size_t> y{0, 2, 2, 1, 0, 0, 2};
  const std::vector<std::size_t> p{0, 1, 2, 1, 2, 0, 2};
  const auto r = sa::metrics_from_confusion(sa::confusion_matrix(y, p, 3));
  EXPECT_EQ(r.support, (std::vector<std::size_t>{3, 1, 3}));
  EXPECT_EQ(r.total(), 7u);
  std::size_t trace = 0;
  for (std::size_t c = 0; c < 3; ++c) trace += r.confusion[c][c];
  EXPECT_NEAR(r.accuracy, trace / 7.0, 1e-15);
}

TEST(Metrics, UnpredictedClassHasZeroPrecision) {
  const auto r = sa::metrics_from_confusion({{2, 0}, {2, 0}});
  EXPECT_NEAR(r.precision, 0.5 * 0.5, 1e-15);
  EXPECT_TRUE(std::isfinite(r.f1));
}

TEST(Metrics, Errors) {
  const std::vector<std::size_t> a{0, 1}, b{0};
  EXPECT_THROW(sa::confusion_matrix(a, b, 2), sa::ArgumentError);
  const std::vector<std::size_t> c{0, 5};
  EXPECT_THROW(sa::confusion_matrix(c, c, 2), sa::ArgumentError);
  EXPECT_THROW(sa::metrics_from_confusion({{0, 0}, {0, 0}}), sa::ArgumentError);
}

TEST(Metrics, JsonHasCoreFields) {
  const auto j = sa::metrics_json(sa::metrics_from_confusion({{5, 0}, {1, 4}}));
  for (const char* key : {"\"accuracy\"", "\"precision\"", "\"recall\"", "\"f1\"", "\"confusion\""}) {
    EXPECT_NE(j.find(key), std::string::npos) << key;
  }
}

TEST(AdamW, DecoupledWeightDecayWithZeroGradient) {
  sa::Parameter p{"p", sa::Tensor::vector({1.0, -2.0, 0.5})};
  sa::AdamW opt({&p}, sa::AdamWConfig{0.01, 0.1});
  opt.step({sa::Tensor({3})});
  EXPECT_NEAR(p.value[0], 1.0 - 0.01 * 0.1 * 1.0, 1e-12);
  EXPECT_NEAR(p.value[1], -2.0 + 0.01 * 0.1 * 2.0, 1e-12);
  EXPECT_NEAR(p.value[2], 0.5 - 0.01 * 0.1 * 0.5, 1e-12);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  sa::Parameter p{"p", sa::Tensor::vector({0.0, 0.0})};
  sa::AdamW opt({&p}, sa::AdamWConfig{1e-3, 0.0});
  opt.step({sa::Tensor::vector({3.0, -0.5})});
  // Bias-corrected m/sqrt(v) is sign(g) on the first step.
  EXPECT_NEAR(p.value[0], -1e-3, 1e-10);
  EXPECT_NEAR(p.value[1], 1e-3, 1e-10);
  EXPECT_EQ(opt.step_count(), 1u);
  for (const auto& v : opt.second_moments()) {
    for (double x : v.data()) EXPECT_GE(x, 0.0);
  }
}

TEST(AdamW, ZeroLearningRateLeavesParameters) {
  sa::Parameter p{"p", sa::Tensor::vector({0.25, -1.0})};
  const auto before = p.value;
  sa::AdamW opt({&p}, sa::AdamWConfig{0.0, 1e-4});
  for (int i = 0; i < 5; ++i) opt.step({sa::Tensor::vector({1.0, 2.0})});
  EXPECT_EQ(p.value, before);
}

TEST(AdamW, GradientCountMismatch) {
  sa::Parameter p{"p", sa::Tensor({2})};
  sa::AdamW opt({&p}, sa::AdamWConfig{});
  EXPECT_THROW(opt.step({}), sa::Error);
  EXPECT_THROW(opt.step({sa::Tensor({3})}), sa::Error);
}

TEST(Plateau, TwoReductionsReach81Percent) {
  sa::PlateauScheduler s(0.9, 5);
  double lr = 1e-3;
  lr = s.step(1.0, lr);
  for (int i = 0; i < 10; ++i) lr = s.step(1.0, lr);
  EXPECT_EQ(s.reductions(), 2u);
  EXPECT_NEAR(lr, 8.1e-4, 1e-18);
}

TEST(Plateau, ImprovementResetsPatience) {
  sa::PlateauScheduler s(0.5, 2);
  double lr = 1.0;
  lr = s.step(1.0, lr);
  lr = s.step(1.0, lr);
  lr = s.step(0.9, lr);
  lr = s.step(0.9, lr);
  EXPECT_EQ(lr, 1.0);
  lr = s.step(0.95, lr);
  EXPECT_EQ(lr, 0.5);
}

TEST(Cost, ConvFormula) {
  EXPECT_EQ(sa::conv_macs(4, 4, 1, 3, 8), 1152.0);
}

TEST(Cost, StagesSumToTotal) {
  const sa::ModelState m(sa::ModelConfig{});
  const auto r = sa::count_cost(m, 32, 32, 150);
  double sum = 0.0;
  for (const auto& s : r.stages) sum += s.flops;
  EXPECT_DOUBLE_EQ(sum, r.total_flops);
  EXPECT_EQ(r.parameters, sa::parameter_count(m.parameters()));
  EXPECT_THROW(r.stage("nope"), sa::ArgumentError);
}

TEST(Cost, PixelPercent) {
  sa::ModelConfig c;
  c.height = c.width = 135;
  const sa::ModelState m(c);
  EXPECT_NEAR(sa::count_cost(m, 135, 135, 2734).pixel_percent, 15.0, 0.01);
  EXPECT_DOUBLE_EQ(sa::count_cost(m, 135, 135, 135 * 135).pixel_percent, 100.0);
}

TEST(Cost, ZeroBudgetKeepsClsWork) {
  const sa::ModelState m(sa::ModelConfig{});
  const auto zero = sa::count_cost(m, 32, 32, 0);
  const auto some = sa::count_cost(m, 32, 32, 100);
  EXPECT_GT(zero.stage("fine"), 0.0);
  EXPECT_EQ(zero.stage("coarse"), some.stage("coarse"));
  EXPECT_EQ(zero.stage("classifier"), some.stage("classifier"));
}

TEST(Cost, ProjectionsLinearInK) {
  const auto a = sa::fine_attention_cost(100, 4, 2);
  const auto b = sa::fine_attention_cost(200, 4, 2);
  EXPECT_EQ(b.pixel_projections, 2.0 * a.pixel_projections);
  EXPECT_EQ(b.cls_projections, a.cls_projections);
  EXPECT_LT(b.total(), 2.0 * a.total() + 1.0);
}

TEST(Cost, SparseFineStageScalesWithTokenRatio) {
  const sa::ModelState m(sa::ModelConfig{});
  const double full = sa::count_cost(m, 32, 32, 1024).stage("fine");
  const double part = sa::count_cost(m, 32, 32, 154).stage("fine");
  EXPECT_LT(part, full * (155.0 / 1025.0) + 1e-9);
  EXPECT_GT(part, full * (150.0 / 1025.0));
}

TEST(Cost, BaselineDenserThanSparseModel) {
  const sa::ModelState m(sa::ModelConfig{});
  const sa::BaselineNet b(sa::BaselineConfig{});
  const auto sparse = sa::count_cost(m, 32, 32, 154);
  const auto dense = sa::count_cost(b);
  EXPECT_GT(dense.total_flops, sparse.total_flops);
}

TEST(Cost, BaselineGrowsWithImageArea) {
  sa::BaselineConfig small, large;
  large.height = large.width = 64;
  const double a = sa::count_cost(sa::BaselineNet(small)).stage("conv1");
  const double b = sa::count_cost(sa::BaselineNet(large)).stage("conv1");
  EXPECT_DOUBLE_EQ(b, 4.0 * a);
}

TEST(Cost, JsonAndTable) {
  const auto r = sa::count_cost(sa::ModelState(sa::ModelConfig{}), 32, 32, 154);
  EXPECT_NE(sa::cost_json(r).find("\"total_flops\""), std::string::npos);
  EXPECT_NE(sa::format_cost_table(r).find("fine"), std::string::npos);
}
