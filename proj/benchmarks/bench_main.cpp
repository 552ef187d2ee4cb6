#include <benchmark/benchmark.h>

#include <random>

#include "sparseattn/autograd.hpp"
#include "sparseattn/fine_attention.hpp"
#include "sparseattn/losses.hpp"
#include "sparseattn/model.hpp"
#include "sparseattn/pixel_selector.hpp"

namespace sa = sparseattn;

namespace {

sa::Tensor uniform(const sa::Shape& shape, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  sa::Tensor t(shape);
  for (double& v : t.data()) v = u(rng);
  return t;
}

// Fine attention over k tokens; time should grow linearly in k.
void BM_FineForward(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  sa::Rng rng(1);
  const sa::FineAttention fa(sa::FineConfig{}, rng);
  const auto tokens = uniform({k + 1, 4}, 2, -1.0, 1.0);
  for (auto _ : state) {
    sa::Tape tape(false);
    benchmark::DoNotOptimize(sa::fine_forward(fa, tape.constant(tokens)).z_fine.value()[0]);
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_FineForward)->RangeMultiplier(4)->Range(16, 4096)->Complexity(benchmark::oN);

void BM_Conv2d(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const auto image = uniform({1, side, side}, 3);
  const auto kernel = uniform({8, 1, 3, 3}, 4, -0.3, 0.3);
  for (auto _ : state) {
    sa::Tape tape(false);
    benchmark::DoNotOptimize(
        sa::conv2d(tape.constant(image), tape.constant(kernel), tape.constant(sa::Tensor({8})), 1)
            .value()[0]);
  }
  state.SetComplexityN(state.range(0) * state.range(0));
}
BENCHMARK(BM_Conv2d)->RangeMultiplier(2)->Range(16, 128)->Complexity(benchmark::oN);

void BM_SelectTopK(benchmark::State& state) {
  const auto map = uniform({135, 135}, 5);
  const auto k = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(sa::select_top_k(map, map, k).size());
}
BENCHMARK(BM_SelectTopK)->Arg(154)->Arg(1500)->Arg(8000);

void BM_ModelForward(benchmark::State& state) {
  const sa::ModelState m(sa::ModelConfig{});
  const auto images = uniform({32, 32, 32}, 6);
  const auto k = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    sa::Tape tape(false);
    benchmark::DoNotOptimize(sa::model_forward(tape, m, images, k, false).logits.value()[0]);
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_ModelForward)->Arg(154)->Arg(1024)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  const sa::ModelState m(sa::ModelConfig{});
  const auto images = uniform({32, 32, 32}, 7);
  std::vector<std::size_t> labels(32);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 3;
  for (auto _ : state) {
    sa::Tape tape;
    sa::ObservedMoments observed;
    const auto fwd = sa::model_forward(tape, m, images, 154, true, &observed);
    const auto rep = sa::total_loss(fwd, labels, sa::LossConfig{});
    tape.backward(rep.total_var);
    benchmark::DoNotOptimize(tape.param_grad(m.coarse.conv1_weight)[0]);
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
