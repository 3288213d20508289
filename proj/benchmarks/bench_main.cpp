#include <benchmark/benchmark.h>

#include <random>

#include "faultformer/layers.hpp"
#include "faultformer/model.hpp"
#include "faultformer/ops.hpp"
#include "faultformer/spectral.hpp"
#include "faultformer/train.hpp"

using namespace faultformer;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> v(numel_of(shape));
  for (auto& e : v) e = dist(rng);
  return Tensor(std::move(shape), std::move(v));
}

void BM_Rdft(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Tensor x = random_tensor({32, n}, 1);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(rdft(x).packed.data().data());
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_Rdft)->Arg(61)->Arg(123)->Arg(247)->Arg(496)->Arg(2048);

void BM_RoundTrip(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Tensor x = random_tensor({32, n}, 2);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(irdft(rdft(x)).data().data());
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_RoundTrip)->Arg(247)->Arg(2048);

void BM_EmbeddingConv(benchmark::State& state) {
  Rng rng(3);
  ConvSpec conv = make_same_conv(1, 32, 63, rng);
  Tensor x = random_tensor({8, 1, 2048}, 4);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(conv1d(x, conv).data().data());
}
BENCHMARK(BM_EmbeddingConv)->Unit(benchmark::kMillisecond);

void BM_FirstDistillConv(benchmark::State& state) {
  Rng rng(5);
  ConvSpec conv = make_conv(32, 32, 64, 2, 0, rng);
  Tensor x = random_tensor({8, 32, 2048}, 6);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(conv1d(x, conv).data().data());
}
BENCHMARK(BM_FirstDistillConv)->Unit(benchmark::kMillisecond);

void BM_ConvBackward(benchmark::State& state) {
  Rng rng(7);
  ConvSpec conv = make_same_conv(64, 64, 5, rng);
  Tensor x = random_tensor({8, 64, 247}, 8);
  Tensor w = random_tensor({8, 64, 247}, 9);
  for (auto _ : state) {
    conv.weights.zero_grad();
    backward(weighted_sum(conv1d(x, conv), w));
  }
}
BENCHMARK(BM_ConvBackward)->Unit(benchmark::kMillisecond);

void BM_ModelForward(benchmark::State& state) {
  ModelConfig c;
  c.num_blocks = static_cast<std::size_t>(state.range(0));
  c.embed_channels = static_cast<std::size_t>(state.range(1));
  Model model(c, 10);
  model.set_training(false);
  Tensor x = random_tensor({8, 1, 2048}, 11);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(x).logits.data().data());
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_ModelForward)->Args({2, 8})->Args({4, 32})->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  ModelConfig c;
  c.num_blocks = 2;
  c.embed_channels = 8;
  Model model(c, 12);
  Tensor x = random_tensor({32, 1, 2048}, 13);
  std::vector<std::size_t> labels(32);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 4;
  const auto params = model.parameters();
  AdamState adam;
  for (auto _ : state) {
    Tensor loss = cross_entropy(model.forward(x).logits, labels);
    for (const auto& p : params) Tensor(p.tensor).zero_grad();
    backward(loss);
    adam_step(params, adam, AdamConfig{});
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
