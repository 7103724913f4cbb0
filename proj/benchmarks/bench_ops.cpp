#include <random>

#include <benchmark/benchmark.h>

#include "mer/blocks.hpp"
#include "mer/ops.hpp"

namespace {

void BM_Conv2dForward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto c = static_cast<std::size_t>(state.range(1));
  const auto s = static_cast<std::size_t>(state.range(2));
  std::mt19937_64 rng(1);
  auto x = mer::Tensor::randn({n, c, s, s}, rng);
  auto w = mer::Tensor::randn({c, c, 3, 3}, rng, 0.1f);
  for (auto _ : state) benchmark::DoNotOptimize(mer::conv2d(x, w, std::nullopt, 1, 1));
  state.SetItemsProcessed(static_cast<long>(state.iterations() * n * c * c * 9 * s * s));
}
BENCHMARK(BM_Conv2dForward)->Args({16, 16, 48})->Args({32, 16, 48})->Args({16, 64, 12})->Unit(benchmark::kMillisecond);

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto c = static_cast<std::size_t>(state.range(1));
  const auto s = static_cast<std::size_t>(state.range(2));
  std::mt19937_64 rng(2);
  auto x = mer::Tensor::randn({n, c, s, s}, rng, 1.0f, true);
  auto w = mer::Tensor::randn({c, c, 3, 3}, rng, 0.1f, true);
  for (auto _ : state) {
    x.zero_grad();
    w.zero_grad();
    mer::sum(mer::conv2d(x, w, std::nullopt, 1, 1)).backward();
  }
  state.SetItemsProcessed(static_cast<long>(state.iterations() * n * c * c * 9 * s * s));
}
BENCHMARK(BM_Conv2dForwardBackward)->Args({16, 16, 48})->Args({16, 64, 12})->Unit(benchmark::kMillisecond);

void BM_TsmShift(benchmark::State& state) {
  std::mt19937_64 rng(3);
  auto x = mer::Tensor::randn({32, 64, 12, 12}, rng);
  const auto spec = mer::TsmSpec::for_channels(64, 2, 0.125);
  for (auto _ : state) benchmark::DoNotOptimize(mer::tsm_shift(spec, x));
}
BENCHMARK(BM_TsmShift);

void BM_EcaForward(benchmark::State& state) {
  std::mt19937_64 rng(4);
  auto x = mer::Tensor::randn({16, 64, 12, 12}, rng);
  mer::EcaLayer eca(64, mer::Tensor({mer::eca_kernel_size(64)}, std::vector<float>(mer::eca_kernel_size(64), 0.2f)));
  for (auto _ : state) benchmark::DoNotOptimize(eca.forward(x));
}
BENCHMARK(BM_EcaForward);

}  // namespace
