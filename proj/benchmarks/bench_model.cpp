#include <random>

#include <benchmark/benchmark.h>

#include "mer/losses.hpp"
#include "mer/model.hpp"
#include "mer/optim.hpp"

namespace {

mer::ModelInputs random_inputs(const mer::ModelConfig& cfg, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t s = cfg.input_size, g2 = cfg.grid * cfg.grid;
  mer::ModelInputs in;
  in.s_onset = mer::Tensor::randn({n, 1, s, s}, rng, 0.2f);
  in.s_apex = mer::Tensor::randn({n, 1, s, s}, rng, 0.2f);
  in.l_onset = mer::Tensor::randn({n, g2, s, s}, rng, 0.2f);
  in.l_apex = mer::Tensor::randn({n, g2, s, s}, rng, 0.2f);
  in.t_flow = mer::Tensor::randn({n, 2, 2, s, s}, rng, 0.5f);
  return in;
}

void BM_ModelForward(benchmark::State& state) {
  mer::ModelConfig cfg;
  mer::Model model(cfg, 1);
  const auto in = random_inputs(cfg, static_cast<std::size_t>(state.range(0)), 2);
  mer::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(in, false));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ModelForward)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  mer::ModelConfig cfg;
  cfg.use_mag = state.range(1) != 0;
  mer::Model model(cfg, 1);
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  const auto in = random_inputs(cfg, n, 3);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % cfg.num_classes);
  mer::LossConfig lc;
  mer::Adam adam;
  for (auto _ : state) {
    model.params().zero_grad();
    auto terms = mer::total_loss(model.forward(in), labels, lc);
    terms.total.backward();
    adam.step(model.params());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TrainStep)->Args({16, 1})->Args({16, 0})->Unit(benchmark::kMillisecond);

}  // namespace
