// Microbenchmarks for the hot paths: tensor contraction, model forward and
// backward, schedule evaluation, one sampler update, one optimizer update.
#include <benchmark/benchmark.h>

#include <optional>

#include "rin/diffusion.hpp"
#include "rin/model.hpp"
#include "rin/optim.hpp"
#include "rin/tensor.hpp"

namespace {

using namespace rin;

ModelConfig bench_cfg() {
  ModelConfig cfg;
  cfg.input_shape = {32, 32, 3};
  cfg.patch = {4, 4};
  cfg.blocks = 2;
  cfg.layers_per_block = 2;
  cfg.latents = 16;
  cfg.latent_dim = 128;
  cfg.interface_dim = 64;
  cfg.heads = 4;
  return cfg;
}

void BM_Matmul(benchmark::State& state) {
  const int64_t n = state.range(0);
  Tensor a = normal_init({8, n, n}, 1, RngStream::kDataset, 1, Dtype::f32);
  Tensor b = normal_init({8, n, n}, 1, RngStream::kDataset, 2, Dtype::f32);
  NoGradGuard ng;
  for (auto _ : state) {
    Tensor c = matmul(a, b);
    benchmark::DoNotOptimize(c);
  }
  state.SetItemsProcessed(state.iterations() * 8 * n * n * n * 2);
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

void BM_ModelForward(benchmark::State& state) {
  RinModel model(bench_cfg(), 1);
  Tensor x = normal_init({32, 32, 3}, 2, RngStream::kDataset, 0, Dtype::f32);
  NoGradGuard ng;
  for (auto _ : state) {
    auto out = model.forward(x, 0.5, std::nullopt, Tensor{});
    benchmark::DoNotOptimize(out.eps);
  }
}
BENCHMARK(BM_ModelForward);

void BM_ForwardBackward(benchmark::State& state) {
  RinModel model(bench_cfg(), 1);
  Tensor x = normal_init({32, 32, 3}, 2, RngStream::kDataset, 0, Dtype::f32);
  for (auto _ : state) {
    Gradients g = backward(mean_all(model.forward(x, 0.5, std::nullopt,
                                                  Tensor{}).eps));
    benchmark::DoNotOptimize(g);
  }
}
BENCHMARK(BM_ForwardBackward);

void BM_GammaSweep(benchmark::State& state) {
  const ScheduleSpec sched{state.range(0) == 0 ? ScheduleKind::kCosine
                                               : ScheduleKind::kSigmoid};
  for (auto _ : state) {
    double acc = 0.0;
    for (int i = 0; i <= 1000; ++i) acc += gamma(sched, i / 1000.0);
    benchmark::DoNotOptimize(acc);
  }
  state.SetItemsProcessed(state.iterations() * 1001);
}
BENCHMARK(BM_GammaSweep)->Arg(0)->Arg(1);

void BM_DdimStep(benchmark::State& state) {
  const ScheduleSpec sched{ScheduleKind::kSigmoid};
  Tensor x = normal_init({32, 32, 3}, 3, RngStream::kDataset, 0, Dtype::f32);
  Tensor e = normal_init({32, 32, 3}, 3, RngStream::kDataset, 1, Dtype::f32);
  NoGradGuard ng;
  for (auto _ : state) {
    Tensor next = ddim_step(x, e, 0.8, 0.7, sched, 1.0);
    benchmark::DoNotOptimize(next);
  }
}
BENCHMARK(BM_DdimStep);

void BM_LambStep(benchmark::State& state) {
  RinModel model(bench_cfg(), 1);
  Tensor x = normal_init({32, 32, 3}, 2, RngStream::kDataset, 0, Dtype::f32);
  const Gradients g = backward(mean_all(model.forward(x, 0.5, std::nullopt,
                                                      Tensor{}).eps));
  Lamb lamb(LambConfig{}, model.parameters());
  for (auto _ : state) {
    lamb.step(g, 1e-4);
    benchmark::DoNotOptimize(lamb.steps_done());
  }
}
BENCHMARK(BM_LambStep);

}  // namespace

BENCHMARK_MAIN();
