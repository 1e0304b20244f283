#include <benchmark/benchmark.h>

#include "rccm/model.hpp"
#include "rccm/synthdata.hpp"
#include "rccm/training.hpp"

using namespace rccm;

static void BM_MultitaskForward(benchmark::State& state) {
  ModelConfig cfg;
  cfg.depth = static_cast<int>(state.range(0));
  cfg.base_channels = static_cast<int>(state.range(1));
  cfg.rng_seed = 1;
  RccmNet net(cfg);
  Rng rng(2);
  Tensor image({1, 1, cfg.input_h, cfg.input_w});
  for (int64_t i = 0; i < image.numel(); ++i) image[i] = rng.uniform();
  for (auto _ : state) {
    auto out = net.forward(nn::make_leaf(image), false, true);
    benchmark::DoNotOptimize(out.cls_logits->value[0]);
  }
}
BENCHMARK(BM_MultitaskForward)->Args({5, 16})->Args({3, 4})->Unit(benchmark::kMillisecond);

static void BM_TrainStep(benchmark::State& state) {
  synth::PhantomConfig pc;
  pc.seed = 3;
  const auto samples = synth::generate_dataset(pc, {4, 3, 3});

  training::TrainConfig cfg;
  cfg.model.depth = 3;
  cfg.model.base_channels = 4;
  cfg.seed = 1;
  training::Trainer trainer(cfg);
  std::vector<const synth::Sample*> batch;
  for (const auto& s : samples) batch.push_back(&s);
  for (auto _ : state) {
    const auto loss = trainer.train_step(batch);
    benchmark::DoNotOptimize(loss.total);
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

static void BM_Gemm(benchmark::State& state) {
  const int64_t m = state.range(0), k = state.range(1), n = state.range(2);
  std::vector<double> a(static_cast<size_t>(m * k), 0.5);
  std::vector<double> b(static_cast<size_t>(k * n), 0.25);
  std::vector<double> c(static_cast<size_t>(m * n));
  for (auto _ : state) {
    nn::gemm_nn(a.data(), b.data(), c.data(), m, k, n, false);
    benchmark::DoNotOptimize(c[0]);
  }
  state.SetItemsProcessed(state.iterations() * m * k * n);
}
BENCHMARK(BM_Gemm)->Args({16, 144, 13824})->Args({256, 128, 54});

static void BM_SurfaceDistances(benchmark::State& state) {
  synth::PhantomConfig pc;
  pc.seed = 7;
  const auto a = synth::generate_phantom(pc, 0, 1);
  const auto b = synth::generate_phantom(pc, 0, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(metrics::assd_mm(a.mask, b.mask, 0.1));
    benchmark::DoNotOptimize(metrics::hausdorff_mm(a.mask, b.mask, 0.1));
  }
}
BENCHMARK(BM_SurfaceDistances)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
