#include <benchmark/benchmark.h>

#include "structfill/model.hpp"
#include "structfill/ops.hpp"
#include "structfill/trainer.hpp"

using namespace sfill;

static void BM_Conv2dForward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  Rng rng(1);
  Tensor<float> x = Tensor<float>::randn(Shape(1, c, 32, 32), rng);
  Tensor<float> w = Tensor<float>::randn(Shape(c, c, 3, 3), rng, 0.05f);
  Tensor<float> b(Shape(1, c, 1, 1));
  ConvSpec spec;
  spec.out_channels = c;
  spec.kh = spec.kw = 3;
  spec.padding = 1;
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, b, spec));
}
BENCHMARK(BM_Conv2dForward)->Arg(32)->Arg(64)->Arg(128);

static void BM_Conv2dBackward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  Rng rng(1);
  Tensor<float> x = Tensor<float>::randn(Shape(1, c, 32, 32), rng);
  Tensor<float> w = Tensor<float>::randn(Shape(c, c, 3, 3), rng, 0.05f);
  Tensor<float> b(Shape(1, c, 1, 1));
  x.set_requires_grad(true);
  w.set_requires_grad(true);
  b.set_requires_grad(true);
  ConvSpec spec;
  spec.out_channels = c;
  spec.kh = spec.kw = 3;
  spec.padding = 1;
  for (auto _ : state) {
    Tape<float> tape;
    Tape<float>::Scope scope(tape);
    Tensor<float> loss = mean_all(conv2d(x, w, b, spec));
    x.zero_grad();
    w.zero_grad();
    b.zero_grad();
    tape.backward(loss);
  }
}
BENCHMARK(BM_Conv2dBackward)->Arg(32)->Arg(64);

static void BM_AttentionForward(benchmark::State& state) {
  const int hw = static_cast<int>(state.range(0));
  Rng rng(2);
  Tensor<float> x = Tensor<float>::randn(Shape(1, 64, hw, hw), rng);
  Tensor<float> gamma = Tensor<float>::full(Shape(1, 1, 1, 1), 0.5f);
  for (auto _ : state) benchmark::DoNotOptimize(attention_forward(x, 3, 1, gamma));
}
BENCHMARK(BM_AttentionForward)->Arg(8)->Arg(16);

static void BM_GeneratorForward(benchmark::State& state) {
  GeneratorConfig cfg;
  cfg.image_size = 64;
  ModelParams<float> g = build_generator<float>(cfg, 1);
  Rng rng(3);
  Tensor<float> img = Tensor<float>::randn(Shape(1, 3, 64, 64), rng, 0.2f);
  Tensor<float> grad = Tensor<float>::randn(Shape(1, 6, 64, 64), rng, 0.2f);
  Tensor<float> edge = Tensor<float>::randn(Shape(1, 1, 64, 64), rng, 0.2f);
  Tensor<float> mask(Shape(1, 1, 64, 64));
  for (auto _ : state)
    benchmark::DoNotOptimize(generator_forward(g, img, grad, edge, mask, cfg));
}
BENCHMARK(BM_GeneratorForward);

static void BM_TrainStep(benchmark::State& state) {
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.steps = 1;
  cfg.synth.count = 8;
  TrainState st = init_train_state(cfg);
  Dataset ds = build_dataset(cfg);
  RandomConvExtractor<float> fx(1);
  Rng rng(4);
  Batch batch = make_batch(ds, {0, 1}, cfg.mask, cfg.model.n_s, rng);
  for (auto _ : state) benchmark::DoNotOptimize(train_step(st, batch, cfg, fx));
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
