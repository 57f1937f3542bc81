// Microbenchmarks for the hot paths: convolution forward, softmax, a full
// forward pass, one supervised training step (forward + backward + AdamW),
// and the pseudo-label builder that dominates the bridging stages.

#include <benchmark/benchmark.h>

#include "ddb/bridging.hpp"
#include "ddb/mixing.hpp"
#include "ddb/model.hpp"
#include "ddb/ops.hpp"
#include "ddb/rng.hpp"
#include "ddb/tensor.hpp"

namespace {

using namespace ddb;

Tensor random_image(int size, RngState& rng) {
  Tensor x = Tensor::zeros({size, size, 3});
  for (double& v : x.raw()) v = rng.uniform();
  return x;
}

void BM_Conv2dForward(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  RngState rng(1);
  Tensor x = random_image(size, rng);
  Tensor k = Tensor::zeros({3, 3, 3, 16});
  Tensor b = Tensor::zeros({16});
  for (double& v : k.raw()) v = rng.normal(0.0, 0.1);
  for (auto _ : state) {
    Tensor y = conv2d(x, k, b, 2, 1);
    benchmark::DoNotOptimize(y.raw().data());
  }
  state.SetItemsProcessed(state.iterations() * x.numel());
}
BENCHMARK(BM_Conv2dForward)->Arg(32)->Arg(64);

void BM_Softmax(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  RngState rng(2);
  Tensor logits = Tensor::zeros({size, size, 6});
  for (double& v : logits.raw()) v = rng.normal(0.0, 2.0);
  for (auto _ : state) {
    Tensor p = softmax(logits, 2);
    benchmark::DoNotOptimize(p.raw().data());
  }
  state.SetItemsProcessed(state.iterations() * logits.numel());
}
BENCHMARK(BM_Softmax)->Arg(64);

void BM_ModelForward(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  RngState rng(3);
  SegModel model(ArchDescriptor{}, 6, rng);
  Tensor x = random_image(size, rng);
  for (auto _ : state) {
    SegModel::Output out = model.forward(x);
    benchmark::DoNotOptimize(out.logits.raw().data());
  }
}
BENCHMARK(BM_ModelForward)->Arg(64);

void BM_SupervisedStep(benchmark::State& state) {
  RngState rng(4);
  SegModel model(ArchDescriptor{}, 6, rng);
  AdamW opt(model, OptimizerConfig{});
  Tensor x = random_image(64, rng);
  LabelMap y(64, 64);
  for (uint8_t& id : y.ids) id = static_cast<uint8_t>(rng.uniform_int(6));
  Tensor onehot = onehot_from_labels(y, 6);
  for (auto _ : state) {
    model.zero_grads();
    Tensor loss =
        cross_entropy(softmax(model.forward(x).logits, 2), onehot);
    backward(loss);
    opt.step();
    benchmark::DoNotOptimize(loss.raw().data());
  }
}
BENCHMARK(BM_SupervisedStep);

void BM_PseudoLabels(benchmark::State& state) {
  RngState rng(5);
  SegModel model(ArchDescriptor{}, 6, rng);
  Tensor x = random_image(64, rng);
  for (auto _ : state) {
    PseudoLabelPack pack = make_pseudo_labels(model, x, 0.968);
    benchmark::DoNotOptimize(pack.m_t);
  }
}
BENCHMARK(BM_PseudoLabels);

}  // namespace

BENCHMARK_MAIN();
