#include "grokgeom/geometry.hpp"
#include "grokgeom/modular_data.hpp"
#include "grokgeom/params.hpp"
#include "grokgeom/transformer.hpp"

#include <benchmark/benchmark.h>

using namespace grokgeom;

namespace {

void BM_TrainingGradient(benchmark::State& state) {
  const Transformer model(ModelConfig{});
  const auto ds = build_dataset(Operation::Add, 97, 0.5, 137);
  const auto theta = model.init(137);
  const std::span<const Example> batch(ds.train.data(), static_cast<std::size_t>(state.range(0)));
  const auto loss = model.loss_fn(batch);
  for (auto _ : state) {
    auto vg = value_and_grad(loss, theta);
    benchmark::DoNotOptimize(vg.value);
  }
}
BENCHMARK(BM_TrainingGradient)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_FullEvaluation(benchmark::State& state) {
  const Transformer model(ModelConfig{});
  const auto ds = build_dataset(Operation::Add, 97, 0.5, 137);
  const auto theta = model.init(137);
  for (auto _ : state) {
    auto r = model.evaluate(theta, ds.test);
    benchmark::DoNotOptimize(r.loss);
  }
}
BENCHMARK(BM_FullEvaluation)->Unit(benchmark::kMillisecond);

// One defect sample: four full gradients on two batches.
void BM_CommutatorSample(benchmark::State& state) {
  const Transformer model(ModelConfig{});
  const auto ds = build_dataset(Operation::Add, 97, 0.5, 137);
  const auto theta = model.init(137);
  const std::span<const Example> a(ds.train.data(), 512), b(ds.train.data() + 512, 512);
  const auto la = model.loss_fn(a), lb = model.loss_fn(b);
  for (auto _ : state) {
    auto s = commutator_sample(theta, la, lb, 1e-3);
    benchmark::DoNotOptimize(s.defect);
  }
}
BENCHMARK(BM_CommutatorSample)->Unit(benchmark::kMillisecond);

// Random control basis: QR of a P x 16 Gaussian matrix.
void BM_RandomBasis(benchmark::State& state) {
  const std::size_t p = Transformer(ModelConfig{}).param_count();
  Rng rng(1);
  for (auto _ : state) {
    auto q = random_orthonormal_basis(p, 16, rng);
    benchmark::DoNotOptimize(q.data());
  }
}
BENCHMARK(BM_RandomBasis)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
