// Serial reference kernels against their blocked / parallel counterparts.
// Thread count for the parallel kernels is the benchmark argument.

#include <benchmark/benchmark.h>

#include "expocnn/kernels.hpp"
#include "expocnn/model.hpp"
#include "expocnn/parallel.hpp"
#include "expocnn/rng.hpp"

using namespace expocnn;

namespace {

Tensor random_tensor(const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(shape);
  for (float& v : t.data()) v = static_cast<float>(rng.uniform(-1, 1));
  return t;
}

// Second conv of the default architecture: 32x32x32 -> 64 filters, 3x3, pad 1.
struct ConvCase {
  Tensor x = random_tensor({32, 32, 32}, 1);
  Tensor w = random_tensor({64, 32, 3, 3}, 2);
  Tensor b = random_tensor({64}, 3);
};

void BM_ConvNaive(benchmark::State& state) {
  const ConvCase c;
  for (auto _ : state) benchmark::DoNotOptimize(conv2d_naive(c.x, c.w, c.b, 1, 1));
  state.SetItemsProcessed(state.iterations() * 64 * 32 * 32 * 32 * 9 * 2);
}
BENCHMARK(BM_ConvNaive)->Unit(benchmark::kMillisecond);

void BM_ConvFast(benchmark::State& state) {
  set_threads(static_cast<int>(state.range(0)));
  const ConvCase c;
  for (auto _ : state) benchmark::DoNotOptimize(conv2d_fast(c.x, c.w, c.b, 1, 1));
  state.SetItemsProcessed(state.iterations() * 64 * 32 * 32 * 32 * 9 * 2);
}
BENCHMARK(BM_ConvFast)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_MatmulReference(benchmark::State& state) {
  const Dim n = state.range(0);
  const Tensor a = random_tensor({n, n}, 4), b = random_tensor({n, n}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(matmul_reference(a, b));
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_MatmulReference)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_Matmul(benchmark::State& state) {
  const Dim n = state.range(0);
  set_threads(static_cast<int>(state.range(1)));
  const Tensor a = random_tensor({n, n}, 4), b = random_tensor({n, n}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_Matmul)->Args({128, 1})->Args({512, 1})->Args({512, 4})->Unit(benchmark::kMillisecond);

// One training step's worth of work on the default architecture, batch 32.
void BM_ForwardBackwardBatch(benchmark::State& state) {
  set_threads(static_cast<int>(state.range(0)));
  const Model<float> m = Model<float>::initialize(ArchSpec::default_arch(), 1);
  std::vector<Tensor> images;
  for (std::uint64_t i = 0; i < 32; ++i) images.push_back(random_tensor({1, 64, 64}, 10 + i));
  const Tensor gb = random_tensor({32, 8}, 6), ge = random_tensor({32, 10}, 7);
  for (auto _ : state) {
    const auto out = model_forward_batch(m, std::span<const Tensor>(images));
    benchmark::DoNotOptimize(model_backward_batch(m, out.trace, gb, ge));
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_ForwardBackwardBatch)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
