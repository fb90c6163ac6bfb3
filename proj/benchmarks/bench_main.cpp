#include <benchmark/benchmark.h>

#include <vector>

#include "lungnet/backbone.hpp"
#include "lungnet/gemm.hpp"
#include "lungnet/head.hpp"
#include "lungnet/kernels.hpp"
#include "lungnet/rng.hpp"

using namespace lungnet;

namespace {

std::vector<float> random_values(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<float> v(n);
    for (float& x : v) x = static_cast<float>(rng.uniform(-1, 1));
    return v;
}

Tensor4 random_tensor(Shape4 shape, std::uint64_t seed) {
    Tensor4 t(shape);
    Rng rng(seed);
    for (float& x : t.data()) x = static_cast<float>(rng.uniform(-1, 1));
    return t;
}

void BM_Gemm(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto a = random_values(n * n, 1), b = random_values(n * n, 2);
    std::vector<float> c(n * n);
    for (auto _ : state) {
        gemm(n, n, n, a.data(), n, b.data(), n, c.data(), n);
        benchmark::DoNotOptimize(c.data());
    }
    state.counters["FLOP/s"] =
        benchmark::Counter(2.0 * n * n * n, benchmark::Counter::kIsIterationInvariantRate, benchmark::Counter::kIs1000);
}
BENCHMARK(BM_Gemm)->Arg(64)->Arg(256)->Arg(512);

// A stage-3 style 3×3 convolution: 14×14×256 → 14×14×256.
ConvParams conv3x3(std::size_t c) {
    ConvParams p;
    p.kh = p.kw = 3;
    p.c_in = p.c_out = c;
    p.kernel = random_values(9 * c * c, 3);
    p.padding = Padding::same();
    return p;
}

void BM_Conv3x3(benchmark::State& state) {
    const ConvParams p = conv3x3(256);
    const Tensor4 x = random_tensor({1, 14, 14, 256}, 4);
    for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, p));
}
BENCHMARK(BM_Conv3x3)->Unit(benchmark::kMillisecond);

void BM_Conv3x3Direct(benchmark::State& state) {
    const ConvParams p = conv3x3(256);
    const Tensor4 x = random_tensor({1, 14, 14, 256}, 4);
    for (auto _ : state) benchmark::DoNotOptimize(conv2d_direct(x, p));
}
BENCHMARK(BM_Conv3x3Direct)->Unit(benchmark::kMillisecond);

void BM_BackboneForward(benchmark::State& state) {
    static const BackboneGraph graph = build_resnet50v2(random_resnet50v2_store(1));
    const Tensor4 x = random_tensor({1, kInputSize, kInputSize, 3}, 5);
    for (auto _ : state) benchmark::DoNotOptimize(graph.forward_features(x));
    state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_BackboneForward)->Unit(benchmark::kMillisecond)->MinTime(2.0);

void BM_HeadTrainStep(benchmark::State& state) {
    const TrainConfig cfg;
    HeadParams params = init_head(0);
    OptimizerState opt = OptimizerState::create(params, cfg.optimizer);
    const Matrix x(cfg.batch_size, kFeatureWidth, random_values(cfg.batch_size * kFeatureWidth, 6));
    std::vector<int> labels(cfg.batch_size);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % kNumClasses);
    for (auto _ : state) benchmark::DoNotOptimize(train_step(params, opt, x, labels, cfg));
}
BENCHMARK(BM_HeadTrainStep)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
