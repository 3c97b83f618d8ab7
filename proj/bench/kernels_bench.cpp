// Parallel kernels vs. the serial reference loops, plus one full training step.
#include <benchmark/benchmark.h>

#include "cmems/kernels.hpp"
#include "cmems/rng.hpp"
#include "cmems/toybench.hpp"
#include "cmems/trainer.hpp"

using namespace cmems;

namespace {

Tensor random_tensor(Shape4 s, std::uint64_t seed) {
    Tensor t(s);
    Rng rng(seed);
    for (auto& v : t.span()) v = static_cast<real>(rng.normal());
    return t;
}

std::vector<real> random_vec(std::size_t n, std::uint64_t seed) {
    std::vector<real> v(n);
    Rng rng(seed);
    for (auto& x : v) x = static_cast<real>(rng.normal(0.0, 0.1));
    return v;
}

template <bool Reference>
void BM_ConvForward(benchmark::State& st) {
    const int c = static_cast<int>(st.range(0)), hw = static_cast<int>(st.range(1));
    const Tensor x = random_tensor({4, c, hw, hw}, 1);
    const auto w = random_vec(static_cast<std::size_t>(c) * c * 9, 2);
    const std::vector<real> b(c, 0);
    Tensor y;
    for (auto _ : st) {
        if constexpr (Reference) kernels::reference::conv2d_forward(x, w, b, c, 3, y);
        else kernels::conv2d_forward(x, w, b, c, 3, y);
        benchmark::DoNotOptimize(y.data());
    }
}

template <bool Reference>
void BM_ConvBackward(benchmark::State& st) {
    const int c = static_cast<int>(st.range(0)), hw = static_cast<int>(st.range(1));
    const Tensor x = random_tensor({4, c, hw, hw}, 1);
    const Tensor dy = random_tensor({4, c, hw, hw}, 3);
    const auto w = random_vec(static_cast<std::size_t>(c) * c * 9, 2);
    std::vector<real> dw(w.size()), db(c);
    Tensor dx;
    for (auto _ : st) {
        if constexpr (Reference) kernels::reference::conv2d_backward(x, w, dy, 3, &dx, dw, db);
        else kernels::conv2d_backward(x, w, dy, 3, &dx, dw, db);
        benchmark::DoNotOptimize(dx.data());
    }
}

template <bool Reference>
void BM_BatchNorm(benchmark::State& st) {
    const int c = static_cast<int>(st.range(0)), hw = static_cast<int>(st.range(1));
    const Tensor x = random_tensor({4, c, hw, hw}, 1);
    const std::vector<real> g(c, 1), b(c, 0);
    Tensor y;
    std::vector<real> mean, var, invstd;
    for (auto _ : st) {
        if constexpr (Reference) kernels::reference::batchnorm_forward_train(x, g, b, real(1e-5), y, mean, var, invstd);
        else kernels::batchnorm_forward_train(x, g, b, real(1e-5), y, mean, var, invstd);
        benchmark::DoNotOptimize(y.data());
    }
}

void BM_TrainStep(benchmark::State& st) {
    ToySpec spec;
    const LoadedData data = generate_toy_data(spec);
    TrainConfig cfg;
    cfg.base_width = static_cast<int>(st.range(0));
    cfg.batch_size = static_cast<int>(st.range(1));
    const TrainData td = make_train_data(data, cfg);
    TrainState s = init_state(cfg, td.num_classes);
    for (auto _ : st) benchmark::DoNotOptimize(train_step(s, td, cfg).l_total);
}

}  // namespace

BENCHMARK_TEMPLATE(BM_ConvForward, false)->Args({16, 64})->Args({64, 16})->Unit(benchmark::kMicrosecond);
BENCHMARK_TEMPLATE(BM_ConvForward, true)->Args({16, 64})->Args({64, 16})->Unit(benchmark::kMicrosecond);
BENCHMARK_TEMPLATE(BM_ConvBackward, false)->Args({16, 64})->Args({64, 16})->Unit(benchmark::kMicrosecond);
BENCHMARK_TEMPLATE(BM_ConvBackward, true)->Args({16, 64})->Args({64, 16})->Unit(benchmark::kMicrosecond);
BENCHMARK_TEMPLATE(BM_BatchNorm, false)->Args({16, 64})->Unit(benchmark::kMicrosecond);
BENCHMARK_TEMPLATE(BM_BatchNorm, true)->Args({16, 64})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_TrainStep)->Args({16, 12})->Args({8, 4})->Args({4, 4})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
