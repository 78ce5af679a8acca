#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "gcan/kernels.hpp"

namespace k = gcan::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    std::vector<double> v(n);
    for (double& x : v) x = d(rng);
    return v;
}

template <bool Parallel>
void BM_gemm(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const auto a = random_vec(static_cast<std::size_t>(n) * n, 1), b = random_vec(static_cast<std::size_t>(n) * n, 2);
    std::vector<double> c(static_cast<std::size_t>(n) * n);
    for (auto _ : state) {
        if constexpr (Parallel) k::gemm(false, false, n, n, n, a.data(), b.data(), c.data(), false);
        else k::reference::gemm(false, false, n, n, n, a.data(), b.data(), c.data(), false);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * 2LL * n * n * n);
}

// One classifier stage: `channels` in and out, 3x3, on a side x side map.
template <bool Parallel>
void BM_conv(benchmark::State& state) {
    k::ConvGeometry g;
    g.channels = static_cast<int>(state.range(0));
    g.height = g.width = static_cast<int>(state.range(1));
    const int out = g.channels;
    const auto x = random_vec(static_cast<std::size_t>(g.channels) * g.height * g.width, 3);
    const auto w = random_vec(static_cast<std::size_t>(out) * g.patch_size(), 4);
    const auto bias = random_vec(static_cast<std::size_t>(out), 5);
    std::vector<double> y(static_cast<std::size_t>(out) * g.out_height() * g.out_width());
    for (auto _ : state) {
        if constexpr (Parallel) k::conv2d(g, out, x.data(), w.data(), bias.data(), y.data());
        else k::reference::conv2d(g, out, x.data(), w.data(), bias.data(), y.data());
        benchmark::DoNotOptimize(y.data());
    }
}

}  // namespace

BENCHMARK(BM_gemm<true>)->Name("gemm/parallel")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_gemm<false>)->Name("gemm/reference")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_conv<true>)->Name("conv3x3/parallel")->Args({8, 80})->Args({16, 40})->Args({64, 10});
BENCHMARK(BM_conv<false>)->Name("conv3x3/reference")->Args({8, 80})->Args({16, 40})->Args({64, 10});

int main(int argc, char** argv) {
    k::configure_threads_from_env();
    benchmark::Initialize(&argc, argv);
    benchmark::RunSpecifiedBenchmarks();
    benchmark::Shutdown();
}
