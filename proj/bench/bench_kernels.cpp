// Serial reference kernels against their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "csasr/kernels.hpp"

namespace {

std::vector<double> random_vec(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1, 1);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

template <auto Gemm>
void BM_gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vec(n * n, 1), b = random_vec(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    Gemm(n, n, n, a, b, c, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 2 * n * n * n));
}

template <auto Conv>
void BM_conv2d(benchmark::State& state) {
  csasr::kernels::Conv2dGeometry g;
  g.height = static_cast<std::size_t>(state.range(0));
  g.width = 80;
  g.in_channels = 1;
  g.out_channels = 64;
  const auto x = random_vec(g.height * g.width, 3);
  const auto w = random_vec(g.out_channels * 9, 4), bias = random_vec(g.out_channels, 5);
  std::vector<double> y(g.out_height() * g.out_width() * g.out_channels);
  for (auto _ : state) {
    Conv(g, x, w, bias, y);
    benchmark::DoNotOptimize(y.data());
  }
}

template <auto Softmax>
void BM_softmax(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0)), cols = std::size_t{256};
  const auto x = random_vec(rows * cols, 6);
  std::vector<double> y(rows * cols);
  for (auto _ : state) {
    Softmax(rows, cols, x, y);
    benchmark::DoNotOptimize(y.data());
  }
}

namespace k = csasr::kernels;
BENCHMARK(BM_gemm<k::serial::gemm_nn>)->Name("gemm/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_gemm<k::omp::gemm_nn>)->Name("gemm/omp")->Arg(64)->Arg(256);
BENCHMARK(BM_conv2d<k::serial::conv2d_forward>)->Name("conv2d/serial")->Arg(200);
BENCHMARK(BM_conv2d<k::omp::conv2d_forward>)->Name("conv2d/omp")->Arg(200);
BENCHMARK(BM_softmax<k::serial::softmax_rows>)->Name("softmax/serial")->Arg(512);
BENCHMARK(BM_softmax<k::omp::softmax_rows>)->Name("softmax/omp")->Arg(512);

}  // namespace

BENCHMARK_MAIN();
