// Serial reference kernels vs their OpenMP counterparts on encoder-sized
// shapes. Thread count follows OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include <vector>

#include "crl/kernels/omp.hpp"
#include "crl/kernels/serial.hpp"
#include "crl/rng.hpp"

namespace k = crl::kernels;

namespace {

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
  crl::Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(crl::normal(rng));
  return v;
}

// Second block of the default encoder at batch 64: 8 -> 16 channels on 32x32.
k::ConvShape conv_shape(const benchmark::State& st) {
  return {static_cast<std::size_t>(st.range(0)), 8, 16, 32, 32};
}

template <bool Omp>
void BM_ConvForward(benchmark::State& st) {
  const auto s = conv_shape(st);
  const auto x = random_vec(s.input_size(), 1), w = random_vec(s.weight_size(), 2), b = random_vec(s.out_ch, 3);
  std::vector<float> y(s.output_size());
  for (auto _ : st) {
    if constexpr (Omp) k::omp::conv3x3_forward<float>(s, x, w, b, y);
    else k::serial::conv3x3_forward<float>(s, x, w, b, y);
    benchmark::DoNotOptimize(y.data());
  }
  st.SetItemsProcessed(st.iterations() * static_cast<long>(s.output_size() * s.in_ch * 9));
}

template <bool Omp>
void BM_ConvBackward(benchmark::State& st) {
  const auto s = conv_shape(st);
  const auto x = random_vec(s.input_size(), 1), w = random_vec(s.weight_size(), 2), dy = random_vec(s.output_size(), 4);
  std::vector<float> dx(s.input_size()), dw(s.weight_size()), db(s.out_ch);
  for (auto _ : st) {
    if constexpr (Omp) k::omp::conv3x3_backward<float>(s, x, w, dy, dx, dw, db);
    else k::serial::conv3x3_backward<float>(s, x, w, dy, dx, dw, db);
    benchmark::DoNotOptimize(dx.data());
  }
}

template <bool Omp>
void BM_BatchNormTrain(benchmark::State& st) {
  const k::NormShape s{static_cast<std::size_t>(st.range(0)), 16, 32 * 32};
  const auto x = random_vec(s.size(), 1);
  const std::vector<float> gamma(16, 1.0f), beta(16, 0.0f);
  std::vector<float> y(s.size()), mean(16), inv_std(16);
  for (auto _ : st) {
    if constexpr (Omp) k::omp::batchnorm_forward_train<float>(s, x, gamma, beta, 1e-5f, y, mean, inv_std);
    else k::serial::batchnorm_forward_train<float>(s, x, gamma, beta, 1e-5f, y, mean, inv_std);
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Omp>
void BM_Dense(benchmark::State& st) {
  const k::DenseShape s{static_cast<std::size_t>(st.range(0)), 128, 128};
  const auto x = random_vec(s.batch * s.in, 1), w = random_vec(s.in * s.out, 2), b = random_vec(s.out, 3);
  std::vector<float> y(s.batch * s.out);
  for (auto _ : st) {
    if constexpr (Omp) k::omp::dense_forward<float>(s, x, w, b, y);
    else k::serial::dense_forward<float>(s, x, w, b, y);
    benchmark::DoNotOptimize(y.data());
  }
}

}  // namespace

BENCHMARK(BM_ConvForward<false>)->Name("conv3x3_forward/serial")->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvForward<true>)->Name("conv3x3_forward/omp")->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward<false>)->Name("conv3x3_backward/serial")->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward<true>)->Name("conv3x3_backward/omp")->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BatchNormTrain<false>)->Name("batchnorm_train/serial")->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BatchNormTrain<true>)->Name("batchnorm_train/omp")->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Dense<false>)->Name("dense_forward/serial")->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Dense<true>)->Name("dense_forward/omp")->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
