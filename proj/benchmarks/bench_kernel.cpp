#include <benchmark/benchmark.h>

#include "dmgp/cholesky.hpp"
#include "dmgp/kernel.hpp"
#include "dmgp/rng.hpp"

static void BM_KernelCross(benchmark::State& state) {
  const auto n = static_cast<Eigen::Index>(state.range(0));
  dmgp::Rng rng(42);
  dmgp::SeArdKernel k(4);
  const Eigen::MatrixXd x = rng.normal_matrix(n, 4);
  const Eigen::MatrixXd z = rng.normal_matrix(20, 4);
  for (auto _ : state) {
    benchmark::DoNotOptimize(k.cross(x, z));
  }
}
BENCHMARK(BM_KernelCross)->Arg(64)->Arg(256)->Arg(1024);

static void BM_CholeskyJitter(benchmark::State& state) {
  const auto n = static_cast<Eigen::Index>(state.range(0));
  dmgp::Rng rng(42);
  dmgp::SeArdKernel k(4);
  const Eigen::MatrixXd x = rng.normal_matrix(n, 4);
  const Eigen::MatrixXd gram = k.cross(x, x);
  for (auto _ : state) {
    benchmark::DoNotOptimize(dmgp::cholesky(gram));
  }
}
BENCHMARK(BM_CholeskyJitter)->Arg(20)->Arg(50);

BENCHMARK_MAIN();
