// Microbenchmarks for the compression pipeline on 6-D uniform clouds:
// cluster-tree build, compression, compressed evaluation, and the full
// diffusion pipeline, with a dense matvec as the scale reference.

#include <benchmark/benchmark.h>

#include <hikedim/cluster_tree.hpp>
#include <hikedim/diffusion.hpp>
#include <hikedim/hmatrix.hpp>
#include <hikedim/kernel.hpp>
#include <hikedim/point_cloud.hpp>

#include <Eigen/Core>

#include <cstddef>
#include <map>
#include <vector>

namespace {

using namespace hikedim;

const PointCloud& cloud(std::size_t n) {
  static std::map<std::size_t, PointCloud> cache;
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, generate_uniform(n, 6, 11)).first;
  return it->second;
}

double bandwidth(std::size_t n) {
  static std::map<std::size_t, double> cache;
  auto it = cache.find(n);
  if (it == cache.end())
    it = cache.emplace(n, median_sigma(cloud(n), std::min<std::size_t>(n, 1000))).first;
  return it->second;
}

const HMatrix& compressed(std::size_t n) {
  static std::map<std::size_t, HMatrix> cache;
  auto it = cache.find(n);
  if (it == cache.end()) {
    const GaussianKernel kernel(cloud(n), bandwidth(n));
    it = cache.emplace(n, compress(kernel, CompressionParams{}, 0).first).first;
  }
  return it->second;
}

void bm_tree_build(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const GaussianKernel kernel(cloud(n), bandwidth(n));
  const auto d2 = [&kernel](std::size_t i, std::size_t j) {
    return kernel.entry(i, i) + kernel.entry(j, j) - 2.0 * kernel.entry(i, j);
  };
  for (auto _ : state) {
    ClusterTree tree = ClusterTree::build(d2, n, CompressionParams{}.leaf_size_max, 0);
    benchmark::DoNotOptimize(tree);
  }
}
BENCHMARK(bm_tree_build)->Arg(1024)->Arg(4096)->Arg(16384)->Unit(benchmark::kMillisecond);

void bm_compress(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const GaussianKernel kernel(cloud(n), bandwidth(n));
  for (auto _ : state) {
    auto [h, report] = compress(kernel, CompressionParams{}, 0);
    benchmark::DoNotOptimize(h);
  }
}
BENCHMARK(bm_compress)->Arg(1024)->Arg(2048)->Arg(4096)->Arg(8192)
    ->Unit(benchmark::kMillisecond);

void bm_matvec(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const HMatrix& h = compressed(n);
  const std::vector<double> x(n, 1.0);
  for (auto _ : state) {
    std::vector<double> y = h.matvec(std::span<const double>(x));
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(bm_matvec)->Arg(1024)->Arg(2048)->Arg(4096)->Arg(8192)->Arg(16384)
    ->Unit(benchmark::kMillisecond);

void bm_matmat8(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const HMatrix& h = compressed(n);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(n), 8);
  for (auto _ : state) {
    Eigen::MatrixXd y = h.matmat(x);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(bm_matmat8)->Arg(1024)->Arg(4096)->Arg(16384)->Unit(benchmark::kMillisecond);

void bm_dense_matvec(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const DenseKernel dense = gaussian_kernel(cloud(n), bandwidth(n));
  const Eigen::VectorXd x = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
  for (auto _ : state) {
    Eigen::VectorXd y = dense.entries * x;
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(bm_dense_matvec)->Arg(1024)->Arg(2048)->Arg(4096)->Unit(benchmark::kMillisecond);

void bm_diffusion_pipeline(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  DiffusionParams p;
  p.backend = Backend::kLanczosHMatrix;
  p.compression.leaf_size_max = 256;
  p.compression.rank_max = 128;
  p.compression.tolerance = 1e-4;
  p.compression.kappa = 32;
  for (auto _ : state) {
    DiffusionModel m = diffusion_map(cloud(n), p);
    benchmark::DoNotOptimize(m);
  }
}
BENCHMARK(bm_diffusion_pipeline)->Arg(1024)->Arg(4096)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
