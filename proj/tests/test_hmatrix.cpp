#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "hikedim/cluster_tree.hpp"
#include "hikedim/errors.hpp"
#include "hikedim/hmatrix.hpp"
#include "hikedim/kernel.hpp"
#include "hikedim/parallel.hpp"
#include "hikedim/point_cloud.hpp"

using namespace hikedim;
namespace fs = std::filesystem;

namespace {

Eigen::MatrixXd dense_entries(const HMatrix& h) {
  const Eigen::Index n = static_cast<Eigen::Index>(h.size());
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      m(i, j) = h.entry(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
  return m;
}

Eigen::MatrixXd dense_kernel(const KernelSource& k) {
  const Eigen::Index n = static_cast<Eigen::Index>(k.size());
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      m(i, j) = k.entry(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
  return m;
}

std::size_t recount_scalars(const HMatrix& h) {
  std::size_t total = h.sparse_vals().size();
  for (const auto& blk : h.leaf_blocks()) total += blk.size();
  for (const auto& lr : h.lowrank_blocks()) total += lr.u.size() + lr.v.size();
  return total;
}

Eigen::VectorXd random_vector(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::VectorXd x(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = u(g);
  return x;
}

}  // namespace

TEST_CASE("identity kernel compresses to exact diagonal blocks") {
  const std::size_t n = 600;
  const CallbackKernel k(n, [](std::size_t i, std::size_t j) { return i == j ? 1.0 : 0.0; });
  CompressionParams params;
  params.leaf_size_max = 64;
  params.rank_max = 32;
  params.kappa = 8;
  auto [h, report] = compress(k, params, 1);

  for (const auto& lr : h.lowrank_blocks()) {
    CHECK(lr.rank == 0);
    CHECK(lr.u.empty());
    CHECK(lr.v.empty());
  }
  CHECK(h.sparse_vals().empty());

  std::size_t diag_total = 0;
  for (const auto& blk : h.leaf_blocks()) diag_total += blk.size();
  CHECK(h.stored_scalars() == diag_total);

  const Eigen::VectorXd x = random_vector(n, 7);
  const Eigen::VectorXd y = h.matvec(x);
  for (Eigen::Index i = 0; i < y.size(); ++i) CHECK(y[i] == x[i]);

  CHECK(h.entry(3, 3) == 1.0);
  CHECK(h.entry(3, 599) == 0.0);
  CHECK(report.est_rel_error == 0.0);
}

TEST_CASE("rank one kernel is captured by rank one factors") {
  const std::size_t n = 512;
  std::vector<double> a(n);
  std::mt19937_64 g(3);
  for (double& v : a) v = 0.5 + (static_cast<double>(g() >> 11) * 0x1.0p-53);
  const CallbackKernel k(n, [&a](std::size_t i, std::size_t j) { return a[i] * a[j]; });
  CompressionParams params;
  params.leaf_size_max = 64;
  params.rank_max = 16;
  params.kappa = 4;
  auto [h, report] = compress(k, params, 5);

  for (const auto& lr : h.lowrank_blocks()) CHECK(lr.rank == 1);

  const Eigen::MatrixXd reconstructed = dense_entries(h);
  const Eigen::MatrixXd truth = dense_kernel(k);
  CHECK((reconstructed - truth).norm() / truth.norm() <= 1e-12);
  CHECK(report.est_rel_error <= 1e-12);
}

TEST_CASE("gaussian kernel operator at moderate size") {
  const std::size_t n = 1024;
  const PointCloud pc = generate_uniform(n, 3, 11);
  const double sigma = median_sigma(pc, n);
  const GaussianKernel k(pc, sigma);
  CompressionParams params;
  params.leaf_size_max = 128;
  params.rank_max = 128;
  params.tolerance = 1e-3;
  params.kappa = 32;
  auto [h, report] = compress(k, params, 42);

  SUBCASE("matvec agrees with the entry accessor") {
    const Eigen::MatrixXd kt = dense_entries(h);
    const Eigen::VectorXd x = random_vector(n, 1);
    const Eigen::VectorXd y = h.matvec(x);
    const Eigen::VectorXd y_ref = kt * x;
    CHECK((y - y_ref).norm() / y_ref.norm() <= 1e-11);
  }

  SUBCASE("reconstruction error meets the tolerance target") {
    const double full = estimate_rel_error(h, k, n * n, 0);
    CHECK(full <= 1e-2);
    CHECK(report.est_rel_error <= 1e-2);
    // The exhaustive sweep must agree with a direct dense computation.
    const Eigen::MatrixXd diff = dense_entries(h) - dense_kernel(k);
    const double direct = diff.norm() / dense_kernel(k).norm();
    CHECK(full == doctest::Approx(direct).epsilon(1e-12));
  }

  SUBCASE("compressed operator is exactly symmetric") {
    std::mt19937_64 g(9);
    for (int trial = 0; trial < 500; ++trial) {
      const std::size_t i = g() % n, j = g() % n;
      CHECK(h.entry(i, j) == h.entry(j, i));
    }
  }

  SUBCASE("application is linear") {
    const Eigen::VectorXd x = random_vector(n, 2), y = random_vector(n, 3);
    const Eigen::VectorXd lhs = h.matvec((1.5 * x - 0.25 * y).eval());
    const Eigen::VectorXd rhs = 1.5 * h.matvec(x) - 0.25 * h.matvec(y);
    CHECK((lhs - rhs).norm() <= 1e-12 * rhs.norm() + 1e-300);
  }

  SUBCASE("results do not depend on the thread count") {
    const Eigen::VectorXd x = random_vector(n, 4);
    set_thread_count(1);
    const Eigen::VectorXd y1 = h.matvec(x);
    set_thread_count(4);
    const Eigen::VectorXd y4 = h.matvec(x);
    set_thread_count(0);
    for (Eigen::Index i = 0; i < y1.size(); ++i) CHECK(y1[i] == y4[i]);
  }

  SUBCASE("matmat columns match matvec bit for bit") {
    Eigen::MatrixXd xs(n, 3);
    xs.col(0) = random_vector(n, 5);
    xs.col(1) = random_vector(n, 6);
    xs.col(2) = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    const Eigen::MatrixXd ys = h.matmat(xs);
    for (int c = 0; c < 3; ++c) {
      const Eigen::VectorXd y = h.matvec(xs.col(c).eval());
      for (Eigen::Index i = 0; i < y.size(); ++i) CHECK(ys(i, c) == y[i]);
    }
  }

  SUBCASE("applying the identity reproduces the stored entries") {
    const std::size_t m = 96;  // first m columns of the identity
    Eigen::MatrixXd eye = Eigen::MatrixXd::Zero(n, m);
    for (std::size_t c = 0; c < m; ++c) eye(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(c)) = 1.0;
    const Eigen::MatrixXd cols = h.matmat(eye);
    for (std::size_t c = 0; c < m; ++c)
      for (std::size_t i = 0; i < n; ++i)
        CHECK(cols(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) ==
              doctest::Approx(h.entry(i, c)).epsilon(1e-13));
  }

  SUBCASE("near field corrections straddle leaves and improve accuracy") {
    CHECK(!h.sparse_vals().empty());
    // Every correction row/col pair crosses a leaf boundary.
    const auto& tr = h.tree();
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t e = h.sparse_indptr()[p]; e < h.sparse_indptr()[p + 1]; ++e)
        CHECK(tr.leaf_of(p) != tr.leaf_of(h.sparse_cols()[e]));

    // With a deliberately crude far field, corrections must help.
    CompressionParams crude = params;
    crude.rank_max = 2;
    crude.tolerance = 0.5;
    auto [h_corr, r1] = compress(k, crude, 42);
    crude.kappa = 0;  // disables the sparse part
    auto [h_bare, r2] = compress(k, crude, 42);
    CHECK(h_bare.sparse_vals().empty());
    const double e_corr = estimate_rel_error(h_corr, k, 20000, 8);
    const double e_bare = estimate_rel_error(h_bare, k, 20000, 8);
    CHECK(e_corr < e_bare);
  }

  SUBCASE("save and load round trip bit-exactly") {
    const fs::path p = fs::temp_directory_path() / "hikedim_test_op.hkm";
    save_hmatrix(h, p);
    const HMatrix back = load_hmatrix(p);
    CHECK(back.size() == h.size());
    CHECK(back.stored_scalars() == h.stored_scalars());
    CHECK(back.tree().tree_to_orig() == h.tree().tree_to_orig());
    const Eigen::VectorXd x = random_vector(n, 10);
    const Eigen::VectorXd y0 = h.matvec(x), y1 = back.matvec(x);
    for (Eigen::Index i = 0; i < y0.size(); ++i) CHECK(y0[i] == y1[i]);
    std::mt19937_64 g(12);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t i = g() % n, j = g() % n;
      CHECK(back.entry(i, j) == h.entry(i, j));
    }

    // Truncation and a corrupt magic must be rejected.
    const auto full = fs::file_size(p);
    fs::resize_file(p, full / 2);
    CHECK_THROWS_AS(load_hmatrix(p), FormatError);
    {
      std::ofstream out(p, std::ios::binary | std::ios::trunc);
      out << "XXXX" << std::string(64, '\0');
    }
    CHECK_THROWS_AS(load_hmatrix(p), FormatError);
    fs::remove(p);
    CHECK_THROWS_AS(load_hmatrix(p), IoError);
  }
}

TEST_CASE("default parameters on a six dimensional cloud") {
  const std::size_t n = 4096;
  const PointCloud pc = generate_uniform(n, 6, 123);
  const double sigma = median_sigma(pc, 1000);
  const GaussianKernel k(pc, sigma);
  const CompressionParams params;  // defaults: leaf 768, rank 768, tol 1e-3, kappa 64
  auto [h, report] = compress(k, params, 0);

  CHECK(report.est_rel_error <= 1e-2);
  CHECK(h.stored_scalars() == recount_scalars(h));
  CHECK(h.apply_cost() < 2 * n * n);
  CHECK(report.compress_seconds > 0.0);

  // One rank entry per internal node, organized by level.
  const auto& tr = h.tree();
  REQUIRE(report.ranks_per_level.size() == tr.depth());
  for (std::size_t lvl = 0; lvl < report.ranks_per_level.size(); ++lvl)
    CHECK(report.ranks_per_level[lvl].size() == tr.internal_by_level()[lvl].size());
  for (const auto& lr : h.lowrank_blocks()) CHECK(lr.rank <= params.rank_max);
}

TEST_CASE("storage grows far slower than dense") {
  const PointCloud pc = generate_uniform(2048, 3, 6);
  CompressionParams params;
  params.leaf_size_max = 128;
  params.rank_max = 64;
  params.kappa = 16;
  const double sigma = median_sigma(pc, 1000);

  PointCloud half(std::vector<double>(pc.data().begin(), pc.data().begin() + 1024 * 3), 1024, 3);
  auto [h1, r1] = compress(GaussianKernel(half, sigma), params, 2);
  auto [h2, r2] = compress(GaussianKernel(pc, sigma), params, 2);
  CHECK(h2.stored_scalars() < 3 * h1.stored_scalars());
  CHECK(h2.stored_scalars() < 2048 * 2048 / 2);
}

TEST_CASE("reusing a prebuilt tree gives the identical operator") {
  const std::size_t n = 300;
  const PointCloud pc = generate_uniform(n, 3, 8);
  const GaussianKernel k(pc, 0.5);
  CompressionParams params;
  params.leaf_size_max = 32;
  params.rank_max = 32;
  params.kappa = 8;

  auto [h_auto, ra] = compress(k, params, 17);
  // Same metric, same seed: the internal build is reproduced exactly.
  const DistanceFn d2 = [&k](std::size_t i, std::size_t j) {
    return k.entry(i, i) + k.entry(j, j) - 2.0 * k.entry(i, j);
  };
  const ClusterTree tree = ClusterTree::build(d2, n, params.leaf_size_max, 17);
  auto [h_tree, rt] = compress(k, tree, params, 17);

  CHECK(h_auto.tree().tree_to_orig() == h_tree.tree().tree_to_orig());
  const Eigen::VectorXd x = random_vector(n, 0);
  const Eigen::VectorXd ya = h_auto.matvec(x), yt = h_tree.matvec(x);
  for (Eigen::Index i = 0; i < ya.size(); ++i) CHECK(ya[i] == yt[i]);
}

TEST_CASE("relabeling the points relabels the operator") {
  // Compress the same physical kernel under a permuted labeling; every entry
  // and matvec must transport through the relabeling unchanged.
  const std::size_t n = 300;
  const PointCloud pc = generate_uniform(n, 3, 14);
  const GaussianKernel k(pc, 0.6);
  CompressionParams params;
  params.leaf_size_max = 32;
  params.rank_max = 32;
  params.kappa = 8;

  std::vector<std::size_t> relabel(n);
  for (std::size_t i = 0; i < n; ++i) relabel[i] = i;
  std::shuffle(relabel.begin(), relabel.end(), std::mt19937_64(44));

  const CallbackKernel k2(
      n, [&](std::size_t i, std::size_t j) { return k.entry(relabel[i], relabel[j]); });

  const DistanceFn d2 = [&k](std::size_t i, std::size_t j) {
    return k.entry(i, i) + k.entry(j, j) - 2.0 * k.entry(i, j);
  };
  const ClusterTree tree = ClusterTree::build(d2, n, params.leaf_size_max, 21);
  auto [h, r0] = compress(k, tree, params, 21);

  // Transported tree: position p holds the same physical point as before.
  std::vector<std::size_t> inverse(n);
  for (std::size_t i = 0; i < n; ++i) inverse[relabel[i]] = i;
  std::vector<std::size_t> transported(n);
  for (std::size_t p = 0; p < n; ++p) transported[p] = inverse[tree.tree_to_orig()[p]];
  auto [h2, r2] = compress(k2, ClusterTree::from_permutation(transported, params.leaf_size_max),
                           params, 21);

  std::mt19937_64 g(5);
  for (int trial = 0; trial < 400; ++trial) {
    const std::size_t i = g() % n, j = g() % n;
    CHECK(h2.entry(i, j) == h.entry(relabel[i], relabel[j]));
  }

  const Eigen::VectorXd x = random_vector(n, 30);
  Eigen::VectorXd x2(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) x2[static_cast<Eigen::Index>(i)] = x[static_cast<Eigen::Index>(relabel[i])];
  const Eigen::VectorXd y = h.matvec(x), y2 = h2.matvec(x2);
  for (std::size_t i = 0; i < n; ++i)
    CHECK(y2[static_cast<Eigen::Index>(i)] == y[static_cast<Eigen::Index>(relabel[i])]);
}

TEST_CASE("single leaf stores the dense kernel exactly") {
  const std::size_t n = 100;
  const PointCloud pc = generate_uniform(n, 2, 1);
  const GaussianKernel k(pc, 0.4);
  CompressionParams params;
  params.leaf_size_max = 256;
  auto [h, report] = compress(k, params, 0);
  CHECK(h.lowrank_blocks().empty());
  CHECK(h.sparse_vals().empty());
  CHECK(h.leaf_blocks().size() == 1);
  const Eigen::MatrixXd truth = dense_kernel(k);
  const Eigen::VectorXd x = random_vector(n, 2);
  const Eigen::VectorXd y = h.matvec(x), y_ref = truth * x;
  CHECK((y - y_ref).norm() / y_ref.norm() <= 1e-13);
  CHECK(report.est_rel_error <= 1e-15);
}

TEST_CASE("small clouds clamp the neighbor count") {
  const PointCloud pc = generate_uniform(10, 2, 3);
  const GaussianKernel k(pc, 0.5);
  CompressionParams params;
  params.leaf_size_max = 2;
  params.rank_max = 4;
  params.kappa = 64;  // far more than n - 1
  auto [h, report] = compress(k, params, 1);
  const Eigen::MatrixXd kt = dense_entries(h);
  const Eigen::VectorXd x = random_vector(10, 4);
  CHECK((h.matvec(x) - kt * x).norm() <= 1e-12);
}

TEST_CASE("invalid inputs are rejected") {
  const PointCloud pc = generate_uniform(64, 2, 0);
  const GaussianKernel k(pc, 0.5);

  CompressionParams bad;
  bad.leaf_size_max = 0;
  CHECK_THROWS_AS(compress(k, bad, 0), InvalidArgument);
  bad = CompressionParams{};
  bad.rank_max = 0;
  CHECK_THROWS_AS(compress(k, bad, 0), InvalidArgument);
  bad = CompressionParams{};
  bad.tolerance = 0.0;
  CHECK_THROWS_AS(compress(k, bad, 0), InvalidArgument);

  CompressionParams params;
  params.leaf_size_max = 16;
  const DistanceFn d2 = [&k](std::size_t i, std::size_t j) {
    return k.entry(i, i) + k.entry(j, j) - 2.0 * k.entry(i, j);
  };
  const ClusterTree wrong = ClusterTree::build(d2, 64, 16, 0);
  const PointCloud other = generate_uniform(32, 2, 1);
  CHECK_THROWS_AS(compress(GaussianKernel(other, 0.5), wrong, params, 0), InvalidArgument);

  const CallbackKernel poisoned(64, [](std::size_t i, std::size_t j) {
    return (i == 2 && j == 3) || (j == 2 && i == 3) ? std::nan("") : (i == j ? 1.0 : 0.1);
  });
  CHECK_THROWS_AS(compress(poisoned, params, 0), DataError);

  auto [h, report] = compress(k, params, 0);
  CHECK_THROWS_AS(h.entry(64, 0), InvalidArgument);
  CHECK_THROWS_AS(h.matvec(Eigen::VectorXd::Zero(63)), InvalidArgument);
  CHECK_THROWS_AS(h.matmat(Eigen::MatrixXd::Zero(63, 2)), InvalidArgument);
  CHECK_THROWS_AS(estimate_rel_error(h, k, 0, 0), InvalidArgument);
  CHECK_THROWS_AS(estimate_rel_error(h, GaussianKernel(other, 0.5), 10, 0), InvalidArgument);
}
