#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "hikedim/cluster_tree.hpp"
#include "hikedim/kernel.hpp"

namespace hikedim {

struct CompressionParams {
  std::size_t leaf_size_max = 768;
  std::size_t rank_max = 768;
  double tolerance = 1e-3;  // cross-approximation pivot threshold, relative to the first pivot
  std::size_t kappa = 64;   // near-field neighbors per point; clamped to n - 1 internally
  std::size_t neighbor_exact_limit = kDenseLimitDefault;

  void validate() const;  // throws InvalidArgument
};

struct CompressionReport {
  double est_rel_error = 0.0;
  double compress_seconds = 0.0;
  std::size_t stored_scalars = 0;
  // ranks_per_level[l] lists the achieved rank of every sibling interaction
  // whose owning node sits at level l.
  std::vector<std::vector<std::uint32_t>> ranks_per_level;
};

// Compressed symmetric kernel operator
//
//   K~  =  D  +  S  +  sum over levels of U V
//
// in the cluster tree's permuted coordinates: exact dense diagonal blocks on
// the leaves (D), one low-rank factor pair per internal node coupling its two
// children (U V), and a sparse correction (S) that restores near-field entries
// on neighbor pairs straddling leaf boundaries. Each matrix position is
// covered by D or by exactly one U V block, so evaluation telescopes without
// double counting. Storage and one application are O(N log N) scalars.
//
// All public interfaces speak original (unpermuted) indices. Application
// results are bitwise independent of the thread count.
class HMatrix {
 public:
  struct LowRankBlock {
    std::uint32_t node = 0;  // internal node id owning this sibling interaction
    std::uint32_t rank = 0;
    // u: |A| x rank, column-major (term k's column contiguous).
    // v: rank x |B|, row-major (term k's row contiguous). Block value is u * v.
    std::vector<double> u, v;
  };

  std::size_t size() const noexcept { return tree_.size(); }
  const ClusterTree& tree() const noexcept { return tree_; }
  const CompressionParams& params() const noexcept { return params_; }

  // Total scalars held in D, S and all factor pairs.
  std::size_t stored_scalars() const noexcept;
  // Scalar multiply-adds in one application; proportional to matvec work.
  std::size_t apply_cost() const noexcept;

  // Single compressed entry, original coordinates.
  double entry(std::size_t i, std::size_t j) const;

  // y = K~ x for ncols stacked vectors; x and y are n x ncols row-major.
  void apply(const double* x, double* y, std::size_t ncols) const;

  Eigen::VectorXd matvec(const Eigen::VectorXd& x) const;
  std::vector<double> matvec(std::span<const double> x) const;
  // Column c of the result equals matvec of column c bit-for-bit.
  Eigen::MatrixXd matmat(const Eigen::MatrixXd& x) const;

  // Introspection (tests, serialization). Leaf blocks follow tree().leaves()
  // order and are row-major over the leaf's permuted range. The sparse part is
  // CSR over permuted rows with columns ascending.
  const std::vector<std::vector<double>>& leaf_blocks() const noexcept { return diag_; }
  const std::vector<LowRankBlock>& lowrank_blocks() const noexcept { return blocks_; }
  const std::vector<std::size_t>& sparse_indptr() const noexcept { return s_indptr_; }
  const std::vector<std::uint32_t>& sparse_cols() const noexcept { return s_cols_; }
  const std::vector<double>& sparse_vals() const noexcept { return s_vals_; }

 private:
  HMatrix() = default;

  ClusterTree tree_;
  CompressionParams params_;
  std::vector<std::vector<double>> diag_;
  std::vector<std::size_t> s_indptr_;
  std::vector<std::uint32_t> s_cols_;
  std::vector<double> s_vals_;
  std::vector<LowRankBlock> blocks_;   // ordered by owning node id
  std::vector<std::int64_t> block_of_node_;  // node id -> index into blocks_, -1 for leaves

  friend std::pair<HMatrix, CompressionReport> compress(const KernelSource&, ClusterTree,
                                                        const CompressionParams&, std::uint64_t);
  friend HMatrix load_hmatrix(const std::filesystem::path&);
};

// Builds the cluster tree from the kernel-induced metric, fills exact leaf
// blocks, fits every sibling interaction by adaptive cross approximation with
// partial pivoting (rank grows until the pivot falls under
// tolerance * first_pivot or rank_max), and stores near-field corrections for
// symmetrized neighbor pairs not covered by a leaf block, dropping exact
// zeros. The report's error field is a sampled estimate. Throws DataError if a
// touched kernel entry is non-finite.
std::pair<HMatrix, CompressionReport> compress(const KernelSource& kernel,
                                               const CompressionParams& params,
                                               std::uint64_t seed);

// Same, but reuses a prebuilt tree (must have matching size).
std::pair<HMatrix, CompressionReport> compress(const KernelSource& kernel, ClusterTree tree,
                                               const CompressionParams& params,
                                               std::uint64_t seed);

// Sampled relative Frobenius error sqrt(sum (K~ - K)^2 / sum K^2) over
// `samples` seeded index pairs; all n^2 pairs when samples >= n^2.
double estimate_rel_error(const HMatrix& h, const KernelSource& kernel, std::size_t samples,
                          std::uint64_t seed);

// Binary snapshot (magic "HKM1"): parameters, permutation and all block data,
// bit-exact, so a reloaded operator applies identically.
void save_hmatrix(const HMatrix& h, const std::filesystem::path& path);
HMatrix load_hmatrix(const std::filesystem::path& path);

}  // namespace hikedim
