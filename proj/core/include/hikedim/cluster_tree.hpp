#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

namespace hikedim {

// Pairwise dissimilarity on point indices. Must be symmetric, nonnegative and
// zero on the diagonal; values are used only for nearness comparisons and
// boundary ordering, so any squared metric works. The compressor passes the
// kernel-induced d2(i, j) = K(i,i) + K(j,j) - 2 K(i,j), which never touches
// point coordinates.
using DistanceFn = std::function<double(std::size_t, std::size_t)>;

struct TreeNode {
  std::uint32_t level = 0;        // root is level 0
  std::size_t lo = 0, hi = 0;     // half-open range in tree (permuted) order
  std::int64_t left = -1, right = -1;  // child node ids, -1 when leaf
  bool is_leaf() const noexcept { return left < 0; }
  std::size_t count() const noexcept { return hi - lo; }
};

// Balanced binary partition of [0, n) built by recursive farthest-point
// splits: a seeded random point p, its farthest point a, a's farthest point b,
// then the range is ordered by dist(i, a) - dist(i, b) and cut in half (left
// child gets the extra point for odd counts). Splitting stops once a range
// fits in leaf_size_max. Identical inputs give identical trees.
class ClusterTree {
 public:
  ClusterTree() = default;  // empty; fill via build or from_permutation

  static ClusterTree build(const DistanceFn& dist, std::size_t n, std::size_t leaf_size_max,
                           std::uint64_t seed);

  // Rebuilds the node structure implied by (perm.size(), leaf_size_max); node
  // ranges depend only on sizes, so a stored permutation restores the tree.
  static ClusterTree from_permutation(std::vector<std::size_t> tree_to_orig,
                                      std::size_t leaf_size_max);

  std::size_t size() const noexcept { return tree_to_orig_.size(); }
  std::size_t leaf_size_max() const noexcept { return leaf_size_max_; }
  std::uint32_t depth() const noexcept { return depth_; }

  const std::vector<TreeNode>& nodes() const noexcept { return nodes_; }
  const std::vector<std::uint32_t>& leaves() const noexcept { return leaves_; }
  // Internal node ids grouped by level, ascending; every id on a level owns a
  // sibling interaction between its two children.
  const std::vector<std::vector<std::uint32_t>>& internal_by_level() const noexcept {
    return internal_by_level_;
  }

  const std::vector<std::size_t>& tree_to_orig() const noexcept { return tree_to_orig_; }
  const std::vector<std::size_t>& orig_to_tree() const noexcept { return orig_to_tree_; }

  // Index into leaves() of the leaf whose range contains tree position p.
  std::uint32_t leaf_of(std::size_t p) const { return leaf_index_of_pos_[p]; }

 private:
  void finalize();

  std::size_t leaf_size_max_ = 0;
  std::uint32_t depth_ = 0;
  std::vector<TreeNode> nodes_;
  std::vector<std::uint32_t> leaves_;
  std::vector<std::vector<std::uint32_t>> internal_by_level_;
  std::vector<std::size_t> tree_to_orig_;
  std::vector<std::size_t> orig_to_tree_;
  std::vector<std::uint32_t> leaf_index_of_pos_;
};

// kappa nearest neighbors of every point (self excluded), flattened row-major:
// row i holds the neighbor indices of point i, nearest first, ties broken by
// index. Exact (full scan) when n <= exact_limit; above that, candidates are
// the point's own leaf plus its sibling leaf, widened through ancestors only
// when that set is smaller than kappa. Indices are original, not permuted.
// Requires 1 <= kappa < n.
std::vector<std::size_t> neighbor_lists(const DistanceFn& dist, const ClusterTree& tree,
                                        std::size_t kappa, std::size_t exact_limit);

}  // namespace hikedim
