#include "hikedim/cluster_tree.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "hikedim/errors.hpp"
#include "hikedim/parallel.hpp"
#include "hikedim/random.hpp"

namespace hikedim {

namespace {

// Farthest point from `from` within order[lo, hi); ties go to the smallest
// original index so builds are reproducible even under heavy distance ties.
std::size_t farthest(const DistanceFn& dist, const std::vector<std::size_t>& order,
                     std::size_t lo, std::size_t hi, std::size_t from) {
  double best = -1.0;
  std::size_t best_idx = order[lo];
  for (std::size_t p = lo; p < hi; ++p) {
    const std::size_t i = order[p];
    const double d = dist(from, i);
    if (d > best || (d == best && i < best_idx)) {
      best = d;
      best_idx = i;
    }
  }
  return best_idx;
}

}  // namespace

ClusterTree ClusterTree::build(const DistanceFn& dist, std::size_t n, std::size_t leaf_size_max,
                               std::uint64_t seed) {
  if (n == 0) throw InvalidArgument("cluster tree needs n >= 1");
  if (leaf_size_max == 0) throw InvalidArgument("leaf_size_max must be >= 1");

  ClusterTree t;
  t.leaf_size_max_ = leaf_size_max;
  t.tree_to_orig_.resize(n);
  for (std::size_t i = 0; i < n; ++i) t.tree_to_orig_[i] = i;

  t.nodes_.push_back(TreeNode{0, 0, n, -1, -1});
  std::vector<double> score;  // reused per split
  std::vector<std::size_t> scratch;

  // Iterative preorder split; each range's randomness is seeded from the
  // range itself, so the tree does not depend on traversal order.
  std::vector<std::uint32_t> stack{0};
  while (!stack.empty()) {
    const std::uint32_t id = stack.back();
    stack.pop_back();
    const std::size_t lo = t.nodes_[id].lo, hi = t.nodes_[id].hi;
    const std::size_t m = hi - lo;
    if (m <= leaf_size_max) continue;

    std::mt19937_64 g(mix_seed(seed, (static_cast<std::uint64_t>(lo) << 21) ^ hi));
    const std::size_t p = t.tree_to_orig_[lo + static_cast<std::size_t>(g() % m)];
    const std::size_t a = farthest(dist, t.tree_to_orig_, lo, hi, p);
    const std::size_t b = farthest(dist, t.tree_to_orig_, lo, hi, a);

    score.resize(m);
    for (std::size_t q = 0; q < m; ++q) {
      const std::size_t i = t.tree_to_orig_[lo + q];
      score[q] = dist(i, a) - dist(i, b);
    }
    scratch.resize(m);
    for (std::size_t q = 0; q < m; ++q) scratch[q] = q;
    std::sort(scratch.begin(), scratch.end(), [&](std::size_t x, std::size_t y) {
      if (score[x] != score[y]) return score[x] < score[y];
      return t.tree_to_orig_[lo + x] < t.tree_to_orig_[lo + y];
    });
    std::vector<std::size_t> reordered(m);
    for (std::size_t q = 0; q < m; ++q) reordered[q] = t.tree_to_orig_[lo + scratch[q]];
    std::copy(reordered.begin(), reordered.end(), t.tree_to_orig_.begin() + lo);

    // Left child takes the extra point, keeping sibling sizes within 1.
    const std::size_t mid = lo + (m + 1) / 2;
    const std::uint32_t level = t.nodes_[id].level + 1;
    const std::uint32_t lid = static_cast<std::uint32_t>(t.nodes_.size());
    t.nodes_.push_back(TreeNode{level, lo, mid, -1, -1});
    const std::uint32_t rid = static_cast<std::uint32_t>(t.nodes_.size());
    t.nodes_.push_back(TreeNode{level, mid, hi, -1, -1});
    t.nodes_[id].left = lid;
    t.nodes_[id].right = rid;
    stack.push_back(rid);
    stack.push_back(lid);
  }

  t.finalize();
  return t;
}

ClusterTree ClusterTree::from_permutation(std::vector<std::size_t> tree_to_orig,
                                          std::size_t leaf_size_max) {
  const std::size_t n = tree_to_orig.size();
  if (n == 0) throw InvalidArgument("cluster tree needs n >= 1");
  if (leaf_size_max == 0) throw InvalidArgument("leaf_size_max must be >= 1");
  std::vector<bool> seen(n, false);
  for (std::size_t v : tree_to_orig) {
    if (v >= n || seen[v]) throw InvalidArgument("tree_to_orig is not a permutation of [0, n)");
    seen[v] = true;
  }

  ClusterTree t;
  t.leaf_size_max_ = leaf_size_max;
  t.tree_to_orig_ = std::move(tree_to_orig);
  t.nodes_.push_back(TreeNode{0, 0, n, -1, -1});
  std::vector<std::uint32_t> stack{0};
  while (!stack.empty()) {
    const std::uint32_t id = stack.back();
    stack.pop_back();
    const std::size_t lo = t.nodes_[id].lo, hi = t.nodes_[id].hi;
    const std::size_t m = hi - lo;
    if (m <= leaf_size_max) continue;
    const std::size_t mid = lo + (m + 1) / 2;
    const std::uint32_t level = t.nodes_[id].level + 1;
    const std::uint32_t lid = static_cast<std::uint32_t>(t.nodes_.size());
    t.nodes_.push_back(TreeNode{level, lo, mid, -1, -1});
    const std::uint32_t rid = static_cast<std::uint32_t>(t.nodes_.size());
    t.nodes_.push_back(TreeNode{level, mid, hi, -1, -1});
    t.nodes_[id].left = lid;
    t.nodes_[id].right = rid;
    stack.push_back(rid);
    stack.push_back(lid);
  }
  t.finalize();
  return t;
}

void ClusterTree::finalize() {
  const std::size_t n = tree_to_orig_.size();
  orig_to_tree_.resize(n);
  for (std::size_t p = 0; p < n; ++p) orig_to_tree_[tree_to_orig_[p]] = p;

  depth_ = 0;
  leaves_.clear();
  for (std::uint32_t id = 0; id < nodes_.size(); ++id) {
    depth_ = std::max(depth_, nodes_[id].level);
    if (nodes_[id].is_leaf()) leaves_.push_back(id);
  }
  std::sort(leaves_.begin(), leaves_.end(),
            [&](std::uint32_t a, std::uint32_t b) { return nodes_[a].lo < nodes_[b].lo; });
  leaf_index_of_pos_.assign(n, 0);
  for (std::uint32_t li = 0; li < leaves_.size(); ++li)
    for (std::size_t p = nodes_[leaves_[li]].lo; p < nodes_[leaves_[li]].hi; ++p)
      leaf_index_of_pos_[p] = li;

  internal_by_level_.assign(depth_ + 1, {});
  for (std::uint32_t id = 0; id < nodes_.size(); ++id)
    if (!nodes_[id].is_leaf()) internal_by_level_[nodes_[id].level].push_back(id);
  for (auto& lvl : internal_by_level_)
    std::sort(lvl.begin(), lvl.end(),
              [&](std::uint32_t a, std::uint32_t b) { return nodes_[a].lo < nodes_[b].lo; });
}

namespace {

struct Cand {
  double d;
  std::size_t idx;
  bool operator<(const Cand& o) const { return d != o.d ? d < o.d : idx < o.idx; }
};

void select_kappa(std::vector<Cand>& cands, std::size_t kappa, std::size_t* out) {
  std::nth_element(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(kappa - 1),
                   cands.end());
  std::sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(kappa));
  for (std::size_t q = 0; q < kappa; ++q) out[q] = cands[q].idx;
}

}  // namespace

std::vector<std::size_t> neighbor_lists(const DistanceFn& dist, const ClusterTree& tree,
                                        std::size_t kappa, std::size_t exact_limit) {
  const std::size_t n = tree.size();
  if (kappa < 1 || kappa >= n) throw InvalidArgument("neighbor lists need 1 <= kappa < n");

  std::vector<std::size_t> out(n * kappa);
  const auto& t2o = tree.tree_to_orig();

  if (n <= exact_limit) {
    detail::parallel_chunks(n, [&](std::size_t lo, std::size_t hi) {
      std::vector<Cand> cands;
      cands.reserve(n - 1);
      for (std::size_t i = lo; i < hi; ++i) {
        cands.clear();
        for (std::size_t j = 0; j < n; ++j)
          if (j != i) cands.push_back({dist(i, j), j});
        select_kappa(cands, kappa, out.data() + i * kappa);
      }
    });
    return out;
  }

  // Approximate: candidates from the point's own leaf and the sibling leaf
  // subtree, widened through ancestors only when still smaller than kappa + 1.
  const auto& nodes = tree.nodes();
  std::vector<std::int64_t> parent(nodes.size(), -1);
  for (std::size_t id = 0; id < nodes.size(); ++id) {
    if (!nodes[id].is_leaf()) {
      parent[static_cast<std::size_t>(nodes[id].left)] = static_cast<std::int64_t>(id);
      parent[static_cast<std::size_t>(nodes[id].right)] = static_cast<std::int64_t>(id);
    }
  }

  const auto& leaves = tree.leaves();
  detail::parallel_chunks(leaves.size(), [&](std::size_t llo, std::size_t lhi) {
    std::vector<Cand> cands;
    for (std::size_t li = llo; li < lhi; ++li) {
      const std::uint32_t leaf = leaves[li];
      // Closest enclosing range with enough members; normally the parent's.
      std::int64_t scope = parent[leaf] < 0 ? leaf : parent[leaf];
      while (nodes[static_cast<std::size_t>(scope)].count() < kappa + 1 &&
             parent[static_cast<std::size_t>(scope)] >= 0)
        scope = parent[static_cast<std::size_t>(scope)];
      const std::size_t clo = nodes[static_cast<std::size_t>(scope)].lo;
      const std::size_t chi = nodes[static_cast<std::size_t>(scope)].hi;

      for (std::size_t p = nodes[leaf].lo; p < nodes[leaf].hi; ++p) {
        const std::size_t i = t2o[p];
        cands.clear();
        for (std::size_t q = clo; q < chi; ++q) {
          const std::size_t j = t2o[q];
          if (j != i) cands.push_back({dist(i, j), j});
        }
        select_kappa(cands, kappa, out.data() + i * kappa);
      }
    }
  });
  return out;
}

}  // namespace hikedim
