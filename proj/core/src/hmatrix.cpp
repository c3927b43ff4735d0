#include "hikedim/hmatrix.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>

#include "hikedim/errors.hpp"
#include "hikedim/parallel.hpp"
#include "hikedim/random.hpp"

namespace hikedim {

void CompressionParams::validate() const {
  if (leaf_size_max == 0) throw InvalidArgument("leaf_size_max must be >= 1");
  if (rank_max == 0) throw InvalidArgument("rank_max must be >= 1");
  if (!(tolerance > 0.0) || !std::isfinite(tolerance))
    throw InvalidArgument("tolerance must be finite and > 0");
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double checked(double v) {
  if (!std::isfinite(v)) throw DataError("kernel produced a non-finite entry");
  return v;
}

// Cross approximation with partial pivoting for the block A x B of the
// permuted kernel. Terms are appended to u (column-major) and v (row-major)
// until the pivot drops under tol * first_pivot, rank_max is hit, or the rows
// are exhausted. Entirely zero blocks come back with rank 0.
std::uint32_t aca_block(const std::function<double(std::size_t, std::size_t)>& kf,
                        std::size_t alo, std::size_t asz, std::size_t blo, std::size_t bsz,
                        double tol, std::size_t rank_max, std::vector<double>& u,
                        std::vector<double>& v) {
  const std::size_t max_rank = std::min({rank_max, asz, bsz});
  std::vector<char> row_used(asz, 0);
  std::vector<double> row(bsz), col(asz);
  std::uint32_t rank = 0;
  double first_pivot = 0.0;
  std::size_t pivot_row = 0;

  while (rank < max_rank) {
    // Residual row at pivot_row; falls through unused rows while it is zero.
    std::size_t jmax = 0;
    double pmax = 0.0;
    bool have_row = false;
    while (!have_row) {
      for (std::size_t j = 0; j < bsz; ++j) row[j] = checked(kf(alo + pivot_row, blo + j));
      for (std::uint32_t k = 0; k < rank; ++k) {
        const double c = u[k * asz + pivot_row];
        const double* vk = v.data() + k * bsz;
        for (std::size_t j = 0; j < bsz; ++j) row[j] -= c * vk[j];
      }
      jmax = 0;
      pmax = 0.0;
      for (std::size_t j = 0; j < bsz; ++j) {
        const double a = std::abs(row[j]);
        if (a > pmax) {
          pmax = a;
          jmax = j;
        }
      }
      if (pmax > 0.0) {
        have_row = true;
      } else {
        row_used[pivot_row] = 1;
        std::size_t next = asz;
        for (std::size_t i = 0; i < asz; ++i)
          if (!row_used[i]) {
            next = i;
            break;
          }
        if (next == asz) return rank;  // residual vanished on every row
        pivot_row = next;
      }
    }

    if (rank == 0) {
      first_pivot = pmax;
    } else if (pmax <= tol * first_pivot) {
      return rank;
    }

    const double pivot = row[jmax];
    u.resize(u.size() + asz);
    v.resize(v.size() + bsz);
    double* uk = u.data() + static_cast<std::size_t>(rank) * asz;
    double* vk = v.data() + static_cast<std::size_t>(rank) * bsz;
    for (std::size_t j = 0; j < bsz; ++j) vk[j] = row[j] / pivot;
    for (std::size_t i = 0; i < asz; ++i) col[i] = checked(kf(alo + i, blo + jmax));
    for (std::uint32_t k = 0; k < rank; ++k) {
      const double c = v[k * bsz + jmax];
      const double* ukk = u.data() + k * asz;
      for (std::size_t i = 0; i < asz; ++i) col[i] -= c * ukk[i];
    }
    for (std::size_t i = 0; i < asz; ++i) uk[i] = col[i];

    row_used[pivot_row] = 1;
    ++rank;

    // Next pivot row: largest new-term magnitude among unused rows.
    double best = -1.0;
    std::size_t next = asz;
    for (std::size_t i = 0; i < asz; ++i) {
      if (row_used[i]) continue;
      const double a = std::abs(uk[i]);
      if (a > best) {
        best = a;
        next = i;
      }
    }
    if (next == asz) return rank;
    pivot_row = next;
  }
  return rank;
}

}  // namespace

std::size_t HMatrix::stored_scalars() const noexcept {
  std::size_t total = s_vals_.size();
  for (const auto& d : diag_) total += d.size();
  for (const auto& b : blocks_) total += b.u.size() + b.v.size();
  return total;
}

std::size_t HMatrix::apply_cost() const noexcept {
  std::size_t total = s_vals_.size();
  for (const auto& d : diag_) total += d.size();
  for (const auto& b : blocks_) total += 2 * (b.u.size() + b.v.size());
  return total;
}

double HMatrix::entry(std::size_t i, std::size_t j) const {
  const std::size_t n = size();
  if (i >= n || j >= n) throw InvalidArgument("entry index out of range");
  const std::size_t p = tree_.orig_to_tree()[i];
  const std::size_t q = tree_.orig_to_tree()[j];
  const auto& nodes = tree_.nodes();

  const std::uint32_t li = tree_.leaf_of(p);
  if (li == tree_.leaf_of(q)) {
    const auto& nd = nodes[tree_.leaves()[li]];
    return diag_[li][(p - nd.lo) * nd.count() + (q - nd.lo)];
  }

  // Descend to the internal node whose sibling interaction covers (p, q).
  std::uint32_t id = 0;
  while (true) {
    const auto& nd = nodes[id];
    const auto& l = nodes[static_cast<std::size_t>(nd.left)];
    if (p < l.hi && q < l.hi) {
      id = static_cast<std::uint32_t>(nd.left);
      continue;
    }
    if (p >= l.hi && q >= l.hi) {
      id = static_cast<std::uint32_t>(nd.right);
      continue;
    }
    break;
  }
  const auto& nd = nodes[id];
  const auto& l = nodes[static_cast<std::size_t>(nd.left)];
  const auto& r = nodes[static_cast<std::size_t>(nd.right)];
  std::size_t pa = p, qb = q;
  if (pa >= l.hi) std::swap(pa, qb);  // symmetric block, evaluate as A x B
  const auto& blk = blocks_[static_cast<std::size_t>(block_of_node_[id])];
  const std::size_t asz = l.count(), bsz = r.count();
  const std::size_t ia = pa - l.lo, jb = qb - r.lo;
  double val = 0.0;
  for (std::uint32_t k = 0; k < blk.rank; ++k) val += blk.u[k * asz + ia] * blk.v[k * bsz + jb];

  // Near-field correction, if this pair carries one.
  const auto lob = s_cols_.begin() + static_cast<std::ptrdiff_t>(s_indptr_[p]);
  const auto hib = s_cols_.begin() + static_cast<std::ptrdiff_t>(s_indptr_[p + 1]);
  const auto it = std::lower_bound(lob, hib, static_cast<std::uint32_t>(q));
  if (it != hib && *it == q) val += s_vals_[static_cast<std::size_t>(it - s_cols_.begin())];
  return val;
}

void HMatrix::apply(const double* x, double* y, std::size_t ncols) const {
  const std::size_t n = size();
  const std::size_t m = ncols;
  const auto& nodes = tree_.nodes();
  const auto& t2o = tree_.tree_to_orig();

  std::vector<double> xt(n * m), yt(n * m, 0.0);
  detail::parallel_chunks(n, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t p = lo; p < hi; ++p)
      std::copy_n(x + t2o[p] * m, m, xt.data() + p * m);
  });

  // Dense leaf blocks.
  const auto& leaves = tree_.leaves();
  detail::parallel_chunks(leaves.size(), [&](std::size_t llo, std::size_t lhi) {
    for (std::size_t li = llo; li < lhi; ++li) {
      const auto& nd = nodes[leaves[li]];
      const std::size_t sz = nd.count();
      const double* blk = diag_[li].data();
      for (std::size_t i = 0; i < sz; ++i) {
        double* yrow = yt.data() + (nd.lo + i) * m;
        const double* brow = blk + i * sz;
        for (std::size_t j = 0; j < sz; ++j) {
          const double a = brow[j];
          const double* xrow = xt.data() + (nd.lo + j) * m;
          for (std::size_t c = 0; c < m; ++c) yrow[c] += a * xrow[c];
        }
      }
    }
  });

  // Sibling interactions, coarse levels first. Nodes on one level own
  // disjoint ranges, so each level runs in parallel with disjoint writes.
  for (const auto& level : tree_.internal_by_level()) {
    detail::parallel_chunks(level.size(), [&](std::size_t blo_i, std::size_t bhi_i) {
      std::vector<double> t;
      for (std::size_t bi = blo_i; bi < bhi_i; ++bi) {
        const std::uint32_t id = level[bi];
        const auto& blk = blocks_[static_cast<std::size_t>(block_of_node_[id])];
        if (blk.rank == 0) continue;
        const auto& a = nodes[static_cast<std::size_t>(nodes[id].left)];
        const auto& b = nodes[static_cast<std::size_t>(nodes[id].right)];
        const std::size_t asz = a.count(), bsz = b.count(), r = blk.rank;
        t.assign(r * m, 0.0);

        // t = V x_B ; y_A += U t
        for (std::size_t k = 0; k < r; ++k) {
          const double* vk = blk.v.data() + k * bsz;
          double* trow = t.data() + k * m;
          for (std::size_t j = 0; j < bsz; ++j) {
            const double c = vk[j];
            const double* xrow = xt.data() + (b.lo + j) * m;
            for (std::size_t cc = 0; cc < m; ++cc) trow[cc] += c * xrow[cc];
          }
        }
        for (std::size_t k = 0; k < r; ++k) {
          const double* uk = blk.u.data() + k * asz;
          const double* trow = t.data() + k * m;
          for (std::size_t i = 0; i < asz; ++i) {
            const double c = uk[i];
            double* yrow = yt.data() + (a.lo + i) * m;
            for (std::size_t cc = 0; cc < m; ++cc) yrow[cc] += c * trow[cc];
          }
        }

        // t = U^T x_A ; y_B += V^T t
        t.assign(r * m, 0.0);
        for (std::size_t k = 0; k < r; ++k) {
          const double* uk = blk.u.data() + k * asz;
          double* trow = t.data() + k * m;
          for (std::size_t i = 0; i < asz; ++i) {
            const double c = uk[i];
            const double* xrow = xt.data() + (a.lo + i) * m;
            for (std::size_t cc = 0; cc < m; ++cc) trow[cc] += c * xrow[cc];
          }
        }
        for (std::size_t k = 0; k < r; ++k) {
          const double* vk = blk.v.data() + k * bsz;
          const double* trow = t.data() + k * m;
          for (std::size_t j = 0; j < bsz; ++j) {
            const double c = vk[j];
            double* yrow = yt.data() + (b.lo + j) * m;
            for (std::size_t cc = 0; cc < m; ++cc) yrow[cc] += c * trow[cc];
          }
        }
      }
    });
  }

  // Near-field corrections; rows are independent.
  if (!s_vals_.empty()) {
    detail::parallel_chunks(n, [&](std::size_t lo, std::size_t hi) {
      for (std::size_t p = lo; p < hi; ++p) {
        double* yrow = yt.data() + p * m;
        for (std::size_t idx = s_indptr_[p]; idx < s_indptr_[p + 1]; ++idx) {
          const double a = s_vals_[idx];
          const double* xrow = xt.data() + static_cast<std::size_t>(s_cols_[idx]) * m;
          for (std::size_t c = 0; c < m; ++c) yrow[c] += a * xrow[c];
        }
      }
    });
  }

  detail::parallel_chunks(n, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t p = lo; p < hi; ++p)
      std::copy_n(yt.data() + p * m, m, y + t2o[p] * m);
  });
}

Eigen::VectorXd HMatrix::matvec(const Eigen::VectorXd& x) const {
  if (static_cast<std::size_t>(x.size()) != size())
    throw InvalidArgument("matvec operand has wrong length");
  Eigen::VectorXd y(x.size());
  apply(x.data(), y.data(), 1);
  return y;
}

std::vector<double> HMatrix::matvec(std::span<const double> x) const {
  if (x.size() != size()) throw InvalidArgument("matvec operand has wrong length");
  std::vector<double> y(x.size());
  apply(x.data(), y.data(), 1);
  return y;
}

Eigen::MatrixXd HMatrix::matmat(const Eigen::MatrixXd& x) const {
  if (static_cast<std::size_t>(x.rows()) != size())
    throw InvalidArgument("matmat operand has wrong row count");
  const std::size_t n = size();
  const std::size_t m = static_cast<std::size_t>(x.cols());
  // Row-major staging keeps every column's arithmetic identical to matvec.
  std::vector<double> xr(n * m), yr(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < m; ++c) xr[i * m + c] = x(static_cast<Eigen::Index>(i),
                                                         static_cast<Eigen::Index>(c));
  apply(xr.data(), yr.data(), m);
  Eigen::MatrixXd y(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < m; ++c)
      y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = yr[i * m + c];
  return y;
}

std::pair<HMatrix, CompressionReport> compress(const KernelSource& kernel,
                                               const CompressionParams& params,
                                               std::uint64_t seed) {
  params.validate();
  const std::size_t n = kernel.size();
  if (n == 0) throw InvalidArgument("kernel is empty");
  const DistanceFn dist = [&kernel](std::size_t i, std::size_t j) {
    const double d2 = kernel.entry(i, i) + kernel.entry(j, j) - 2.0 * kernel.entry(i, j);
    if (!std::isfinite(d2)) throw DataError("kernel produced a non-finite entry");
    return d2;
  };
  ClusterTree tree = ClusterTree::build(dist, n, params.leaf_size_max, seed);
  return compress(kernel, std::move(tree), params, seed);
}

std::pair<HMatrix, CompressionReport> compress(const KernelSource& kernel, ClusterTree tree,
                                               const CompressionParams& params,
                                               std::uint64_t seed) {
  params.validate();
  const std::size_t n = kernel.size();
  if (n == 0) throw InvalidArgument("kernel is empty");
  if (tree.size() != n) throw InvalidArgument("tree size does not match kernel size");
  const auto t0 = Clock::now();

  HMatrix h;
  h.tree_ = std::move(tree);
  h.params_ = params;
  const ClusterTree& tr = h.tree_;
  const auto& nodes = tr.nodes();
  const auto& t2o = tr.tree_to_orig();
  const auto kf = [&](std::size_t p, std::size_t q) { return kernel.entry(t2o[p], t2o[q]); };

  // Exact dense diagonal blocks on the leaves.
  const auto& leaves = tr.leaves();
  h.diag_.resize(leaves.size());
  detail::parallel_chunks(leaves.size(), [&](std::size_t llo, std::size_t lhi) {
    for (std::size_t li = llo; li < lhi; ++li) {
      const auto& nd = nodes[leaves[li]];
      const std::size_t sz = nd.count();
      auto& blk = h.diag_[li];
      blk.resize(sz * sz);
      for (std::size_t i = 0; i < sz; ++i)
        for (std::size_t j = 0; j < sz; ++j)
          blk[i * sz + j] = checked(kf(nd.lo + i, nd.lo + j));
    }
  });

  // One cross approximation per sibling interaction, level by level.
  h.block_of_node_.assign(nodes.size(), -1);
  std::size_t n_internal = 0;
  for (const auto& lvl : tr.internal_by_level()) n_internal += lvl.size();
  h.blocks_.resize(n_internal);
  {
    std::size_t next = 0;
    for (const auto& lvl : tr.internal_by_level())
      for (std::uint32_t id : lvl) {
        h.block_of_node_[id] = static_cast<std::int64_t>(next);
        h.blocks_[next].node = id;
        ++next;
      }
  }
  for (const auto& lvl : tr.internal_by_level()) {
    detail::parallel_chunks(lvl.size(), [&](std::size_t blo, std::size_t bhi) {
      for (std::size_t bi = blo; bi < bhi; ++bi) {
        const std::uint32_t id = lvl[bi];
        auto& blk = h.blocks_[static_cast<std::size_t>(h.block_of_node_[id])];
        const auto& a = nodes[static_cast<std::size_t>(nodes[id].left)];
        const auto& b = nodes[static_cast<std::size_t>(nodes[id].right)];
        blk.rank = aca_block(kf, a.lo, a.count(), b.lo, b.count(), params.tolerance,
                             params.rank_max, blk.u, blk.v);
      }
    });
  }

  // Near-field corrections on symmetrized neighbor pairs that straddle leaves.
  h.s_indptr_.assign(n + 1, 0);
  const std::size_t kappa = std::min(params.kappa, n - 1);
  if (kappa >= 1 && !h.blocks_.empty()) {
    const DistanceFn dist = [&kernel](std::size_t i, std::size_t j) {
      const double d2 = kernel.entry(i, i) + kernel.entry(j, j) - 2.0 * kernel.entry(i, j);
      if (!std::isfinite(d2)) throw DataError("kernel produced a non-finite entry");
      return d2;
    };
    const std::vector<std::size_t> nbr =
        neighbor_lists(dist, tr, kappa, params.neighbor_exact_limit);

    const auto& o2t = tr.orig_to_tree();
    std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
    pairs.reserve(n * kappa);
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t p = static_cast<std::uint32_t>(o2t[i]);
      for (std::size_t q = 0; q < kappa; ++q) {
        const std::uint32_t pj = static_cast<std::uint32_t>(o2t[nbr[i * kappa + q]]);
        if (tr.leaf_of(p) == tr.leaf_of(pj)) continue;
        pairs.emplace_back(std::min(p, pj), std::max(p, pj));
      }
    }
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());

    // Correction = true entry minus the covering low-rank prediction.
    std::vector<double> corr(pairs.size());
    detail::parallel_chunks(pairs.size(), [&](std::size_t lo, std::size_t hi) {
      for (std::size_t e = lo; e < hi; ++e) {
        const std::size_t p = pairs[e].first, q = pairs[e].second;
        std::uint32_t id = 0;
        while (true) {
          const auto& nd = nodes[id];
          const auto& l = nodes[static_cast<std::size_t>(nd.left)];
          if (p < l.hi && q < l.hi) {
            id = static_cast<std::uint32_t>(nd.left);
            continue;
          }
          if (p >= l.hi && q >= l.hi) {
            id = static_cast<std::uint32_t>(nd.right);
            continue;
          }
          break;
        }
        const auto& l = nodes[static_cast<std::size_t>(nodes[id].left)];
        const auto& r = nodes[static_cast<std::size_t>(nodes[id].right)];
        const auto& blk = h.blocks_[static_cast<std::size_t>(h.block_of_node_[id])];
        const std::size_t asz = l.count(), bsz = r.count();
        const std::size_t ia = p - l.lo, jb = q - r.lo;  // p < q, so p is in A
        double pred = 0.0;
        for (std::uint32_t k = 0; k < blk.rank; ++k)
          pred += blk.u[k * asz + ia] * blk.v[k * bsz + jb];
        corr[e] = checked(kf(p, q)) - pred;
      }
    });

    // CSR with both orientations; exact zeros are dropped.
    std::vector<std::size_t> counts(n, 0);
    for (std::size_t e = 0; e < pairs.size(); ++e) {
      if (corr[e] == 0.0) continue;
      ++counts[pairs[e].first];
      ++counts[pairs[e].second];
    }
    for (std::size_t p = 0; p < n; ++p) h.s_indptr_[p + 1] = h.s_indptr_[p] + counts[p];
    h.s_cols_.resize(h.s_indptr_[n]);
    h.s_vals_.resize(h.s_indptr_[n]);
    std::vector<std::size_t> cursor(h.s_indptr_.begin(), h.s_indptr_.end() - 1);
    for (std::size_t e = 0; e < pairs.size(); ++e) {
      if (corr[e] == 0.0) continue;
      const std::uint32_t p = pairs[e].first, q = pairs[e].second;
      h.s_cols_[cursor[p]] = q;
      h.s_vals_[cursor[p]++] = corr[e];
      h.s_cols_[cursor[q]] = p;
      h.s_vals_[cursor[q]++] = corr[e];
    }
    // Rows were appended in pair order; make columns ascending per row.
    detail::parallel_chunks(n, [&](std::size_t lo, std::size_t hi) {
      std::vector<std::pair<std::uint32_t, double>> rowbuf;
      for (std::size_t p = lo; p < hi; ++p) {
        const std::size_t b = h.s_indptr_[p], e = h.s_indptr_[p + 1];
        if (e - b < 2) continue;
        rowbuf.clear();
        for (std::size_t idx = b; idx < e; ++idx) rowbuf.emplace_back(h.s_cols_[idx], h.s_vals_[idx]);
        std::sort(rowbuf.begin(), rowbuf.end(),
                  [](const auto& x, const auto& y) { return x.first < y.first; });
        for (std::size_t idx = b; idx < e; ++idx) {
          h.s_cols_[idx] = rowbuf[idx - b].first;
          h.s_vals_[idx] = rowbuf[idx - b].second;
        }
      }
    });
  }

  CompressionReport report;
  report.stored_scalars = h.stored_scalars();
  report.ranks_per_level.assign(tr.depth(), {});
  for (std::uint32_t l = 0; l < tr.depth(); ++l)
    if (l < tr.internal_by_level().size())
      for (std::uint32_t id : tr.internal_by_level()[l])
        report.ranks_per_level[l].push_back(
            h.blocks_[static_cast<std::size_t>(h.block_of_node_[id])].rank);
  report.compress_seconds = seconds_since(t0);
  const std::size_t cap = n > 6400 ? 40000 : n * n;
  report.est_rel_error = estimate_rel_error(h, kernel, cap, mix_seed(seed, 0xE57));
  return {std::move(h), std::move(report)};
}

double estimate_rel_error(const HMatrix& h, const KernelSource& kernel, std::size_t samples,
                          std::uint64_t seed) {
  if (samples == 0) throw InvalidArgument("error estimate needs samples >= 1");
  const std::size_t n = h.size();
  if (kernel.size() != n) throw InvalidArgument("kernel size does not match operator");
  double num = 0.0, den = 0.0;
  const bool full = n <= 65535 && samples >= n * n;
  if (full) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double kv = kernel.entry(i, j);
        const double diff = h.entry(i, j) - kv;
        num += diff * diff;
        den += kv * kv;
      }
  } else {
    std::mt19937_64 g(seed);
    for (std::size_t s = 0; s < samples; ++s) {
      const std::size_t i = static_cast<std::size_t>(g() % n);
      const std::size_t j = static_cast<std::size_t>(g() % n);
      const double kv = kernel.entry(i, j);
      const double diff = h.entry(i, j) - kv;
      num += diff * diff;
      den += kv * kv;
    }
  }
  if (den == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return std::sqrt(num / den);
}

}  // namespace hikedim
