#include <cstdint>
#include <cstring>
#include <fstream>

#include "hikedim/errors.hpp"
#include "hikedim/hmatrix.hpp"

namespace hikedim {

namespace {

constexpr char kMagic[4] = {'H', 'K', 'M', '1'};

void put_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), 8);
}
void put_f64(std::ostream& out, double v) { out.write(reinterpret_cast<const char*>(&v), 8); }

std::uint64_t get_u64(std::istream& in) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 8)) throw FormatError("truncated operator file");
  return v;
}
double get_f64(std::istream& in) {
  double v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 8)) throw FormatError("truncated operator file");
  return v;
}
void get_f64s(std::istream& in, double* dst, std::size_t count) {
  if (!in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(count * 8)))
    throw FormatError("truncated operator file");
}

}  // namespace

void save_hmatrix(const HMatrix& h, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(kMagic, 4);

  const auto& p = h.params();
  put_u64(out, h.size());
  put_u64(out, p.leaf_size_max);
  put_u64(out, p.rank_max);
  put_f64(out, p.tolerance);
  put_u64(out, p.kappa);
  put_u64(out, p.neighbor_exact_limit);

  for (std::size_t i : h.tree().tree_to_orig()) put_u64(out, i);

  const auto& diag = h.leaf_blocks();
  put_u64(out, diag.size());
  for (const auto& d : diag) {
    put_u64(out, d.size());
    out.write(reinterpret_cast<const char*>(d.data()),
              static_cast<std::streamsize>(d.size() * 8));
  }

  put_u64(out, h.sparse_vals().size());
  for (std::size_t i = 0; i <= h.size(); ++i) put_u64(out, h.sparse_indptr()[i]);
  out.write(reinterpret_cast<const char*>(h.sparse_cols().data()),
            static_cast<std::streamsize>(h.sparse_cols().size() * 4));
  out.write(reinterpret_cast<const char*>(h.sparse_vals().data()),
            static_cast<std::streamsize>(h.sparse_vals().size() * 8));

  const auto& blocks = h.lowrank_blocks();
  put_u64(out, blocks.size());
  for (const auto& b : blocks) {
    put_u64(out, b.node);
    put_u64(out, b.rank);
    put_u64(out, b.u.size());
    put_u64(out, b.v.size());
    out.write(reinterpret_cast<const char*>(b.u.data()),
              static_cast<std::streamsize>(b.u.size() * 8));
    out.write(reinterpret_cast<const char*>(b.v.data()),
              static_cast<std::streamsize>(b.v.size() * 8));
  }
  if (!out) throw IoError("write failure on " + path.string());
}

HMatrix load_hmatrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4)) throw FormatError("file too short for magic in " + path.string());
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("bad magic in " + path.string() + " (expected HKM1)");

  const std::uint64_t n = get_u64(in);
  if (n == 0 || n > (std::uint64_t{1} << 40)) throw FormatError("implausible operator size");
  CompressionParams params;
  params.leaf_size_max = static_cast<std::size_t>(get_u64(in));
  params.rank_max = static_cast<std::size_t>(get_u64(in));
  params.tolerance = get_f64(in);
  params.kappa = static_cast<std::size_t>(get_u64(in));
  params.neighbor_exact_limit = static_cast<std::size_t>(get_u64(in));
  params.validate();

  std::vector<std::size_t> perm(static_cast<std::size_t>(n));
  for (auto& v : perm) v = static_cast<std::size_t>(get_u64(in));

  HMatrix h;
  h.params_ = params;
  h.tree_ = ClusterTree::from_permutation(std::move(perm), params.leaf_size_max);

  const std::uint64_t n_leaves = get_u64(in);
  if (n_leaves != h.tree_.leaves().size())
    throw FormatError("leaf count does not match the stored permutation");
  h.diag_.resize(static_cast<std::size_t>(n_leaves));
  for (std::size_t li = 0; li < n_leaves; ++li) {
    const std::uint64_t sz = get_u64(in);
    const std::size_t want = h.tree_.nodes()[h.tree_.leaves()[li]].count();
    if (sz != want * want) throw FormatError("leaf block size mismatch");
    h.diag_[li].resize(static_cast<std::size_t>(sz));
    get_f64s(in, h.diag_[li].data(), h.diag_[li].size());
  }

  const std::uint64_t nnz = get_u64(in);
  h.s_indptr_.resize(static_cast<std::size_t>(n) + 1);
  for (auto& v : h.s_indptr_) v = static_cast<std::size_t>(get_u64(in));
  if (h.s_indptr_.front() != 0 || h.s_indptr_.back() != nnz)
    throw FormatError("corrupt sparse index");
  for (std::size_t p = 0; p < n; ++p)
    if (h.s_indptr_[p] > h.s_indptr_[p + 1]) throw FormatError("corrupt sparse index");
  h.s_cols_.resize(static_cast<std::size_t>(nnz));
  if (nnz && !in.read(reinterpret_cast<char*>(h.s_cols_.data()),
                      static_cast<std::streamsize>(nnz * 4)))
    throw FormatError("truncated operator file");
  for (std::uint32_t c : h.s_cols_)
    if (c >= n) throw FormatError("sparse column out of range");
  h.s_vals_.resize(static_cast<std::size_t>(nnz));
  if (nnz) get_f64s(in, h.s_vals_.data(), h.s_vals_.size());

  const std::uint64_t n_blocks = get_u64(in);
  std::size_t n_internal = 0;
  for (const auto& lvl : h.tree_.internal_by_level()) n_internal += lvl.size();
  if (n_blocks != n_internal) throw FormatError("interaction count does not match the tree");
  h.blocks_.resize(static_cast<std::size_t>(n_blocks));
  h.block_of_node_.assign(h.tree_.nodes().size(), -1);
  for (std::size_t bi = 0; bi < n_blocks; ++bi) {
    auto& b = h.blocks_[bi];
    b.node = static_cast<std::uint32_t>(get_u64(in));
    if (b.node >= h.tree_.nodes().size() || h.tree_.nodes()[b.node].is_leaf() ||
        h.block_of_node_[b.node] >= 0)
      throw FormatError("invalid interaction owner");
    const auto& nd = h.tree_.nodes()[b.node];
    const std::size_t asz = h.tree_.nodes()[static_cast<std::size_t>(nd.left)].count();
    const std::size_t bsz = h.tree_.nodes()[static_cast<std::size_t>(nd.right)].count();
    b.rank = static_cast<std::uint32_t>(get_u64(in));
    const std::uint64_t usz = get_u64(in), vsz = get_u64(in);
    if (usz != b.rank * asz || vsz != b.rank * bsz) throw FormatError("factor size mismatch");
    b.u.resize(static_cast<std::size_t>(usz));
    b.v.resize(static_cast<std::size_t>(vsz));
    get_f64s(in, b.u.data(), b.u.size());
    get_f64s(in, b.v.data(), b.v.size());
    h.block_of_node_[b.node] = static_cast<std::int64_t>(bi);
  }
  for (const auto& lvl : h.tree_.internal_by_level())
    for (std::uint32_t id : lvl)
      if (h.block_of_node_[id] < 0) throw FormatError("missing sibling interaction");
  return h;
}

}  // namespace hikedim
