#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <utility>

#include <Eigen/Core>

#include "hikedim/point_cloud.hpp"

namespace hikedim {

// Problem sizes up to this bound are safe to materialize densely; the
// compressor also switches neighbor search from exact to approximate above it.
inline constexpr std::size_t kDenseLimitDefault = 8192;

// Entry accessor for a symmetric kernel operator. entry(i, j) == entry(j, i)
// must hold and evaluation must be pure and reentrant; the compressor reads
// only O(N log N) of the N^2 entries through this interface.
class KernelSource {
 public:
  virtual ~KernelSource() = default;
  virtual std::size_t size() const = 0;
  virtual double entry(std::size_t i, std::size_t j) const = 0;
};

// W_ij = exp(-||x_i - x_j||^2 / sigma^2). The diagonal is exactly 1.
class GaussianKernel final : public KernelSource {
 public:
  GaussianKernel(const PointCloud& pc, double sigma);

  std::size_t size() const override { return pc_->size(); }
  double entry(std::size_t i, std::size_t j) const override {
    if (i == j) return 1.0;
    return std::exp(-pc_->squared_distance(i, j) * inv_sigma2_);
  }
  double sigma() const noexcept { return sigma_; }

 private:
  const PointCloud* pc_;
  double sigma_;
  double inv_sigma2_;
};

// Adapts an arbitrary entry function; used by tests and synthetic operators.
class CallbackKernel final : public KernelSource {
 public:
  using EntryFn = std::function<double(std::size_t, std::size_t)>;
  CallbackKernel(std::size_t n, EntryFn fn) : n_(n), fn_(std::move(fn)) {}
  std::size_t size() const override { return n_; }
  double entry(std::size_t i, std::size_t j) const override { return fn_(i, j); }

 private:
  std::size_t n_;
  EntryFn fn_;
};

// Dense materialization; only sensible for n <= kDenseLimitDefault.
struct DenseKernel {
  Eigen::MatrixXd entries;
  double sigma = 0.0;
};

// Builds the full matrix, computing each off-diagonal entry once and
// mirroring it, so the result is exactly symmetric.
DenseKernel gaussian_kernel(const PointCloud& pc, double sigma);

}  // namespace hikedim
