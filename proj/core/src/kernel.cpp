#include "hikedim/kernel.hpp"

#include "hikedim/errors.hpp"
#include "hikedim/parallel.hpp"

namespace hikedim {

GaussianKernel::GaussianKernel(const PointCloud& pc, double sigma)
    : pc_(&pc), sigma_(sigma), inv_sigma2_(1.0 / (sigma * sigma)) {
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw InvalidArgument("kernel bandwidth must be finite and > 0");
}

DenseKernel gaussian_kernel(const PointCloud& pc, double sigma) {
  const std::size_t n = pc.size();
  GaussianKernel k(pc, sigma);
  DenseKernel out;
  out.sigma = sigma;
  out.entries.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  detail::parallel_chunks(n, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      out.entries(i, i) = 1.0;
      for (std::size_t j = 0; j < i; ++j) out.entries(i, j) = k.entry(i, j);
    }
  });
  // Mirror after the fill so each entry is computed exactly once.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) out.entries(j, i) = out.entries(i, j);
  return out;
}

}  // namespace hikedim
