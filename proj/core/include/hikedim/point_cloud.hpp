#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace hikedim {

// N points in ambient dimension D, coordinates stored row-major. Immutable
// after construction. Row index i is a point's identity through the whole
// pipeline; any internal reordering is undone before results are returned.
class PointCloud {
 public:
  PointCloud() = default;
  // Takes ownership of coords (size must be n * dim, all entries finite).
  PointCloud(std::vector<double> coords, std::size_t n, std::size_t dim);

  std::size_t size() const noexcept { return n_; }
  std::size_t dim() const noexcept { return dim_; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * dim_ + j]; }
  const double* row(std::size_t i) const { return data_.data() + i * dim_; }
  std::span<const double> data() const noexcept { return data_; }

  double squared_distance(std::size_t i, std::size_t j) const;

 private:
  std::vector<double> data_;
  std::size_t n_ = 0;
  std::size_t dim_ = 0;
};

// 3-D S-shaped sheet with two intrinsic dimensions, plus isotropic Gaussian
// jitter of scale `noise`. Identical (n, noise, seed) give identical clouds,
// and the noiseless positions are shared across noise levels. Requires n >= 2.
PointCloud generate_scurve(std::size_t n, double noise, std::uint64_t seed);

// 3-D rolled sheet (radius grows with the winding angle). Requires n >= 2.
PointCloud generate_swiss_roll(std::size_t n, double noise, std::uint64_t seed);

// n points uniform in [0, 1]^dim. Requires n >= 1, dim >= 1.
PointCloud generate_uniform(std::size_t n, std::size_t dim, std::uint64_t seed);

enum class PointFormat { kCsv, kRawF64 };

// ".f64" / ".raw" / ".bin" map to kRawF64, everything else to kCsv.
PointFormat guess_point_format(const std::filesystem::path& path);

// CSV: comma-separated decimal reals, one point per row; `skip_header` leading
// lines are discarded. RawF64: magic "HKD1", u64 n, u64 dim, then n*dim
// little-endian binary64 row-major (bit-exact round trip).
PointCloud load_points(const std::filesystem::path& path, PointFormat format,
                       std::size_t skip_header = 0);
void save_points(const PointCloud& pc, const std::filesystem::path& path, PointFormat format);

// Median pairwise Euclidean distance over a deterministic subsample of
// min(sample, n) points; the median of an even count is the mean of the two
// middle values. Throws DegenerateInput when the median is zero.
double median_sigma(const PointCloud& pc, std::size_t sample);

}  // namespace hikedim
