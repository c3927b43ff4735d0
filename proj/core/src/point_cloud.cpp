#include "hikedim/point_cloud.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include "hikedim/errors.hpp"
#include "hikedim/random.hpp"

namespace hikedim {

PointCloud::PointCloud(std::vector<double> coords, std::size_t n, std::size_t dim)
    : data_(std::move(coords)), n_(n), dim_(dim) {
  if (n_ == 0 || dim_ == 0) throw InvalidArgument("point cloud needs n >= 1 and dim >= 1");
  if (data_.size() != n_ * dim_)
    throw InvalidArgument("coordinate buffer size does not match n * dim");
  for (double v : data_)
    if (!std::isfinite(v)) throw InvalidArgument("point cloud contains a non-finite coordinate");
}

double PointCloud::squared_distance(std::size_t i, std::size_t j) const {
  const double* a = row(i);
  const double* b = row(j);
  double s = 0.0;
  for (std::size_t d = 0; d < dim_; ++d) {
    const double diff = a[d] - b[d];
    s += diff * diff;
  }
  return s;
}

namespace {

// Both sheet generators draw every parameter first and all jitter afterwards,
// so clouds with different noise levels share their underlying positions.
PointCloud generate_sheet(std::size_t n, double noise, std::uint64_t seed, bool swiss_roll) {
  if (n < 2) throw InvalidArgument("sheet generators need n >= 2");
  if (noise < 0.0 || !std::isfinite(noise)) throw InvalidArgument("noise must be finite and >= 0");
  std::mt19937_64 g(seed);
  std::vector<double> u(n), v(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (swiss_roll) {
      u[i] = uniform_in(g, 1.5 * std::numbers::pi, 4.5 * std::numbers::pi);
      v[i] = uniform_in(g, 0.0, 21.0);
    } else {
      u[i] = uniform_in(g, -1.5 * std::numbers::pi, 1.5 * std::numbers::pi);
      v[i] = uniform_in(g, 0.0, 2.0);
    }
  }
  std::vector<double> p(n * 3);
  for (std::size_t i = 0; i < n; ++i) {
    if (swiss_roll) {
      p[i * 3 + 0] = u[i] * std::cos(u[i]);
      p[i * 3 + 1] = v[i];
      p[i * 3 + 2] = u[i] * std::sin(u[i]);
    } else {
      p[i * 3 + 0] = std::sin(u[i]);
      p[i * 3 + 1] = v[i];
      p[i * 3 + 2] = (u[i] >= 0.0 ? 1.0 : -1.0) * (std::cos(u[i]) - 1.0);
    }
  }
  if (noise > 0.0)
    for (double& c : p) c += noise * standard_normal(g);
  return PointCloud(std::move(p), n, 3);
}

}  // namespace

PointCloud generate_scurve(std::size_t n, double noise, std::uint64_t seed) {
  return generate_sheet(n, noise, seed, false);
}

PointCloud generate_swiss_roll(std::size_t n, double noise, std::uint64_t seed) {
  return generate_sheet(n, noise, seed, true);
}

PointCloud generate_uniform(std::size_t n, std::size_t dim, std::uint64_t seed) {
  if (n < 1 || dim < 1) throw InvalidArgument("uniform generator needs n >= 1 and dim >= 1");
  std::mt19937_64 g(seed);
  std::vector<double> p(n * dim);
  for (double& c : p) c = uniform01(g);
  return PointCloud(std::move(p), n, dim);
}

PointFormat guess_point_format(const std::filesystem::path& path) {
  const std::string ext = path.extension().string();
  if (ext == ".f64" || ext == ".raw" || ext == ".bin") return PointFormat::kRawF64;
  return PointFormat::kCsv;
}

namespace {

constexpr char kPointMagic[4] = {'H', 'K', 'D', '1'};

PointCloud load_csv(const std::filesystem::path& path, std::size_t skip_header) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<double> data;
  std::size_t dim = 0, n = 0, lineno = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno <= skip_header) continue;
    // Tolerate a trailing carriage return and skip blank lines.
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::size_t cols = 0;
    const char* p = line.data();
    const char* end = p + line.size();
    while (true) {
      while (p < end && (*p == ' ' || *p == '\t')) ++p;
      double value = 0.0;
      auto [next, ec] = std::from_chars(p, end, value);
      if (ec != std::errc()) throw FormatError("unparseable numeric field", lineno);
      if (!std::isfinite(value)) throw FormatError("non-finite value", lineno);
      data.push_back(value);
      ++cols;
      p = next;
      while (p < end && (*p == ' ' || *p == '\t')) ++p;
      if (p == end) break;
      if (*p != ',') throw FormatError("expected ',' between fields", lineno);
      ++p;
      if (p == end) throw FormatError("trailing ',' at end of row", lineno);
    }
    if (dim == 0) dim = cols;
    if (cols != dim) throw FormatError("row has " + std::to_string(cols) + " fields, expected " +
                                           std::to_string(dim),
                                       lineno);
    ++n;
  }
  if (in.bad()) throw IoError("read failure on " + path.string());
  if (n == 0) throw FormatError("no data rows in " + path.string());
  return PointCloud(std::move(data), n, dim);
}

PointCloud load_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4)) throw FormatError("file too short for magic in " + path.string());
  if (std::memcmp(magic, kPointMagic, 4) != 0)
    throw FormatError("bad magic in " + path.string() + " (expected HKD1)");
  std::uint64_t n = 0, dim = 0;
  if (!in.read(reinterpret_cast<char*>(&n), 8) || !in.read(reinterpret_cast<char*>(&dim), 8))
    throw FormatError("truncated header in " + path.string());
  if (n == 0 || dim == 0 || n > (std::uint64_t{1} << 40) / std::max<std::uint64_t>(dim, 1))
    throw FormatError("implausible dimensions in " + path.string());
  std::vector<double> data(static_cast<std::size_t>(n * dim));
  if (!in.read(reinterpret_cast<char*>(data.data()),
               static_cast<std::streamsize>(data.size() * sizeof(double))))
    throw FormatError("truncated payload in " + path.string());
  return PointCloud(std::move(data), static_cast<std::size_t>(n), static_cast<std::size_t>(dim));
}

}  // namespace

PointCloud load_points(const std::filesystem::path& path, PointFormat format,
                       std::size_t skip_header) {
  if (format == PointFormat::kRawF64) return load_raw(path);
  return load_csv(path, skip_header);
}

void save_points(const PointCloud& pc, const std::filesystem::path& path, PointFormat format) {
  if (format == PointFormat::kRawF64) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(kPointMagic, 4);
    const std::uint64_t n = pc.size(), dim = pc.dim();
    out.write(reinterpret_cast<const char*>(&n), 8);
    out.write(reinterpret_cast<const char*>(&dim), 8);
    out.write(reinterpret_cast<const char*>(pc.data().data()),
              static_cast<std::streamsize>(pc.data().size() * sizeof(double)));
    if (!out) throw IoError("write failure on " + path.string());
    return;
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  char buf[64];
  for (std::size_t i = 0; i < pc.size(); ++i) {
    std::string line;
    for (std::size_t d = 0; d < pc.dim(); ++d) {
      const int len = std::snprintf(buf, sizeof buf, "%.17g", pc(i, d));
      if (d) line += ',';
      line.append(buf, static_cast<std::size_t>(len));
    }
    line += '\n';
    out << line;
  }
  if (!out) throw IoError("write failure on " + path.string());
}

double median_sigma(const PointCloud& pc, std::size_t sample) {
  if (sample < 2) throw InvalidArgument("median bandwidth needs a sample of at least 2");
  const std::size_t n = pc.size();
  if (n < 2) throw InvalidArgument("median bandwidth needs at least 2 points");
  const std::size_t s = std::min(sample, n);

  // Subsample without replacement under a fixed internal seed: the heuristic
  // must give one answer per (cloud, sample) pair.
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (s < n) {
    std::mt19937_64 g(0x5edb6a7157c2f0cdULL);
    for (std::size_t i = 0; i < s; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(g() % (n - i));
      std::swap(idx[i], idx[j]);
    }
  }

  std::vector<double> d2;
  d2.reserve(s * (s - 1) / 2);
  for (std::size_t a = 0; a < s; ++a)
    for (std::size_t b = a + 1; b < s; ++b) d2.push_back(pc.squared_distance(idx[a], idx[b]));
  std::sort(d2.begin(), d2.end());
  const std::size_t m = d2.size();
  double med;
  if (m % 2 == 1) {
    med = std::sqrt(d2[m / 2]);
  } else {
    med = 0.5 * (std::sqrt(d2[m / 2 - 1]) + std::sqrt(d2[m / 2]));
  }
  if (!(med > 0.0)) throw DegenerateInput("median pairwise distance is zero (coincident points)");
  return med;
}

}  // namespace hikedim
