#include "hikedim/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <new>
#include <optional>

#include "hikedim/errors.hpp"
#include "hikedim/kernel.hpp"
#include "hikedim/parallel.hpp"
#include "hikedim/point_cloud.hpp"
#include "hikedim/random.hpp"

namespace hikedim {

void BenchConfig::validate() const {
  if (mode != "strong" && mode != "weak")
    throw InvalidArgument("bench mode must be 'strong' or 'weak'");
  if (op != "evaluate" && op != "compress")
    throw InvalidArgument("bench op must be 'evaluate' or 'compress'");
  if (sizes.empty()) throw InvalidArgument("bench needs at least one size");
  for (std::size_t i = 1; i < sizes.size(); ++i)
    if (sizes[i] <= sizes[i - 1]) throw InvalidArgument("bench sizes must be strictly ascending");
  if (thread_counts.empty()) throw InvalidArgument("bench needs at least one thread count");
  for (int t : thread_counts)
    if (t < 1) throw InvalidArgument("thread counts must be >= 1");
  if (mode == "weak" && sizes.size() != thread_counts.size())
    throw InvalidArgument("weak scaling pairs sizes with thread counts; lengths must match");
  if (reps < 3) throw InvalidArgument("bench needs reps >= 3");
  if (dim < 1) throw InvalidArgument("bench dim must be >= 1");
  compression.validate();
}

namespace {

using Clock = std::chrono::steady_clock;

double time_once(const std::function<void()>& fn) {
  const auto t0 = Clock::now();
  fn();
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size();
  return m % 2 ? v[m / 2] : 0.5 * (v[m / 2 - 1] + v[m / 2]);
}

// Problem artifacts for one size, shared by all rows at that size.
struct SizeSetup {
  PointCloud cloud;
  double sigma = 0.0;
  std::optional<HMatrix> h;  // evaluate op only
  std::vector<double> x;
};

double work_model(std::size_t n) {
  return static_cast<double>(n) * std::log2(static_cast<double>(std::max<std::size_t>(n, 2)));
}

}  // namespace

std::vector<BenchRecord> run_bench(const BenchConfig& config) {
  config.validate();

  std::vector<std::pair<std::size_t, int>> rows;
  if (config.mode == "strong") {
    for (int t : config.thread_counts) rows.emplace_back(config.sizes.back(), t);
  } else {
    for (std::size_t i = 0; i < config.sizes.size(); ++i)
      rows.emplace_back(config.sizes[i], config.thread_counts[i]);
  }

  const int saved_threads = thread_count();
  std::map<std::size_t, SizeSetup> cache;
  std::vector<BenchRecord> records;

  for (const auto& [n, threads] : rows) {
    BenchRecord rec;
    rec.op = config.op;
    rec.mode = config.mode;
    rec.n = n;
    rec.threads = threads;
    rec.reps = config.reps;
    set_thread_count(threads);
    try {
      auto it = cache.find(n);
      if (it == cache.end()) {
        SizeSetup s;
        s.cloud = generate_uniform(n, config.dim, mix_seed(config.seed, n));
        s.sigma = config.sigma > 0.0
                      ? config.sigma
                      : median_sigma(s.cloud, std::min<std::size_t>(n, 1000));
        if (config.op == "evaluate") {
          const GaussianKernel kern(s.cloud, s.sigma);
          s.h = compress(kern, config.compression, config.seed).first;
          s.x.resize(n);
          std::mt19937_64 g(mix_seed(config.seed, 0xBE7C * n));
          for (double& v : s.x) v = uniform_in(g, -1.0, 1.0);
        }
        it = cache.emplace(n, std::move(s)).first;
      }
      SizeSetup& s = it->second;
      rec.sigma = s.sigma;

      std::vector<double> times;
      times.reserve(static_cast<std::size_t>(config.reps));
      if (config.op == "evaluate") {
        const HMatrix& h = *s.h;
        volatile double sink = 0.0;
        std::vector<double> y(n);
        // Warm-up rep is discarded.
        h.apply(s.x.data(), y.data(), 1);
        sink = y[0];
        for (int r = 0; r < config.reps; ++r) {
          times.push_back(time_once([&] { h.apply(s.x.data(), y.data(), 1); }));
          sink = y[0];
        }
        (void)sink;
      } else {
        const GaussianKernel kern(s.cloud, s.sigma);
        compress(kern, config.compression, config.seed);
        for (int r = 0; r < config.reps; ++r)
          times.push_back(
              time_once([&] { compress(kern, config.compression, config.seed); }));
      }
      rec.median_seconds = median_of(std::move(times));
    } catch (const std::bad_alloc&) {
      rec.error = "oom";
      cache.erase(n);
    }
    records.push_back(std::move(rec));
  }
  set_thread_count(saved_threads);

  // Efficiency is relative to the first successful row.
  const BenchRecord* base = nullptr;
  for (const auto& r : records)
    if (r.error.empty()) {
      base = &r;
      break;
    }
  if (base) {
    for (auto& r : records) {
      if (!r.error.empty() || r.median_seconds <= 0.0) continue;
      if (config.mode == "strong") {
        r.efficiency_pct = 100.0 * (base->median_seconds * base->threads) /
                           (r.median_seconds * r.threads);
      } else {
        const double ideal = base->median_seconds * (work_model(r.n) / r.threads) /
                             (work_model(base->n) / base->threads);
        r.efficiency_pct = 100.0 * ideal / r.median_seconds;
      }
    }
  }
  return records;
}

void write_bench_csv(std::ostream& out, const BenchConfig& config,
                     const std::vector<BenchRecord>& records) {
  out << "op,mode,n,threads,reps,median_seconds,efficiency_pct,sigma,dim,leaf,rank,tol,"
         "neighbors,seed,error\n";
  char buf[256];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%s,%s,%zu,%d,%d,%.9e,%.2f,%.9e,%zu,%zu,%zu,%.9e,%zu,%llu,%s\n",
                  r.op.c_str(), r.mode.c_str(), r.n, r.threads, r.reps, r.median_seconds,
                  r.efficiency_pct, r.sigma, config.dim, config.compression.leaf_size_max,
                  config.compression.rank_max, config.compression.tolerance,
                  config.compression.kappa,
                  static_cast<unsigned long long>(config.seed), r.error.c_str());
    out << buf;
  }
}

}  // namespace hikedim
