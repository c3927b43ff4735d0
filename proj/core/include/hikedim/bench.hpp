#pragma once

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "hikedim/hmatrix.hpp"

namespace hikedim {

struct BenchConfig {
  std::string mode = "strong";    // "strong" | "weak"
  std::string op = "evaluate";    // "evaluate" (one matvec) | "compress"
  std::vector<std::size_t> sizes;       // ascending; strong mode uses the largest
  std::vector<int> thread_counts;       // weak mode pairs thread_counts[i] with sizes[i]
  int reps = 3;                         // >= 3 timed reps; one extra warm-up is discarded
  std::size_t dim = 6;
  double sigma = 0.0;                   // <= 0: median heuristic, resolved once per size
  CompressionParams compression;
  std::uint64_t seed = 0;

  void validate() const;  // throws InvalidArgument
};

struct BenchRecord {
  std::string op;
  std::string mode;
  std::size_t n = 0;
  int threads = 0;
  int reps = 0;
  double median_seconds = 0.0;
  double efficiency_pct = 0.0;
  double sigma = 0.0;  // bandwidth actually used for this row
  std::string error;   // empty on success; "oom" when a row ran out of memory
};

// Runs the scaling study on uniform clouds. Strong mode fixes the largest
// size and sweeps thread counts; efficiency is t_1 * 1 / (t_p * p) * 100
// relative to the first row. Weak mode grows size with threads; efficiency
// compares measured time against the first row scaled by the n log2(n) work
// model. A row that runs out of memory is recorded with an error marker and
// the run continues.
std::vector<BenchRecord> run_bench(const BenchConfig& config);

// CSV with a fixed header; every row carries its parameter snapshot.
void write_bench_csv(std::ostream& out, const BenchConfig& config,
                     const std::vector<BenchRecord>& records);

}  // namespace hikedim
