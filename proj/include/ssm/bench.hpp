#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace ssm {

struct BenchConfig {
  int log2_min = 10;
  int log2_max = 16;
  int repeats = 5;
  int p = 64;  // state size of the benchmarked LTI system
  int q = 1;
  int workers = 1;
  std::uint64_t seed = 0;
};

struct BenchRow {
  std::string mode;  // recurrent | scan | conv
  int length = 0;
  int workers = 1;
  double median_s = 0.0;  // median of the repeats
};

struct BenchResult {
  int p = 0, q = 0;
  std::vector<BenchRow> rows;
  double scan_loglog_slope = 0.0;   // fitted exponent of scan time vs T
  double worker_max_diff = 0.0;     // scan output, 1 worker vs `workers`, largest T

  double median(const std::string& mode, int length) const;
  void write_csv(std::ostream& os) const;
};

BenchResult run_bench(const BenchConfig& cfg);

/// Least-squares slope of log y against log x.
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace ssm
