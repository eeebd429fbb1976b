#include "ssm/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <stdexcept>

#include "ssm/exec.hpp"
#include "ssm/verify.hpp"

namespace ssm {

double BenchResult::median(const std::string& mode, int length) const {
  for (const auto& r : rows)
    if (r.mode == mode && r.length == length) return r.median_s;
  throw std::out_of_range("bench: no row for " + mode);
}

void BenchResult::write_csv(std::ostream& os) const {
  os << "mode,p,q,T,workers,seconds,steps_per_s\n";
  for (const auto& r : rows)
    os << r.mode << "," << p << "," << q << "," << r.length << "," << r.workers << "," << r.median_s << ","
       << r.length / r.median_s << "\n";
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) throw std::invalid_argument("loglog_slope: need two or more points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += std::log(x[i]) / n;
    my += std::log(y[i]) / n;
  }
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (std::log(x[i]) - mx) * (std::log(y[i]) - my);
    sxx += (std::log(x[i]) - mx) * (std::log(x[i]) - mx);
  }
  return sxy / sxx;
}

namespace {

template <class F>
double median_time(int repeats, F&& f) {
  std::vector<double> t;
  for (int r = 0; r < repeats; ++r) {
    const auto a = std::chrono::steady_clock::now();
    f();
    t.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - a).count());
  }
  std::sort(t.begin(), t.end());
  return t[t.size() / 2];
}

}  // namespace

BenchResult run_bench(const BenchConfig& cfg) {
  if (cfg.log2_min < 1 || cfg.log2_max < cfg.log2_min || cfg.log2_max > 24 || cfg.repeats < 1 || cfg.workers < 1)
    throw std::invalid_argument("bench: invalid grid, repeats or workers");
  const DiscreteSystem sys = random_stable_system(derive_seed(cfg.seed, "bench"), cfg.p, cfg.q);
  BenchResult res;
  res.p = cfg.p;
  res.q = cfg.q;
  std::vector<double> ts, scan_times;
  for (int e = cfg.log2_min; e <= cfg.log2_max; ++e) {
    const int T = 1 << e;
    std::mt19937_64 rng(derive_seed(cfg.seed, "bench_input", T));
    std::normal_distribution<double> g;
    const Sequence u(RMat::NullaryExpr(T, cfg.q, [&] { return g(rng); }));
    res.rows.push_back({"recurrent", T, 1, median_time(cfg.repeats, [&] { run_recurrent(sys, u); })});
    const double st = median_time(cfg.repeats, [&] { run_scan(sys, u, {.workers = cfg.workers}); });
    res.rows.push_back({"scan", T, cfg.workers, st});
    res.rows.push_back({"conv", T, cfg.workers, median_time(cfg.repeats, [&] { run_convolution(sys, u, cfg.workers); })});
    ts.push_back(T);
    scan_times.push_back(st);
    if (e == cfg.log2_max)
      res.worker_max_diff = max_rel_diff(run_scan(sys, u, {.workers = cfg.workers}).data(), run_scan(sys, u, {.workers = 1}).data());
  }
  if (ts.size() >= 2) res.scan_loglog_slope = loglog_slope(ts, scan_times);
  return res;
}

}  // namespace ssm
