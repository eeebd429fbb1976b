// Acceptance driver: one PASS/FAIL line per criterion; exit status 1 if any fails.
#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <ctime>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "ssm/bench.hpp"
#include "ssm/core.hpp"
#include "ssm/parallel.hpp"
#include "ssm/tasks.hpp"
#include "ssm/train.hpp"
#include "ssm/verify.hpp"

using namespace ssm;

namespace {

int failures = 0;

void report(int id, bool pass, const std::string& what) {
  std::cout << (pass ? "PASS " : "FAIL ") << id << ": " << what << std::endl;
  if (!pass) ++failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

std::string fmt(double v, int prec = 3) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

// Checks of one suite (optionally filtered by name) folded into a single verdict.
std::pair<bool, std::string> fold(const VerifyReport& rep, const std::string& suite, const std::string& name = "") {
  bool ok = true;
  int n = 0;
  std::string detail;
  for (const auto& c : rep.checks) {
    if (c.suite != suite || (!name.empty() && c.name.find(name) == std::string::npos)) continue;
    ++n;
    ok = ok && c.passed;
    if (!c.passed || detail.size() < 200)
      detail += (detail.empty() ? "" : "; ") + c.name + " " + fmt(c.measured) + " (tol " + fmt(c.tolerance) + ")";
  }
  return {ok && n > 0, detail};
}

void criteria_from_verify(int workers) {
  VerifyConfig cfg;
  cfg.workers = workers;
  VerifyReport rep;

  auto t0 = std::chrono::steady_clock::now();
  suite_equivalence(rep, cfg);
  const double eq_s = seconds_since(t0);
  {
    auto [ok, d] = fold(rep, "equivalence");
    report(1, ok && eq_s < 60, "mode equivalence, " + d + ", " + fmt(eq_s) + " s");
  }
  suite_ltv_scan(rep, cfg);
  {
    auto [ok, d] = fold(rep, "ltv_scan");
    report(2, ok, "time-varying scan vs loop, " + d);
  }
  suite_gradient(rep, cfg);
  {
    auto [ok, d] = fold(rep, "gradient");
    double worst = 0;
    for (const auto& c : rep.checks)
      if (c.suite == "gradient") worst = std::max(worst, c.measured);
    report(3, ok, "finite differences over 6 models x 3 scaffolds, worst relative error " + fmt(worst) + " (tol 1e-4)");
  }
  suite_discretization(rep, cfg);
  {
    auto [ok, d] = fold(rep, "discretization");
    report(4, ok, "discretization goldens and DPLR, " + d);
  }
  suite_eigen_disk(rep, cfg);
  {
    auto [ok, d] = fold(rep, "eigen_disk");
    report(5, ok, "eigenvalue geometry, " + d);
  }
  suite_memory(rep, cfg);
  {
    auto [ok, d] = fold(rep, "memory");
    report(6, ok, "memory law, " + d);
  }
  suite_associativity(rep, cfg);
  {
    auto [ok, d] = fold(rep, "associativity");
    report(8, ok, "scan associativity, " + d);
  }
}

void criterion_listops_oracle() {
  const ListOpsExpr ex = parse_listops_text("max(4,min(5,6,mean(9,4,5)))");
  const bool example = eval_listops(ex) == 5 && eval_listops_tokens(serialize(ex)) == 5;
  int mismatches = 0;
  const ListOpsConfig cfg;
  for (int i = 0; i < 10000; ++i) {
    const ListOpsExpr e = random_listops(derive_seed(2024, "acceptance", i), cfg);
    mismatches += eval_listops(e) != eval_listops_tokens(serialize(e));
  }
  report(9, example && mismatches == 0,
         std::string("worked example -> ") + std::to_string(eval_listops(ex)) + ", " + std::to_string(mismatches) +
             " mismatches over 10000 expressions");
}

struct RunOut {
  double test = 0, cpu_s = 0, wall_s = 0;
};

RunOut run(const TrainConfig& cfg, const Splits& data) {
  const double c0 = cpu_seconds();
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult r = train(cfg, data);
  return {r.test_accuracy, cpu_seconds() - c0, seconds_since(t0)};
}

TrainConfig echo_config(int workers) {
  TrainConfig c;
  c.task.task = "echo";
  c.task.length = 256;
  c.task.lag = 64;
  c.task.n_val = 500;
  c.task.n_test = 500;
  c.stack.vocab = kEchoSymbols;
  c.stack.classes = kEchoSymbols;
  c.stack.pooling = ad::Pooling::last;
  c.workers = workers;
  return c;
}

void criterion_learning(int workers) {
  // (a) one ListOps-mini epoch per model
  TrainConfig lo;
  lo.adam.lr = 0.003;
  lo.epochs = 1;
  lo.workers = workers;
  const Splits lo_data = make_splits(lo.task, workers);
  const double floor_acc = 2 * random_baseline(lo_data.test);
  bool all_a = true;
  std::string detail;
  for (ModelKind m : {ModelKind::S4, ModelKind::S4D, ModelKind::S5, ModelKind::LRU, ModelKind::S6, ModelKind::RGLRU}) {
    TrainConfig c = lo;
    c.stack.model = m;
    const RunOut r = run(c, lo_data);
    const bool ok = r.test >= floor_acc && r.cpu_s <= 1800;
    all_a = all_a && ok;
    detail += std::string(detail.empty() ? "" : ", ") + std::string(to_string(m)) + " " + fmt(r.test) + " in " +
              fmt(r.cpu_s / 60, 2) + " CPU-min";
    std::cout << "  7a " << to_string(m) << " test " << r.test << " cpu " << r.cpu_s << " s" << std::endl;
  }
  report(7, all_a, "(a) ListOps-mini vs 2x random (" + fmt(floor_acc) + "): " + detail);

  // (b) delayed echo, lag 64, T = 256
  TrainConfig s4d = echo_config(workers);
  s4d.stack.model = ModelKind::S4D;
  s4d.stack.p = 64;
  s4d.task.n_train = 8000;
  s4d.epochs = 4;
  s4d.adam.lr = 0.005;
  const Splits s4d_data = make_splits(s4d.task, workers);
  const RunOut rs = run(s4d, s4d_data);
  std::cout << "  7b S4D test " << rs.test << " wall " << rs.wall_s << " s" << std::endl;

  TrainConfig lru = echo_config(workers);
  lru.stack.model = ModelKind::LRU;
  lru.stack.p = 128;
  lru.stack.lru_ring = {0.97, 0.999, 3.14159};
  lru.task.n_train = 20000;
  lru.epochs = 3;
  lru.adam.lr = 0.005;
  lru.schedule = "cosine";
  const RunOut rl = run(lru, make_splits(lru.task, workers));
  std::cout << "  7b LRU test " << rl.test << " wall " << rl.wall_s << " s" << std::endl;
  report(7, rs.test >= 0.95 && rl.test >= 0.95,
         "(b) delayed echo lag 64: S4D " + fmt(rs.test) + ", LRU " + fmt(rl.test) + " (need 0.95)");

  // (c) same S4D recipe with step sizes that put every |abar| at or below 0.5
  TrainConfig fast = s4d;
  fast.stack.delta_range = {1.4, 2.0};
  const RunOut rf = run(fast, s4d_data);
  std::cout << "  7c S4D |abar|<=0.5 test " << rf.test << std::endl;
  report(7, rf.test < rs.test,
         "(c) S4D with |abar| <= 0.5 at init " + fmt(rf.test) + " < near-unit init " + fmt(rs.test));
}

void criterion_throughput(int workers) {
  const int hw = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  BenchConfig b;
  b.log2_min = b.log2_max = 16;
  b.repeats = 5;
  b.workers = std::max(4, workers);
  const BenchResult r = run_bench(b);
  const double rec = r.median("recurrent", 1 << 16), scan = r.median("scan", 1 << 16), conv = r.median("conv", 1 << 16);
  const bool ordered = conv < rec && scan < rec;
  std::string d = "T=65536 medians: recurrent " + fmt(rec) + " s, conv " + fmt(conv) + " s, scan(" +
                  std::to_string(b.workers) + " workers) " + fmt(scan) + " s";
  if (hw < 4) {
    report(10, true, d + (ordered ? "; ordering holds" : "; ordering not met") + " (report only: " +
                         std::to_string(hw) + " hardware thread(s))");
  } else {
    report(10, ordered, d);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria 1-10"};
  int workers = default_workers();
  std::vector<int> only;
  app.add_option("--workers", workers, "Worker threads");
  app.add_option("--only", only, "Run just these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  const std::set<int> sel(only.begin(), only.end());
  auto want = [&](int c) { return sel.empty() || sel.contains(c); };

  const auto t0 = std::chrono::steady_clock::now();
  if (want(1) || want(2) || want(3) || want(4) || want(5) || want(6) || want(8)) criteria_from_verify(workers);
  if (want(9)) criterion_listops_oracle();
  if (want(10)) criterion_throughput(workers);
  if (want(7)) criterion_learning(workers);
  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << " in " << fmt(seconds_since(t0), 4)
            << " s" << std::endl;
  return failures == 0 ? 0 : 1;
}
