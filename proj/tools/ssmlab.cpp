// ssmlab command-line entry point: verify | train | eval | bench | figure | init.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include "ssm/init.hpp"
#include "ssm/json_io.hpp"
#include "ssm/parallel.hpp"
#include "ssm/run_config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kValidation = 1, kPropertyFailure = 2, kDivergence = 3 };

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  int workers = 0;
  std::string out = "out";
};

bool has_path(const json& j, const char* section, const char* key) {
  return j.contains(section) && j[section].is_object() && j[section].contains(key);
}

ssm::RunConfig load_config(const Common& c) {
  json j = json::object();
  if (!c.config_path.empty()) {
    std::ifstream is(c.config_path);
    if (!is) throw std::invalid_argument("cannot read config " + c.config_path);
    j = json::parse(is);
  }
  for (const auto& o : c.overrides) ssm::apply_override(j, o);
  ssm::RunConfig rc = ssm::run_config_from_json(j);
  if (c.workers > 0) {
    ssm::set_workers(rc, c.workers);
  } else {
    // Worker count: flag, then config, then SSM_WORKERS / hardware.
    const int w = ssm::default_workers();
    if (!has_path(j, "train", "workers")) rc.train.workers = w;
    if (!has_path(j, "verify", "workers")) rc.verify.workers = w;
    if (!has_path(j, "bench", "workers")) rc.bench.workers = w;
  }
  return rc;
}

fs::path out_dir(const Common& c) {
  fs::path p(c.out);
  fs::create_directories(p);
  return p;
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream os(p);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  os << j.dump(2) << "\n";
}

int cmd_verify(const Common& c, bool inject_unstable, bool corrupt_gradient) {
  ssm::RunConfig rc = load_config(c);
  rc.verify.inject_unstable = rc.verify.inject_unstable || inject_unstable;
  rc.verify.corrupt_gradient = rc.verify.corrupt_gradient || corrupt_gradient;
  const ssm::VerifyReport rep = ssm::run_verify(rc.verify);
  for (const auto& ch : rep.checks)
    std::cout << (ch.passed ? "PASS " : "FAIL ") << ch.suite << " / " << ch.name << ": " << ch.measured
              << " (tol " << ch.tolerance << ") " << ch.detail << "\n";
  write_json(out_dir(c) / "report.json", rep.to_json());
  return rep.all_passed() ? kOk : kPropertyFailure;
}

int cmd_train(const Common& c) {
  const ssm::RunConfig rc = load_config(c);
  const fs::path dir = out_dir(c);
  write_json(dir / "config.json", ssm::to_json(rc));
  const ssm::Splits data = ssm::make_splits(rc.train.task, rc.train.workers);
  std::ofstream metrics(dir / "metrics.jsonl");
  const ssm::TrainResult res = ssm::train(rc.train, data, &metrics);
  ssm::save_checkpoint(dir / "checkpoint.json", rc.train, res.stack);
  std::cout << "steps " << res.steps << "  final loss " << res.final_loss << "  val accuracy " << res.val_accuracy
            << "\ntest accuracy " << res.test_accuracy << "  (random baseline " << ssm::random_baseline(data.test)
            << ")\n";
  return kOk;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& split) {
  ssm::TrainConfig tc;
  const ssm::LayerStack stack = ssm::load_checkpoint(checkpoint, &tc);
  const ssm::RunConfig rc = load_config(c);
  const ssm::Splits data = ssm::make_splits(tc.task, rc.train.workers);
  const ssm::Dataset& d = split == "train" ? data.train : split == "val" ? data.val : data.test;
  const double acc = ssm::evaluate_accuracy(stack, d, rc.train.workers);
  std::cout << split << " accuracy " << acc << "  (random baseline " << ssm::random_baseline(d) << ")\n";
  write_json(out_dir(c) / "eval.json", {{"split", split}, {"accuracy", acc}, {"n", d.samples.size()}});
  return kOk;
}

int cmd_bench(const Common& c) {
  const ssm::RunConfig rc = load_config(c);
  const ssm::BenchResult res = ssm::run_bench(rc.bench);
  std::ofstream os(out_dir(c) / "bench.csv");
  res.write_csv(os);
  res.write_csv(std::cout);
  std::cout << "scan log-log slope " << res.scan_loglog_slope << "\nscan 1 vs " << rc.bench.workers
            << " workers max rel diff " << res.worker_max_diff << "\n";
  return kOk;
}

std::vector<ssm::Sequence> figure_inputs(const ssm::RunConfig& rc, int q) {
  std::vector<ssm::Sequence> in;
  for (int id = 0; id < 2; ++id) {
    std::mt19937_64 rng(ssm::derive_seed(rc.train.seed, "figure_input", id));
    std::normal_distribution<double> g(0.0, 1.0 + 2.0 * id);
    in.emplace_back(ssm::RMat::NullaryExpr(rc.figure_length, q, [&] { return g(rng); }));
  }
  return in;
}

int cmd_figure(const Common& c) {
  const ssm::RunConfig rc = load_config(c);
  const fs::path dir = out_dir(c);
  const auto& sc = rc.train.stack;
  std::ofstream features(dir / "features.csv");
  features << "model,structure,time_varying,discretization,state_parameterization\n";
  for (ssm::ModelKind kind : {ssm::ModelKind::S4, ssm::ModelKind::S4D, ssm::ModelKind::S5, ssm::ModelKind::LRU,
                              ssm::ModelKind::S6, ssm::ModelKind::RGLRU}) {
    ssm::InitSpec spec;
    spec.model_kind = kind;
    spec.p = sc.p;
    spec.q = kind == ssm::ModelKind::RGLRU ? sc.q : std::min(sc.q, 4);
    spec.lru_ring = sc.lru_ring;
    spec.delta_range = sc.delta_range;
    spec.seed = ssm::derive_seed(rc.train.seed, "figure", static_cast<int>(kind));
    const ssm::AnyModel m = ssm::init_model(spec, kind == ssm::ModelKind::S5 ? sc.s5_blocks : 1);
    const auto inputs = ssm::is_time_varying(kind) ? figure_inputs(rc, spec.q) : std::vector<ssm::Sequence>{};
    const std::string name(ssm::to_string(kind));
    std::ofstream os(dir / ("eig_" + name + ".csv"));
    os << "model,input_id,step,re,im,modulus\n";
    os.precision(17);
    for (const auto& pt : ssm::eig_scatter(m, inputs))
      os << pt.model << "," << pt.input_id << "," << pt.step << "," << pt.z.real() << "," << pt.z.imag() << ","
         << std::abs(pt.z) << "\n";
    const bool siso = kind == ssm::ModelKind::S4 || kind == ssm::ModelKind::S4D;
    const char* disc = kind == ssm::ModelKind::S4 ? "bilinear" : kind == ssm::ModelKind::LRU ? "none (direct)" : "zoh";
    const char* param = kind == ssm::ModelKind::S4    ? "DPLR (HiPPO)"
                        : kind == ssm::ModelKind::LRU ? "polar exp-exp"
                        : kind == ssm::ModelKind::RGLRU ? "gated exp"
                                                        : "diagonal";
    features << name << "," << (siso ? "SISO" : "MIMO") << "," << (ssm::is_time_varying(kind) ? "yes" : "no") << ","
             << disc << "," << param << "\n";
    std::cout << "wrote " << (dir / ("eig_" + name + ".csv")).string() << "\n";
  }
  return kOk;
}

int cmd_init(const Common& c) {
  const ssm::RunConfig rc = load_config(c);
  const fs::path dir = out_dir(c);
  const ssm::LayerStack stack = ssm::init_stack(rc.train.stack, ssm::derive_seed(rc.train.seed, "init"));
  ssm::save_checkpoint(dir / "checkpoint.json", rc.train, stack);
  json cores = json::array();
  const int core_q = rc.train.stack.q;
  for (int l = 0; l < rc.train.stack.layers; ++l) {
    const ssm::AnyModel m = ssm::layer_core(stack, l);
    cores.push_back(ssm::to_json(m));
    const auto inputs = ssm::is_time_varying(rc.train.stack.model) ? figure_inputs(rc, core_q) : std::vector<ssm::Sequence>{};
    std::ofstream os(dir / ("eig_layer" + std::to_string(l) + ".csv"));
    os << "model,input_id,step,re,im\n";
    os.precision(17);
    for (const auto& pt : ssm::eig_scatter(m, inputs))
      os << pt.model << "," << pt.input_id << "," << pt.step << "," << pt.z.real() << "," << pt.z.imag() << "\n";
  }
  write_json(dir / "init.json", {{"config", ssm::to_json(rc)}, {"cores", cores}});
  std::cout << "initialized " << stack.params.size() << " parameters in " << rc.train.stack.layers << " layers\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ssmlab: structured state space models at desk scale"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "JSON config file");
    sub->add_option("--set", common.overrides, "Override a config key, e.g. --set model.model=S6")->take_all();
    sub->add_option("--workers", common.workers, "Worker threads (default: SSM_WORKERS or hardware)")
        ->check(CLI::PositiveNumber);
    sub->add_option("--out", common.out, "Output directory")->capture_default_str();
  };

  bool inject_unstable = false, corrupt_gradient = false;
  auto* verify = app.add_subcommand("verify", "Run the property suites and write report.json");
  add_common(verify);
  verify->add_flag("--inject-unstable", inject_unstable, "Add a system with |abar| = 1.2 (must fail)");
  verify->add_flag("--corrupt-gradient", corrupt_gradient, "Perturb analytic gradients (must fail)");

  auto* train = app.add_subcommand("train", "Train a layer stack; writes metrics.jsonl and checkpoint.json");
  add_common(train);

  std::string checkpoint, split = "test";
  auto* eval = app.add_subcommand("eval", "Accuracy of a checkpoint on a regenerated split");
  add_common(eval);
  eval->add_option("--checkpoint", checkpoint, "checkpoint.json from train")->required();
  eval->add_option("--split", split)->check(CLI::IsMember({"train", "val", "test"}));

  auto* bench = app.add_subcommand("bench", "Time recurrence, scan and convolution; writes bench.csv");
  add_common(bench);
  auto* figure = app.add_subcommand("figure", "Eigenvalue scatter CSVs and a feature table");
  add_common(figure);
  auto* init = app.add_subcommand("init", "Initialize a stack and dump it");
  add_common(init);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kValidation;
  }

  try {
    if (verify->parsed()) return cmd_verify(common, inject_unstable, corrupt_gradient);
    if (train->parsed()) return cmd_train(common);
    if (eval->parsed()) return cmd_eval(common, checkpoint, split);
    if (bench->parsed()) return cmd_bench(common);
    if (figure->parsed()) return cmd_figure(common);
    if (init->parsed()) return cmd_init(common);
  } catch (const ssm::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return kDivergence;
  } catch (const ssm::ad::NonFiniteGradientError& e) {
    std::cerr << "divergence: " << e.what() << " (parameter " << e.param() << "); lower optim.lr\n";
    return kDivergence;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid configuration: " << e.what() << "\n";
    return kValidation;
  } catch (const json::exception& e) {
    std::cerr << "invalid configuration: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  }
  return kValidation;
}
