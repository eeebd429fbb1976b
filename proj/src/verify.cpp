#include "ssm/verify.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "ssm/discretize.hpp"
#include "ssm/exec.hpp"
#include "ssm/init.hpp"
#include "ssm/learn/ops.hpp"
#include "ssm/models.hpp"

namespace ssm {

using nlohmann::json;

bool VerifyReport::all_passed() const {
  for (const auto& c : checks)
    if (!c.passed) return false;
  return true;
}

json VerifyReport::to_json() const {
  json arr = json::array();
  for (const auto& c : checks)
    arr.push_back({{"suite", c.suite},
                   {"name", c.name},
                   {"passed", c.passed},
                   {"measured", std::isfinite(c.measured) ? json(c.measured) : json("inf")},
                   {"tolerance", c.tolerance},
                   {"detail", c.detail}});
  return {{"format_version", 1}, {"all_passed", all_passed()}, {"checks", arr}};
}

double max_rel_diff(const RMat& a, const RMat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return INFINITY;
  const double scale = b.cwiseAbs().maxCoeff();
  const double d = (a - b).cwiseAbs().maxCoeff();
  return scale > 0.0 ? d / scale : d;
}

double max_rel_diff(const CMat& a, const CMat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return INFINITY;
  const double scale = b.cwiseAbs().maxCoeff();
  const double d = (a - b).cwiseAbs().maxCoeff();
  return scale > 0.0 ? d / scale : d;
}

DiscreteSystem random_stable_system(std::uint64_t seed, int p, int q, double max_modulus) {
  if (p < 1 || q < 1) throw std::invalid_argument("random_stable_system: p and q must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  DiscreteSystem sys;
  sys.abar.resize(p);
  sys.bbar.resize(p, q);
  sys.cbar.resize(q, p);
  // Moduli skewed toward the rim so long memories are exercised.
  auto modulus = [&] { return max_modulus * (1.0 - std::pow(unit(rng), 3.0)); };
  const double s = 1.0 / std::sqrt(static_cast<double>(p));
  for (int i = 0; i + 1 < p; i += 2) {
    const cplx a = std::polar(modulus(), std::numbers::pi * unit(rng));
    sys.abar(i) = a;
    sys.abar(i + 1) = std::conj(a);
    for (int j = 0; j < q; ++j) {
      const cplx b(gauss(rng) * s, gauss(rng) * s), c(gauss(rng) * s, gauss(rng) * s);
      sys.bbar(i, j) = b;
      sys.bbar(i + 1, j) = std::conj(b);
      sys.cbar(j, i) = c;
      sys.cbar(j, i + 1) = std::conj(c);
    }
  }
  if (p % 2) {
    sys.abar(p - 1) = (unit(rng) < 0.5 ? -1.0 : 1.0) * modulus();
    for (int j = 0; j < q; ++j) {
      sys.bbar(p - 1, j) = gauss(rng) * s;
      sys.cbar(j, p - 1) = gauss(rng) * s;
    }
  }
  sys.dbar = RVec::NullaryExpr(q, [&] { return gauss(rng); });
  return sys;
}

namespace {

Sequence random_sequence(std::mt19937_64& rng, int T, int q, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  return Sequence(RMat::NullaryExpr(T, q, [&] { return g(rng); }));
}

void add(VerifyReport& rep, std::string suite, std::string name, double measured, double tol, std::string detail = {}) {
  rep.checks.push_back({std::move(suite), std::move(name), measured <= tol, measured, tol, std::move(detail)});
}

// Independent loops written from the model definitions.
RMat s6_loop(const S6Model& m, const Sequence& u) {
  const int n = m.state_size(), q = m.channels(), T = u.length();
  RMat x = RMat::Zero(q, n);
  RMat y(T, q);
  for (int k = 0; k < T; ++k) {
    const RVec uk = u.data().row(k).transpose();
    const double dk = std::log1p(std::exp(m.w_delta.row(0).dot(uk) + m.delta_bias));
    const RVec bk = m.w_b * uk, ck = m.w_c * uk;
    for (int j = 0; j < q; ++j) {
      for (int i = 0; i < n; ++i)
        x(j, i) = std::exp(dk * m.lambda(i)) * x(j, i) + std::expm1(dk * m.lambda(i)) / m.lambda(i) * bk(i) * uk(j);
      y(k, j) = x.row(j).dot(ck.transpose()) + m.d(j) * uk(j);
    }
  }
  return y;
}

RMat rglru_loop(const RgLruModel& m, const Sequence& u) {
  const int p = m.channels(), T = u.length();
  RVec x = RVec::Zero(p);
  RMat y(T, p);
  for (int k = 0; k < T; ++k) {
    const RVec uk = u.data().row(k).transpose();
    const RVec ra = m.w_delta * uk, rb = m.w_b * uk;
    for (int i = 0; i < p; ++i) {
      const double a = std::exp(-m.c * std::log1p(std::exp(m.w_a(i))) / (1.0 + std::exp(-ra(i))));
      x(i) = a * x(i) + std::sqrt(1.0 - a * a) * uk(i) / (1.0 + std::exp(-rb(i)));
    }
    y.row(k) = x.transpose();
  }
  return y;
}

}  // namespace

void suite_discretization(VerifyReport& rep, const VerifyConfig&) {
  ContinuousSystem sys;
  sys.lambda = CVec::Constant(1, -1.0);
  sys.B = CMat::Ones(1, 1);
  sys.C = CMat::Ones(1, 1);
  sys.D = RVec::Zero(1);
  sys.delta = 0.1;
  const double bil = std::abs(bilinear(sys).abar(0) - cplx(0.95 / 1.05));
  add(rep, "discretization", "bilinear golden value", bil, 1e-12, "lambda=-1, delta=0.1 -> 0.95/1.05");
  const double z = std::abs(zoh(sys).abar(0) - cplx(std::exp(-0.1)));
  add(rep, "discretization", "zoh golden value", z, 1e-12, "lambda=-1, delta=0.1 -> exp(-0.1)");

  // Sherman-Morrison path against dense inverses.
  double worst = 0.0;
  for (int p = 1; p <= 8; ++p) {
    std::mt19937_64 rng(derive_seed(0, "dplr", p));
    std::normal_distribution<double> g(0.0, 1.0);
    ContinuousSystem s;
    s.lambda = CVec::NullaryExpr(p, [&] { return cplx(-0.1 - std::abs(g(rng)), g(rng)); });
    s.low_rank = LowRank{CVec::NullaryExpr(p, [&] { return cplx(g(rng), g(rng)) * 0.3; }),
                         CVec::NullaryExpr(p, [&] { return cplx(g(rng), g(rng)) * 0.3; })};
    s.B = CMat::NullaryExpr(p, 2, [&] { return cplx(g(rng), g(rng)); });
    s.C = CMat::NullaryExpr(2, p, [&] { return cplx(g(rng), g(rng)); });
    s.D = RVec::Zero(2);
    s.delta = 0.05 + 0.1 * std::abs(g(rng));
    const Eigen::MatrixXcd A = Eigen::MatrixXcd(s.lambda.asDiagonal()) + s.low_rank->r * s.low_rank->s.adjoint();
    const Eigen::MatrixXcd I = Eigen::MatrixXcd::Identity(p, p);
    const double h = 0.5 * s.delta;
    const Eigen::MatrixXcd left = (I - h * A).inverse();
    const CMat abar = left * (I + h * A);
    const CMat bbar = left * (s.delta * Eigen::MatrixXcd(s.B));
    const DplrDiscrete d(s);
    worst = std::max({worst, max_rel_diff(d.dense_transition(), abar), max_rel_diff(d.bbar(), bbar)});
  }
  add(rep, "discretization", "dplr sherman-morrison vs dense", worst, 1e-12, "p = 1..8");
}

void suite_equivalence(VerifyReport& rep, const VerifyConfig& cfg) {
  double worst = 0.0;
  std::string where;
  for (int s = 0; s < cfg.lti_systems; ++s) {
    std::mt19937_64 rng(derive_seed(cfg.seed, "equivalence", s));
    const int p = 1 + static_cast<int>(rng() % 64), q = 1 + static_cast<int>(rng() % 8);
    const DiscreteSystem sys = random_stable_system(rng(), p, q);
    for (int T : {8, 257, 1024}) {
      const Sequence u = random_sequence(rng, T, q);
      const RMat rec = run_recurrent(sys, u).data();
      const double e1 = max_rel_diff(run_scan(sys, u, {.workers = cfg.workers}).data(), rec);
      const double e2 = max_rel_diff(run_convolution(sys, u, cfg.workers).data(), rec);
      if (std::max(e1, e2) > worst) {
        worst = std::max(e1, e2);
        where = "system " + std::to_string(s) + " (p=" + std::to_string(p) + ", q=" + std::to_string(q) +
                ", T=" + std::to_string(T) + ")";
      }
    }
  }
  add(rep, "equivalence", "recurrence vs scan vs convolution", worst, 1e-8,
      std::to_string(cfg.lti_systems) + " systems; worst at " + where);
}

void suite_ltv_scan(VerifyReport& rep, const VerifyConfig& cfg) {
  double w6 = 0.0, wr = 0.0;
  for (int s = 0; s < cfg.ltv_instances; ++s) {
    std::mt19937_64 rng(derive_seed(cfg.seed, "ltv", s));
    const int T = 1 + static_cast<int>(rng() % 512);
    InitSpec spec;
    spec.seed = rng();
    spec.p = 1 + static_cast<int>(rng() % 8);
    spec.q = 1 + static_cast<int>(rng() % 6);
    spec.model_kind = ModelKind::S6;
    const S6Model s6 = init_s6(spec);
    const Sequence u = random_sequence(rng, T, spec.q);
    w6 = std::max(w6, max_rel_diff(s6_forward(s6, u, cfg.workers).data(), s6_loop(s6, u)));
    spec.model_kind = ModelKind::RGLRU;
    spec.p = spec.q;
    const RgLruModel rg = init_rglru(spec);
    wr = std::max(wr, max_rel_diff(rglru_forward(rg, u, cfg.workers).data(), rglru_loop(rg, u)));
  }
  add(rep, "ltv_scan", "S6 scan vs loop", w6, 1e-10, std::to_string(cfg.ltv_instances) + " instances, T <= 512");
  add(rep, "ltv_scan", "RG-LRU scan vs loop", wr, 1e-10, std::to_string(cfg.ltv_instances) + " instances, T <= 512");
}

void suite_associativity(VerifyReport& rep, const VerifyConfig& cfg) {
  std::mt19937_64 rng(derive_seed(cfg.seed, "assoc"));
  std::uniform_real_distribution<double> un(-1.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < cfg.assoc_triples; ++i) {
    const int p = 1 + static_cast<int>(rng() % 4);
    auto elem = [&] {
      ScanElement<cplx> e;
      e.a = Eigen::VectorXcd::NullaryExpr(p, [&] { return cplx(un(rng), un(rng)) * 0.7; });
      e.b = Eigen::VectorXcd::NullaryExpr(p, [&] { return cplx(un(rng), un(rng)); });
      return e;
    };
    const auto e1 = elem(), e2 = elem(), e3 = elem();
    const auto l = combine(combine(e1, e2), e3), r = combine(e1, combine(e2, e3));
    worst = std::max({worst, (l.a - r.a).cwiseAbs().maxCoeff(), (l.b - r.b).cwiseAbs().maxCoeff()});
  }
  add(rep, "associativity", "combine is associative", worst, 1e-14, std::to_string(cfg.assoc_triples) + " triples");

  double inv = 0.0;
  for (int T : {1, 63, 1000, 4097}) {
    const int p = 5;
    SMat<cplx> a(T, p), d(T, p);
    for (int k = 0; k < T; ++k)
      for (int i = 0; i < p; ++i) {
        a(k, i) = std::polar(0.5 + 0.499 * std::abs(un(rng)), 3.0 * un(rng));
        d(k, i) = cplx(un(rng), un(rng));
      }
    const SMat<cplx> ref = scan_sequential<cplx>(a, d);
    for (int w : {1, 2, 3, 4, 8}) inv = std::max(inv, max_rel_diff(CMat(scan<cplx>(a, d, {.workers = w, .min_chunk = 8})), CMat(ref)));
  }
  add(rep, "associativity", "scan invariant to worker count", inv, 1e-10, "workers 1,2,3,4,8 vs sequential loop");
}

void suite_eigen_disk(VerifyReport& rep, const VerifyConfig& cfg) {
  int outside = 0;
  double max_mod = 0.0;
  std::string first;
  auto note = [&](const std::string& what, cplx z, double bound) {
    max_mod = std::max(max_mod, std::abs(z));
    if (std::abs(z) > bound + 1e-12) {
      if (!outside) first = what;
      ++outside;
    }
  };
  int ring_violations = 0;
  int gate_violations = 0;
  for (int s = 0; s < cfg.init_seeds; ++s) {
    for (ModelKind kind : {ModelKind::S4, ModelKind::S4D, ModelKind::S5, ModelKind::LRU, ModelKind::S6, ModelKind::RGLRU}) {
      InitSpec spec;
      spec.model_kind = kind;
      spec.seed = derive_seed(cfg.seed, "disk", s);
      spec.p = 8;
      spec.q = kind == ModelKind::RGLRU ? 8 : 2;
      const AnyModel m = init_model(spec, kind == ModelKind::S5 ? 2 : 1);
      std::vector<Sequence> inputs;
      if (is_time_varying(kind)) {
        std::mt19937_64 rng(derive_seed(cfg.seed, "disk_input", s));
        inputs.push_back(random_sequence(rng, 32, spec.q, 3.0));
      }
      for (const auto& pt : eig_scatter(m, inputs)) {
        note(std::string(to_string(kind)) + " seed " + std::to_string(s), pt.z, 1.0);
        if (kind == ModelKind::LRU) {
          const double r = std::abs(pt.z);
          if (r < spec.lru_ring.r_min - 1e-12 || r > spec.lru_ring.r_max + 1e-12) ++ring_violations;
        }
        if (is_time_varying(kind) && !(pt.z.real() > 0.0 && pt.z.real() < 1.0)) ++gate_violations;
      }
    }
  }
  if (cfg.inject_unstable) {
    DiscreteSystem bad = random_stable_system(cfg.seed, 4, 1);
    bad.abar(0) = 1.2;
    for (int i = 0; i < bad.state_size(); ++i) note("injected system", bad.abar(i), 1.0);
    if (!validate_system(bad).empty() && !outside) first = "injected system";
  }
  rep.checks.push_back({"eigen_disk", "initial eigenvalues in closed unit disk", outside == 0, static_cast<double>(outside), 0.0,
                        outside ? std::to_string(outside) + " outside; first: " + first +
                                      "; max modulus " + std::to_string(max_mod)
                                : "max modulus " + std::to_string(max_mod)});
  rep.checks.push_back({"eigen_disk", "LRU moduli within ring", ring_violations == 0, static_cast<double>(ring_violations), 0.0,
                        std::to_string(cfg.init_seeds) + " seeds"});
  rep.checks.push_back({"eigen_disk", "S6/RG-LRU per-step eigenvalues in (0,1)", gate_violations == 0,
                        static_cast<double>(gate_violations), 0.0, std::to_string(cfg.init_seeds) + " input streams"});
}

void suite_memory(VerifyReport& rep, const VerifyConfig&) {
  DiscreteSystem sys;
  sys.abar = CVec::Constant(1, 0.999);
  sys.bbar = CMat::Ones(1, 1);
  sys.cbar = CMat::Ones(1, 1);
  sys.dbar = RVec::Zero(1);
  RMat u = RMat::Zero(1001, 1);
  u(0, 0) = 1.0;
  const RMat y = run_recurrent(sys, Sequence(u)).data();
  double oracle = 1.0;
  for (int i = 0; i < 1000; ++i) oracle *= 0.999;
  add(rep, "memory", "impulse decay 0.999^1000", std::abs(y(1000, 0) / y(0, 0) - oracle), 1e-5,
      "y(1000)/y(0) = " + std::to_string(y(1000, 0) / y(0, 0)));
}

GradProblem make_grad_problem(ModelKind model, ScaffoldKind scaffold, std::uint64_t seed, int p, int q, int length) {
  GradProblem gp;
  StackConfig sc;
  sc.model = model;
  sc.scaffold = scaffold;
  sc.layers = 1;
  sc.p = p;
  sc.q = q;
  sc.vocab = 6;
  sc.classes = 3;
  sc.conv_width = 3;
  sc.shift = 2;
  // Larger steps give the check a meaningful gradient through the dynamics.
  sc.delta_range = {0.05, 0.5};
  gp.stack = init_stack(sc, seed);
  std::mt19937_64 rng(derive_seed(seed, "gradprob"));
  gp.seqs = {std::vector<int>(length), std::vector<int>(length - 3)};
  for (auto& s : gp.seqs)
    for (int& t : s) t = static_cast<int>(rng() % sc.vocab);
  gp.labels = {0, 2};
  gp.batch = make_batch({&gp.seqs[0], &gp.seqs[1]});
  const TokenBatch batch = gp.batch;
  const std::vector<int> labels = gp.labels;
  gp.loss = [sc, batch, labels](ad::Tape& t, const ad::ParamStore& s) {
    return ad::cross_entropy(stack_forward(t, s, sc, batch), labels);
  };
  return gp;
}

ad::GradCheckResult check_stack_gradient(ModelKind model, ScaffoldKind scaffold, std::uint64_t seed, bool corrupt) {
  GradProblem gp = make_grad_problem(model, scaffold, seed);
  ad::GradCheckOptions opts;
  opts.eps = 1e-5;
  std::function<void(ad::ParamStore&)> fault;
  if (corrupt)
    fault = [](ad::ParamStore& s) {
      for (double& g : s.grads()) g = g * 1.5 + 1e-3;
    };
  return ad::finite_diff_check(gp.loss, gp.stack.params, opts, fault);
}

void suite_gradient(VerifyReport& rep, const VerifyConfig& cfg) {
  for (ModelKind m : {ModelKind::S4, ModelKind::S4D, ModelKind::S5, ModelKind::LRU, ModelKind::S6, ModelKind::RGLRU})
    for (ScaffoldKind s : {ScaffoldKind::MLP, ScaffoldKind::H3, ScaffoldKind::Mamba}) {
      const auto r = check_stack_gradient(m, s, derive_seed(cfg.seed, "gradient"), cfg.corrupt_gradient);
      add(rep, "gradient", std::string(to_string(m)) + " x " + std::string(to_string(s)), r.max_rel_error, 1e-4,
          std::to_string(r.checked) + " coords; worst " + r.worst_param + "[" + std::to_string(r.worst_index) +
              "] analytic " + std::to_string(r.analytic) + " numeric " + std::to_string(r.numeric));
    }
}

VerifyReport run_verify(const VerifyConfig& cfg) {
  VerifyReport rep;
  suite_discretization(rep, cfg);
  suite_equivalence(rep, cfg);
  suite_ltv_scan(rep, cfg);
  suite_associativity(rep, cfg);
  suite_eigen_disk(rep, cfg);
  suite_memory(rep, cfg);
  suite_gradient(rep, cfg);
  return rep;
}

}  // namespace ssm
