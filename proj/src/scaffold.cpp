#include "ssm/scaffold.hpp"

#include <cmath>
#include <random>
#include <set>

namespace ssm {

using nlohmann::json;

std::string_view to_string(ScaffoldKind kind) {
  switch (kind) {
    case ScaffoldKind::MLP: return "MLP";
    case ScaffoldKind::H3: return "H3";
    case ScaffoldKind::Mamba: return "Mamba";
  }
  return "?";
}

std::string_view to_string(GateNonlinearity g) {
  switch (g) {
    case GateNonlinearity::softmax: return "softmax";
    case GateNonlinearity::sigmoid: return "sigmoid";
    case GateNonlinearity::silu: return "silu";
  }
  return "?";
}

namespace {
std::string upper(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}
}  // namespace

ScaffoldKind parse_scaffold_kind(std::string_view name) {
  const std::string u = upper(name);
  if (u == "MLP") return ScaffoldKind::MLP;
  if (u == "H3") return ScaffoldKind::H3;
  if (u == "MAMBA") return ScaffoldKind::Mamba;
  throw std::invalid_argument("unknown scaffold kind: " + std::string(name));
}

GateNonlinearity parse_gate(std::string_view name) {
  const std::string u = upper(name);
  if (u == "SOFTMAX") return GateNonlinearity::softmax;
  if (u == "SIGMOID") return GateNonlinearity::sigmoid;
  if (u == "SILU") return GateNonlinearity::silu;
  throw std::invalid_argument("unknown gate nonlinearity: " + std::string(name));
}

namespace {

RVec apply_nonlinearity(const RVec& z, GateNonlinearity nl) {
  switch (nl) {
    case GateNonlinearity::sigmoid: return z.unaryExpr([](double x) { return sigmoid(x); });
    case GateNonlinearity::silu: return z.unaryExpr([](double x) { return x * sigmoid(x); });
    case GateNonlinearity::softmax: {
      const RVec e = (z.array() - z.maxCoeff()).exp();
      return e / e.sum();
    }
  }
  throw std::logic_error("unreachable");
}

}  // namespace

RVec gate(const RVec& x1, const RVec& x2, const RMat& w, GateNonlinearity nl) {
  if (x1.size() != x2.size() || w.rows() != x1.size() || w.cols() != x2.size())
    throw std::invalid_argument("gate: shape mismatch");
  return x1.cwiseProduct(apply_nonlinearity(w * x2, nl));
}

Sequence time_shift(const Sequence& u, int s) {
  if (s < 0) throw std::invalid_argument("time_shift: shift must be non-negative");
  RMat y = RMat::Zero(u.length(), u.channels());
  if (s < u.length()) y.bottomRows(u.length() - s) = u.data().topRows(u.length() - s);
  return Sequence(std::move(y));
}

Sequence causal_conv1d(const Sequence& u, const RMat& kernels) {
  if (kernels.rows() != u.channels() || kernels.cols() < 1)
    throw std::invalid_argument("causal_conv1d: kernels must be q x width");
  RMat y = RMat::Zero(u.length(), u.channels());
  for (int k = 0; k < u.length(); ++k)
    for (int i = 0; i < kernels.cols() && i <= k; ++i)
      y.row(k) += kernels.col(i).transpose().cwiseProduct(u.data().row(k - i));
  return Sequence(std::move(y));
}

namespace {

RMat glorot(std::mt19937_64& rng, int rows, int cols) {
  const double limit = std::sqrt(6.0 / (rows + cols));
  std::uniform_real_distribution<double> d(-limit, limit);
  RMat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

}  // namespace

Scaffold init_scaffold(ScaffoldKind kind, GateNonlinearity g, int q, std::uint64_t seed, int shift, int conv_width) {
  if (q < 1) throw std::invalid_argument("init_scaffold: width must be positive");
  if (shift < 0 || conv_width < 1) throw std::invalid_argument("init_scaffold: bad shift or conv width");
  std::mt19937_64 rng(derive_seed(seed, "scaffold"));
  Scaffold sc;
  sc.kind = kind;
  sc.gate = g;
  sc.shift = shift;
  sc.conv_width = conv_width;
  if (kind != ScaffoldKind::H3) sc.w_in = glorot(rng, q, q);
  if (kind != ScaffoldKind::MLP) sc.w_low = glorot(rng, q, q);
  if (kind == ScaffoldKind::Mamba) {
    std::uniform_real_distribution<double> d(-0.5 / conv_width, 0.5 / conv_width);
    sc.conv = RMat(q, conv_width);
    for (Eigen::Index i = 0; i < sc.conv.size(); ++i) sc.conv.data()[i] = d(rng);
    sc.conv.col(0).array() += 1.0;
  }
  sc.w_gate = glorot(rng, q, q);
  sc.w_out = glorot(rng, q, q);
  return sc;
}

namespace {

RMat rows_times(const RMat& x, const RMat& w) { return x * w.transpose(); }

}  // namespace

Sequence scaffold_forward(const Scaffold& sc, const CoreFn& core, const Sequence& u) {
  const RMat& x = u.data();
  if (x.cols() != sc.width()) throw std::invalid_argument("scaffold_forward: input width differs from scaffold");
  Sequence pre;
  RMat lower;
  switch (sc.kind) {
    case ScaffoldKind::MLP:
      pre = Sequence(rows_times(x, sc.w_in));
      lower = x;
      break;
    case ScaffoldKind::H3:
      pre = Sequence(RMat(x + time_shift(u, sc.shift).data()));
      lower = rows_times(x, sc.w_low);
      break;
    case ScaffoldKind::Mamba:
      pre = causal_conv1d(Sequence(rows_times(x, sc.w_in)), sc.conv);
      lower = rows_times(x, sc.w_low).unaryExpr([](double v) { return v * sigmoid(v); });
      break;
  }
  const Sequence upper = core(pre);
  if (upper.length() != u.length() || upper.channels() != sc.width())
    throw std::invalid_argument("scaffold_forward: core changed the sequence shape");
  RMat gated(u.length(), sc.width());
  for (int k = 0; k < u.length(); ++k) {
    const RVec x1 = upper.data().row(k).transpose();
    const RVec g = sc.force_open ? x1 : gate(x1, lower.row(k).transpose(), sc.w_gate, sc.gate);
    gated.row(k) = g.transpose();
  }
  return Sequence(rows_times(gated, sc.w_out));
}

void add_scaffold_params(ad::ParamStore& st, const std::string& pre, const Scaffold& sc) {
  if (sc.kind != ScaffoldKind::H3) st.add(pre + "w_in", sc.w_in);
  if (sc.kind != ScaffoldKind::MLP) st.add(pre + "w_low", sc.w_low);
  if (sc.kind == ScaffoldKind::Mamba) st.add(pre + "conv", sc.conv);
  st.add(pre + "w_gate", sc.w_gate);
  st.add(pre + "w_out", sc.w_out);
}

Scaffold extract_scaffold(const ad::ParamStore& st, const std::string& pre, const Scaffold& shape) {
  Scaffold sc = shape;
  if (sc.kind != ScaffoldKind::H3) sc.w_in = st.real(pre + "w_in");
  if (sc.kind != ScaffoldKind::MLP) sc.w_low = st.real(pre + "w_low");
  if (sc.kind == ScaffoldKind::Mamba) sc.conv = st.real(pre + "conv");
  sc.w_gate = st.real(pre + "w_gate");
  sc.w_out = st.real(pre + "w_out");
  return sc;
}

ad::Var scaffold_forward(ad::Tape& t, const ad::ParamStore& st, const std::string& pre, const Scaffold& shape,
                         const CoreVarFn& core, ad::Var u, ad::SeqLayout layout) {
  using namespace ssm::ad;
  Var up, lower;
  switch (shape.kind) {
    case ScaffoldKind::MLP:
      up = linear(u, t.param(st, pre + "w_in"));
      lower = u;
      break;
    case ScaffoldKind::H3:
      up = add(u, time_shift(u, layout, shape.shift));
      lower = linear(u, t.param(st, pre + "w_low"));
      break;
    case ScaffoldKind::Mamba:
      up = causal_conv(linear(u, t.param(st, pre + "w_in")), t.param(st, pre + "conv"), layout);
      lower = silu(linear(u, t.param(st, pre + "w_low")));
      break;
  }
  Var upper = core(up);
  Var gated = upper;
  if (!shape.force_open) {
    Var z = linear(lower, t.param(st, pre + "w_gate"));
    switch (shape.gate) {
      case GateNonlinearity::sigmoid: z = sigmoid(z); break;
      case GateNonlinearity::silu: z = silu(z); break;
      case GateNonlinearity::softmax: z = softmax_rows(z); break;
    }
    gated = mul(upper, z);
  }
  return linear(gated, t.param(st, pre + "w_out"));
}

void StackConfig::validate() const {
  if (layers < 1) throw std::invalid_argument("stack: at least one layer is required");
  if (q < 1 || p < 1) throw std::invalid_argument("stack: p and q must be positive");
  if (vocab < 1 || classes < 2) throw std::invalid_argument("stack: vocab >= 1 and classes >= 2 required");
  if ((model == ModelKind::S4 || model == ModelKind::S4D || model == ModelKind::S5) && p % 2 != 0)
    throw std::invalid_argument("stack: " + std::string(to_string(model)) + " needs an even state size");
  if (model == ModelKind::S5 && (s5_blocks < 1 || p % (2 * s5_blocks) != 0))
    throw std::invalid_argument("stack: S5 state size must split into even blocks");
  if (shift < 0 || conv_width < 1) throw std::invalid_argument("stack: bad shift or conv width");
  if (!(dynamics_lr_scale >= 0.0)) throw std::invalid_argument("stack: dynamics_lr_scale must be non-negative");
}

json to_json(const StackConfig& c) {
  return {{"model", std::string(to_string(c.model))},
          {"scaffold", std::string(to_string(c.scaffold))},
          {"gate", std::string(to_string(c.gate))},
          {"layers", c.layers},
          {"p", c.p},
          {"q", c.q},
          {"vocab", c.vocab},
          {"classes", c.classes},
          {"norm", c.norm},
          {"pooling", c.pooling == ad::Pooling::mean ? "mean" : "last"},
          {"shift", c.shift},
          {"conv_width", c.conv_width},
          {"s5_blocks", c.s5_blocks},
          {"r_min", c.lru_ring.r_min},
          {"r_max", c.lru_ring.r_max},
          {"max_phase", c.lru_ring.max_phase},
          {"delta_min", c.delta_range.first},
          {"delta_max", c.delta_range.second},
          {"dynamics_lr_scale", c.dynamics_lr_scale}};
}

StackConfig stack_config_from_json(const json& j) {
  static const std::set<std::string> known = {"model", "scaffold", "gate", "layers", "p", "q", "vocab", "classes",
                                              "norm", "pooling", "shift", "conv_width", "s5_blocks", "r_min",
                                              "r_max", "max_phase", "delta_min", "delta_max", "dynamics_lr_scale"};
  if (!j.is_object()) throw std::invalid_argument("stack config must be an object");
  for (const auto& [k, v] : j.items())
    if (!known.contains(k)) throw std::invalid_argument("stack config: unknown key '" + k + "'");
  StackConfig c;
  if (j.contains("model")) c.model = parse_model_kind(j["model"].get<std::string>());
  if (j.contains("scaffold")) c.scaffold = parse_scaffold_kind(j["scaffold"].get<std::string>());
  if (j.contains("gate")) c.gate = parse_gate(j["gate"].get<std::string>());
  c.layers = j.value("layers", c.layers);
  c.p = j.value("p", c.p);
  c.q = j.value("q", c.q);
  c.vocab = j.value("vocab", c.vocab);
  c.classes = j.value("classes", c.classes);
  c.norm = j.value("norm", c.norm);
  if (j.contains("pooling")) {
    const auto s = j["pooling"].get<std::string>();
    if (s == "mean") c.pooling = ad::Pooling::mean;
    else if (s == "last") c.pooling = ad::Pooling::last;
    else throw std::invalid_argument("stack config: pooling must be 'mean' or 'last'");
  }
  c.shift = j.value("shift", c.shift);
  c.conv_width = j.value("conv_width", c.conv_width);
  c.s5_blocks = j.value("s5_blocks", c.s5_blocks);
  c.lru_ring.r_min = j.value("r_min", c.lru_ring.r_min);
  c.lru_ring.r_max = j.value("r_max", c.lru_ring.r_max);
  c.lru_ring.max_phase = j.value("max_phase", c.lru_ring.max_phase);
  c.delta_range.first = j.value("delta_min", c.delta_range.first);
  c.delta_range.second = j.value("delta_max", c.delta_range.second);
  c.dynamics_lr_scale = j.value("dynamics_lr_scale", c.dynamics_lr_scale);
  c.validate();
  return c;
}

int core_state_size(const StackConfig& cfg) { return cfg.model == ModelKind::RGLRU ? cfg.q : cfg.p; }

std::string layer_prefix(int layer) { return "l" + std::to_string(layer) + "."; }

namespace {

Scaffold scaffold_shape(const StackConfig& cfg) {
  Scaffold sc;
  sc.kind = cfg.scaffold;
  sc.gate = cfg.gate;
  sc.shift = cfg.shift;
  sc.conv_width = cfg.conv_width;
  return sc;
}

}  // namespace

LayerStack init_stack(const StackConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  LayerStack st{cfg, {}};
  std::mt19937_64 rng(derive_seed(seed, "embed"));
  std::normal_distribution<double> nd(0.0, 1.0);
  RMat embed(cfg.vocab, cfg.q);
  for (Eigen::Index i = 0; i < embed.size(); ++i) embed.data()[i] = nd(rng);
  st.params.add("embed", embed);
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string pre = layer_prefix(l);
    if (cfg.norm) st.params.add(pre + "norm", RMat(RMat::Ones(1, cfg.q)));
    InitSpec spec;
    spec.model_kind = cfg.model;
    spec.p = core_state_size(cfg);
    spec.q = cfg.q;
    spec.lru_ring = cfg.lru_ring;
    spec.delta_range = cfg.delta_range;
    spec.seed = derive_seed(seed, "core", l);
    add_core_params(st.params, pre + "core.", init_model(spec, cfg.s5_blocks), cfg.dynamics_lr_scale);
    add_scaffold_params(st.params, pre + "scaf.",
                        init_scaffold(cfg.scaffold, cfg.gate, cfg.q, derive_seed(seed, "scaffold", l), cfg.shift,
                                      cfg.conv_width));
  }
  if (cfg.norm) st.params.add("final.norm", RMat(RMat::Ones(1, cfg.q)));
  std::mt19937_64 rng_h(derive_seed(seed, "head"));
  const double limit = std::sqrt(6.0 / (cfg.q + cfg.classes));
  std::uniform_real_distribution<double> ud(-limit, limit);
  RMat head(cfg.classes, cfg.q);
  for (Eigen::Index i = 0; i < head.size(); ++i) head.data()[i] = ud(rng_h);
  st.params.add("head.w", head);
  st.params.add("head.b", RMat(RMat::Zero(1, cfg.classes)));
  return st;
}

TokenBatch make_batch(const std::vector<const std::vector<int>*>& seqs, int pad_token) {
  if (seqs.empty()) throw std::invalid_argument("make_batch: empty batch");
  TokenBatch b;
  int len = 0;
  for (const auto* s : seqs) {
    if (s->empty()) throw std::invalid_argument("make_batch: empty sequence");
    len = std::max(len, static_cast<int>(s->size()));
  }
  b.layout = {static_cast<int>(seqs.size()), len};
  b.tokens.assign(static_cast<std::size_t>(b.layout.rows()), pad_token);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    std::copy(seqs[i]->begin(), seqs[i]->end(), b.tokens.begin() + i * len);
    b.lengths.push_back(static_cast<int>(seqs[i]->size()));
  }
  return b;
}

ad::Var stack_forward(ad::Tape& t, const ad::ParamStore& ps, const StackConfig& cfg, const TokenBatch& batch) {
  using namespace ssm::ad;
  const Scaffold shape = scaffold_shape(cfg);
  Var x = embedding(t.param(ps, "embed"), batch.tokens);
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string pre = layer_prefix(l);
    Var h = cfg.norm ? rms_norm(x, t.param(ps, pre + "norm")) : x;
    auto core = [&](Var v) { return core_forward(t, ps, pre + "core.", cfg.model, v, batch.layout); };
    x = add(x, scaffold_forward(t, ps, pre + "scaf.", shape, core, h, batch.layout));
  }
  if (cfg.norm) x = rms_norm(x, t.param(ps, "final.norm"));
  Var pooled = pool(x, batch.layout, batch.lengths, cfg.pooling);
  return linear(pooled, t.param(ps, "head.w"), t.param(ps, "head.b"));
}

RVec stack_forward(const LayerStack& stack, const std::vector<int>& tokens) {
  const TokenBatch b = make_batch({&tokens});
  ad::Tape t(false);
  return stack_forward(t, stack.params, stack.cfg, b).real().row(0).transpose();
}

AnyModel layer_core(const LayerStack& stack, int layer) {
  return extract_core(stack.params, layer_prefix(layer) + "core.", stack.cfg.model);
}

Scaffold layer_scaffold(const LayerStack& stack, int layer) {
  return extract_scaffold(stack.params, layer_prefix(layer) + "scaf.", scaffold_shape(stack.cfg));
}

}  // namespace ssm
