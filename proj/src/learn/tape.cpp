#include "ssm/learn/tape.hpp"

#include <mutex>
#include <set>

#include "ssm/learn/param_store.hpp"

namespace ssm::ad {

namespace {

std::mutex& registry_mutex() {
  static std::mutex m;
  return m;
}

std::set<std::string, std::less<>>& registry() {
  static std::set<std::string, std::less<>> names = {
      "leaf",       "add",        "sub",         "mul",          "scale",       "add_scalar",   "matmul",
      "linear",     "transpose",  "exp",         "log",          "sigmoid",     "softplus",     "silu",
      "square",     "sqrt1m_sq",  "phi1",        "softmax_rows", "rms_norm",    "sum",          "mean",
      "embedding",  "pool",       "cross_entropy", "time_shift", "causal_conv", "fft_conv",     "tile_cols",
      "row_outer",  "row_contract", "scan_real", "scan_complex", "concat_cols", "make_complex", "real_part",
      "cadd",       "cmul",       "cmul_real",   "cscale",       "cexp",        "crecip",       "cphi1",
      "mirror_cols", "row_dot",   "cmatmul_rc",  "re_matmul_bt", "vandermonde"};
  return names;
}

}  // namespace

void register_op(std::string_view name) {
  std::lock_guard lock(registry_mutex());
  registry().emplace(name);
}

bool is_registered(std::string_view name) {
  std::lock_guard lock(registry_mutex());
  return registry().contains(name);
}

bool Var::is_complex() const { return tape_->is_complex(id_); }
const RMat& Var::real() const { return tape_->real(id_); }
const CMat& Var::cplx() const { return tape_->cplx(id_); }
Eigen::Index Var::rows() const { return is_complex() ? cplx().rows() : real().rows(); }
Eigen::Index Var::cols() const { return is_complex() ? cplx().cols() : real().cols(); }

double Var::item() const {
  const RMat& v = real();
  if (v.size() != 1) throw std::invalid_argument("item: node is not a scalar");
  return v(0, 0);
}

Var Tape::push_node(Node node, bool needs_grad, Backward bw) {
  node.needs_grad = needs_grad && record_;
  if (node.needs_grad) node.backward = std::move(bw);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(RMat value) {
  Node n;
  n.op = "leaf";
  n.rv = std::move(value);
  return push_node(std::move(n), false, {});
}

Var Tape::constant(CMat value) {
  Node n;
  n.op = "leaf";
  n.is_complex = true;
  n.cv = std::move(value);
  return push_node(std::move(n), false, {});
}

Var Tape::variable(RMat value) {
  Node n;
  n.op = "leaf";
  n.rv = std::move(value);
  return push_node(std::move(n), true, {});
}

Var Tape::variable(CMat value) {
  Node n;
  n.op = "leaf";
  n.is_complex = true;
  n.cv = std::move(value);
  return push_node(std::move(n), true, {});
}

Var Tape::param(const ParamStore& store, const std::string& name) {
  const auto& seg = store.segment(name);
  Var v = seg.complex ? variable(store.cplx(name)) : variable(store.real(name));
  nodes_[v.id()].param_name = name;
  return v;
}

namespace {
bool any_needs(const Tape& t, std::initializer_list<Var> parents) {
  for (const Var& p : parents)
    if (t.needs_grad(p.id())) return true;
  return false;
}
}  // namespace

Var Tape::push(std::string_view op, RMat value, std::initializer_list<Var> parents, Backward bw) {
  Node n;
  n.op = op;
  n.rv = std::move(value);
  return push_node(std::move(n), any_needs(*this, parents), std::move(bw));
}

Var Tape::push(std::string_view op, CMat value, std::initializer_list<Var> parents, Backward bw) {
  Node n;
  n.op = op;
  n.is_complex = true;
  n.cv = std::move(value);
  return push_node(std::move(n), any_needs(*this, parents), std::move(bw));
}

Var Tape::push(std::string_view op, RMat value, const std::vector<Var>& parents, Backward bw) {
  bool need = false;
  for (const Var& p : parents) need = need || needs_grad(p.id());
  Node n;
  n.op = op;
  n.rv = std::move(value);
  return push_node(std::move(n), need, std::move(bw));
}

const RMat& Tape::real(int id) const {
  const Node& n = nodes_.at(id);
  if (n.is_complex) throw std::logic_error("tape: real value requested from complex node");
  return n.rv;
}

const CMat& Tape::cplx(int id) const {
  const Node& n = nodes_.at(id);
  if (!n.is_complex) throw std::logic_error("tape: complex value requested from real node");
  return n.cv;
}

void Tape::ensure_grad(Node& n) {
  if (n.grad_init) return;
  if (n.is_complex) n.cg = CMat::Zero(n.cv.rows(), n.cv.cols());
  else n.rg = RMat::Zero(n.rv.rows(), n.rv.cols());
  n.grad_init = true;
}

const RMat& Tape::grad_real(int id) {
  Node& n = nodes_.at(id);
  ensure_grad(n);
  return n.rg;
}

const CMat& Tape::grad_cplx(int id) {
  Node& n = nodes_.at(id);
  ensure_grad(n);
  return n.cg;
}

void Tape::add_grad(int id, const RMat& g) {
  Node& n = nodes_.at(id);
  if (!n.needs_grad) return;
  if (n.is_complex) {
    add_grad(id, CMat(g.cast<ssm::cplx>()));
    return;
  }
  if (g.rows() != n.rv.rows() || g.cols() != n.rv.cols())
    throw std::logic_error("tape: gradient shape mismatch at op " + std::string(n.op));
  if (!n.grad_init) {
    n.rg = g;
    n.grad_init = true;
  } else {
    n.rg += g;
  }
}

void Tape::add_grad(int id, const CMat& g) {
  Node& n = nodes_.at(id);
  if (!n.needs_grad) return;
  if (!n.is_complex) {
    // Real node fed by a complex consumer: only the real part is a direction.
    add_grad(id, RMat(g.real()));
    return;
  }
  if (g.rows() != n.cv.rows() || g.cols() != n.cv.cols())
    throw std::logic_error("tape: gradient shape mismatch at op " + std::string(n.op));
  if (!n.grad_init) {
    n.cg = g;
    n.grad_init = true;
  } else {
    n.cg += g;
  }
}

void Tape::backward(Var loss) {
  if (loss.tape_ != this) throw std::invalid_argument("backward: variable belongs to another tape");
  Node& root = nodes_.at(loss.id());
  if (root.is_complex || root.rv.size() != 1) throw std::invalid_argument("backward: loss must be a real scalar");
  for (const Node& n : nodes_)
    if (n.needs_grad && !is_registered(n.op))
      throw UnregisteredOpError("backward: op '" + std::string(n.op) + "' is not registered");
  if (!root.needs_grad) return;
  ensure_grad(root);
  root.rg(0, 0) += 1.0;
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs_grad || !n.grad_init || !n.backward) continue;
    n.backward(*this, id);
  }
}

void Tape::accumulate(ParamStore& store) const {
  for (const Node& n : nodes_) {
    if (n.param_name.empty() || !n.grad_init) continue;
    if (n.is_complex) store.add_grad(n.param_name, n.cg);
    else store.add_grad(n.param_name, n.rg);
  }
}

void Tape::accumulate(const ParamStore& layout, std::span<double> grads, double weight) const {
  if (grads.size() != layout.size()) throw std::invalid_argument("accumulate: buffer does not match the store");
  for (const Node& n : nodes_) {
    if (n.param_name.empty() || !n.grad_init) continue;
    const auto& seg = layout.segment(n.param_name);
    const double* src = n.is_complex ? reinterpret_cast<const double*>(n.cg.data()) : n.rg.data();
    for (std::size_t i = 0; i < seg.size(); ++i) grads[seg.offset + i] += weight * src[i];
  }
}

}  // namespace ssm::ad
