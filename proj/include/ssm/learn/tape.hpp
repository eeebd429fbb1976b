#pragma once

#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ssm/core.hpp"

namespace ssm::ad {

class ParamStore;
class Tape;

class UnregisteredOpError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Handle to a tape node. Cheap to copy; valid while its tape lives.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  int id() const { return id_; }

  bool is_complex() const;
  const RMat& real() const;
  const CMat& cplx() const;
  Eigen::Index rows() const;
  Eigen::Index cols() const;
  /// Value of a 1 x 1 real node.
  double item() const;

 private:
  friend class Tape;
  Var(Tape* t, int id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode tape over real and complex matrices.
///
/// Gradients of complex nodes are stored as dL/dRe + i dL/dIm, so for a
/// holomorphic y = f(x) the chain rule reads g_x += g_y * conj(f'(x)).
class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(RMat value);
  Var constant(CMat value);
  /// Leaf that receives a gradient.
  Var variable(RMat value);
  Var variable(CMat value);
  /// Leaf bound to a named parameter; accumulate() routes its gradient back.
  Var param(const ParamStore& store, const std::string& name);

  /// Appends an op node. `op` must be registered for backward() to accept it.
  Var push(std::string_view op, RMat value, std::initializer_list<Var> parents, Backward bw);
  Var push(std::string_view op, CMat value, std::initializer_list<Var> parents, Backward bw);
  Var push(std::string_view op, RMat value, const std::vector<Var>& parents, Backward bw);

  /// Seeds dL/dL = 1 on a 1 x 1 real node and runs every recorded backward in reverse.
  void backward(Var loss);
  /// Adds parameter-leaf gradients into the store's gradient buffer.
  void accumulate(ParamStore& store) const;
  /// Same, into an external buffer laid out like store.grads(), scaled by weight.
  void accumulate(const ParamStore& layout, std::span<double> grads, double weight) const;

  const RMat& real(int id) const;
  const CMat& cplx(int id) const;
  bool is_complex(int id) const { return nodes_[id].is_complex; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }

  /// Output gradient of a node (zeros if nothing flowed into it).
  const RMat& grad_real(int id);
  const CMat& grad_cplx(int id);
  void add_grad(int id, const RMat& g);
  void add_grad(int id, const CMat& g);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::string_view op;
    bool is_complex = false;
    bool needs_grad = false;
    RMat rv;
    CMat cv;
    RMat rg;
    CMat cg;
    bool grad_init = false;
    Backward backward;
    std::string param_name;
  };

  Var push_node(Node node, bool any_parent_needs_grad, Backward bw);
  void ensure_grad(Node& n);

  bool record_;
  std::deque<Node> nodes_;
};

/// Ops must be registered before their backward can run.
void register_op(std::string_view name);
bool is_registered(std::string_view name);

}  // namespace ssm::ad
