#pragma once

#include <cstdint>
#include <functional>
#include <json.hpp>
#include <string>
#include <vector>

#include "ssm/core.hpp"
#include "ssm/core_graph.hpp"
#include "ssm/init.hpp"
#include "ssm/learn/ops.hpp"
#include "ssm/learn/param_store.hpp"
#include "ssm/models.hpp"

namespace ssm {

enum class ScaffoldKind { MLP, H3, Mamba };
enum class GateNonlinearity { softmax, sigmoid, silu };

std::string_view to_string(ScaffoldKind kind);
std::string_view to_string(GateNonlinearity g);
ScaffoldKind parse_scaffold_kind(std::string_view name);
GateNonlinearity parse_gate(std::string_view name);

/// x1 . sigma(W x2).
RVec gate(const RVec& x1, const RVec& x2, const RMat& w, GateNonlinearity nl);
/// y(k) = u(k - s), zero before the start.
Sequence time_shift(const Sequence& u, int s);
/// Per-channel causal FIR with kernels (q x width): y(k, j) = sum_i kernels(j, i) u(k - i, j).
Sequence causal_conv1d(const Sequence& u, const RMat& kernels);

/// Pre/post-processing around a core. All projections are q x q.
///   MLP:   upper = core(W_in u),               lower = u
///   H3:    upper = core(u + shift_s(u)),       lower = W_low u
///   Mamba: upper = core(conv(W_in u)),         lower = SiLU(W_low u)
///   out = W_out (upper . sigma(W_gate lower))
struct Scaffold {
  ScaffoldKind kind = ScaffoldKind::MLP;
  GateNonlinearity gate = GateNonlinearity::sigmoid;
  int shift = 1;          // H3
  int conv_width = 4;     // Mamba
  bool force_open = false;  // sigma == 1; reduces the gate to a pass-through
  RMat w_in, w_low, conv, w_gate, w_out;

  int width() const { return static_cast<int>(w_gate.rows()); }
};

/// Random projections (Glorot uniform); conv kernels start near a unit impulse.
Scaffold init_scaffold(ScaffoldKind kind, GateNonlinearity g, int q, std::uint64_t seed, int shift = 1,
                       int conv_width = 4);

using CoreFn = std::function<Sequence(const Sequence&)>;
Sequence scaffold_forward(const Scaffold& sc, const CoreFn& core, const Sequence& u);

void add_scaffold_params(ad::ParamStore& store, const std::string& prefix, const Scaffold& sc);
Scaffold extract_scaffold(const ad::ParamStore& store, const std::string& prefix, const Scaffold& shape);
using CoreVarFn = std::function<ad::Var(ad::Var)>;
ad::Var scaffold_forward(ad::Tape& tape, const ad::ParamStore& store, const std::string& prefix, const Scaffold& shape,
                         const CoreVarFn& core, ad::Var u, ad::SeqLayout layout);

struct StackConfig {
  ModelKind model = ModelKind::S4D;
  ScaffoldKind scaffold = ScaffoldKind::MLP;
  GateNonlinearity gate = GateNonlinearity::sigmoid;
  int layers = 2;
  int p = 16;  // state size: per channel for S4/S4D; ignored by RG-LRU (p = q)
  int q = 32;
  int vocab = 18;
  int classes = 10;
  bool norm = true;
  ad::Pooling pooling = ad::Pooling::mean;
  int shift = 1;
  int conv_width = 4;
  int s5_blocks = 1;
  LruRing lru_ring;
  std::pair<double, double> delta_range{1e-3, 1e-1};
  double dynamics_lr_scale = kDynamicsLrScale;

  void validate() const;
};

nlohmann::json to_json(const StackConfig& cfg);
/// Rejects unknown keys.
StackConfig stack_config_from_json(const nlohmann::json& j);

/// Token embedding, L residual layers x <- x + scaffold(norm(x)), final norm,
/// pooling and a linear classifier. Parameters live in one ParamStore.
struct LayerStack {
  StackConfig cfg;
  ad::ParamStore params;
};

LayerStack init_stack(const StackConfig& cfg, std::uint64_t seed);
/// State size handed to each core (q for RG-LRU).
int core_state_size(const StackConfig& cfg);
std::string layer_prefix(int layer);

/// Batch of right-padded token sequences.
struct TokenBatch {
  std::vector<int> tokens;   // batch * length, row-major by sequence
  std::vector<int> lengths;  // valid steps per sequence
  ad::SeqLayout layout;
};
TokenBatch make_batch(const std::vector<const std::vector<int>*>& seqs, int pad_token = 0);

/// Differentiable logits (batch x classes).
ad::Var stack_forward(ad::Tape& tape, const ad::ParamStore& params, const StackConfig& cfg, const TokenBatch& batch);
/// Logits of one token sequence, no gradient recording.
RVec stack_forward(const LayerStack& stack, const std::vector<int>& tokens);

/// Plain model and scaffold of one layer, rebuilt from the stack parameters.
AnyModel layer_core(const LayerStack& stack, int layer);
Scaffold layer_scaffold(const LayerStack& stack, int layer);

}  // namespace ssm
