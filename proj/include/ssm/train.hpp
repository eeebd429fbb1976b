#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <ostream>
#include <string>

#include "ssm/learn/optim.hpp"
#include "ssm/scaffold.hpp"
#include "ssm/tasks.hpp"

namespace ssm {

struct TrainConfig {
  StackConfig stack;
  TaskConfig task;
  ad::AdamConfig adam;
  int epochs = 1;
  int batch_size = 32;
  long max_steps = 0;         // 0: no limit beyond epochs
  double time_budget_s = 0;   // 0: unlimited
  int log_every = 50;
  std::string schedule = "constant";  // constant | cosine
  int workers = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
/// Accepts {"model": {...}, "task": {...}, "optim": {...}, "train": {...}}; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j);

struct TrainResult {
  LayerStack stack;
  long steps = 0;
  double final_loss = 0.0;
  double train_accuracy = 0.0;  // running accuracy over the last epoch
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
  double wall_s = 0.0;
};

/// Mini-batch Adam on cross-entropy. Each batch is split into `workers` shards
/// whose gradients are reduced in shard order, so a fixed seed and worker
/// count reproduce the loss curve exactly. Non-finite losses raise
/// DivergenceError; non-finite gradients raise NonFiniteGradientError.
/// Metrics lines {epoch, step, loss, accuracy, grad_norm, wall_s} go to `metrics`.
TrainResult train(const TrainConfig& cfg, const Splits& data, std::ostream* metrics = nullptr);
/// Same, starting from the given parameters.
TrainResult train(const TrainConfig& cfg, LayerStack init, const Splits& data, std::ostream* metrics = nullptr);

double evaluate_accuracy(const LayerStack& stack, const Dataset& data, int workers = 1, int batch_size = 64);

nlohmann::json checkpoint_json(const TrainConfig& cfg, const LayerStack& stack);
void save_checkpoint(const std::filesystem::path& path, const TrainConfig& cfg, const LayerStack& stack);
/// Returns the stack and fills `cfg` (when non-null) with the recorded config.
LayerStack load_checkpoint(const std::filesystem::path& path, TrainConfig* cfg = nullptr);

}  // namespace ssm
