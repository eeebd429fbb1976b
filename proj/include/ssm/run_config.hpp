#pragma once

#include <json.hpp>
#include <string>

#include "ssm/bench.hpp"
#include "ssm/train.hpp"
#include "ssm/verify.hpp"

namespace ssm {

/// Everything a CLI invocation can configure. JSON layout:
///   {"model": {...}, "task": {...}, "optim": {...}, "train": {...},
///    "verify": {...}, "bench": {...}, "figure": {...}}
/// Unknown keys at any level are rejected.
struct RunConfig {
  TrainConfig train;
  VerifyConfig verify;
  BenchConfig bench;
  int figure_length = 64;  // steps per sample input for time-varying scatter plots
};

RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& c);

/// Applies "a.b.c=value" to a JSON object, creating intermediate objects.
/// The value is parsed as JSON when possible, otherwise kept as a string.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Sets the worker count of every section.
void set_workers(RunConfig& c, int workers);

}  // namespace ssm
