#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

namespace ssm {

// ListOps token ids: digits 0-9, then operators, brackets, separator, padding.
enum ListOpsToken : int {
  kTokMax = 10,
  kTokMin = 11,
  kTokMedian = 12,
  kTokMean = 13,
  kTokOpen = 14,
  kTokClose = 15,
  kTokComma = 16,
  kTokPad = 17,
  kListOpsVocab = 18,
};

enum class ListOp { max, min, median, mean };

struct ListOpsExpr {
  bool leaf = true;
  int value = 0;  // leaf digit
  ListOp op = ListOp::max;
  std::vector<ListOpsExpr> args;

  static ListOpsExpr digit(int d);
  static ListOpsExpr apply(ListOp op, std::vector<ListOpsExpr> args);
  int depth() const;
  int length() const;  // serialized token count
};

/// Recursive evaluation; mean is the floor of the arithmetic mean, median the lower median.
int eval_listops(const ListOpsExpr& e);
/// Independent evaluator over the token stream with an explicit operand stack.
int eval_listops_tokens(const std::vector<int>& tokens);

std::vector<int> serialize(const ListOpsExpr& e);
ListOpsExpr parse_listops(const std::vector<int>& tokens);
/// Text form, e.g. "max(4,min(5,6,mean(9,4,5)))".
std::string to_text(const ListOpsExpr& e);
ListOpsExpr parse_listops_text(const std::string& text);

struct TaskSample {
  std::vector<int> tokens;
  int label = 0;
};

struct Dataset {
  std::string task;
  int vocab = 0;
  int classes = 0;
  std::vector<TaskSample> samples;
  nlohmann::json config;

  std::vector<int> class_histogram() const;
};

struct ListOpsConfig {
  int max_len = 128;
  int max_depth = 6;
  int min_depth = 1;
  int max_args = 5;
  double branch_prob = 0.3;  // chance that an argument is itself an operator
};

/// Random expression within the limits; throws when the limits are infeasible.
ListOpsExpr random_listops(std::uint64_t seed, const ListOpsConfig& cfg);
Dataset gen_listops(std::uint64_t seed, int n_samples, const ListOpsConfig& cfg, int workers = 1);

inline constexpr int kEchoSymbols = 8;
Dataset gen_delayed_echo(std::uint64_t seed, int n, int length, int lag, int workers = 1);

/// Content tokens 0-7 at n_marks positions, filler 8 elsewhere; label = first content token.
/// fixed_position >= 0 places a single mark there.
inline constexpr int kCopyFiller = 8;
Dataset gen_selective_copy(std::uint64_t seed, int n, int length, int n_marks, int fixed_position = -1,
                           int workers = 1);
/// Label recomputed from tokens alone.
int selective_copy_oracle(const std::vector<int>& tokens);

double random_baseline(int n_classes);
double random_baseline(const Dataset& d);

/// Task description shared by the CLI and the training loop.
struct TaskConfig {
  std::string task = "listops";  // listops | echo | selective_copy
  int n_train = 20000;
  int n_val = 1000;
  int n_test = 1000;
  ListOpsConfig listops;
  int length = 256;  // echo / selective copy
  int lag = 64;
  int n_marks = 4;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const TaskConfig& c);
TaskConfig task_config_from_json(const nlohmann::json& j);

struct Splits {
  Dataset train, val, test;
};
/// Validation and test samples never repeat a training (or each other's) token sequence.
Splits make_splits(const TaskConfig& cfg, int workers = 1);

inline constexpr std::uint32_t kDatasetVersion = 1;
/// Writes <stem>.bin (length-prefixed u16 token streams) and <stem>.json (manifest).
void write_dataset(const Dataset& d, const std::filesystem::path& stem);
Dataset read_dataset(const std::filesystem::path& stem);

}  // namespace ssm
