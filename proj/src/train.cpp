#include "ssm/train.hpp"

#include <chrono>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <cmath>
#include <limits>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <set>

#include "ssm/exec.hpp"
#include "ssm/json_io.hpp"
#include "ssm/parallel.hpp"

namespace ssm {

using nlohmann::json;

void TrainConfig::validate() const {
  stack.validate();
  task.validate();
  if (epochs < 0 || batch_size < 1 || max_steps < 0 || time_budget_s < 0 || log_every < 1 || workers < 1)
    throw std::invalid_argument("train: epochs, batch_size, max_steps, log_every and workers must be sensible");
  if (schedule != "constant" && schedule != "cosine") throw std::invalid_argument("train: schedule must be constant or cosine");
  if (!(adam.lr > 0.0)) throw std::invalid_argument("train: lr must be positive");
}

json to_json(const TrainConfig& c) {
  return {{"model", to_json(c.stack)},
          {"task", to_json(c.task)},
          {"optim",
           {{"lr", c.adam.lr},
            {"beta1", c.adam.beta1},
            {"beta2", c.adam.beta2},
            {"eps", c.adam.eps},
            {"weight_decay", c.adam.weight_decay},
            {"clip_norm", c.adam.clip_norm},
            {"schedule", c.schedule}}},
          {"train",
           {{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"max_steps", c.max_steps},
            {"time_budget_s", c.time_budget_s},
            {"log_every", c.log_every},
            {"workers", c.workers},
            {"seed", c.seed}}}};
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + " must be an object");
  for (const auto& [k, v] : j.items())
    if (!known.contains(k)) throw std::invalid_argument(where + ": unknown key '" + k + "'");
}

}  // namespace

TrainConfig train_config_from_json(const json& j) {
  reject_unknown(j, {"model", "task", "optim", "train"}, "config");
  TrainConfig c;
  if (j.contains("model")) c.stack = stack_config_from_json(j["model"]);
  if (j.contains("task")) c.task = task_config_from_json(j["task"]);
  if (j.contains("optim")) {
    const json& o = j["optim"];
    reject_unknown(o, {"lr", "beta1", "beta2", "eps", "weight_decay", "clip_norm", "schedule"}, "optim");
    c.adam.lr = o.value("lr", c.adam.lr);
    c.adam.beta1 = o.value("beta1", c.adam.beta1);
    c.adam.beta2 = o.value("beta2", c.adam.beta2);
    c.adam.eps = o.value("eps", c.adam.eps);
    c.adam.weight_decay = o.value("weight_decay", c.adam.weight_decay);
    c.adam.clip_norm = o.value("clip_norm", c.adam.clip_norm);
    c.schedule = o.value("schedule", c.schedule);
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    reject_unknown(t, {"epochs", "batch_size", "max_steps", "time_budget_s", "log_every", "workers", "seed"}, "train");
    c.epochs = t.value("epochs", c.epochs);
    c.batch_size = t.value("batch_size", c.batch_size);
    c.max_steps = t.value("max_steps", c.max_steps);
    c.time_budget_s = t.value("time_budget_s", c.time_budget_s);
    c.log_every = t.value("log_every", c.log_every);
    c.workers = t.value("workers", c.workers);
    c.seed = t.value("seed", c.seed);
  }
  // The task fixes the vocabulary and the class count.
  if (c.task.task == "listops") {
    c.stack.vocab = kListOpsVocab;
    c.stack.classes = 10;
  } else if (c.task.task == "echo") {
    c.stack.vocab = kEchoSymbols;
    c.stack.classes = kEchoSymbols;
  } else {
    c.stack.vocab = kCopyFiller + 1;
    c.stack.classes = kCopyFiller;
  }
  c.validate();
  return c;
}

namespace {

struct ShardOut {
  std::vector<double> grads;
  double loss = 0.0;  // summed over the shard's samples
  int correct = 0;
};

int argmax_row(const RMat& logits, Eigen::Index r) {
  Eigen::Index best;
  logits.row(r).maxCoeff(&best);
  return static_cast<int>(best);
}

std::vector<const std::vector<int>*> token_ptrs(const Dataset& d, const std::vector<int>& idx, int b, int e) {
  std::vector<const std::vector<int>*> out;
  for (int i = b; i < e; ++i) out.push_back(&d.samples[idx[i]].tokens);
  return out;
}

}  // namespace

double evaluate_accuracy(const LayerStack& stack, const Dataset& data, int workers, int batch_size) {
  const int n = static_cast<int>(data.samples.size());
  if (n == 0) return 0.0;
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  const int n_batches = (n + batch_size - 1) / batch_size;
  std::vector<int> correct(n_batches, 0);
  parallel_chunks(workers, n_batches, [&](int, int bb, int be) {
    for (int b = bb; b < be; ++b) {
      const int lo = b * batch_size, hi = std::min(n, lo + batch_size);
      const TokenBatch batch = make_batch(token_ptrs(data, idx, lo, hi));
      ad::Tape t(false);
      const RMat logits = stack_forward(t, stack.params, stack.cfg, batch).real();
      for (int i = lo; i < hi; ++i) correct[b] += argmax_row(logits, i - lo) == data.samples[i].label;
    }
  });
  return static_cast<double>(std::accumulate(correct.begin(), correct.end(), 0)) / n;
}

TrainResult train(const TrainConfig& cfg, const Splits& data, std::ostream* metrics) {
  return train(cfg, init_stack(cfg.stack, derive_seed(cfg.seed, "init")), data, metrics);
}

namespace {

// Tape buffers are large and short-lived; keeping them off mmap avoids a page
// fault storm on every step.
void keep_heap_warm() {
#if defined(__GLIBC__)
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)once;
#endif
}

}  // namespace

TrainResult train(const TrainConfig& cfg, LayerStack stack, const Splits& data, std::ostream* metrics) {
  cfg.validate();
  keep_heap_warm();
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(clock::now() - start).count(); };

  const Dataset& tr = data.train;
  const int n = static_cast<int>(tr.samples.size());
  if (n == 0) throw std::invalid_argument("train: empty training set");
  for (const auto& s : tr.samples)
    if (s.label >= stack.cfg.classes) throw std::invalid_argument("train: label exceeds the classifier width");

  ad::Adam opt(cfg.adam);
  const int steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  long total_steps = static_cast<long>(steps_per_epoch) * cfg.epochs;
  if (cfg.max_steps > 0) total_steps = std::min(total_steps, cfg.max_steps);

  TrainResult res;
  double win_loss = 0.0, win_norm = 0.0;
  int win_correct = 0, win_count = 0, win_steps = 0;
  bool stop = false;
  for (int epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(cfg.seed, "shuffle", epoch));
    std::shuffle(order.begin(), order.end(), rng);
    int ep_correct = 0, ep_count = 0;
    for (int b0 = 0; b0 < n && !stop; b0 += cfg.batch_size) {
      const int b1 = std::min(n, b0 + cfg.batch_size);
      const int bsz = b1 - b0;
      const int shards = std::min(cfg.workers, bsz);
      std::vector<ShardOut> outs(shards);
      parallel_chunks(shards, bsz, [&](int c, int lo, int hi) {
        ShardOut& o = outs[c];
        o.grads.assign(stack.params.size(), 0.0);
        const TokenBatch batch = make_batch(token_ptrs(tr, order, b0 + lo, b0 + hi));
        std::vector<int> labels;
        for (int i = lo; i < hi; ++i) labels.push_back(tr.samples[order[b0 + i]].label);
        ad::Tape t;
        ad::Var logits = stack_forward(t, stack.params, stack.cfg, batch);
        if (!logits.real().allFinite()) {
          o.loss = std::numeric_limits<double>::quiet_NaN();
          return;
        }
        ad::Var loss = ad::cross_entropy(logits, labels);
        t.backward(loss);
        t.accumulate(stack.params, o.grads, static_cast<double>(hi - lo) / bsz);
        o.loss = loss.item() * (hi - lo);
        for (int i = 0; i < hi - lo; ++i) o.correct += argmax_row(logits.real(), i) == labels[i];
      });
      stack.params.zero_grad();
      auto g = stack.params.grads();
      double loss_sum = 0.0;
      int correct = 0;
      for (const auto& o : outs) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grads[i];
        loss_sum += o.loss;
        correct += o.correct;
      }
      const double loss = loss_sum / bsz;
      if (!std::isfinite(loss))
        throw DivergenceError("training diverged: non-finite loss at step " + std::to_string(res.steps + 1) +
                                  "; lower optim.lr or dynamics_lr_scale",
                              static_cast<int>(res.steps + 1));
      if (cfg.schedule == "cosine" && total_steps > 0)
        opt.config().lr = cfg.adam.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * res.steps / total_steps));
      const double norm = opt.step(stack.params);
      ++res.steps;
      win_loss += loss;
      win_norm += norm;
      win_correct += correct;
      win_count += bsz;
      ++win_steps;
      ep_correct += correct;
      ep_count += bsz;
      res.final_loss = loss;
      if (cfg.max_steps > 0 && res.steps >= cfg.max_steps) stop = true;
      if (cfg.time_budget_s > 0 && elapsed() >= cfg.time_budget_s) stop = true;
      if (metrics && (res.steps % cfg.log_every == 0 || stop)) {
        json line = {{"epoch", epoch},
                     {"step", res.steps},
                     {"loss", win_loss / win_steps},
                     {"accuracy", static_cast<double>(win_correct) / win_count},
                     {"grad_norm", win_norm / win_steps},
                     {"wall_s", elapsed()}};
        *metrics << line.dump() << "\n" << std::flush;
        win_loss = win_norm = 0.0;
        win_correct = win_count = win_steps = 0;
      }
    }
    res.train_accuracy = ep_count ? static_cast<double>(ep_correct) / ep_count : 0.0;
    if (metrics && !data.val.samples.empty()) {
      json line = {{"epoch", epoch},
                   {"step", res.steps},
                   {"split", "val"},
                   {"accuracy", evaluate_accuracy(stack, data.val, cfg.workers)},
                   {"wall_s", elapsed()}};
      *metrics << line.dump() << "\n" << std::flush;
    }
  }
  res.val_accuracy = evaluate_accuracy(stack, data.val, cfg.workers);
  res.test_accuracy = evaluate_accuracy(stack, data.test, cfg.workers);
  res.wall_s = elapsed();
  res.stack = std::move(stack);
  return res;
}

json checkpoint_json(const TrainConfig& cfg, const LayerStack& stack) {
  return {{"format_version", kFormatVersion}, {"config", to_json(cfg)}, {"params", stack.params.to_json()}};
}

void save_checkpoint(const std::filesystem::path& path, const TrainConfig& cfg, const LayerStack& stack) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  os << checkpoint_json(cfg, stack).dump() << "\n";
}

LayerStack load_checkpoint(const std::filesystem::path& path, TrainConfig* cfg_out) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read checkpoint " + path.string());
  const json j = json::parse(is);
  if (j.at("format_version").get<int>() != kFormatVersion) throw std::invalid_argument("unsupported checkpoint version");
  const TrainConfig cfg = train_config_from_json(j.at("config"));
  LayerStack stack{cfg.stack, ad::ParamStore::from_json(j.at("params"))};
  // Shape check against a fresh initialization of the same config.
  const LayerStack ref = init_stack(cfg.stack, 0);
  if (ref.params.segments().size() != stack.params.segments().size())
    throw std::invalid_argument("checkpoint parameters do not match the model config");
  for (std::size_t i = 0; i < ref.params.segments().size(); ++i) {
    const auto &a = ref.params.segments()[i], &b = stack.params.segments()[i];
    if (a.name != b.name || a.rows != b.rows || a.cols != b.cols || a.complex != b.complex)
      throw std::invalid_argument("checkpoint parameter '" + b.name + "' does not match the model config");
  }
  if (cfg_out) *cfg_out = cfg;
  return stack;
}

}  // namespace ssm
