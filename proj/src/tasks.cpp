#include "ssm/tasks.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

#include "ssm/core.hpp"
#include "ssm/parallel.hpp"

namespace ssm {

using nlohmann::json;

ListOpsExpr ListOpsExpr::digit(int d) {
  if (d < 0 || d > 9) throw std::invalid_argument("listops: leaf digit out of range");
  ListOpsExpr e;
  e.value = d;
  return e;
}

ListOpsExpr ListOpsExpr::apply(ListOp op, std::vector<ListOpsExpr> args) {
  ListOpsExpr e;
  e.leaf = false;
  e.op = op;
  e.args = std::move(args);
  return e;
}

int ListOpsExpr::depth() const {
  if (leaf) return 0;
  int d = 0;
  for (const auto& a : args) d = std::max(d, a.depth());
  return d + 1;
}

int ListOpsExpr::length() const {
  if (leaf) return 1;
  int n = 2 + static_cast<int>(args.size());  // op, '(', separators and ')'
  for (const auto& a : args) n += a.length();
  return n;
}

int eval_listops(const ListOpsExpr& e) {
  if (e.leaf) {
    if (e.value < 0 || e.value > 9) throw std::invalid_argument("eval_listops: leaf digit out of range");
    return e.value;
  }
  if (e.args.size() < 2) throw std::invalid_argument("eval_listops: operator with fewer than two arguments");
  std::vector<int> v;
  for (const auto& a : e.args) v.push_back(eval_listops(a));
  switch (e.op) {
    case ListOp::max: return *std::max_element(v.begin(), v.end());
    case ListOp::min: return *std::min_element(v.begin(), v.end());
    case ListOp::median: {
      auto mid = v.begin() + (v.size() - 1) / 2;
      std::nth_element(v.begin(), mid, v.end());
      return *mid;
    }
    case ListOp::mean: return std::accumulate(v.begin(), v.end(), 0) / static_cast<int>(v.size());
  }
  throw std::logic_error("unreachable");
}

int eval_listops_tokens(const std::vector<int>& tokens) {
  struct Frame {
    int op;
    std::vector<int> vals;
  };
  std::vector<Frame> stack;
  int result = -1;
  auto emit = [&](int v) {
    if (stack.empty()) {
      if (result >= 0) throw std::invalid_argument("listops tokens: trailing value");
      result = v;
    } else {
      stack.back().vals.push_back(v);
    }
  };
  for (int tok : tokens) {
    if (tok >= 0 && tok <= 9) {
      emit(tok);
    } else if (tok >= kTokMax && tok <= kTokMean) {
      stack.push_back({tok, {}});
    } else if (tok == kTokClose) {
      if (stack.empty()) throw std::invalid_argument("listops tokens: unbalanced ')'");
      Frame f = std::move(stack.back());
      stack.pop_back();
      if (f.vals.size() < 2) throw std::invalid_argument("listops tokens: operator with fewer than two arguments");
      std::sort(f.vals.begin(), f.vals.end());
      int v = 0;
      switch (f.op) {
        case kTokMax: v = f.vals.back(); break;
        case kTokMin: v = f.vals.front(); break;
        case kTokMedian: v = f.vals[(f.vals.size() - 1) / 2]; break;
        default: {
          int s = 0;
          for (int x : f.vals) s += x;
          v = s / static_cast<int>(f.vals.size());
        }
      }
      emit(v);
    } else if (tok != kTokOpen && tok != kTokComma && tok != kTokPad) {
      throw std::invalid_argument("listops tokens: unknown token " + std::to_string(tok));
    }
  }
  if (!stack.empty() || result < 0) throw std::invalid_argument("listops tokens: incomplete expression");
  return result;
}

namespace {

int op_token(ListOp op) { return kTokMax + static_cast<int>(op); }

void serialize_into(const ListOpsExpr& e, std::vector<int>& out) {
  if (e.leaf) {
    out.push_back(e.value);
    return;
  }
  out.push_back(op_token(e.op));
  out.push_back(kTokOpen);
  for (std::size_t i = 0; i < e.args.size(); ++i) {
    if (i) out.push_back(kTokComma);
    serialize_into(e.args[i], out);
  }
  out.push_back(kTokClose);
}

// Recursive-descent parser shared by the token and text front ends.
struct Parser {
  const std::vector<int>& toks;
  std::size_t pos = 0;

  int peek() const {
    if (pos >= toks.size()) throw std::invalid_argument("parse_listops: unexpected end of input");
    return toks[pos];
  }
  void expect(int tok) {
    if (peek() != tok) throw std::invalid_argument("parse_listops: unexpected token at position " + std::to_string(pos));
    ++pos;
  }
  ListOpsExpr node() {
    const int t = peek();
    if (t >= 0 && t <= 9) {
      ++pos;
      return ListOpsExpr::digit(t);
    }
    if (t < kTokMax || t > kTokMean) throw std::invalid_argument("parse_listops: expected digit or operator");
    ++pos;
    expect(kTokOpen);
    std::vector<ListOpsExpr> args;
    args.push_back(node());
    while (peek() == kTokComma) {
      ++pos;
      args.push_back(node());
    }
    expect(kTokClose);
    if (args.size() < 2) throw std::invalid_argument("parse_listops: operator with fewer than two arguments");
    return ListOpsExpr::apply(static_cast<ListOp>(t - kTokMax), std::move(args));
  }
};

const char* op_name(ListOp op) {
  switch (op) {
    case ListOp::max: return "max";
    case ListOp::min: return "min";
    case ListOp::median: return "median";
    case ListOp::mean: return "mean";
  }
  return "?";
}

}  // namespace

std::vector<int> serialize(const ListOpsExpr& e) {
  std::vector<int> out;
  serialize_into(e, out);
  return out;
}

ListOpsExpr parse_listops(const std::vector<int>& tokens) {
  Parser p{tokens};
  ListOpsExpr e = p.node();
  while (p.pos < tokens.size() && tokens[p.pos] == kTokPad) ++p.pos;
  if (p.pos != tokens.size()) throw std::invalid_argument("parse_listops: trailing tokens");
  return e;
}

std::string to_text(const ListOpsExpr& e) {
  if (e.leaf) return std::to_string(e.value);
  std::string s = std::string(op_name(e.op)) + "(";
  for (std::size_t i = 0; i < e.args.size(); ++i) {
    if (i) s += ",";
    s += to_text(e.args[i]);
  }
  return s + ")";
}

ListOpsExpr parse_listops_text(const std::string& text) {
  std::vector<int> toks;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
    } else if (std::isdigit(static_cast<unsigned char>(c))) {
      toks.push_back(c - '0');
      ++i;
    } else if (c == '(' || c == ')' || c == ',') {
      toks.push_back(c == '(' ? kTokOpen : c == ')' ? kTokClose : kTokComma);
      ++i;
    } else {
      std::size_t j = i;
      while (j < text.size() && std::isalpha(static_cast<unsigned char>(text[j]))) ++j;
      const std::string word = text.substr(i, j - i);
      int tok = -1;
      for (ListOp op : {ListOp::max, ListOp::min, ListOp::median, ListOp::mean})
        if (word == op_name(op)) tok = op_token(op);
      if (tok < 0) throw std::invalid_argument("parse_listops_text: unknown word '" + word + "'");
      toks.push_back(tok);
      i = j;
    }
  }
  return parse_listops(toks);
}

std::vector<int> Dataset::class_histogram() const {
  std::vector<int> h(classes, 0);
  for (const auto& s : samples) ++h.at(s.label);
  return h;
}

namespace {

using Rng = std::mt19937_64;

ListOpsExpr grow(Rng& rng, const ListOpsConfig& cfg, int depth_left, bool force_op) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> digit(0, 9);
  if (!force_op && (depth_left <= 0 || unit(rng) >= cfg.branch_prob)) return ListOpsExpr::digit(digit(rng));
  std::uniform_int_distribution<int> op(0, 3);
  std::uniform_int_distribution<int> arity(2, cfg.max_args);
  const ListOp o = static_cast<ListOp>(op(rng));
  const int k = arity(rng);
  std::vector<ListOpsExpr> args;
  for (int i = 0; i < k; ++i) args.push_back(grow(rng, cfg, depth_left - 1, false));
  return ListOpsExpr::apply(o, std::move(args));
}

void check_listops(const ListOpsConfig& cfg) {
  if (cfg.max_len < 1 || cfg.max_depth < 1 || cfg.min_depth < 1 || cfg.max_args < 2)
    throw std::invalid_argument("listops: limits must be positive (max_args >= 2)");
  if (cfg.min_depth > cfg.max_depth) throw std::invalid_argument("listops: min_depth exceeds max_depth");
  // The shortest tree of depth d is a chain of binary operators: 1 + 5 d tokens.
  if (1 + 5 * cfg.min_depth > cfg.max_len)
    throw std::invalid_argument("listops: depth " + std::to_string(cfg.min_depth) + " does not fit in " +
                                std::to_string(cfg.max_len) + " tokens");
  if (!(cfg.branch_prob >= 0.0 && cfg.branch_prob <= 1.0)) throw std::invalid_argument("listops: bad branch_prob");
}

}  // namespace

ListOpsExpr random_listops(std::uint64_t seed, const ListOpsConfig& cfg) {
  check_listops(cfg);
  Rng rng(seed);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    ListOpsExpr e = grow(rng, cfg, cfg.max_depth, true);
    const int d = e.depth();
    if (d >= cfg.min_depth && e.length() <= cfg.max_len) return e;
  }
  throw std::invalid_argument("listops: could not satisfy the limits; relax max_len or min_depth");
}

namespace {

template <class Gen>
std::vector<TaskSample> generate(int n, int workers, Gen&& gen) {
  if (n < 0) throw std::invalid_argument("dataset size must be non-negative");
  std::vector<TaskSample> out(n);
  parallel_chunks(workers, n, [&](int, int b, int e) {
    for (int i = b; i < e; ++i) out[i] = gen(i);
  });
  return out;
}

}  // namespace

Dataset gen_listops(std::uint64_t seed, int n_samples, const ListOpsConfig& cfg, int workers) {
  check_listops(cfg);
  Dataset d;
  d.task = "listops";
  d.vocab = kListOpsVocab;
  d.classes = 10;
  d.samples = generate(n_samples, workers, [&](int i) {
    const ListOpsExpr e = random_listops(derive_seed(seed, "listops", i), cfg);
    return TaskSample{serialize(e), eval_listops(e)};
  });
  d.config = {{"task", "listops"}, {"seed", seed}, {"n", n_samples}, {"max_len", cfg.max_len},
              {"max_depth", cfg.max_depth}, {"min_depth", cfg.min_depth}, {"max_args", cfg.max_args},
              {"branch_prob", cfg.branch_prob}};
  return d;
}

Dataset gen_delayed_echo(std::uint64_t seed, int n, int length, int lag, int workers) {
  if (length < 1 || lag < 0 || lag >= length) throw std::invalid_argument("delayed echo: need 0 <= lag < length");
  Dataset d;
  d.task = "echo";
  d.vocab = kEchoSymbols;
  d.classes = kEchoSymbols;
  d.samples = generate(n, workers, [&](int i) {
    Rng rng(derive_seed(seed, "echo", i));
    std::uniform_int_distribution<int> sym(0, kEchoSymbols - 1);
    TaskSample s;
    s.tokens.resize(length);
    for (int& t : s.tokens) t = sym(rng);
    s.label = s.tokens[length - 1 - lag];
    return s;
  });
  d.config = {{"task", "echo"}, {"seed", seed}, {"n", n}, {"length", length}, {"lag", lag}};
  return d;
}

int selective_copy_oracle(const std::vector<int>& tokens) {
  for (int t : tokens)
    if (t != kCopyFiller) return t;
  throw std::invalid_argument("selective copy: no marked token");
}

Dataset gen_selective_copy(std::uint64_t seed, int n, int length, int n_marks, int fixed_position, int workers) {
  if (n_marks < 1 || n_marks > length) throw std::invalid_argument("selective copy: need 1 <= n_marks <= length");
  if (fixed_position >= length) throw std::invalid_argument("selective copy: fixed position outside the sequence");
  if (fixed_position >= 0 && n_marks != 1) throw std::invalid_argument("selective copy: fixed position needs one mark");
  Dataset d;
  d.task = "selective_copy";
  d.vocab = kCopyFiller + 1;
  d.classes = kCopyFiller;
  d.samples = generate(n, workers, [&](int i) {
    Rng rng(derive_seed(seed, "selective_copy", i));
    std::uniform_int_distribution<int> sym(0, kCopyFiller - 1);
    TaskSample s;
    s.tokens.assign(length, kCopyFiller);
    std::vector<int> pos;
    if (fixed_position >= 0) {
      pos = {fixed_position};
    } else {
      std::vector<int> all(length);
      std::iota(all.begin(), all.end(), 0);
      std::shuffle(all.begin(), all.end(), rng);
      pos.assign(all.begin(), all.begin() + n_marks);
      std::sort(pos.begin(), pos.end());
    }
    for (int p : pos) s.tokens[p] = sym(rng);
    s.label = s.tokens[pos.front()];
    return s;
  });
  d.config = {{"task", "selective_copy"}, {"seed", seed},          {"n", n},
              {"length", length},         {"n_marks", n_marks},    {"fixed_position", fixed_position}};
  return d;
}

double random_baseline(int n_classes) {
  if (n_classes < 1) throw std::invalid_argument("random_baseline: no classes");
  return 1.0 / n_classes;
}

double random_baseline(const Dataset& d) { return random_baseline(d.classes); }

void TaskConfig::validate() const {
  if (task != "listops" && task != "echo" && task != "selective_copy")
    throw std::invalid_argument("task must be one of listops, echo, selective_copy");
  if (n_train < 1 || n_val < 0 || n_test < 0) throw std::invalid_argument("task: bad split sizes");
  if (task == "listops") check_listops(listops);
  if (task == "echo" && (lag < 0 || lag >= length)) throw std::invalid_argument("task: need 0 <= lag < length");
  if (task == "selective_copy" && (n_marks < 1 || n_marks > length))
    throw std::invalid_argument("task: need 1 <= n_marks <= length");
}

json to_json(const TaskConfig& c) {
  return {{"task", c.task},
          {"n_train", c.n_train},
          {"n_val", c.n_val},
          {"n_test", c.n_test},
          {"max_len", c.listops.max_len},
          {"max_depth", c.listops.max_depth},
          {"min_depth", c.listops.min_depth},
          {"max_args", c.listops.max_args},
          {"branch_prob", c.listops.branch_prob},
          {"length", c.length},
          {"lag", c.lag},
          {"n_marks", c.n_marks},
          {"seed", c.seed}};
}

TaskConfig task_config_from_json(const json& j) {
  static const std::set<std::string> known = {"task", "n_train", "n_val", "n_test", "max_len", "max_depth", "min_depth",
                                              "max_args", "branch_prob", "length", "lag", "n_marks", "seed"};
  if (!j.is_object()) throw std::invalid_argument("task config must be an object");
  for (const auto& [k, v] : j.items())
    if (!known.contains(k)) throw std::invalid_argument("task config: unknown key '" + k + "'");
  TaskConfig c;
  c.task = j.value("task", c.task);
  c.n_train = j.value("n_train", c.n_train);
  c.n_val = j.value("n_val", c.n_val);
  c.n_test = j.value("n_test", c.n_test);
  c.listops.max_len = j.value("max_len", c.listops.max_len);
  c.listops.max_depth = j.value("max_depth", c.listops.max_depth);
  c.listops.min_depth = j.value("min_depth", c.listops.min_depth);
  c.listops.max_args = j.value("max_args", c.listops.max_args);
  c.listops.branch_prob = j.value("branch_prob", c.listops.branch_prob);
  c.length = j.value("length", c.length);
  c.lag = j.value("lag", c.lag);
  c.n_marks = j.value("n_marks", c.n_marks);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

namespace {

Dataset generate_task(const TaskConfig& c, std::uint64_t seed, int n, int workers) {
  if (c.task == "listops") return gen_listops(seed, n, c.listops, workers);
  if (c.task == "echo") return gen_delayed_echo(seed, n, c.length, c.lag, workers);
  return gen_selective_copy(seed, n, c.length, c.n_marks, -1, workers);
}

// Draws from a dedicated stream until `n` samples are found that are absent from `seen`.
Dataset fresh_split(const TaskConfig& c, std::string_view name, int n, std::set<std::vector<int>>& seen, int workers) {
  Dataset out = generate_task(c, derive_seed(c.seed, name), 0, 1);
  for (int round = 0; static_cast<int>(out.samples.size()) < n; ++round) {
    if (round > 64) throw std::runtime_error("make_splits: could not find enough distinct samples for " + std::string(name));
    Dataset batch = generate_task(c, derive_seed(c.seed, name, round + 1), n, workers);
    for (auto& s : batch.samples) {
      if (static_cast<int>(out.samples.size()) == n) break;
      if (seen.insert(s.tokens).second) out.samples.push_back(std::move(s));
    }
  }
  out.config["split"] = std::string(name);
  out.config["n"] = n;
  return out;
}

}  // namespace

Splits make_splits(const TaskConfig& c, int workers) {
  c.validate();
  Splits s;
  s.train = generate_task(c, derive_seed(c.seed, "train"), c.n_train, workers);
  s.train.config["split"] = "train";
  std::set<std::vector<int>> seen;
  for (const auto& x : s.train.samples) seen.insert(x.tokens);
  s.val = fresh_split(c, "val", c.n_val, seen, workers);
  s.test = fresh_split(c, "test", c.n_test, seen, workers);
  return s;
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff), static_cast<char>((v >> 16) & 0xff),
                     static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

void put_u16(std::ostream& os, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
  os.write(b, 2);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("read_dataset: truncated file");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint16_t get_u16(std::istream& is) {
  unsigned char b[2];
  if (!is.read(reinterpret_cast<char*>(b), 2)) throw std::runtime_error("read_dataset: truncated file");
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::filesystem::path with_ext(const std::filesystem::path& stem, const char* ext) {
  return stem.parent_path() / (stem.filename().string() + ext);
}

}  // namespace

void write_dataset(const Dataset& d, const std::filesystem::path& stem) {
  std::ofstream bin(with_ext(stem, ".bin"), std::ios::binary);
  if (!bin) throw std::runtime_error("write_dataset: cannot open " + with_ext(stem, ".bin").string());
  bin.write("SSMD", 4);
  put_u32(bin, kDatasetVersion);
  put_u32(bin, static_cast<std::uint32_t>(d.samples.size()));
  for (const auto& s : d.samples) {
    put_u32(bin, static_cast<std::uint32_t>(s.tokens.size()));
    put_u32(bin, static_cast<std::uint32_t>(s.label));
    for (int t : s.tokens) put_u16(bin, static_cast<std::uint16_t>(t));
  }
  json manifest = {{"format_version", kDatasetVersion}, {"task", d.task},       {"count", d.samples.size()},
                   {"vocab", d.vocab},                   {"classes", d.classes}, {"class_histogram", d.class_histogram()},
                   {"generator", d.config}};
  std::ofstream(with_ext(stem, ".json")) << manifest.dump(2) << "\n";
}

Dataset read_dataset(const std::filesystem::path& stem) {
  std::ifstream mf(with_ext(stem, ".json"));
  if (!mf) throw std::runtime_error("read_dataset: missing manifest " + with_ext(stem, ".json").string());
  const json manifest = json::parse(mf);
  std::ifstream bin(with_ext(stem, ".bin"), std::ios::binary);
  if (!bin) throw std::runtime_error("read_dataset: missing " + with_ext(stem, ".bin").string());
  char magic[4];
  if (!bin.read(magic, 4) || std::string(magic, 4) != "SSMD") throw std::runtime_error("read_dataset: bad magic");
  if (get_u32(bin) != kDatasetVersion) throw std::runtime_error("read_dataset: unsupported version");
  Dataset d;
  d.task = manifest.at("task").get<std::string>();
  d.vocab = manifest.at("vocab").get<int>();
  d.classes = manifest.at("classes").get<int>();
  d.config = manifest.at("generator");
  const std::uint32_t n = get_u32(bin);
  if (n != manifest.at("count").get<std::uint32_t>()) throw std::runtime_error("read_dataset: count mismatch");
  d.samples.resize(n);
  for (auto& s : d.samples) {
    const std::uint32_t len = get_u32(bin);
    s.label = static_cast<int>(get_u32(bin));
    if (s.label >= d.classes) throw std::runtime_error("read_dataset: label out of range");
    s.tokens.resize(len);
    for (int& t : s.tokens) {
      t = get_u16(bin);
      if (t >= d.vocab) throw std::runtime_error("read_dataset: token outside vocabulary");
    }
  }
  return d;
}

}  // namespace ssm
