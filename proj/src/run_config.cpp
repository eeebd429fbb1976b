#include "ssm/run_config.hpp"

#include <set>
#include <sstream>
#include <stdexcept>

namespace ssm {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + " must be an object");
  for (const auto& [k, v] : j.items())
    if (!known.contains(k)) throw std::invalid_argument(where + ": unknown key '" + k + "'");
}

}  // namespace

RunConfig run_config_from_json(const json& j) {
  check_keys(j, {"model", "task", "optim", "train", "verify", "bench", "figure"}, "config");
  RunConfig c;
  json tj = json::object();
  for (const char* k : {"model", "task", "optim", "train"})
    if (j.contains(k)) tj[k] = j[k];
  c.train = train_config_from_json(tj);

  if (j.contains("verify")) {
    const json& v = j["verify"];
    check_keys(v, {"seed", "workers", "lti_systems", "ltv_instances", "init_seeds", "assoc_triples", "inject_unstable",
                   "corrupt_gradient"},
               "verify");
    c.verify.seed = v.value("seed", c.verify.seed);
    c.verify.workers = v.value("workers", c.verify.workers);
    c.verify.lti_systems = v.value("lti_systems", c.verify.lti_systems);
    c.verify.ltv_instances = v.value("ltv_instances", c.verify.ltv_instances);
    c.verify.init_seeds = v.value("init_seeds", c.verify.init_seeds);
    c.verify.assoc_triples = v.value("assoc_triples", c.verify.assoc_triples);
    c.verify.inject_unstable = v.value("inject_unstable", c.verify.inject_unstable);
    c.verify.corrupt_gradient = v.value("corrupt_gradient", c.verify.corrupt_gradient);
    if (c.verify.workers < 1 || c.verify.lti_systems < 1 || c.verify.ltv_instances < 1 || c.verify.init_seeds < 1 ||
        c.verify.assoc_triples < 1)
      throw std::invalid_argument("verify: counts and workers must be positive");
  }
  if (j.contains("bench")) {
    const json& b = j["bench"];
    check_keys(b, {"log2_min", "log2_max", "repeats", "p", "q", "workers", "seed"}, "bench");
    c.bench.log2_min = b.value("log2_min", c.bench.log2_min);
    c.bench.log2_max = b.value("log2_max", c.bench.log2_max);
    c.bench.repeats = b.value("repeats", c.bench.repeats);
    c.bench.p = b.value("p", c.bench.p);
    c.bench.q = b.value("q", c.bench.q);
    c.bench.workers = b.value("workers", c.bench.workers);
    c.bench.seed = b.value("seed", c.bench.seed);
    if (c.bench.log2_min < 1 || c.bench.log2_max < c.bench.log2_min || c.bench.log2_max > 24 || c.bench.repeats < 1 ||
        c.bench.p < 1 || c.bench.q < 1 || c.bench.workers < 1)
      throw std::invalid_argument("bench: invalid grid, sizes or workers");
  }
  if (j.contains("figure")) {
    const json& f = j["figure"];
    check_keys(f, {"length"}, "figure");
    c.figure_length = f.value("length", c.figure_length);
    if (c.figure_length < 1) throw std::invalid_argument("figure: length must be positive");
  }
  return c;
}

json to_json(const RunConfig& c) {
  json j = to_json(c.train);
  j["verify"] = {{"seed", c.verify.seed},
                 {"workers", c.verify.workers},
                 {"lti_systems", c.verify.lti_systems},
                 {"ltv_instances", c.verify.ltv_instances},
                 {"init_seeds", c.verify.init_seeds},
                 {"assoc_triples", c.verify.assoc_triples},
                 {"inject_unstable", c.verify.inject_unstable},
                 {"corrupt_gradient", c.verify.corrupt_gradient}};
  j["bench"] = {{"log2_min", c.bench.log2_min}, {"log2_max", c.bench.log2_max}, {"repeats", c.bench.repeats},
                {"p", c.bench.p},               {"q", c.bench.q},               {"workers", c.bench.workers},
                {"seed", c.bench.seed}};
  j["figure"] = {{"length", c.figure_length}};
  return j;
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw std::invalid_argument("--set expects key=value, got '" + assignment + "'");
  const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &j;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) {
    if (part.empty()) throw std::invalid_argument("--set: empty key segment in '" + path + "'");
    parts.push_back(part);
  }
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    json& next = (*node)[parts[i]];
    if (next.is_null()) next = json::object();
    if (!next.is_object()) throw std::invalid_argument("--set: '" + parts[i] + "' is not a section");
    node = &next;
  }
  (*node)[parts.back()] = value;
}

void set_workers(RunConfig& c, int workers) {
  if (workers < 1) throw std::invalid_argument("workers must be positive");
  c.train.workers = c.verify.workers = c.bench.workers = workers;
}

}  // namespace ssm
