#pragma once

#include <cstdint>
#include <json.hpp>
#include <string>
#include <vector>

#include "ssm/core.hpp"
#include "ssm/learn/gradcheck.hpp"
#include "ssm/scaffold.hpp"

namespace ssm {

/// One property outcome: `measured` is compared against `tolerance` (measured <= tolerance passes,
/// unless the check is a count of violations, which must be zero).
struct CheckResult {
  std::string suite;
  std::string name;
  bool passed = false;
  double measured = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

struct VerifyReport {
  std::vector<CheckResult> checks;
  bool all_passed() const;
  nlohmann::json to_json() const;
};

struct VerifyConfig {
  std::uint64_t seed = 0;
  int workers = 1;
  int lti_systems = 100;       // equivalence suite
  int ltv_instances = 50;      // time-varying scan suite
  int init_seeds = 100;        // eigenvalue-disk suite
  int assoc_triples = 10000;
  // Fault injection.
  bool inject_unstable = false;   // adds a system with |abar| = 1.2 to the disk suite
  bool corrupt_gradient = false;  // perturbs every analytic gradient before the comparison
};

/// Random diagonal discrete system with conjugate-paired poles of modulus <= max_modulus.
DiscreteSystem random_stable_system(std::uint64_t seed, int p, int q, double max_modulus = 0.999);

/// Max |a - b| over max |b| (absolute when b vanishes).
double max_rel_diff(const RMat& a, const RMat& b);
double max_rel_diff(const CMat& a, const CMat& b);

// Individual suites; each appends its checks to the report.
void suite_discretization(VerifyReport& rep, const VerifyConfig& cfg);
void suite_equivalence(VerifyReport& rep, const VerifyConfig& cfg);
void suite_ltv_scan(VerifyReport& rep, const VerifyConfig& cfg);
void suite_associativity(VerifyReport& rep, const VerifyConfig& cfg);
void suite_eigen_disk(VerifyReport& rep, const VerifyConfig& cfg);
void suite_memory(VerifyReport& rep, const VerifyConfig& cfg);
void suite_gradient(VerifyReport& rep, const VerifyConfig& cfg);

VerifyReport run_verify(const VerifyConfig& cfg);

/// Small stack used by gradient checks: p state, q channels, T steps, batch of two.
struct GradProblem {
  LayerStack stack;
  TokenBatch batch;
  std::vector<int> labels;
  std::vector<std::vector<int>> seqs;
  ad::LossFn loss;
};
GradProblem make_grad_problem(ModelKind model, ScaffoldKind scaffold, std::uint64_t seed, int p = 4, int q = 4,
                              int length = 12);

/// Gradient check of one model x scaffold pair at eps 1e-5.
ad::GradCheckResult check_stack_gradient(ModelKind model, ScaffoldKind scaffold, std::uint64_t seed,
                                         bool corrupt = false);

}  // namespace ssm
