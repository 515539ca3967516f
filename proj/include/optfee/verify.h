#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "optfee/agent.h"
#include "optfee/core_model.h"
#include "optfee/girsanov.h"
#include "optfee/parallel.h"

namespace optfee {

/// One named invariant: passes when `statistic` compares favourably with
/// `threshold` (below it, unless `above` is set).
struct CheckResult {
  std::string name;
  double statistic = 0.0;
  double threshold = 0.0;
  bool above = false;
  bool pass = false;
  std::string detail;
};

using NamedPolicy = std::pair<std::string, FeedbackPolicy>;

/// pi = w (T - t) / (2 phi_a) clamped to [L, U], tabulated on a fine (t, w) grid.
FeedbackPolicy closed_form_policy(const ModelParams& params);

/// {lower, zero, upper, closed_form}.
std::vector<NamedPolicy> standard_policies(const ModelParams& params);

/// |mean(m) - 1| / SE <= k.
CheckResult check_girsanov_normalization(const ModelParams& params, const NamedPolicy& policy,
                                         const SampleSpec& sample, double k = 3.0);

/// Reduced harness with constant drift: both sides within k SE of drift^2 T / 2.
std::vector<CheckResult> check_entropy_reduced(double drift, double horizon, std::size_t n_steps,
                                               const SampleSpec& sample, double k = 3.0);

/// Full model: |lhs - rhs| <= k combined SE.
CheckResult check_entropy_full(const ModelParams& params, const NamedPolicy& policy, const SampleSpec& sample,
                               double k = 3.0);

/// Reference sampling is used while (max|pi| / eps)^2 T, the log of the
/// bound on E[m^2] from the inventory drift, stays at or below this.
constexpr double kReferenceSamplerExponent = 8.0;

/// Reference paths with Girsanov weights when the weights have a usable
/// second moment, otherwise controlled paths with unit weight.
MeasureKind rate_moment_sampler(const ModelParams& params, const FeedbackPolicy& policy);

/// Largest mean / SE over the eta family and all six rows (admissible: <= k),
/// or over row 5 only when `expect_violation` (passes when > k).
CheckResult check_rate_moments(const ModelParams& params, const NamedPolicy& policy, const SampleSpec& sample,
                             bool expect_violation, std::optional<MeasureKind> sampler = std::nullopt, double k = 3.0);

/// Brute-force maximum of the strong objective for two atoms over m_1 in (0, 1/p_1).
double two_atom_grid_oracle(double p1, double u1, double u2, double lambda, std::size_t points);

/// u = (1, -1), p = (1/2, 1/2), lambda = 1 against log cosh(1) and the grid oracle.
CheckResult check_gibbs(double tol = 1e-8);

struct OracleSuiteSettings {
  std::size_t instances = 100;
  std::size_t max_depth = 2;
  std::size_t branching = 2;
  std::size_t trials = 100;
  std::uint64_t seed = 1;
  double tol = 1e-8;
};

/// Equality gap, collapse counterexamples and extraction violation over
/// random cases; odd-indexed cases carry the rate constraints.
std::vector<CheckResult> check_oracle_suite(const OracleSuiteSettings& settings);

/// Zero fee: policy against w (T - t) / (2 phi_a) on the inner 80% of (w, z)
/// and value against T^4 / (48 phi_a).
std::vector<CheckResult> check_agent_closed_form(const ModelParams& params, const HjbSolution& solution,
                                                 double policy_tol = 0.02, double value_tol = 0.01);

/// Controlled-measure Monte Carlo at the HJB policy within max(rel_tol |V|, k SE).
CheckResult check_agent_monte_carlo(const Contract& contract, const ModelParams& params, const HjbSolution& solution,
                                    const SampleSpec& sample, double rel_tol = 0.01, double k = 3.0);

std::string format_check(const CheckResult& check);

}  // namespace optfee
