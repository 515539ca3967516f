#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "optfee/agent.h"
#include "optfee/contracts.h"
#include "optfee/core_model.h"
#include "optfee/parallel.h"

namespace optfee {

/// Principal integrand: fee xi, running penalty phi_p pi^2.
struct PrincipalUtilitySpec {
  double phi_p = 0.25;
  double sigma = 1.0;
  double epsilon = 0.5;

  static PrincipalUtilitySpec from(const ModelParams& params);

  /// xi - phi_p sum pi_i^2 dt.
  double pathwise(double xi, std::span<const double> rates, double dt) const;

  /// m xi - 2 eps^2 phi_p m log m + m (eps^2 phi_p / sigma^2) int W^2 dt.
  double reweighted(double xi, const PathWeight& weight) const;
};

struct PrincipalOptions {
  BestResponseOptions agent;
  /// Paths for the J_p estimate; the same seed is reused for every contract.
  SampleSpec sample{10000, 11, 1};
};

struct PrincipalEvaluation {
  double jp = 0.0;
  double jp_se = 0.0;
  double va = 0.0;
  double va_se = 0.0;
  bool participates = false;
  bool agent_converged = true;
};

/// Best response, then E^{Q^pi*}[xi - phi_p int pi^2]; participation is
/// V_a >= R_a - 3 SE(V_a).
PrincipalEvaluation principal_objective(const Contract& contract, const ModelParams& params,
                                        const PrincipalOptions& options = {});

/// Reference-measure estimate of E[U_p(xi, X, m)] for a given policy.
Estimate estimate_principal_value_reweighted(const Contract& contract, const FeedbackPolicy& policy,
                                             const ModelParams& params, const SampleSpec& sample);

/// Constant(V~ - R_a) with V~ the agent value at zero fee. Throws ModelError
/// naming the required cap when |V~ - R_a| exceeds the family cap.
ConstantContract feasibility_seed(const ModelParams& params, const FamilySpec& family,
                                  const BestResponseOptions& options = {});

struct SequenceRecord {
  std::size_t iteration = 0;
  std::string stage;  // "screen" or "refine"
  std::vector<double> coefficients;
  PrincipalEvaluation eval;
  double objective = 0.0;  // jp when participating, otherwise -inf
  double incumbent_jp = 0.0;
  bool incumbent_update = false;
  std::string contract_record;
};

struct MaximizingSequence {
  std::vector<SequenceRecord> records;
  /// Index of the incumbent record; empty while no record participates.
  std::optional<std::size_t> incumbent;
  bool has_incumbent() const { return incumbent.has_value(); }
};

struct OptimizeOptions {
  PrincipalOptions principal;
  std::size_t budget = 200;
  double screening_fraction = 0.4;
  std::uint64_t seed = 1;
  int threads = 1;
};

struct OptimizeResult {
  Contract best = ConstantContract{};
  MaximizingSequence sequence;
};

/// Latin-hypercube screening, then Nelder-Mead from the best screened point;
/// every proposal is projected into the family box. Throws ModelError when
/// no evaluated contract satisfies participation, naming the feasibility
/// seed.
OptimizeResult optimize(const FamilySpec& family, const ModelParams& params, const OptimizeOptions& options = {});

struct ConvergenceReport {
  std::size_t incumbent_updates = 0;
  double cauchy_tail = 0.0;            // max sup-distance within the last quarter of incumbents
  std::vector<double> jp_increments;   // between successive incumbents
  bool in_box = true;                  // every visited vector lies in [-K, K]^d
  bool convergent_subsequence = true;  // compact box
  std::vector<double> limit_point;
  double limit_jp = 0.0;
};

ConvergenceReport convergence_report(const MaximizingSequence& sequence, double cap);

void write_sequence_csv(std::ostream& out, const MaximizingSequence& sequence);
/// Same rows plus a closing `limit` row carrying the report's limit point.
void write_sequence_csv(std::ostream& out, const MaximizingSequence& sequence, const ConvergenceReport& report);
std::string sequence_to_json(const MaximizingSequence& sequence);

}  // namespace optfee
