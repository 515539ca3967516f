#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <vector>

#include "optfee/contracts.h"
#include "optfee/core_model.h"
#include "optfee/parallel.h"

namespace optfee {

/// Agent integrand: running reward Z W, running cost phi_a pi^2, terminal cost xi.
struct AgentUtilitySpec {
  double phi_a = 0.5;
  double sigma = 1.0;
  double epsilon = 0.5;

  static AgentUtilitySpec from(const ModelParams& params);

  /// -xi + sum Z_i W_i dt - phi_a sum pi_i^2 dt (left point, i < N).
  double pathwise(double xi, const DiscretizedPath& path, std::span<const double> rates) const;

  /// -m xi - 2 eps^2 phi_a m log m + m zeta.
  double reweighted(double xi, double zeta, const PathWeight& weight) const;
};

/// Left-point quadrature of (eps^2 phi_a / sigma^2) W^2 + Z W.
double zeta_integral(const DiscretizedPath& path, const ModelParams& params);

class CflError : public ModelError {
 public:
  CflError(const std::string& what, double max_step) : ModelError(what), max_step_(max_step) {}
  double max_step() const { return max_step_; }

 private:
  double max_step_;
};

class UnsupportedContract : public ModelError {
 public:
  using ModelError::ModelError;
};

struct HjbOptions {
  std::size_t n_signal = 0;     // 0: 200 (3-D) or 31 (4-D)
  std::size_t n_inventory = 0;  // same defaults
  std::size_t n_stat = 0;       // 31 when a statistic is augmented
  std::size_t n_time = 0;       // 0: smallest CFL-stable count
  std::size_t n_slices = 0;     // stored time slices; 0: 51 (3-D) or 11 (4-D)
  double cfl_safety = 0.9;
  int threads = 1;
};

/// Value samples on (time slice, w, z, stat) nodes; the last slice is the
/// terminal reward -xi.
struct ValueGrid {
  UniformAxis time;
  UniformAxis signal;
  UniformAxis inventory;
  UniformAxis stat;
  AugmentedStat stat_kind = AugmentedStat::none;
  std::vector<double> values;

  std::size_t index(std::size_t it, std::size_t iw, std::size_t iz, std::size_t is) const {
    return ((it * signal.n + iw) * inventory.n + iz) * stat.n + is;
  }
  /// Multilinear interpolation, coordinates clamped to the domain.
  double value(double t, double w, double z, double s = 0.0) const;
};

struct HjbSolution {
  FeedbackPolicy policy;
  ValueGrid grid;
  double value = 0.0;  // V(0, 0, 0[, 0])
  std::size_t n_time = 0;
  double dt = 0.0;
};

/// Statistic the HJB state must carry for the contract, or nullopt when the
/// contract is not Markovian in any supported augmentation.
std::optional<AugmentedStat> markovian_statistic(const Contract& contract, const ModelParams& params);

/// Explicit upwind finite-difference sweep, backward from T.
HjbSolution solve_hjb(const Contract& contract, const ModelParams& params, const HjbOptions& options = {});

/// Controlled-measure Monte Carlo of -xi + int Z W dt - phi_a int pi^2 dt.
Estimate estimate_agent_value(const Contract& contract, const FeedbackPolicy& policy, const ModelParams& params,
                              const SampleSpec& sample);

/// Reference-measure Monte Carlo of U_a(xi, X, m) with the Girsanov weight of the policy.
Estimate estimate_agent_value_reweighted(const Contract& contract, const FeedbackPolicy& policy,
                                         const ModelParams& params, const SampleSpec& sample);

struct BestResponseOptions {
  HjbOptions hjb;
  // Coordinate-ascent fallback.
  std::size_t table_time = 4;
  std::size_t table_signal = 5;
  std::size_t table_inventory = 3;
  std::size_t max_iterations = 200;
  double tolerance = 1e-6;
  SampleSpec sample{2000, 7, 1};
};

struct BestResponse {
  FeedbackPolicy policy = FeedbackPolicy::constant(0.0, 0.0, 0.0);
  double value = 0.0;
  double se = 0.0;
  bool markovian = true;
  bool converged = true;
  std::size_t iterations = 0;
  std::vector<double> history;  // incumbent value after each sweep
};

/// HJB for Markovian contracts; otherwise projected coordinate ascent over a
/// coarse policy table seeded from a Markovian surrogate, with common random
/// numbers across iterates.
BestResponse best_response(const Contract& contract, const ModelParams& params,
                           const BestResponseOptions& options = {});

/// Markovian stand-in used to seed the fallback.
Contract markovian_surrogate(const Contract& contract, const ModelParams& params);

/// `stride` thins the (w, z) nodes; time slices and stat nodes are all kept.
void write_value_grid_csv(std::ostream& out, const ValueGrid& grid, std::size_t stride = 1);
void write_policy_csv(std::ostream& out, const FeedbackPolicy& policy, std::size_t stride = 1);

}  // namespace optfee
