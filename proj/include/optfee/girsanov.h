#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "optfee/core_model.h"
#include "optfee/parallel.h"

namespace optfee {

enum class MeasureKind { reference, controlled };

/// Paths sampled under one measure; `weights` is either empty or matched
/// one-to-one with `paths`.
struct PathBatch {
  std::vector<DiscretizedPath> paths;
  std::vector<PathWeight> weights;
  MeasureKind measure = MeasureKind::reference;
  std::string policy_id;
  std::uint64_t seed = 0;
  std::size_t n_steps = 0;
  double horizon = 0.0;
};

/// Path `index` of stream `seed` under the reference measure:
/// P, Z, W independent Brownian motions scaled by (sigma, eps, 1).
DiscretizedPath reference_path(const ModelParams& params, std::uint64_t seed, std::size_t index);

/// Path `index` of stream `seed` under the controlled measure (Euler scheme):
///   dP = W dt + sigma dB1,  dZ = pi dt + eps dB2,  dW = dB3.
/// Uses the same Gaussian draws as reference_path(seed, index), so paths of
/// different policies share common random numbers. When `rates` is non-null
/// it receives the N left-point rates used.
DiscretizedPath controlled_path(const ModelParams& params, const FeedbackPolicy& policy, std::uint64_t seed,
                                std::size_t index, std::vector<double>* rates = nullptr);

PathBatch simulate_reference(const ModelParams& params, std::size_t count, std::uint64_t seed, int threads = 1);
PathBatch simulate_controlled(const ModelParams& params, const FeedbackPolicy& policy, std::size_t count,
                              std::uint64_t seed, int threads = 1, std::string policy_id = "policy");

/// Left-point rates pi_i = policy(t_i, W_i, Z_i, stat_i), i < N.
std::vector<double> policy_rates(const DiscretizedPath& path, const FeedbackPolicy& policy);

struct WeightOptions {
  /// Include the price drift W in the density; off gives the degenerate
  /// harness in which only the inventory drift is reweighted.
  bool include_signal_drift = true;
};

/// Girsanov density of the controlled law relative to the reference law, with
/// Ito (left-point) evaluation:
///   log m = sum_i [ -((W_i/sigma)^2 + (pi_i/eps)^2) dt / 2 + W_i dP_i / sigma^2 + pi_i dZ_i / eps^2 ].
PathWeight girsanov_weight(const DiscretizedPath& path, const FeedbackPolicy& policy, const ModelParams& params,
                           const WeightOptions& options = {});

/// Attaches weights for `policy` to a reference batch.
void attach_weights(PathBatch& batch, const FeedbackPolicy& policy, const ModelParams& params,
                    const WeightOptions& options = {});

/// Weights over freshly generated reference paths, without retaining the paths.
std::vector<PathWeight> reference_weights(const ModelParams& params, const FeedbackPolicy& policy,
                                          const SampleSpec& sample, const WeightOptions& options = {});

/// One-coordinate test harness: a single standard Brownian coordinate with
/// constant drift c, so m = exp(-c^2 T / 2 + c X_T).
namespace reduced {

PathWeight constant_drift_weight(std::span<const double> increments, double drift, double dt);

std::vector<PathWeight> constant_drift_weights(double drift, double horizon, std::size_t n_steps,
                                               const SampleSpec& sample);

}  // namespace reduced

Estimate weight_mean(std::span<const PathWeight> weights);

/// Both sides of the entropy identity E[m log m] = E[m int |drift|^2 dt] / 2.
struct EntropyReport {
  Estimate lhs;
  Estimate rhs;
  /// sqrt(lhs.se^2 + rhs.se^2).
  double combined_se = 0.0;
  double difference() const { return lhs.mean - rhs.mean; }
  bool agrees(double k = 3.0) const;
};

EntropyReport entropy_report(std::span<const PathWeight> weights);
EntropyReport entropy_report(const PathBatch& batch);

/// Bounded non-negative test functional of the path up to s ^ tau_N.
struct EtaTest {
  enum class Kind { constant, signal_above, inventory_above };
  static constexpr double kRampWidth = 0.01;

  Kind kind = Kind::constant;
  double threshold = 0.0;
  double s = 0.0;
  double t = 1.0;
  double truncation = 10.0;

  /// Value in [0, 1]; reads only the sample at `index` (callers pass s ^ tau_N).
  double evaluate(const DiscretizedPath& path, std::size_t index) const;
  std::string label() const;
};

/// Constants plus ramp indicators of W_s, Z_s above {-1, 0, 1}, over the
/// windows {(0, T), (0, T/2), (T/2, T)} and truncation levels {2, 5, 10}.
std::vector<EtaTest> builtin_eta_family(const ModelParams& params);

/// Grid index of time `time` (floor(time N / T), tolerant to rounding).
std::size_t grid_index(double time, double horizon, std::size_t n_steps);

/// First grid index where max(|P|,|Z|,|W|) >= level, or N when never reached.
std::size_t truncation_index(const DiscretizedPath& path, double level);

/// eta * (Y_{t ^ tau} - Y_{s ^ tau}) for each constraint row, where
/// Y accumulates b dt + A dX with left-point b.
std::array<double, ConstraintSpec::kRows> constraint_increments(const DiscretizedPath& path, const EtaTest& eta,
                                                                const ConstraintSpec& spec);

/// Estimates E^W[m eta (Y_t - Y_s)] row by row over a weighted reference batch.
std::array<Estimate, ConstraintSpec::kRows> constraint_moments(const PathBatch& batch, const EtaTest& eta,
                                                               const ConstraintSpec& spec);

/// Same estimate for many tests at once over freshly generated paths. Under
/// `controlled` the paths follow the policy and carry unit weight, which
/// estimates the same expectation by the change of measure.
std::vector<std::array<Estimate, ConstraintSpec::kRows>> constraint_moments(
    const ModelParams& params, const FeedbackPolicy& policy, std::span<const EtaTest> etas,
    const ConstraintSpec& spec, const SampleSpec& sample, MeasureKind measure = MeasureKind::reference);

/// Binary batch dump, little-endian:
///   char[8] "OPTFEEPB", u32 version(=1), u32 has_weights,
///   u64 n_steps, u64 count, u64 seed, f64 horizon,
///   then per path: (N+1) doubles P, (N+1) doubles Z, (N+1) doubles W,
///   then, if has_weights, per path 5 doubles
///   (log_m, m, drift_sq_integral, pi_sq_integral, w_sq_integral).
void write_batch(std::ostream& out, const PathBatch& batch);
PathBatch read_batch(std::istream& in);

}  // namespace optfee
