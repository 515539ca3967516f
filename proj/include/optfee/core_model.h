#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "optfee/kv_config.h"

namespace optfee {

/// Raised for any violated model-level precondition.
class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Scalars of the brokerage model plus discretization and sampling settings.
struct ModelParams {
  double sigma = 1.0;          // price volatility
  double epsilon = 0.5;        // inventory noise
  double phi_a = 0.5;          // agent trading-rate penalty
  double phi_p = 0.25;         // principal trading-rate penalty
  double rate_lower = -10.0;   // L
  double rate_upper = 10.0;    // U
  double horizon = 1.0;        // T
  double reservation = 0.0;    // R_a
  std::size_t n_steps = 250;
  std::size_t n_paths = 10000;
  std::uint64_t seed = 20240601;

  double dt() const { return horizon / static_cast<double>(n_steps); }
  /// Weight of M log M in the agent utility: 2 eps^2 phi_a.
  double entropy_weight() const { return 2.0 * epsilon * epsilon * phi_a; }

  bool operator==(const ModelParams&) const = default;
};

/// Returns `params` unchanged when every invariant holds; otherwise throws
/// ModelError naming the first violated invariant.
ModelParams validate_params(const ModelParams& params);

/// Reads the `prefix`-qualified keys (e.g. "model.") of a flat config.
/// Keys under the prefix that are not model fields are an error.
ModelParams params_from_kv(const KeyValues& kv, const std::string& prefix = "");
void params_to_kv(const ModelParams& params, KeyValues& kv, const std::string& prefix = "");
ModelParams params_from_text(std::string_view text);
std::string params_to_text(const ModelParams& params);

/// Point of the canonical state X = (P, Z, W).
struct StateSample {
  double p = 0.0;
  double z = 0.0;
  double w = 0.0;
};

/// A trajectory of (P, Z, W) on the uniform grid t_i = i T / N, started at 0.
struct DiscretizedPath {
  std::vector<double> times;
  std::vector<double> p;
  std::vector<double> z;
  std::vector<double> w;

  std::size_t steps() const { return times.empty() ? 0 : times.size() - 1; }
  StateSample state(std::size_t i) const { return {p[i], z[i], w[i]}; }
};

/// Zero path with the time grid filled in.
DiscretizedPath make_path(std::size_t n_steps, double horizon);

/// Throws ModelError when the path breaks the grid or start-point invariants.
void check_path(const DiscretizedPath& path, double horizon);

/// Uniform node set {lo + i (hi - lo) / (n - 1)}; a single node means "constant along this axis".
struct UniformAxis {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t n = 1;

  double node(std::size_t i) const {
    return n <= 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  double spacing() const { return n <= 1 ? 0.0 : (hi - lo) / static_cast<double>(n - 1); }
  /// Cell index and weight of the upper node; coordinates are clamped to [lo, hi].
  void locate(double x, std::size_t& cell, double& frac) const;

  bool operator==(const UniformAxis&) const = default;
};

/// Extra state coordinate carried by policies that react to a running statistic.
enum class AugmentedStat { none, price, inventory_integral };

const char* to_string(AugmentedStat stat);

/// Trading-rate rule pi(t, w, z[, stat]) stored on a tensor grid with
/// multilinear interpolation; every stored value is clamped to [L, U], so
/// every interpolated value lies there too.
class FeedbackPolicy {
 public:
  FeedbackPolicy(UniformAxis time, UniformAxis signal, UniformAxis inventory, UniformAxis stat,
                 AugmentedStat stat_kind, std::vector<double> values, double lower, double upper);

  static FeedbackPolicy constant(double rate, double lower, double upper);

  /// Tabulates f(t, w, z, stat) on the given axes.
  template <typename F>
  static FeedbackPolicy tabulate(UniformAxis time, UniformAxis signal, UniformAxis inventory, UniformAxis stat,
                                 AugmentedStat stat_kind, double lower, double upper, F&& f) {
    std::vector<double> values(time.n * signal.n * inventory.n * stat.n);
    std::size_t k = 0;
    for (std::size_t it = 0; it < time.n; ++it)
      for (std::size_t iw = 0; iw < signal.n; ++iw)
        for (std::size_t iz = 0; iz < inventory.n; ++iz)
          for (std::size_t is = 0; is < stat.n; ++is)
            values[k++] = f(time.node(it), signal.node(iw), inventory.node(iz), stat.node(is));
    return FeedbackPolicy(time, signal, inventory, stat, stat_kind, std::move(values), lower, upper);
  }

  double rate(double t, double w, double z, double stat = 0.0) const;

  const UniformAxis& time_axis() const { return axes_[0]; }
  const UniformAxis& signal_axis() const { return axes_[1]; }
  const UniformAxis& inventory_axis() const { return axes_[2]; }
  const UniformAxis& stat_axis() const { return axes_[3]; }
  AugmentedStat stat_kind() const { return stat_kind_; }
  double lower() const { return lower_; }
  double upper() const { return upper_; }
  std::span<const double> values() const { return values_; }
  std::size_t index(std::size_t it, std::size_t iw, std::size_t iz, std::size_t is) const {
    return ((it * axes_[1].n + iw) * axes_[2].n + iz) * axes_[3].n + is;
  }

 private:
  std::array<UniformAxis, 4> axes_;
  AugmentedStat stat_kind_;
  std::vector<double> values_;
  double lower_;
  double upper_;
};

/// Linear constraint system b + A nu <= 0 with nu = (nu_P, nu_Z, nu_W).
/// Rows: (1,2) nu_P = W, (3,4) nu_W = 0, (5) nu_Z <= U, (6) nu_Z >= L.
struct ConstraintSpec {
  static constexpr std::size_t kRows = 6;
  static constexpr std::size_t kDims = 3;

  std::array<std::array<double, kDims>, kRows> a_matrix{};
  double rate_lower = 0.0;
  double rate_upper = 0.0;

  /// b = (-W, W, 0, 0, -U, L).
  std::array<double, kRows> b_vector(const StateSample& x) const;
  /// b + A nu.
  std::array<double, kRows> residual(const StateSample& x, const std::array<double, kDims>& nu) const;
};

ConstraintSpec make_constraint_spec(const ModelParams& params);

/// Residual of the six constraint rows at nu = (W, rate, 0).
std::array<double, ConstraintSpec::kRows> constraint_rows(const ConstraintSpec& spec, const StateSample& x,
                                                          double rate);

bool is_admissible(const std::array<double, ConstraintSpec::kRows>& residual, double tol = 0.0);

/// Girsanov density accumulated along one path.
struct PathWeight {
  double log_m = 0.0;
  double m = 1.0;
  /// Integral of the normalized squared drift, (pi/eps)^2 + (W/sigma)^2.
  double drift_sq_integral = 0.0;
  double pi_sq_integral = 0.0;
  double w_sq_integral = 0.0;
};

}  // namespace optfee
