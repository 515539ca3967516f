#include "optfee/core_model.h"

#include <algorithm>
#include <cmath>
#include <set>

namespace optfee {

ModelParams validate_params(const ModelParams& params) {
  auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  if (!positive(params.sigma)) throw ModelError("sigma must be positive");
  if (!positive(params.epsilon)) throw ModelError("epsilon must be positive");
  if (!positive(params.phi_a)) throw ModelError("phi_a must be positive");
  if (!std::isfinite(params.phi_p) || params.phi_p < 0.0) throw ModelError("phi_p must be non-negative");
  if (!std::isfinite(params.rate_lower) || !std::isfinite(params.rate_upper))
    throw ModelError("rate bounds must be finite");
  if (params.rate_lower > params.rate_upper) throw ModelError("rate_lower exceeds rate_upper");
  if (!positive(params.horizon)) throw ModelError("horizon must be positive");
  if (!std::isfinite(params.reservation)) throw ModelError("reservation must be finite");
  if (params.n_steps < 1) throw ModelError("n_steps must be at least 1");
  if (params.n_paths < 1) throw ModelError("n_paths must be at least 1");
  return params;
}

namespace {

const std::set<std::string>& param_keys() {
  static const std::set<std::string> keys = {"sigma",   "epsilon", "phi_a",       "phi_p",   "rate_lower", "rate_upper",
                                             "horizon", "reservation", "n_steps", "n_paths", "seed"};
  return keys;
}

}  // namespace

ModelParams params_from_kv(const KeyValues& kv, const std::string& prefix) {
  ModelParams p;
  for (const auto& [full_key, entry] : kv) {
    if (full_key.compare(0, prefix.size(), prefix) != 0) continue;
    const std::string key = full_key.substr(prefix.size());
    if (!param_keys().count(key)) {
      throw ConfigError("line " + std::to_string(entry.line) + ": unknown key '" + full_key + "'");
    }
    if (key == "sigma") p.sigma = kv_double(entry, full_key);
    else if (key == "epsilon") p.epsilon = kv_double(entry, full_key);
    else if (key == "phi_a") p.phi_a = kv_double(entry, full_key);
    else if (key == "phi_p") p.phi_p = kv_double(entry, full_key);
    else if (key == "rate_lower") p.rate_lower = kv_double(entry, full_key);
    else if (key == "rate_upper") p.rate_upper = kv_double(entry, full_key);
    else if (key == "horizon") p.horizon = kv_double(entry, full_key);
    else if (key == "reservation") p.reservation = kv_double(entry, full_key);
    else if (key == "n_steps") p.n_steps = kv_uint(entry, full_key);
    else if (key == "n_paths") p.n_paths = kv_uint(entry, full_key);
    else if (key == "seed") p.seed = kv_uint(entry, full_key);
  }
  return p;
}

void params_to_kv(const ModelParams& p, KeyValues& kv, const std::string& prefix) {
  auto put = [&](const char* key, std::string value) { kv[prefix + key] = KvEntry{std::move(value), 0}; };
  put("sigma", format_double(p.sigma));
  put("epsilon", format_double(p.epsilon));
  put("phi_a", format_double(p.phi_a));
  put("phi_p", format_double(p.phi_p));
  put("rate_lower", format_double(p.rate_lower));
  put("rate_upper", format_double(p.rate_upper));
  put("horizon", format_double(p.horizon));
  put("reservation", format_double(p.reservation));
  put("n_steps", std::to_string(p.n_steps));
  put("n_paths", std::to_string(p.n_paths));
  put("seed", std::to_string(p.seed));
}

ModelParams params_from_text(std::string_view text) { return params_from_kv(parse_key_values(text)); }

std::string params_to_text(const ModelParams& params) {
  KeyValues kv;
  params_to_kv(params, kv);
  return format_key_values(kv);
}

DiscretizedPath make_path(std::size_t n_steps, double horizon) {
  DiscretizedPath path;
  path.times.resize(n_steps + 1);
  for (std::size_t i = 0; i <= n_steps; ++i) {
    path.times[i] = horizon * static_cast<double>(i) / static_cast<double>(n_steps);
  }
  path.p.assign(n_steps + 1, 0.0);
  path.z.assign(n_steps + 1, 0.0);
  path.w.assign(n_steps + 1, 0.0);
  return path;
}

void check_path(const DiscretizedPath& path, double horizon) {
  const std::size_t n = path.times.size();
  if (n < 2) throw ModelError("path needs at least two grid points");
  if (path.p.size() != n || path.z.size() != n || path.w.size() != n)
    throw ModelError("path coordinate arrays differ in length");
  const double step = horizon / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    if (std::fabs(path.times[i] - step * static_cast<double>(i)) > 1e-12 * std::max(1.0, horizon))
      throw ModelError("path time grid is not uniform on [0, T]");
  }
  if (path.p[0] != 0.0 || path.z[0] != 0.0 || path.w[0] != 0.0) throw ModelError("path does not start at the origin");
}

void UniformAxis::locate(double x, std::size_t& cell, double& frac) const {
  if (n <= 1) {
    cell = 0;
    frac = 0.0;
    return;
  }
  const double u = (std::clamp(x, lo, hi) - lo) / (hi - lo) * static_cast<double>(n - 1);
  const double fl = std::floor(u);
  cell = std::min(static_cast<std::size_t>(fl), n - 2);
  frac = u - static_cast<double>(cell);
}

const char* to_string(AugmentedStat stat) {
  switch (stat) {
    case AugmentedStat::none: return "none";
    case AugmentedStat::price: return "price";
    case AugmentedStat::inventory_integral: return "inventory_integral";
  }
  return "none";
}

FeedbackPolicy::FeedbackPolicy(UniformAxis time, UniformAxis signal, UniformAxis inventory, UniformAxis stat,
                               AugmentedStat stat_kind, std::vector<double> values, double lower, double upper)
    : axes_{time, signal, inventory, stat},
      stat_kind_(stat_kind),
      values_(std::move(values)),
      lower_(lower),
      upper_(upper) {
  if (lower > upper) throw ModelError("policy bounds: lower exceeds upper");
  for (const auto& axis : axes_) {
    if (axis.n < 1) throw ModelError("policy axis needs at least one node");
    if (axis.n > 1 && !(axis.hi > axis.lo)) throw ModelError("policy axis must have hi > lo");
  }
  if (values_.size() != time.n * signal.n * inventory.n * stat.n)
    throw ModelError("policy table size does not match its axes");
  for (double& v : values_) {
    if (!std::isfinite(v)) throw ModelError("policy table holds a non-finite rate");
    v = std::clamp(v, lower_, upper_);
  }
}

FeedbackPolicy FeedbackPolicy::constant(double rate, double lower, double upper) {
  return FeedbackPolicy({}, {}, {}, {}, AugmentedStat::none, {rate}, lower, upper);
}

double FeedbackPolicy::rate(double t, double w, double z, double stat) const {
  const double coords[4] = {t, w, z, stat};
  std::size_t cell[4];
  double frac[4];
  for (int d = 0; d < 4; ++d) axes_[d].locate(coords[d], cell[d], frac[d]);
  const std::size_t stride[4] = {axes_[1].n * axes_[2].n * axes_[3].n, axes_[2].n * axes_[3].n, axes_[3].n, 1};
  double acc = 0.0;
  for (int corner = 0; corner < 16; ++corner) {
    double weight = 1.0;
    std::size_t offset = 0;
    bool skip = false;
    for (int d = 0; d < 4; ++d) {
      const int up = (corner >> d) & 1;
      if (axes_[d].n == 1) {
        if (up) { skip = true; break; }
        continue;
      }
      weight *= up ? frac[d] : 1.0 - frac[d];
      offset += (cell[d] + up) * stride[d];
    }
    if (skip || weight == 0.0) continue;
    acc += weight * values_[offset];
  }
  return std::clamp(acc, lower_, upper_);
}

std::array<double, ConstraintSpec::kRows> ConstraintSpec::b_vector(const StateSample& x) const {
  return {-x.w, x.w, 0.0, 0.0, -rate_upper, rate_lower};
}

std::array<double, ConstraintSpec::kRows> ConstraintSpec::residual(const StateSample& x,
                                                                   const std::array<double, kDims>& nu) const {
  auto r = b_vector(x);
  for (std::size_t i = 0; i < kRows; ++i) {
    for (std::size_t j = 0; j < kDims; ++j) r[i] += a_matrix[i][j] * nu[j];
  }
  return r;
}

ConstraintSpec make_constraint_spec(const ModelParams& params) {
  ConstraintSpec spec;
  // Columns follow X = (P, Z, W): A maps nu = (nu_P, nu_Z, nu_W).
  spec.a_matrix = {{{1, 0, 0}, {-1, 0, 0}, {0, 0, 1}, {0, 0, -1}, {0, 1, 0}, {0, -1, 0}}};
  spec.rate_lower = params.rate_lower;
  spec.rate_upper = params.rate_upper;
  return spec;
}

std::array<double, ConstraintSpec::kRows> constraint_rows(const ConstraintSpec& spec, const StateSample& x,
                                                          double rate) {
  return spec.residual(x, {x.w, rate, 0.0});
}

bool is_admissible(const std::array<double, ConstraintSpec::kRows>& residual, double tol) {
  return std::all_of(residual.begin(), residual.end(), [tol](double r) { return r <= tol; });
}

}  // namespace optfee
