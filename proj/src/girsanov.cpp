#include "optfee/girsanov.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include "optfee/random.h"

namespace optfee {

DiscretizedPath reference_path(const ModelParams& params, std::uint64_t seed, std::size_t index) {
  const std::size_t n = params.n_steps;
  DiscretizedPath path = make_path(n, params.horizon);
  CounterRng rng(seed, index);
  const double sq = std::sqrt(params.dt());
  for (std::size_t i = 0; i < n; ++i) {
    const double e1 = rng.normal();
    const double e2 = rng.normal();
    const double e3 = rng.normal();
    path.p[i + 1] = path.p[i] + params.sigma * sq * e1;
    path.z[i + 1] = path.z[i] + params.epsilon * sq * e2;
    path.w[i + 1] = path.w[i] + sq * e3;
  }
  return path;
}

DiscretizedPath controlled_path(const ModelParams& params, const FeedbackPolicy& policy, std::uint64_t seed,
                                std::size_t index, std::vector<double>* rates) {
  const std::size_t n = params.n_steps;
  const double dt = params.dt();
  const double sq = std::sqrt(dt);
  DiscretizedPath path = make_path(n, params.horizon);
  CounterRng rng(seed, index);
  if (rates) rates->resize(n);
  double z_integral = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double stat = 0.0;
    if (policy.stat_kind() == AugmentedStat::price) stat = path.p[i];
    else if (policy.stat_kind() == AugmentedStat::inventory_integral) stat = z_integral;
    const double pi = policy.rate(path.times[i], path.w[i], path.z[i], stat);
    if (rates) (*rates)[i] = pi;
    const double e1 = rng.normal();
    const double e2 = rng.normal();
    const double e3 = rng.normal();
    path.p[i + 1] = path.p[i] + path.w[i] * dt + params.sigma * sq * e1;
    path.z[i + 1] = path.z[i] + pi * dt + params.epsilon * sq * e2;
    path.w[i + 1] = path.w[i] + sq * e3;
    z_integral += path.z[i] * dt;
  }
  return path;
}

PathBatch simulate_reference(const ModelParams& params, std::size_t count, std::uint64_t seed, int threads) {
  if (count < 1) throw ModelError("simulate_reference: count must be at least 1");
  PathBatch batch;
  batch.paths.resize(count);
  batch.measure = MeasureKind::reference;
  batch.seed = seed;
  batch.n_steps = params.n_steps;
  batch.horizon = params.horizon;
  parallel_for(count, threads, [&](std::size_t i) { batch.paths[i] = reference_path(params, seed, i); });
  return batch;
}

PathBatch simulate_controlled(const ModelParams& params, const FeedbackPolicy& policy, std::size_t count,
                              std::uint64_t seed, int threads, std::string policy_id) {
  if (count < 1) throw ModelError("simulate_controlled: count must be at least 1");
  PathBatch batch;
  batch.paths.resize(count);
  batch.measure = MeasureKind::controlled;
  batch.policy_id = std::move(policy_id);
  batch.seed = seed;
  batch.n_steps = params.n_steps;
  batch.horizon = params.horizon;
  parallel_for(count, threads, [&](std::size_t i) { batch.paths[i] = controlled_path(params, policy, seed, i); });
  return batch;
}

std::vector<double> policy_rates(const DiscretizedPath& path, const FeedbackPolicy& policy) {
  const std::size_t n = path.steps();
  std::vector<double> rates(n);
  double z_integral = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double stat = 0.0;
    if (policy.stat_kind() == AugmentedStat::price) stat = path.p[i];
    else if (policy.stat_kind() == AugmentedStat::inventory_integral) stat = z_integral;
    rates[i] = policy.rate(path.times[i], path.w[i], path.z[i], stat);
    z_integral += path.z[i] * (path.times[i + 1] - path.times[i]);
  }
  return rates;
}

PathWeight girsanov_weight(const DiscretizedPath& path, const FeedbackPolicy& policy, const ModelParams& params,
                           const WeightOptions& options) {
  const std::size_t n = path.steps();
  const double s2 = params.sigma * params.sigma;
  const double e2 = params.epsilon * params.epsilon;
  const std::vector<double> rates = policy_rates(path, policy);
  PathWeight out;
  double log_m = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dt = path.times[i + 1] - path.times[i];
    const double w = options.include_signal_drift ? path.w[i] : 0.0;
    const double pi = rates[i];
    const double dp = path.p[i + 1] - path.p[i];
    const double dz = path.z[i + 1] - path.z[i];
    const double drift_sq = w * w / s2 + pi * pi / e2;
    log_m += -0.5 * drift_sq * dt + w * dp / s2 + pi * dz / e2;
    out.drift_sq_integral += drift_sq * dt;
    out.pi_sq_integral += pi * pi * dt;
    out.w_sq_integral += path.w[i] * path.w[i] * dt;
  }
  out.log_m = log_m;
  out.m = std::exp(log_m);
  return out;
}

void attach_weights(PathBatch& batch, const FeedbackPolicy& policy, const ModelParams& params,
                    const WeightOptions& options) {
  if (batch.measure != MeasureKind::reference) throw ModelError("attach_weights: batch must be a reference batch");
  batch.weights.resize(batch.paths.size());
  for (std::size_t i = 0; i < batch.paths.size(); ++i) {
    batch.weights[i] = girsanov_weight(batch.paths[i], policy, params, options);
  }
}

std::vector<PathWeight> reference_weights(const ModelParams& params, const FeedbackPolicy& policy,
                                          const SampleSpec& sample, const WeightOptions& options) {
  std::vector<PathWeight> weights(sample.count);
  parallel_for(sample.count, sample.threads, [&](std::size_t i) {
    weights[i] = girsanov_weight(reference_path(params, sample.seed, i), policy, params, options);
  });
  return weights;
}

namespace reduced {

PathWeight constant_drift_weight(std::span<const double> increments, double drift, double dt) {
  PathWeight out;
  for (double dx : increments) {
    out.log_m += -0.5 * drift * drift * dt + drift * dx;
    out.drift_sq_integral += drift * drift * dt;
  }
  out.m = std::exp(out.log_m);
  return out;
}

std::vector<PathWeight> constant_drift_weights(double drift, double horizon, std::size_t n_steps,
                                               const SampleSpec& sample) {
  const double dt = horizon / static_cast<double>(n_steps);
  const double sq = std::sqrt(dt);
  std::vector<PathWeight> weights(sample.count);
  parallel_for(sample.count, sample.threads, [&](std::size_t i) {
    CounterRng rng(sample.seed, i);
    std::vector<double> inc(n_steps);
    for (double& dx : inc) dx = sq * rng.normal();
    weights[i] = constant_drift_weight(inc, drift, dt);
  });
  return weights;
}

}  // namespace reduced

Estimate weight_mean(std::span<const PathWeight> weights) {
  std::vector<double> m(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) m[i] = weights[i].m;
  return mean_and_se(m);
}

bool EntropyReport::agrees(double k) const { return std::fabs(difference()) <= k * combined_se; }

EntropyReport entropy_report(std::span<const PathWeight> weights) {
  std::vector<double> lhs(weights.size());
  std::vector<double> rhs(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    lhs[i] = weights[i].m * weights[i].log_m;
    rhs[i] = 0.5 * weights[i].m * weights[i].drift_sq_integral;
  }
  EntropyReport report;
  report.lhs = mean_and_se(lhs);
  report.rhs = mean_and_se(rhs);
  report.combined_se = std::hypot(report.lhs.se, report.rhs.se);
  return report;
}

EntropyReport entropy_report(const PathBatch& batch) {
  if (batch.weights.size() != batch.paths.size() || batch.weights.empty())
    throw ModelError("entropy_report: batch carries no weights");
  return entropy_report(batch.weights);
}

double EtaTest::evaluate(const DiscretizedPath& path, std::size_t index) const {
  auto ramp = [this](double x) { return std::clamp((x - threshold) / kRampWidth, 0.0, 1.0); };
  switch (kind) {
    case Kind::constant: return 1.0;
    case Kind::signal_above: return ramp(path.w[index]);
    case Kind::inventory_above: return ramp(path.z[index]);
  }
  return 0.0;
}

std::string EtaTest::label() const {
  std::string name;
  switch (kind) {
    case Kind::constant: name = "const"; break;
    case Kind::signal_above: name = "W>" + format_double(threshold); break;
    case Kind::inventory_above: name = "Z>" + format_double(threshold); break;
  }
  return name + "[" + format_double(s) + "," + format_double(t) + "]N=" + format_double(truncation);
}

std::vector<EtaTest> builtin_eta_family(const ModelParams& params) {
  const double T = params.horizon;
  const std::array<std::pair<double, double>, 3> windows = {{{0.0, T}, {0.0, 0.5 * T}, {0.5 * T, T}}};
  const std::array<double, 3> levels = {2.0, 5.0, 10.0};
  const std::array<double, 3> thresholds = {-1.0, 0.0, 1.0};
  std::vector<EtaTest> family;
  for (const auto& [s, t] : windows) {
    for (double level : levels) {
      family.push_back({EtaTest::Kind::constant, 0.0, s, t, level});
      for (double th : thresholds) {
        family.push_back({EtaTest::Kind::signal_above, th, s, t, level});
        family.push_back({EtaTest::Kind::inventory_above, th, s, t, level});
      }
    }
  }
  return family;
}

std::size_t grid_index(double time, double horizon, std::size_t n_steps) {
  const double u = time / horizon * static_cast<double>(n_steps);
  const auto idx = static_cast<std::size_t>(std::floor(u + 1e-9));
  return std::min(idx, n_steps);
}

std::size_t truncation_index(const DiscretizedPath& path, double level) {
  for (std::size_t i = 0; i < path.times.size(); ++i) {
    if (std::max({std::fabs(path.p[i]), std::fabs(path.z[i]), std::fabs(path.w[i])}) >= level) return i;
  }
  return path.steps();
}

std::array<double, ConstraintSpec::kRows> constraint_increments(const DiscretizedPath& path, const EtaTest& eta,
                                                                const ConstraintSpec& spec) {
  const std::size_t n = path.steps();
  const double horizon = path.times.back();
  const std::size_t tau = truncation_index(path, eta.truncation);
  const std::size_t is = std::min(grid_index(eta.s, horizon, n), tau);
  const std::size_t it = std::min(grid_index(eta.t, horizon, n), tau);
  const double weight = eta.evaluate(path, is);
  std::array<double, ConstraintSpec::kRows> inc{};
  if (weight == 0.0) return inc;
  for (std::size_t i = is; i < it; ++i) {
    const double dt = path.times[i + 1] - path.times[i];
    const auto b = spec.b_vector(path.state(i));
    const double dx[3] = {path.p[i + 1] - path.p[i], path.z[i + 1] - path.z[i], path.w[i + 1] - path.w[i]};
    for (std::size_t r = 0; r < ConstraintSpec::kRows; ++r) {
      double a_dx = 0.0;
      for (std::size_t j = 0; j < 3; ++j) a_dx += spec.a_matrix[r][j] * dx[j];
      inc[r] += b[r] * dt + a_dx;
    }
  }
  for (double& v : inc) v *= weight;
  return inc;
}

std::array<Estimate, ConstraintSpec::kRows> constraint_moments(const PathBatch& batch, const EtaTest& eta,
                                                               const ConstraintSpec& spec) {
  if (batch.measure != MeasureKind::reference) throw ModelError("constraint_moments: expects a reference batch");
  if (batch.weights.size() != batch.paths.size() || batch.weights.empty())
    throw ModelError("constraint_moments: batch carries no weights");
  const std::size_t count = batch.paths.size();
  std::array<std::vector<double>, ConstraintSpec::kRows> samples;
  for (auto& s : samples) s.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto inc = constraint_increments(batch.paths[i], eta, spec);
    for (std::size_t r = 0; r < ConstraintSpec::kRows; ++r) samples[r][i] = batch.weights[i].m * inc[r];
  }
  std::array<Estimate, ConstraintSpec::kRows> out;
  for (std::size_t r = 0; r < ConstraintSpec::kRows; ++r) out[r] = mean_and_se(samples[r]);
  return out;
}

std::vector<std::array<Estimate, ConstraintSpec::kRows>> constraint_moments(
    const ModelParams& params, const FeedbackPolicy& policy, std::span<const EtaTest> etas,
    const ConstraintSpec& spec, const SampleSpec& sample, MeasureKind measure) {
  const std::size_t count = sample.count;
  const std::size_t rows = ConstraintSpec::kRows;
  // samples[(e * rows + r) * count + i]
  std::vector<double> samples(etas.size() * rows * count);
  parallel_for(count, sample.threads, [&](std::size_t i) {
    const bool reference = measure == MeasureKind::reference;
    const DiscretizedPath path =
        reference ? reference_path(params, sample.seed, i) : controlled_path(params, policy, sample.seed, i);
    const double m = reference ? girsanov_weight(path, policy, params).m : 1.0;
    for (std::size_t e = 0; e < etas.size(); ++e) {
      const auto inc = constraint_increments(path, etas[e], spec);
      for (std::size_t r = 0; r < rows; ++r) samples[(e * rows + r) * count + i] = m * inc[r];
    }
  });
  std::vector<std::array<Estimate, ConstraintSpec::kRows>> out(etas.size());
  for (std::size_t e = 0; e < etas.size(); ++e) {
    for (std::size_t r = 0; r < rows; ++r) {
      out[e][r] = mean_and_se(std::span<const double>(samples).subspan((e * rows + r) * count, count));
    }
  }
  return out;
}

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(T));
  if (!in) throw ModelError("read_batch: truncated input");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

constexpr char kMagic[8] = {'O', 'P', 'T', 'F', 'E', 'E', 'P', 'B'};

}  // namespace

void write_batch(std::ostream& out, const PathBatch& batch) {
  const bool has_weights = !batch.weights.empty();
  if (has_weights && batch.weights.size() != batch.paths.size())
    throw ModelError("write_batch: weights do not match paths");
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, 1);
  put<std::uint32_t>(out, has_weights ? 1 : 0);
  put<std::uint64_t>(out, batch.n_steps);
  put<std::uint64_t>(out, batch.paths.size());
  put<std::uint64_t>(out, batch.seed);
  put<double>(out, batch.horizon);
  for (const auto& path : batch.paths) {
    if (path.steps() != batch.n_steps) throw ModelError("write_batch: path length differs from header");
    for (double v : path.p) put(out, v);
    for (double v : path.z) put(out, v);
    for (double v : path.w) put(out, v);
  }
  if (has_weights) {
    for (const auto& wt : batch.weights) {
      put(out, wt.log_m);
      put(out, wt.m);
      put(out, wt.drift_sq_integral);
      put(out, wt.pi_sq_integral);
      put(out, wt.w_sq_integral);
    }
  }
}

PathBatch read_batch(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0) throw ModelError("read_batch: bad magic");
  if (get<std::uint32_t>(in) != 1) throw ModelError("read_batch: unsupported version");
  const bool has_weights = get<std::uint32_t>(in) != 0;
  PathBatch batch;
  batch.n_steps = get<std::uint64_t>(in);
  const auto count = get<std::uint64_t>(in);
  batch.seed = get<std::uint64_t>(in);
  batch.horizon = get<double>(in);
  if (batch.n_steps < 1) throw ModelError("read_batch: n_steps must be at least 1");
  batch.paths.resize(count);
  for (auto& path : batch.paths) {
    path = make_path(batch.n_steps, batch.horizon);
    for (double& v : path.p) v = get<double>(in);
    for (double& v : path.z) v = get<double>(in);
    for (double& v : path.w) v = get<double>(in);
  }
  if (has_weights) {
    batch.weights.resize(count);
    for (auto& wt : batch.weights) {
      wt.log_m = get<double>(in);
      wt.m = get<double>(in);
      wt.drift_sq_integral = get<double>(in);
      wt.pi_sq_integral = get<double>(in);
      wt.w_sq_integral = get<double>(in);
    }
  }
  return batch;
}

}  // namespace optfee
