#include "optfee/agent.h"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "optfee/girsanov.h"

namespace optfee {

AgentUtilitySpec AgentUtilitySpec::from(const ModelParams& params) {
  return {params.phi_a, params.sigma, params.epsilon};
}

double AgentUtilitySpec::pathwise(double xi, const DiscretizedPath& path, std::span<const double> rates) const {
  const double dt = path.times[1] - path.times[0];
  double acc = 0.0;
  for (std::size_t i = 0; i < path.steps(); ++i) acc += (path.z[i] * path.w[i] - phi_a * rates[i] * rates[i]) * dt;
  return -xi + acc;
}

double AgentUtilitySpec::reweighted(double xi, double zeta, const PathWeight& weight) const {
  const double lambda = 2.0 * epsilon * epsilon * phi_a;
  return -weight.m * xi - lambda * weight.m * weight.log_m + weight.m * zeta;
}

double zeta_integral(const DiscretizedPath& path, const ModelParams& params) {
  const double dt = path.times[1] - path.times[0];
  const double c = params.epsilon * params.epsilon * params.phi_a / (params.sigma * params.sigma);
  double acc = 0.0;
  for (std::size_t i = 0; i < path.steps(); ++i) acc += (c * path.w[i] * path.w[i] + path.z[i] * path.w[i]) * dt;
  return acc;
}

namespace {

double multilinear(const std::array<const UniformAxis*, 4>& axes, std::span<const double> values,
                   const std::array<double, 4>& coords) {
  std::size_t cell[4];
  double frac[4];
  for (int d = 0; d < 4; ++d) axes[d]->locate(coords[d], cell[d], frac[d]);
  const std::size_t stride[4] = {axes[1]->n * axes[2]->n * axes[3]->n, axes[2]->n * axes[3]->n, axes[3]->n, 1};
  double acc = 0.0;
  for (int corner = 0; corner < 16; ++corner) {
    double weight = 1.0;
    std::size_t offset = 0;
    bool skip = false;
    for (int d = 0; d < 4; ++d) {
      const int up = (corner >> d) & 1;
      if (axes[d]->n == 1) {
        if (up) { skip = true; break; }
        continue;
      }
      weight *= up ? frac[d] : 1.0 - frac[d];
      offset += (cell[d] + up) * stride[d];
    }
    if (skip || weight == 0.0) continue;
    acc += weight * values[offset];
  }
  return acc;
}

bool is_terminal_time(double t, double horizon) { return std::fabs(t - horizon) <= 1e-12 * std::max(1.0, horizon); }

}  // namespace

double ValueGrid::value(double t, double w, double z, double s) const {
  return multilinear({&time, &signal, &inventory, &stat}, values, {t, w, z, s});
}

std::optional<AugmentedStat> markovian_statistic(const Contract& contract, const ModelParams& params) {
  if (std::holds_alternative<ConstantContract>(contract)) return AugmentedStat::none;
  if (const auto* poly = std::get_if<PolynomialContract>(&contract)) {
    bool has_p = false;
    bool has_z = false;
    for (int i = 0; i <= poly->degree; ++i)
      for (int j = 0; j <= poly->degree; ++j) {
        if (poly->coefficient(i, j) == 0.0) continue;
        if (i > 0) has_p = true;
        else if (j > 0) has_z = true;
      }
    if (poly->op == PathOperator::terminal) return has_p ? AugmentedStat::price : AugmentedStat::none;
    if (has_p) return std::nullopt;
    return has_z ? AugmentedStat::inventory_integral : AugmentedStat::none;
  }
  const auto& table = std::get<TableContract>(contract);
  if (table.partition_times.size() == 1 && is_terminal_time(table.partition_times[0], params.horizon))
    return AugmentedStat::price;
  return std::nullopt;
}

HjbSolution solve_hjb(const Contract& contract, const ModelParams& raw_params, const HjbOptions& options) {
  const ModelParams params = validate_params(raw_params);
  check_contract(contract);
  const auto stat_kind = markovian_statistic(contract, params);
  if (!stat_kind) throw UnsupportedContract("solve_hjb: contract is not Markovian in (t, w, z) or one augmented statistic");
  const bool augmented = *stat_kind != AugmentedStat::none;

  const double T = params.horizon;
  const double rate_max = std::max(std::fabs(params.rate_lower), std::fabs(params.rate_upper));
  const std::size_t n_default = augmented ? 31 : 200;
  const std::size_t nw = options.n_signal ? options.n_signal : n_default;
  const std::size_t nz = options.n_inventory ? options.n_inventory : n_default;
  const std::size_t ns = augmented ? (options.n_stat ? options.n_stat : 31) : 1;
  const std::size_t n_slices = options.n_slices ? options.n_slices : (augmented ? 11 : 51);
  if (nw < 3 || nz < 3 || (augmented && ns < 3)) throw ModelError("solve_hjb: each axis needs at least 3 nodes");
  if (n_slices < 2) throw ModelError("solve_hjb: need at least 2 stored slices");

  const double w_hi = 6.0 * std::sqrt(T);
  const double z_hi = 6.0 * params.epsilon * std::sqrt(T) + rate_max * T;
  double s_hi = 0.0;
  if (*stat_kind == AugmentedStat::price) {
    s_hi = 6.0 * std::sqrt(params.sigma * params.sigma * T + T * T * T / 3.0);
  } else if (*stat_kind == AugmentedStat::inventory_integral) {
    s_hi = 6.0 * params.epsilon * std::pow(T, 1.5) / std::sqrt(3.0) + rate_max * T * T / 2.0;
  }
  const UniformAxis w_axis{-w_hi, w_hi, nw};
  const UniformAxis z_axis{-z_hi, z_hi, nz};
  const UniformAxis s_axis = augmented ? UniformAxis{-s_hi, s_hi, ns} : UniformAxis{};
  const double hw = w_axis.spacing();
  const double hz = z_axis.spacing();
  const double hs = s_axis.spacing();

  const double dw = 0.5;
  const double dz = 0.5 * params.epsilon * params.epsilon;
  const double ds = *stat_kind == AugmentedStat::price ? 0.5 * params.sigma * params.sigma : 0.0;
  double rate_sum = 2.0 * dw / (hw * hw) + 2.0 * dz / (hz * hz) + rate_max / hz;
  if (*stat_kind == AugmentedStat::price) rate_sum += 2.0 * ds / (hs * hs) + w_hi / hs;
  if (*stat_kind == AugmentedStat::inventory_integral) rate_sum += z_hi / hs;
  const double max_step = options.cfl_safety / rate_sum;

  const std::size_t per_slice_stride = n_slices - 1;
  std::size_t n_time = options.n_time;
  if (n_time == 0) {
    n_time = static_cast<std::size_t>(std::ceil(T / max_step));
    n_time = (n_time + per_slice_stride - 1) / per_slice_stride * per_slice_stride;
  } else {
    if (T / static_cast<double>(n_time) > max_step)
      throw CflError("solve_hjb: time step " + format_double(T / static_cast<double>(n_time)) +
                         " exceeds the stable maximum " + format_double(max_step),
                     max_step);
    if (n_time % per_slice_stride != 0)
      throw ModelError("solve_hjb: n_time must be a multiple of n_slices - 1");
  }
  const double dt = T / static_cast<double>(n_time);
  const std::size_t steps_per_slice = n_time / per_slice_stride;

  const std::size_t sz = ns;
  const std::size_t sw = nz * ns;
  const std::size_t n_nodes = nw * nz * ns;
  std::vector<double> v(n_nodes), vn(n_nodes);

  // Terminal reward.
  for (std::size_t iw = 0; iw < nw; ++iw)
    for (std::size_t iz = 0; iz < nz; ++iz)
      for (std::size_t is = 0; is < ns; ++is) {
        const double z = z_axis.node(iz);
        const double s = s_axis.node(is);
        double xi = 0.0;
        switch (*stat_kind) {
          case AugmentedStat::none: xi = evaluate_statistics(contract, 0.0, z); break;
          case AugmentedStat::price: xi = evaluate_statistics(contract, s, z); break;
          case AugmentedStat::inventory_integral: xi = evaluate_statistics(contract, 0.0, s / T); break;
        }
        v[iw * sw + iz * sz + is] = -xi;
      }

  ValueGrid grid;
  grid.time = UniformAxis{0.0, T, n_slices};
  grid.signal = w_axis;
  grid.inventory = z_axis;
  grid.stat = s_axis;
  grid.stat_kind = *stat_kind;
  grid.values.assign(n_slices * n_nodes, 0.0);
  std::vector<double> rates(n_slices * n_nodes, 0.0);

  const double lo = params.rate_lower;
  const double hi = params.rate_upper;
  const double two_phi = 2.0 * params.phi_a;

  auto store_slice = [&](std::size_t k) {
    std::copy(v.begin(), v.end(), grid.values.begin() + static_cast<std::ptrdiff_t>(k * n_nodes));
    double* r = rates.data() + k * n_nodes;
    for (std::size_t iw = 0; iw < nw; ++iw)
      for (std::size_t iz = 0; iz < nz; ++iz)
        for (std::size_t is = 0; is < ns; ++is) {
          const std::size_t c = iw * sw + iz * sz + is;
          double vz;
          if (iz == 0) vz = (v[c + sz] - v[c]) / hz;
          else if (iz == nz - 1) vz = (v[c] - v[c - sz]) / hz;
          else vz = (v[c + sz] - v[c - sz]) / (2.0 * hz);
          r[c] = std::clamp(vz / two_phi, lo, hi);
        }
  };

  auto extrapolate = [&](std::vector<double>& u) {
    for (std::size_t iz = 0; iz < nz; ++iz)
      for (std::size_t is = 0; is < ns; ++is) {
        const std::size_t b = iz * sz + is;
        u[b] = 2.0 * u[b + sw] - u[b + 2 * sw];
        const std::size_t e = (nw - 1) * sw + b;
        u[e] = 2.0 * u[e - sw] - u[e - 2 * sw];
      }
    for (std::size_t iw = 0; iw < nw; ++iw)
      for (std::size_t is = 0; is < ns; ++is) {
        const std::size_t b = iw * sw + is;
        u[b] = 2.0 * u[b + sz] - u[b + 2 * sz];
        const std::size_t e = b + (nz - 1) * sz;
        u[e] = 2.0 * u[e - sz] - u[e - 2 * sz];
      }
    if (ns > 1) {
      for (std::size_t iw = 0; iw < nw; ++iw)
        for (std::size_t iz = 0; iz < nz; ++iz) {
          const std::size_t b = iw * sw + iz * sz;
          u[b] = 2.0 * u[b + 1] - u[b + 2];
          const std::size_t e = b + ns - 1;
          u[e] = 2.0 * u[e - 1] - u[e - 2];
        }
    }
  };

  const std::size_t s_begin = ns > 1 ? 1 : 0;
  const std::size_t s_end = ns > 1 ? ns - 1 : 1;
  const AugmentedStat kind = *stat_kind;

  store_slice(n_slices - 1);
  for (std::size_t step = n_time; step-- > 0;) {
    parallel_for(nw - 2, options.threads, [&](std::size_t row) {
      const std::size_t iw = row + 1;
      const double w = w_axis.node(iw);
      for (std::size_t iz = 1; iz + 1 < nz; ++iz) {
        const double z = z_axis.node(iz);
        for (std::size_t is = s_begin; is < s_end; ++is) {
          const std::size_t c = iw * sw + iz * sz + is;
          const double vc = v[c];
          const double vzp = v[c + sz];
          const double vzm = v[c - sz];
          const double pi = std::clamp((vzp - vzm) / (2.0 * hz) / two_phi, lo, hi);
          const double transport = pi > 0.0 ? pi * (vzp - vc) / hz : pi * (vc - vzm) / hz;
          double gen = dw * (v[c + sw] - 2.0 * vc + v[c - sw]) / (hw * hw) + dz * (vzp - 2.0 * vc + vzm) / (hz * hz) +
                       transport + z * w - params.phi_a * pi * pi;
          if (kind == AugmentedStat::price) {
            const double vsp = v[c + 1];
            const double vsm = v[c - 1];
            gen += ds * (vsp - 2.0 * vc + vsm) / (hs * hs) + (w > 0.0 ? w * (vsp - vc) : w * (vc - vsm)) / hs;
          } else if (kind == AugmentedStat::inventory_integral) {
            gen += (z > 0.0 ? z * (v[c + 1] - vc) : z * (vc - v[c - 1])) / hs;
          }
          vn[c] = vc + dt * gen;
        }
      }
    });
    extrapolate(vn);
    std::swap(v, vn);
    if (step % steps_per_slice == 0) store_slice(step / steps_per_slice);
  }

  HjbSolution sol{FeedbackPolicy(grid.time, w_axis, z_axis, s_axis, kind, std::move(rates), lo, hi), std::move(grid),
                  0.0, n_time, dt};
  sol.value = sol.grid.value(0.0, 0.0, 0.0, 0.0);
  return sol;
}

Estimate estimate_agent_value(const Contract& contract, const FeedbackPolicy& policy, const ModelParams& params,
                              const SampleSpec& sample) {
  const AgentUtilitySpec spec = AgentUtilitySpec::from(params);
  std::vector<double> values(sample.count);
  parallel_for(sample.count, sample.threads, [&](std::size_t i) {
    std::vector<double> rates;
    const DiscretizedPath path = controlled_path(params, policy, sample.seed, i, &rates);
    values[i] = spec.pathwise(evaluate(contract, path), path, rates);
  });
  return mean_and_se(values);
}

Estimate estimate_agent_value_reweighted(const Contract& contract, const FeedbackPolicy& policy,
                                         const ModelParams& params, const SampleSpec& sample) {
  const AgentUtilitySpec spec = AgentUtilitySpec::from(params);
  std::vector<double> values(sample.count);
  parallel_for(sample.count, sample.threads, [&](std::size_t i) {
    const DiscretizedPath path = reference_path(params, sample.seed, i);
    const PathWeight weight = girsanov_weight(path, policy, params);
    values[i] = spec.reweighted(evaluate(contract, path), zeta_integral(path, params), weight);
  });
  return mean_and_se(values);
}

Contract markovian_surrogate(const Contract& contract, const ModelParams& params) {
  if (markovian_statistic(contract, params)) return contract;
  if (const auto* poly = std::get_if<PolynomialContract>(&contract)) {
    PolynomialContract c = *poly;
    c.op = PathOperator::terminal;
    return c;
  }
  // Tables: keep the dependence on the last partition time, read at T with
  // earlier coordinates frozen at the origin.
  const auto& table = std::get<TableContract>(contract);
  TableContract t;
  t.partition_times = {params.horizon};
  t.p_nodes = table.p_nodes;
  t.z_nodes = table.z_nodes;
  t.gamma = table.gamma;
  t.holder_const = table.holder_const;
  t.cap = table.cap;
  std::vector<double> coords(table.dims(), 0.0);
  for (double p : table.p_nodes)
    for (double z : table.z_nodes) {
      coords[coords.size() - 2] = p;
      coords[coords.size() - 1] = z;
      t.values.push_back(table.interpolate(coords));
    }
  return t;
}

BestResponse best_response(const Contract& contract, const ModelParams& params, const BestResponseOptions& options) {
  if (markovian_statistic(contract, params)) {
    HjbSolution sol = solve_hjb(contract, params, options.hjb);
    BestResponse out;
    out.policy = std::move(sol.policy);
    out.value = sol.value;
    out.history = {sol.value};
    return out;
  }

  const HjbSolution seed = solve_hjb(markovian_surrogate(contract, params), params, options.hjb);
  const double T = params.horizon;
  const double lo = params.rate_lower;
  const double hi = params.rate_upper;
  const double rate_max = std::max(std::fabs(lo), std::fabs(hi));
  const UniformAxis t_axis{0.0, T, options.table_time};
  const UniformAxis w_axis{-2.5 * std::sqrt(T), 2.5 * std::sqrt(T), options.table_signal};
  const double z_hi = 2.0 * params.epsilon * std::sqrt(T) + 0.5 * rate_max * T;
  const UniformAxis z_axis{-z_hi, z_hi, options.table_inventory};
  auto make_policy = [&](std::vector<double> values) {
    return FeedbackPolicy(t_axis, w_axis, z_axis, UniformAxis{}, AugmentedStat::none, std::move(values), lo, hi);
  };
  std::vector<double> values(t_axis.n * w_axis.n * z_axis.n);
  {
    std::size_t k = 0;
    for (std::size_t it = 0; it < t_axis.n; ++it)
      for (std::size_t iw = 0; iw < w_axis.n; ++iw)
        for (std::size_t iz = 0; iz < z_axis.n; ++iz)
          values[k++] = seed.policy.rate(t_axis.node(it), w_axis.node(iw), z_axis.node(iz), 0.0);
  }

  auto score = [&](const std::vector<double>& v) {
    return estimate_agent_value(contract, make_policy(v), params, options.sample);
  };
  BestResponse out;
  out.markovian = false;
  out.converged = false;
  Estimate best = score(values);
  out.history.push_back(best.mean);
  double step = (hi - lo) / 8.0;
  const double min_step = (hi - lo) * 1e-3;
  if (step <= 0.0) {
    out.converged = true;
  } else {
    for (std::size_t iter = 1; iter <= options.max_iterations; ++iter) {
      double improvement = 0.0;
      for (std::size_t k = 0; k < values.size(); ++k) {
        for (double dir : {1.0, -1.0}) {
          std::vector<double> cand = values;
          cand[k] = std::clamp(values[k] + dir * step, lo, hi);
          if (cand[k] == values[k]) continue;
          const Estimate e = score(cand);
          if (e.mean > best.mean + options.tolerance) {
            improvement += e.mean - best.mean;
            best = e;
            values = std::move(cand);
            break;
          }
        }
      }
      out.history.push_back(best.mean);
      out.iterations = iter;
      if (improvement <= options.tolerance) {
        if (step <= min_step) {
          out.converged = true;
          break;
        }
        step *= 0.5;
      }
    }
  }
  out.policy = make_policy(values);
  out.value = best.mean;
  out.se = best.se;
  return out;
}

void write_value_grid_csv(std::ostream& out, const ValueGrid& grid, std::size_t stride) {
  stride = std::max<std::size_t>(1, stride);
  out << "t,w,z,stat,value\n";
  for (std::size_t it = 0; it < grid.time.n; ++it)
    for (std::size_t iw = 0; iw < grid.signal.n; iw += stride)
      for (std::size_t iz = 0; iz < grid.inventory.n; iz += stride)
        for (std::size_t is = 0; is < grid.stat.n; ++is) {
          out << format_double(grid.time.node(it)) << ',' << format_double(grid.signal.node(iw)) << ','
              << format_double(grid.inventory.node(iz)) << ',' << format_double(grid.stat.node(is)) << ','
              << format_double(grid.values[grid.index(it, iw, iz, is)]) << '\n';
        }
}

void write_policy_csv(std::ostream& out, const FeedbackPolicy& policy, std::size_t stride) {
  stride = std::max<std::size_t>(1, stride);
  out << "t,w,z,stat,rate\n";
  const auto values = policy.values();
  for (std::size_t it = 0; it < policy.time_axis().n; ++it)
    for (std::size_t iw = 0; iw < policy.signal_axis().n; iw += stride)
      for (std::size_t iz = 0; iz < policy.inventory_axis().n; iz += stride)
        for (std::size_t is = 0; is < policy.stat_axis().n; ++is) {
          out << format_double(policy.time_axis().node(it)) << ',' << format_double(policy.signal_axis().node(iw))
              << ',' << format_double(policy.inventory_axis().node(iz)) << ','
              << format_double(policy.stat_axis().node(is)) << ',' << format_double(values[policy.index(it, iw, iz, is)])
              << '\n';
        }
}

}  // namespace optfee
