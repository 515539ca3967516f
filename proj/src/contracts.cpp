#include "optfee/contracts.h"

#include <algorithm>
#include <array>
#include <cmath>

#include "json.hpp"
#include "optfee/girsanov.h"

namespace optfee {

using nlohmann::json;

const char* to_string(PathOperator op) { return op == PathOperator::terminal ? "terminal" : "time_average"; }

PathOperator path_operator_from_string(std::string_view name) {
  if (name == "terminal") return PathOperator::terminal;
  if (name == "time_average") return PathOperator::time_average;
  throw ModelError("unknown path operator '" + std::string(name) + "'");
}

double TableContract::interpolate(std::span<const double> coords) const {
  const std::size_t d = dims();
  if (coords.size() != d) throw ModelError("table contract: coordinate count mismatch");
  std::vector<std::size_t> cell(d);
  std::vector<double> frac(d);
  std::vector<std::size_t> stride(d);
  std::size_t s = 1;
  for (std::size_t k = d; k-- > 0;) {
    stride[k] = s;
    s *= nodes_along(k);
  }
  for (std::size_t k = 0; k < d; ++k) {
    const auto& nodes = k % 2 == 0 ? p_nodes : z_nodes;
    if (nodes.size() == 1) {
      cell[k] = 0;
      frac[k] = 0.0;
      continue;
    }
    const double x = std::clamp(coords[k], nodes.front(), nodes.back());
    auto it = std::upper_bound(nodes.begin(), nodes.end(), x);
    std::size_t c = it == nodes.begin() ? 0 : static_cast<std::size_t>(it - nodes.begin()) - 1;
    c = std::min(c, nodes.size() - 2);
    cell[k] = c;
    frac[k] = (x - nodes[c]) / (nodes[c + 1] - nodes[c]);
  }
  double acc = 0.0;
  for (std::size_t corner = 0; corner < (std::size_t{1} << d); ++corner) {
    double weight = 1.0;
    std::size_t offset = 0;
    bool skip = false;
    for (std::size_t k = 0; k < d; ++k) {
      const std::size_t up = (corner >> k) & 1;
      if (nodes_along(k) == 1) {
        if (up) { skip = true; break; }
        continue;
      }
      weight *= up ? frac[k] : 1.0 - frac[k];
      offset += (cell[k] + up) * stride[k];
    }
    if (skip || weight == 0.0) continue;
    acc += weight * values[offset];
  }
  return std::clamp(acc, -cap, cap);
}

namespace {

std::size_t table_size(const TableContract& t) {
  std::size_t s = 1;
  for (std::size_t k = 0; k < t.dims(); ++k) s *= t.nodes_along(k);
  return s;
}

void node_coords(const TableContract& t, std::size_t flat, std::vector<double>& coords) {
  const std::size_t d = t.dims();
  coords.resize(d);
  for (std::size_t k = d; k-- > 0;) {
    const std::size_t n = t.nodes_along(k);
    coords[k] = t.node_coordinate(k, flat % n);
    flat /= n;
  }
}

double sup_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) d = std::max(d, std::fabs(a[k] - b[k]));
  return d;
}

void check_nodes(const std::vector<double>& nodes, const char* what) {
  if (nodes.empty()) throw ModelError(std::string("table contract: empty ") + what);
  for (std::size_t i = 1; i < nodes.size(); ++i) {
    if (!(nodes[i] > nodes[i - 1])) throw ModelError(std::string("table contract: ") + what + " not increasing");
  }
}

}  // namespace

void check_contract(const Contract& contract, double tol) {
  std::visit(
      [tol](const auto& c) {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, ConstantContract>) {
          if (!std::isfinite(c.value)) throw ModelError("constant contract: non-finite value");
          if (std::fabs(c.value) > c.cap + tol) throw ModelError("constant contract: value outside [-K, K]");
        } else if constexpr (std::is_same_v<T, PolynomialContract>) {
          if (c.degree < 1) throw ModelError("polynomial contract: degree must be at least 1");
          const auto expected = static_cast<std::size_t>((c.degree + 1) * (c.degree + 1));
          if (c.coefficients.size() != expected) throw ModelError("polynomial contract: coefficient table size");
          for (double a : c.coefficients) {
            if (!std::isfinite(a) || std::fabs(a) > c.cap + tol)
              throw ModelError("polynomial contract: coefficient outside [-K, K]");
          }
        } else {
          if (c.partition_times.empty()) throw ModelError("table contract: empty partition");
          check_nodes(c.p_nodes, "p_nodes");
          check_nodes(c.z_nodes, "z_nodes");
          if (!(c.gamma > 0.0 && c.gamma <= 1.0)) throw ModelError("table contract: gamma must lie in (0, 1]");
          if (!(c.holder_const > 0.0)) throw ModelError("table contract: Hölder constant must be positive");
          if (c.values.size() != table_size(c)) throw ModelError("table contract: value table size");
          for (double v : c.values) {
            if (!std::isfinite(v) || std::fabs(v) > c.cap + tol)
              throw ModelError("table contract: value outside [-K, K]");
          }
          if (node_holder_ratio(c) > c.holder_const * (1.0 + 1e-9) + tol)
            throw ModelError("table contract: Hölder bound violated on nodes");
        }
      },
      contract);
}

double apply_operator(PathOperator op, std::span<const double> values, double dt) {
  if (op == PathOperator::terminal) return values.back();
  // Left-point average: (1/T) sum X_i dt with T = N dt.
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < values.size(); ++i) acc += values[i] * dt;
  return acc / (dt * static_cast<double>(values.size() - 1));
}

double evaluate_statistics(const Contract& contract, double p_stat, double z_stat) {
  return std::visit(
      [&](const auto& c) -> double {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, ConstantContract>) {
          return c.value;
        } else if constexpr (std::is_same_v<T, PolynomialContract>) {
          double acc = 0.0;
          double p_pow = 1.0;
          for (int i = 0; i <= c.degree; ++i) {
            double z_pow = 1.0;
            for (int j = 0; j <= c.degree; ++j) {
              acc += c.coefficient(i, j) * p_pow * z_pow;
              z_pow *= z_stat;
            }
            p_pow *= p_stat;
          }
          return acc;
        } else {
          if (c.partition_times.size() != 1)
            throw ModelError("evaluate_statistics: table reads more than one partition time");
          const double coords[2] = {p_stat, z_stat};
          return c.interpolate(coords);
        }
      },
      contract);
}

double evaluate(const Contract& contract, const DiscretizedPath& path) {
  return std::visit(
      [&](const auto& c) -> double {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, ConstantContract>) {
          return c.value;
        } else if constexpr (std::is_same_v<T, PolynomialContract>) {
          const double dt = path.times[1] - path.times[0];
          return evaluate_statistics(contract, apply_operator(c.op, path.p, dt), apply_operator(c.op, path.z, dt));
        } else {
          const double horizon = path.times.back();
          std::vector<double> coords;
          coords.reserve(c.dims());
          for (double t : c.partition_times) {
            const std::size_t i = grid_index(t, horizon, path.steps());
            coords.push_back(path.p[i]);
            coords.push_back(path.z[i]);
          }
          return c.interpolate(coords);
        }
      },
      contract);
}

Contract project_to_box(const Contract& contract) {
  return std::visit(
      [](auto c) -> Contract {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, ConstantContract>) {
          c.value = std::clamp(c.value, -c.cap, c.cap);
        } else if constexpr (std::is_same_v<T, PolynomialContract>) {
          for (double& a : c.coefficients) a = std::clamp(a, -c.cap, c.cap);
        } else {
          for (double& v : c.values) v = std::clamp(v, -c.cap, c.cap);
        }
        return c;
      },
      contract);
}

double node_holder_ratio(const TableContract& table) {
  const std::size_t n = table.values.size();
  std::vector<double> a, b;
  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    node_coords(table, i, a);
    for (std::size_t j = i + 1; j < n; ++j) {
      node_coords(table, j, b);
      const double d = sup_distance(a, b);
      worst = std::max(worst, std::fabs(table.values[i] - table.values[j]) / std::pow(d, table.gamma));
    }
  }
  return worst;
}

TableContract enforce_holder(const TableContract& table) {
  TableContract out = table;
  const std::size_t n = table.values.size();
  std::vector<double> a, b;
  for (std::size_t i = 0; i < n; ++i) {
    node_coords(table, i, a);
    double env = table.values[i];
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      node_coords(table, j, b);
      env = std::min(env, table.values[j] + table.holder_const * std::pow(sup_distance(a, b), table.gamma));
    }
    out.values[i] = std::clamp(env, -table.cap, table.cap);
  }
  return out;
}

HolderAudit holder_audit(const TableContract& table, const ModelParams& params, std::size_t count,
                         std::uint64_t seed) {
  HolderAudit audit;
  audit.node_ratio = node_holder_ratio(table);
  const Contract contract = table;
  const std::array<double, 3> blend = {1.0, 0.1, 0.01};
  for (std::size_t k = 0; k < count; ++k) {
    const DiscretizedPath x = reference_path(params, seed, 2 * k);
    DiscretizedPath y = reference_path(params, seed, 2 * k + 1);
    const double lam = blend[k % blend.size()];
    double d = 0.0;
    for (std::size_t i = 0; i < x.times.size(); ++i) {
      y.p[i] = x.p[i] + lam * (y.p[i] - x.p[i]);
      y.z[i] = x.z[i] + lam * (y.z[i] - x.z[i]);
      d = std::max({d, std::fabs(x.p[i] - y.p[i]), std::fabs(x.z[i] - y.z[i])});
    }
    if (d <= 0.0) continue;
    const double ratio = std::fabs(evaluate(contract, x) - evaluate(contract, y)) / std::pow(d, table.gamma);
    audit.sampled_ratio = std::max(audit.sampled_ratio, ratio);
  }
  audit.max_ratio = std::max(audit.node_ratio, audit.sampled_ratio);
  audit.within_bound = audit.max_ratio <= table.holder_const * (1.0 + 1e-9);
  return audit;
}

std::optional<double> payment_bound(const Contract& contract) {
  return std::visit(
      [](const auto& c) -> std::optional<double> {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, ConstantContract>) {
          return std::fabs(c.value);
        } else if constexpr (std::is_same_v<T, PolynomialContract>) {
          // Only the constant term is bounded on unbounded paths.
          for (std::size_t k = 1; k < c.coefficients.size(); ++k) {
            if (c.coefficients[k] != 0.0) return std::nullopt;
          }
          return std::fabs(c.coefficients[0]);
        } else {
          return c.cap;
        }
      },
      contract);
}

std::vector<TailLevel> tail_expectation_audit(std::span<const Contract> contracts, const ModelParams& params,
                                              std::vector<double> levels, const SampleSpec& sample) {
  std::sort(levels.begin(), levels.end());
  const std::array<double, 3> rates = {params.rate_lower, 0.0, params.rate_upper};
  std::vector<TailLevel> out(levels.size());
  for (std::size_t l = 0; l < levels.size(); ++l) out[l].level = levels[l];
  std::vector<double> payments(sample.count);
  std::vector<double> tail(sample.count);
  for (double rate : rates) {
    const FeedbackPolicy policy = FeedbackPolicy::constant(rate, params.rate_lower, params.rate_upper);
    std::vector<DiscretizedPath> paths(sample.count);
    parallel_for(sample.count, sample.threads,
                 [&](std::size_t i) { paths[i] = controlled_path(params, policy, sample.seed, i); });
    for (std::size_t c = 0; c < contracts.size(); ++c) {
      for (std::size_t i = 0; i < sample.count; ++i) payments[i] = std::fabs(evaluate(contracts[c], paths[i]));
      for (std::size_t l = 0; l < levels.size(); ++l) {
        for (std::size_t i = 0; i < sample.count; ++i) tail[i] = payments[i] >= levels[l] ? payments[i] : 0.0;
        const Estimate e = mean_and_se(tail);
        if (e.mean > out[l].sup_estimate || (c == 0 && rate == rates[0])) {
          out[l].sup_estimate = e.mean;
          out[l].se = e.se;
          out[l].contract_index = c;
          out[l].policy_rate = rate;
        }
      }
    }
  }
  return out;
}

namespace {

json cap_to_json(double cap) { return std::isfinite(cap) ? json(cap) : json(nullptr); }
double cap_from_json(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>();
}

}  // namespace

std::string serialize_contract(const Contract& contract) {
  json j = std::visit(
      [](const auto& c) -> json {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, ConstantContract>) {
          return {{"class", "constant"}, {"value", c.value}, {"cap", cap_to_json(c.cap)}};
        } else if constexpr (std::is_same_v<T, PolynomialContract>) {
          return {{"class", "polynomial"},
                  {"degree", c.degree},
                  {"operator", to_string(c.op)},
                  {"cap", cap_to_json(c.cap)},
                  {"coefficients", c.coefficients}};
        } else {
          return {{"class", "table"},         {"partition_times", c.partition_times},
                  {"p_nodes", c.p_nodes},     {"z_nodes", c.z_nodes},
                  {"values", c.values},       {"gamma", c.gamma},
                  {"holder_const", c.holder_const}, {"cap", cap_to_json(c.cap)}};
        }
      },
      contract);
  return j.dump();
}

Contract deserialize_contract(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
    const std::string cls = j.at("class").get<std::string>();
    if (cls == "constant") {
      return ConstantContract{j.at("value").get<double>(), cap_from_json(j.at("cap"))};
    }
    if (cls == "polynomial") {
      PolynomialContract c;
      c.degree = j.at("degree").get<int>();
      c.op = path_operator_from_string(j.at("operator").get<std::string>());
      c.cap = cap_from_json(j.at("cap"));
      c.coefficients = j.at("coefficients").get<std::vector<double>>();
      return c;
    }
    if (cls == "table") {
      TableContract c;
      c.partition_times = j.at("partition_times").get<std::vector<double>>();
      c.p_nodes = j.at("p_nodes").get<std::vector<double>>();
      c.z_nodes = j.at("z_nodes").get<std::vector<double>>();
      c.values = j.at("values").get<std::vector<double>>();
      c.gamma = j.at("gamma").get<double>();
      c.holder_const = j.at("holder_const").get<double>();
      c.cap = cap_from_json(j.at("cap"));
      return c;
    }
    throw ModelError("unknown contract class '" + cls + "'");
  } catch (const json::exception& e) {
    throw ModelError(std::string("contract record: ") + e.what());
  }
}

const char* to_string(FamilySpec::Kind kind) {
  switch (kind) {
    case FamilySpec::Kind::constant: return "constant";
    case FamilySpec::Kind::polynomial: return "polynomial";
    case FamilySpec::Kind::table: return "table";
  }
  return "constant";
}

FamilySpec::Kind family_kind_from_string(std::string_view name) {
  if (name == "constant") return FamilySpec::Kind::constant;
  if (name == "polynomial") return FamilySpec::Kind::polynomial;
  if (name == "table") return FamilySpec::Kind::table;
  throw ModelError("unknown contract family '" + std::string(name) + "'");
}

std::size_t family_dimension(const FamilySpec& family) {
  switch (family.kind) {
    case FamilySpec::Kind::constant: return 1;
    case FamilySpec::Kind::polynomial: return static_cast<std::size_t>(family.degree * family.degree);
    case FamilySpec::Kind::table: {
      std::size_t s = 1;
      for (std::size_t k = 0; k < family.partition_times.size(); ++k) s *= family.p_nodes.size() * family.z_nodes.size();
      return s;
    }
  }
  return 0;
}

Contract make_family_contract(const FamilySpec& family, std::span<const double> coefficients) {
  if (coefficients.size() != family_dimension(family))
    throw ModelError("family contract: expected " + std::to_string(family_dimension(family)) + " coefficients");
  switch (family.kind) {
    case FamilySpec::Kind::constant:
      return project_to_box(ConstantContract{coefficients[0], family.cap});
    case FamilySpec::Kind::polynomial: {
      PolynomialContract c;
      c.degree = family.degree;
      c.cap = family.cap;
      c.op = family.op;
      c.coefficients.assign(static_cast<std::size_t>((family.degree + 1) * (family.degree + 1)), 0.0);
      std::size_t k = 0;
      for (int i = 1; i <= family.degree; ++i)
        for (int j = 1; j <= family.degree; ++j) c.coefficient(i, j) = coefficients[k++];
      return project_to_box(c);
    }
    case FamilySpec::Kind::table: {
      TableContract t;
      t.partition_times = family.partition_times;
      t.p_nodes = family.p_nodes;
      t.z_nodes = family.z_nodes;
      t.values.assign(coefficients.begin(), coefficients.end());
      t.gamma = family.gamma;
      t.holder_const = family.holder_const;
      t.cap = family.cap;
      for (double& v : t.values) v = std::clamp(v, -t.cap, t.cap);
      return enforce_holder(t);
    }
  }
  throw ModelError("family contract: unknown kind");
}

std::vector<double> family_coefficients(const FamilySpec& family, const Contract& contract) {
  switch (family.kind) {
    case FamilySpec::Kind::constant: return {std::get<ConstantContract>(contract).value};
    case FamilySpec::Kind::polynomial: {
      const auto& c = std::get<PolynomialContract>(contract);
      std::vector<double> out;
      for (int i = 1; i <= c.degree; ++i)
        for (int j = 1; j <= c.degree; ++j) out.push_back(c.coefficient(i, j));
      return out;
    }
    case FamilySpec::Kind::table: return std::get<TableContract>(contract).values;
  }
  return {};
}

void family_to_kv(const FamilySpec& f, KeyValues& kv, const std::string& prefix) {
  auto put = [&](const char* key, std::string value) { kv[prefix + key] = KvEntry{std::move(value), 0}; };
  put("class", to_string(f.kind));
  put("cap", format_double(f.cap));
  put("degree", std::to_string(f.degree));
  put("operator", to_string(f.op));
  put("gamma", format_double(f.gamma));
  put("holder_const", format_double(f.holder_const));
  put("partition_times", format_doubles(f.partition_times));
  put("p_nodes", format_doubles(f.p_nodes));
  put("z_nodes", format_doubles(f.z_nodes));
}

FamilySpec family_from_kv(const KeyValues& kv, const std::string& prefix) {
  FamilySpec f;
  for (const auto& [full_key, entry] : kv) {
    if (full_key.compare(0, prefix.size(), prefix) != 0) continue;
    const std::string key = full_key.substr(prefix.size());
    try {
      if (key == "class") f.kind = family_kind_from_string(entry.value);
      else if (key == "cap") f.cap = kv_double(entry, full_key);
      else if (key == "degree") f.degree = static_cast<int>(kv_int(entry, full_key));
      else if (key == "operator") f.op = path_operator_from_string(entry.value);
      else if (key == "gamma") f.gamma = kv_double(entry, full_key);
      else if (key == "holder_const") f.holder_const = kv_double(entry, full_key);
      else if (key == "partition_times") f.partition_times = kv_doubles(entry, full_key);
      else if (key == "p_nodes") f.p_nodes = kv_doubles(entry, full_key);
      else if (key == "z_nodes") f.z_nodes = kv_doubles(entry, full_key);
      else throw ConfigError("line " + std::to_string(entry.line) + ": unknown key '" + full_key + "'");
    } catch (const ModelError& e) {
      throw ConfigError("line " + std::to_string(entry.line) + ": key '" + full_key + "': " + e.what());
    }
  }
  if (!(f.cap > 0.0)) throw ConfigError("key '" + prefix + "cap' must be positive");
  if (f.kind == FamilySpec::Kind::polynomial && f.degree < 1)
    throw ConfigError("key '" + prefix + "degree' must be at least 1");
  if (f.kind == FamilySpec::Kind::table &&
      (f.partition_times.empty() || f.p_nodes.empty() || f.z_nodes.empty()))
    throw ConfigError("table family needs partition_times, p_nodes and z_nodes");
  return f;
}

}  // namespace optfee
