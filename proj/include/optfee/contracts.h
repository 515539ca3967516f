#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "optfee/core_model.h"
#include "optfee/parallel.h"

namespace optfee {

/// Bounded linear path operator applied to P and Z before the polynomial.
enum class PathOperator { terminal, time_average };

const char* to_string(PathOperator op);
PathOperator path_operator_from_string(std::string_view name);

struct ConstantContract {
  double value = 0.0;
  double cap = std::numeric_limits<double>::infinity();
};

/// xi = sum_{i,j=0..n} a_ij (L P)^i (L Z)^j, coefficients row-major with
/// index i * (n + 1) + j. The brokerage class proper uses i, j >= 1; the
/// lower rows let the same type carry pure-Z or pure-P payments.
struct PolynomialContract {
  int degree = 1;
  std::vector<double> coefficients;
  double cap = 1.0;
  PathOperator op = PathOperator::terminal;

  double coefficient(int i, int j) const { return coefficients[static_cast<std::size_t>(i * (degree + 1) + j)]; }
  double& coefficient(int i, int j) { return coefficients[static_cast<std::size_t>(i * (degree + 1) + j)]; }
};

/// Hölder-bounded payment that reads (P, Z) at a finite set of partition
/// times. `values` live on the tensor grid whose coordinates are ordered
/// (P_{t1}, Z_{t1}, P_{t2}, Z_{t2}, ...) with the last coordinate fastest;
/// evaluation is multilinear with coordinates clamped to the node range.
struct TableContract {
  std::vector<double> partition_times;
  std::vector<double> p_nodes;
  std::vector<double> z_nodes;
  std::vector<double> values;
  double gamma = 1.0;
  double holder_const = 1.0;
  double cap = 1.0;

  std::size_t dims() const { return 2 * partition_times.size(); }
  std::size_t nodes_along(std::size_t dim) const { return dim % 2 == 0 ? p_nodes.size() : z_nodes.size(); }
  double node_coordinate(std::size_t dim, std::size_t k) const { return dim % 2 == 0 ? p_nodes[k] : z_nodes[k]; }
  /// Evaluates at explicit coordinates (size dims()).
  double interpolate(std::span<const double> coords) const;
};

using Contract = std::variant<ConstantContract, PolynomialContract, TableContract>;

/// Checks coefficient and Hölder invariants; throws ModelError on failure.
void check_contract(const Contract& contract, double tol = 1e-12);

/// Payment on a path; reads only the P and Z coordinates.
double evaluate(const Contract& contract, const DiscretizedPath& path);

/// Payment as a function of (L P, L Z) for polynomial contracts, or of
/// (P_t, Z_t) for single-time tables, or the constant.
double evaluate_statistics(const Contract& contract, double p_stat, double z_stat);

/// Operator value along a path.
double apply_operator(PathOperator op, std::span<const double> values, double dt);

/// Componentwise clamp of coefficients / table values to [-K, K]. Idempotent.
Contract project_to_box(const Contract& contract);

/// Largest table below the given one that satisfies the Hölder bound on the
/// nodes (McShane envelope under the metric d^gamma), then clamped to
/// [-K, K]. Idempotent; identity on tables already satisfying the bound.
TableContract enforce_holder(const TableContract& table);

/// Max |v_a - v_b| / ||a - b||_inf^gamma over node pairs.
double node_holder_ratio(const TableContract& table);

struct HolderAudit {
  double node_ratio = 0.0;
  double sampled_ratio = 0.0;
  double max_ratio = 0.0;
  bool within_bound = true;
};

/// Max observed Hölder ratio over node pairs and sampled path pairs
/// (sup-norm distance over the (P, Z) coordinates of the whole path).
HolderAudit holder_audit(const TableContract& table, const ModelParams& params, std::size_t count,
                         std::uint64_t seed);

/// Upper bound on |xi| when the class is bounded.
std::optional<double> payment_bound(const Contract& contract);

struct TailLevel {
  double level = 0.0;
  double sup_estimate = 0.0;
  double se = 0.0;
  std::size_t contract_index = 0;
  double policy_rate = 0.0;
};

/// sup over (contract, constant policy in {L, 0, U}) of
/// E^{Q^pi}[|xi| 1{|xi| >= level}], one entry per level (levels sorted).
/// Common random numbers across contracts, policies and levels.
std::vector<TailLevel> tail_expectation_audit(std::span<const Contract> contracts, const ModelParams& params,
                                              std::vector<double> levels, const SampleSpec& sample);

/// Lossless JSON text.
std::string serialize_contract(const Contract& contract);
Contract deserialize_contract(std::string_view text);

/// Compact parametric family: a coefficient box mapped to contracts.
struct FamilySpec {
  enum class Kind { constant, polynomial, table };

  Kind kind = Kind::constant;
  double cap = 1.0;  // K
  int degree = 1;    // n
  PathOperator op = PathOperator::terminal;
  double gamma = 1.0;
  double holder_const = 1.0;  // M
  std::vector<double> partition_times;
  std::vector<double> p_nodes;
  std::vector<double> z_nodes;

  bool operator==(const FamilySpec&) const = default;
};

const char* to_string(FamilySpec::Kind kind);
FamilySpec::Kind family_kind_from_string(std::string_view name);

/// Length of the coefficient vector: 1, n^2 (a_ij, i,j = 1..n) or the table size.
std::size_t family_dimension(const FamilySpec& family);

/// Builds the family member for a coefficient vector (clamped into the box;
/// tables additionally pass through enforce_holder).
Contract make_family_contract(const FamilySpec& family, std::span<const double> coefficients);

/// Inverse of make_family_contract on family members.
std::vector<double> family_coefficients(const FamilySpec& family, const Contract& contract);

void family_to_kv(const FamilySpec& family, KeyValues& kv, const std::string& prefix);
FamilySpec family_from_kv(const KeyValues& kv, const std::string& prefix);

}  // namespace optfee
