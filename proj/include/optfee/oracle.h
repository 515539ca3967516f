#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "optfee/contracts.h"
#include "optfee/core_model.h"

namespace optfee {

class OracleError : public ModelError {
 public:
  using ModelError::ModelError;
};

/// Channel order follows X = (P, Z, W).
enum Channel : std::size_t { kChannelP = 0, kChannelZ = 1, kChannelW = 2 };

/// Recombining-free scenario tree: every step draws one of K = b^c joint
/// outcomes with probability 1/K, where c is the number of active channels.
/// Binomial increments are +-s, trinomial {-s', 0, s'} with s' = s sqrt(3/2)
/// so both match the per-step variance s^2 = (sigma^2, eps^2, 1) dt.
struct ScenarioTree {
  static constexpr std::size_t kMaxAtoms = 100000;

  std::size_t depth = 1;
  std::size_t branching = 2;
  std::array<bool, 3> channels{true, true, true};
  double sigma = 1.0;
  double epsilon = 0.5;
  double horizon = 1.0;

  double dt = 1.0;
  std::array<double, 3> scale{};
  std::size_t outcomes_per_step = 0;           // K
  std::vector<std::array<double, 3>> outcomes;  // increments of (P, Z, W), K entries
  std::vector<std::vector<StateSample>> states;  // per atom, depth + 1 states
  std::vector<double> probability;               // per atom, uniform

  std::size_t atom_count() const { return probability.size(); }
  std::size_t active_channels() const;
  /// Number of nodes at `level` (K^level).
  std::size_t nodes_at(std::size_t level) const;
  /// Node at `level` on the path of atom x.
  std::size_t node_of(std::size_t atom, std::size_t level) const;
  /// Outcome drawn at step `level` (from level to level + 1) along atom x.
  std::size_t outcome_of(std::size_t atom, std::size_t level) const;
  /// Atom path as a DiscretizedPath with `depth` steps.
  DiscretizedPath path(std::size_t atom) const;
};

/// Throws OracleError when the atom count would exceed ScenarioTree::kMaxAtoms.
ScenarioTree build_tree(std::size_t depth, std::size_t branching, const ModelParams& params,
                        std::array<bool, 3> channels = {true, true, true});

/// One linear form c(x); the constraint is sum_x p(x) E[m | x] c(x) <= 0.
struct ConstraintForm {
  std::vector<double> coefficients;  // per atom
  std::size_t s_index = 0;           // eta reads coordinates up to this level
  std::size_t t_index = 1;
  std::size_t node = 0;              // node at s_index carrying eta
  std::size_t row = 0;               // 0-based row of b + A nu
  std::string label;
};

struct DiscreteConstraintSet {
  std::vector<ConstraintForm> forms;
  bool empty() const { return forms.empty(); }
};

/// Which rows of b + A nu enter; rows are dropped when their channel is absent.
struct ConstraintRows {
  bool price = true;   // rows 1-2: nu_P = W (needs the P channel)
  bool signal = true;  // rows 3-4: nu_W = 0 (needs the W channel)
  bool rate = true;    // rows 5-6: L <= nu_Z <= U (needs the Z channel)
};

/// For every node n at level k < depth and every included row r:
///   c(x) = 1{x through n} / p(n) * (A_r (X_{k+1} - X_k) + b_r(X_k) dt) / dt,
/// i.e. eta = node indicator, s = t_k, t = t_{k+1}, scaled to drift units.
DiscreteConstraintSet build_constraint_set(const ScenarioTree& tree, const ModelParams& params,
                                           const ConstraintRows& rows = {});

/// Rows (0-based) present for the tree's channels and the requested row groups.
std::vector<std::size_t> included_rows(const ScenarioTree& tree, const ConstraintRows& rows);

/// Checks that each form is a function of the path up to t_index and that
/// its support is a union of level-s_index nodes.
bool forms_adapted(const ScenarioTree& tree, const DiscreteConstraintSet& set);

/// u(x) = -xi(x) + zeta(x), the atom payoff multiplying m.
std::vector<double> atom_utility(const ScenarioTree& tree, const Contract& contract, const ModelParams& params);

struct DualOptions {
  enum class Method { projected_newton, projected_gradient };
  Method method = Method::projected_newton;
  std::size_t max_iterations = 10000;
  double kkt_tolerance = 1e-12;
};

struct StrongSolution {
  double value = 0.0;
  std::vector<double> m;
  std::vector<double> multipliers;
  double kkt_residual = 0.0;
  double max_violation = 0.0;
  std::size_t iterations = 0;
  bool gibbs = true;
};

constexpr double kDensityFloor = 1e-12;

/// sum_x p(x) [m(x) u(x) - lambda m(x) log m(x)] at a given m.
double strong_objective(std::span<const double> p, std::span<const double> u, double lambda,
                        std::span<const double> m);

/// Maximizes the strong objective over m > 0 with sum p m = 1 and the
/// constraint set. Gibbs closed form without constraints; otherwise the
/// dual min_{mu >= 0} lambda log sum p exp((u - mu.c) / lambda).
StrongSolution solve_strong_discrete(std::span<const double> p, std::span<const double> u, double lambda,
                                     const DiscreteConstraintSet& constraints = {}, const DualOptions& options = {});

/// Finite-support relaxed control: per atom, a distribution over density atoms.
struct RelaxedControlDiscrete {
  std::vector<double> probability;                // p(x)
  std::vector<std::vector<double>> density_atoms;  // m_j per atom
  std::vector<std::vector<double>> weights;        // q_j per atom

  static RelaxedControlDiscrete dirac(std::span<const double> p, std::span<const double> m);

  std::size_t atom_count() const { return probability.size(); }
  double conditional_mean(std::size_t x) const;
  std::vector<double> conditional_means() const;
  /// sum_x p(x) E[m log m | x].
  double entropy() const;
  double objective(std::span<const double> u, double lambda) const;
  /// Relative distance below which a density atom counts as the mode; an
  /// LP cannot separate atoms this close at its working precision.
  static constexpr double kModeMergeTolerance = 1e-6;

  /// max_x of the weight on atoms farther than kModeMergeTolerance from the mode.
  double off_mode_mass() const;
  bool is_dirac(double tol = 1e-6) const { return off_mode_mass() <= tol; }
  /// Largest sum_x p E[m|x] c(x) over the forms (<= 0 when feasible).
  double constraint_violation(const DiscreteConstraintSet& set) const;
};

struct FeasibilityReport {
  double normalization_error = 0.0;  // |sum p E[m|x] - 1|
  double min_density = 0.0;
  double marginal_error = 0.0;       // max_x |sum_j q_j - 1|
  double entropy = 0.0;
  double constraint_violation = 0.0;
  bool feasible = false;
};

FeasibilityReport check_feasibility(const RelaxedControlDiscrete& control, const DiscreteConstraintSet& set,
                                    double tol = 1e-9);

/// 21 log-spaced atoms on [1e-3, 1e3] by default.
std::vector<double> density_grid(std::size_t count = 21, double lo = 1e-3, double hi = 1e3);

/// Per-atom grids: `base` plus each atom's own extra values (e.g. a strong optimum).
std::vector<std::vector<double>> atom_grids(std::span<const double> base, std::span<const double> extra);

struct RelaxedSolution {
  double value = 0.0;
  RelaxedControlDiscrete control;
  std::size_t lp_iterations = 0;
};

/// Linear program in the per-atom weights q_xj over the given density grids.
RelaxedSolution solve_relaxed_discrete(std::span<const double> p, std::span<const double> u, double lambda,
                                       const std::vector<std::vector<double>>& grids,
                                       const DiscreteConstraintSet& constraints = {});

struct CollapseTrial {
  std::size_t atom = 0;
  double low = 0.0;
  double high = 0.0;
  double theta = 0.0;          // weight on `low`
  double observed_gap = 0.0;   // objective(Dirac) - objective(randomized)
  double predicted_gap = 0.0;  // p(x) lambda (Jensen gap of m log m)
  bool counterexample = false;
};

struct CollapseReport {
  std::size_t trials = 0;
  std::size_t counterexamples = 0;
  double min_gap = 0.0;
  double max_prediction_error = 0.0;
  double relaxed_off_mode_mass = 0.0;
  bool relaxed_dirac = true;
  std::vector<CollapseTrial> failures;
};

/// Mean-preserving two-point randomizations around the strong optimum plus a
/// Dirac check of the relaxed optimizer.
CollapseReport verify_collapse(std::span<const double> p, std::span<const double> u, double lambda,
                               const DiscreteConstraintSet& constraints, std::size_t trials, std::uint64_t seed);

struct NodeControl {
  std::size_t level = 0;
  std::size_t node = 0;
  double mean_density = 1.0;            // E_p[m | node]
  std::vector<double> transition;       // q(o | node)
  std::array<double, 3> drift{};        // (nu_P, nu_Z, nu_W)
  std::array<double, 6> residual{};     // b + A nu
};

struct ExtractionReport {
  std::vector<NodeControl> nodes;
  double max_violation = 0.0;        // over included rows
  double reaccumulation_error = 0.0;  // max_x |prod q/p - E[m|x]|
};

ExtractionReport extract_strong_control(const ScenarioTree& tree, std::span<const double> conditional_mean,
                                        const ModelParams& params, const ConstraintRows& rows = {});
ExtractionReport extract_strong_control(const ScenarioTree& tree, const RelaxedControlDiscrete& control,
                                        const ModelParams& params, const ConstraintRows& rows = {});

/// Randomized instance used by the equality suite: tree shape, active
/// channels, rate bounds, utilities and lambda all drawn from (seed, index).
struct RandomOracleCase {
  ScenarioTree tree;
  ModelParams params;
  std::vector<double> utility;
  double lambda = 1.0;
  DiscreteConstraintSet constraints;
  bool constrained = false;
};

RandomOracleCase random_oracle_case(std::uint64_t seed, std::size_t index, std::size_t max_depth = 2,
                                    std::size_t branching = 2, bool constrained = false);

struct OracleCaseCheck {
  std::size_t atoms = 0;
  std::size_t forms = 0;
  double lambda = 0.0;
  double strong = 0.0;
  double relaxed = 0.0;
  double kkt_residual = 0.0;
  double strong_violation = 0.0;
  std::size_t collapse_trials = 0;
  std::size_t counterexamples = 0;
  bool relaxed_dirac = true;
  double off_mode_mass = 0.0;
  double extraction_violation = 0.0;
  double reaccumulation_error = 0.0;

  double gap() const { return relaxed - strong; }
};

/// Strong dual, relaxed LP on grids containing the strong optimum, collapse
/// randomizations and extraction for one case.
OracleCaseCheck check_oracle_case(const RandomOracleCase& c, std::size_t trials, std::uint64_t seed);

/// Regression fixture: tree recipe, utilities, constraint forms and a solution vector.
struct OracleInstance {
  ScenarioTree tree;
  std::vector<double> utility;
  double lambda = 1.0;
  DiscreteConstraintSet constraints;
  std::vector<double> solution;
};

std::string serialize_instance(const OracleInstance& instance);
OracleInstance deserialize_instance(std::string_view text);

}  // namespace optfee
