#include "optfee/oracle.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "json.hpp"
#include "optfee/agent.h"
#include "optfee/random.h"
#include "optfee/simplex.h"

namespace optfee {

using nlohmann::json;

std::size_t ScenarioTree::active_channels() const {
  return static_cast<std::size_t>(std::count(channels.begin(), channels.end(), true));
}

std::size_t ScenarioTree::nodes_at(std::size_t level) const {
  std::size_t n = 1;
  for (std::size_t k = 0; k < level; ++k) n *= outcomes_per_step;
  return n;
}

std::size_t ScenarioTree::node_of(std::size_t atom, std::size_t level) const {
  return atom / nodes_at(depth - level);
}

std::size_t ScenarioTree::outcome_of(std::size_t atom, std::size_t level) const {
  return node_of(atom, level + 1) % outcomes_per_step;
}

DiscretizedPath ScenarioTree::path(std::size_t atom) const {
  DiscretizedPath out = make_path(depth, horizon);
  for (std::size_t k = 0; k <= depth; ++k) {
    out.p[k] = states[atom][k].p;
    out.z[k] = states[atom][k].z;
    out.w[k] = states[atom][k].w;
  }
  return out;
}

ScenarioTree build_tree(std::size_t depth, std::size_t branching, const ModelParams& params,
                        std::array<bool, 3> channels) {
  if (depth < 1 || depth > 4) throw OracleError("build_tree: depth must lie in [1, 4]");
  if (branching != 2 && branching != 3) throw OracleError("build_tree: branching must be 2 or 3");
  ScenarioTree tree;
  tree.depth = depth;
  tree.branching = branching;
  tree.channels = channels;
  tree.sigma = params.sigma;
  tree.epsilon = params.epsilon;
  tree.horizon = params.horizon;
  const std::size_t c = tree.active_channels();
  if (c == 0) throw OracleError("build_tree: at least one channel must be active");

  std::size_t k_out = 1;
  for (std::size_t i = 0; i < c; ++i) k_out *= branching;
  std::size_t atoms = 1;
  for (std::size_t k = 0; k < depth; ++k) {
    atoms *= k_out;
    if (atoms > ScenarioTree::kMaxAtoms)
      throw OracleError("build_tree: atom count exceeds " + std::to_string(ScenarioTree::kMaxAtoms));
  }
  tree.outcomes_per_step = k_out;
  tree.dt = params.horizon / static_cast<double>(depth);
  const double sq = std::sqrt(tree.dt);
  tree.scale = {params.sigma * sq, params.epsilon * sq, sq};

  std::vector<double> unit = branching == 2 ? std::vector<double>{-1.0, 1.0}
                                            : std::vector<double>{-std::sqrt(1.5), 0.0, std::sqrt(1.5)};
  tree.outcomes.resize(k_out);
  for (std::size_t o = 0; o < k_out; ++o) {
    std::size_t rest = o;
    std::array<double, 3> inc{};
    // First active channel is the most significant digit.
    for (std::size_t ch = 3; ch-- > 0;) {
      if (!channels[ch]) continue;
      inc[ch] = unit[rest % branching] * tree.scale[ch];
      rest /= branching;
    }
    tree.outcomes[o] = inc;
  }

  tree.probability.assign(atoms, 1.0 / static_cast<double>(atoms));
  tree.states.assign(atoms, std::vector<StateSample>(depth + 1));
  for (std::size_t x = 0; x < atoms; ++x) {
    StateSample s;
    tree.states[x][0] = s;
    for (std::size_t k = 0; k < depth; ++k) {
      const auto& inc = tree.outcomes[tree.outcome_of(x, k)];
      s.p += inc[kChannelP];
      s.z += inc[kChannelZ];
      s.w += inc[kChannelW];
      tree.states[x][k + 1] = s;
    }
  }
  return tree;
}

std::vector<std::size_t> included_rows(const ScenarioTree& tree, const ConstraintRows& rows) {
  std::vector<std::size_t> out;
  if (rows.price && tree.channels[kChannelP]) out.insert(out.end(), {0, 1});
  if (rows.signal && tree.channels[kChannelW]) out.insert(out.end(), {2, 3});
  if (rows.rate && tree.channels[kChannelZ]) out.insert(out.end(), {4, 5});
  return out;
}

DiscreteConstraintSet build_constraint_set(const ScenarioTree& tree, const ModelParams& params,
                                           const ConstraintRows& rows) {
  const ConstraintSpec spec = make_constraint_spec(params);
  const auto row_ids = included_rows(tree, rows);
  DiscreteConstraintSet set;
  const std::size_t n_atoms = tree.atom_count();
  for (std::size_t k = 0; k < tree.depth; ++k) {
    const std::size_t n_nodes = tree.nodes_at(k);
    const std::size_t span = n_atoms / n_nodes;
    const double node_prob = 1.0 / static_cast<double>(n_nodes);
    for (std::size_t n = 0; n < n_nodes; ++n) {
      const StateSample x0 = tree.states[n * span][k];
      const auto b = spec.b_vector(x0);
      for (std::size_t r : row_ids) {
        ConstraintForm form;
        form.s_index = k;
        form.t_index = k + 1;
        form.node = n;
        form.row = r;
        form.label = "row" + std::to_string(r + 1) + "@L" + std::to_string(k) + "N" + std::to_string(n);
        form.coefficients.assign(n_atoms, 0.0);
        for (std::size_t x = n * span; x < (n + 1) * span; ++x) {
          const auto& inc = tree.outcomes[tree.outcome_of(x, k)];
          double ax = 0.0;
          for (std::size_t j = 0; j < ConstraintSpec::kDims; ++j) ax += spec.a_matrix[r][j] * inc[j];
          form.coefficients[x] = (ax + b[r] * tree.dt) / tree.dt / node_prob;
        }
        set.forms.push_back(std::move(form));
      }
    }
  }
  return set;
}

bool forms_adapted(const ScenarioTree& tree, const DiscreteConstraintSet& set) {
  for (const auto& form : set.forms) {
    if (form.coefficients.size() != tree.atom_count() || form.t_index > tree.depth) return false;
    for (std::size_t x = 0; x < tree.atom_count(); ++x) {
      if (form.coefficients[x] != 0.0 && tree.node_of(x, form.s_index) != form.node) return false;
      // Atoms sharing the path up to t_index must share the coefficient.
      const std::size_t first = tree.node_of(x, form.t_index) * tree.nodes_at(tree.depth - form.t_index);
      if (form.coefficients[x] != form.coefficients[first]) return false;
    }
  }
  return true;
}

std::vector<double> atom_utility(const ScenarioTree& tree, const Contract& contract, const ModelParams& params) {
  std::vector<double> u(tree.atom_count());
  for (std::size_t x = 0; x < u.size(); ++x) {
    const DiscretizedPath path = tree.path(x);
    u[x] = -evaluate(contract, path) + zeta_integral(path, params);
  }
  return u;
}

double strong_objective(std::span<const double> p, std::span<const double> u, double lambda,
                        std::span<const double> m) {
  double acc = 0.0;
  for (std::size_t x = 0; x < p.size(); ++x) acc += p[x] * (m[x] * u[x] - lambda * m[x] * std::log(m[x]));
  return acc;
}

namespace {

struct DualState {
  double g = 0.0;
  std::vector<double> q;     // p m, sums to 1
  std::vector<double> grad;  // -E_q[c]
};

class Dual {
 public:
  Dual(std::span<const double> p, std::span<const double> u, double lambda, const DiscreteConstraintSet& set)
      : p_(p), u_(u), lambda_(lambda), set_(set) {}

  DualState eval(const std::vector<double>& mu) const {
    const std::size_t n = p_.size();
    std::vector<double> a(n);
    for (std::size_t x = 0; x < n; ++x) {
      double s = u_[x];
      for (std::size_t r = 0; r < mu.size(); ++r)
        if (mu[r] != 0.0) s -= mu[r] * set_.forms[r].coefficients[x];
      a[x] = s / lambda_;
    }
    const double amax = *std::max_element(a.begin(), a.end());
    DualState st;
    st.q.resize(n);
    double total = 0.0;
    for (std::size_t x = 0; x < n; ++x) {
      st.q[x] = p_[x] * std::exp(a[x] - amax);
      total += st.q[x];
    }
    for (double& v : st.q) v /= total;
    st.g = lambda_ * (amax + std::log(total));
    st.grad.assign(mu.size(), 0.0);
    for (std::size_t r = 0; r < mu.size(); ++r) {
      const auto& c = set_.forms[r].coefficients;
      double e = 0.0;
      for (std::size_t x = 0; x < n; ++x) e += st.q[x] * c[x];
      st.grad[r] = -e;
    }
    return st;
  }

  std::vector<double> hessian(const DualState& st) const {
    const std::size_t R = set_.forms.size();
    std::vector<double> h(R * R, 0.0);
    for (std::size_t r = 0; r < R; ++r) {
      const auto& cr = set_.forms[r].coefficients;
      for (std::size_t s = r; s < R; ++s) {
        const auto& cs = set_.forms[s].coefficients;
        double e = 0.0;
        for (std::size_t x = 0; x < p_.size(); ++x) e += st.q[x] * cr[x] * cs[x];
        const double v = (e - st.grad[r] * st.grad[s]) / lambda_;
        h[r * R + s] = v;
        h[s * R + r] = v;
      }
    }
    return h;
  }

  double lipschitz() const {
    double worst = 0.0;
    for (std::size_t x = 0; x < p_.size(); ++x) {
      double norm = 0.0;
      for (const auto& f : set_.forms) norm += f.coefficients[x] * f.coefficients[x];
      worst = std::max(worst, norm);
    }
    return std::max(worst, 1e-300) / lambda_;
  }

 private:
  std::span<const double> p_;
  std::span<const double> u_;
  double lambda_;
  const DiscreteConstraintSet& set_;
};

double kkt_residual(const std::vector<double>& mu, const std::vector<double>& grad) {
  double r = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) r = std::max(r, std::fabs(std::min(mu[i], grad[i])));
  return r;
}

/// Solves (H + delta I) d = rhs by Cholesky, raising delta until it factors.
std::vector<double> regularized_solve(std::vector<double> h, std::size_t n, std::vector<double> rhs) {
  double diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) diag = std::max(diag, h[i * n + i]);
  double delta = 1e-12 * std::max(diag, 1e-300);
  for (int attempt = 0; attempt < 40; ++attempt, delta *= 10.0) {
    std::vector<double> l = h;
    for (std::size_t i = 0; i < n; ++i) l[i * n + i] += delta;
    bool ok = true;
    for (std::size_t j = 0; j < n && ok; ++j) {
      double d = l[j * n + j];
      for (std::size_t k = 0; k < j; ++k) d -= l[j * n + k] * l[j * n + k];
      if (!(d > 0.0)) {
        ok = false;
        break;
      }
      d = std::sqrt(d);
      l[j * n + j] = d;
      for (std::size_t i = j + 1; i < n; ++i) {
        double s = l[i * n + j];
        for (std::size_t k = 0; k < j; ++k) s -= l[i * n + k] * l[j * n + k];
        l[i * n + j] = s / d;
      }
    }
    if (!ok) continue;
    std::vector<double> y = rhs;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < i; ++k) y[i] -= l[i * n + k] * y[k];
      y[i] /= l[i * n + i];
    }
    for (std::size_t i = n; i-- > 0;) {
      for (std::size_t k = i + 1; k < n; ++k) y[i] -= l[k * n + i] * y[k];
      y[i] /= l[i * n + i];
    }
    return y;
  }
  return std::vector<double>(n, 0.0);
}

}  // namespace

StrongSolution solve_strong_discrete(std::span<const double> p, std::span<const double> u, double lambda,
                                     const DiscreteConstraintSet& constraints, const DualOptions& options) {
  if (!(lambda > 0.0)) throw OracleError("solve_strong_discrete: lambda must be positive");
  if (p.size() != u.size() || p.empty()) throw OracleError("solve_strong_discrete: size mismatch");
  for (const auto& f : constraints.forms)
    if (f.coefficients.size() != p.size()) throw OracleError("solve_strong_discrete: constraint form size mismatch");

  const Dual dual(p, u, lambda, constraints);
  const std::size_t R = constraints.forms.size();
  std::vector<double> mu(R, 0.0);
  DualState st = dual.eval(mu);
  StrongSolution sol;
  sol.gibbs = R == 0;
  double res = kkt_residual(mu, st.grad);

  if (R > 0 && options.method == DualOptions::Method::projected_gradient) {
    const double step = 0.5 / dual.lipschitz();
    std::vector<double> y = mu;
    std::vector<double> prev = mu;
    double t = 1.0;
    double g_prev = st.g;
    while (res > options.kkt_tolerance && sol.iterations < options.max_iterations) {
      const DualState sy = dual.eval(y);
      prev = mu;
      for (std::size_t r = 0; r < R; ++r) mu[r] = std::max(0.0, y[r] - step * sy.grad[r]);
      st = dual.eval(mu);
      if (st.g > g_prev) {
        // Restart the momentum on a non-monotone step.
        t = 1.0;
        y = mu;
      } else {
        const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        for (std::size_t r = 0; r < R; ++r) y[r] = mu[r] + (t - 1.0) / t_next * (mu[r] - prev[r]);
        t = t_next;
      }
      g_prev = st.g;
      res = kkt_residual(mu, st.grad);
      ++sol.iterations;
    }
  } else if (R > 0) {
    const double step = 0.5 / dual.lipschitz();
    while (res > options.kkt_tolerance && sol.iterations < options.max_iterations) {
      ++sol.iterations;
      const double eps_active = std::min(1e-6, res);
      std::vector<std::size_t> free;
      for (std::size_t r = 0; r < R; ++r)
        if (!(mu[r] <= eps_active && st.grad[r] > 0.0)) free.push_back(r);
      std::vector<double> dir(R, 0.0);
      for (std::size_t r = 0; r < R; ++r) dir[r] = -st.grad[r] * step;
      if (!free.empty()) {
        const auto h = dual.hessian(st);
        const std::size_t nf = free.size();
        std::vector<double> hf(nf * nf), rhs(nf);
        for (std::size_t i = 0; i < nf; ++i) {
          rhs[i] = -st.grad[free[i]];
          for (std::size_t j = 0; j < nf; ++j) hf[i * nf + j] = h[free[i] * R + free[j]];
        }
        const auto d = regularized_solve(std::move(hf), nf, std::move(rhs));
        for (std::size_t i = 0; i < nf; ++i) dir[free[i]] = d[i];
      }
      bool accepted = false;
      for (double alpha = 1.0; alpha > 1e-12; alpha *= 0.5) {
        std::vector<double> trial(R);
        double decrease = 0.0;
        for (std::size_t r = 0; r < R; ++r) {
          trial[r] = std::max(0.0, mu[r] + alpha * dir[r]);
          decrease += st.grad[r] * (trial[r] - mu[r]);
        }
        const DualState ts = dual.eval(trial);
        const double tres = kkt_residual(trial, ts.grad);
        if (ts.g <= st.g + 1e-4 * decrease || tres < 0.5 * res) {
          mu = std::move(trial);
          st = ts;
          res = tres;
          accepted = true;
          break;
        }
      }
      if (!accepted) {
        for (std::size_t r = 0; r < R; ++r) mu[r] = std::max(0.0, mu[r] - step * st.grad[r]);
        st = dual.eval(mu);
        res = kkt_residual(mu, st.grad);
      }
      double mu_norm = 0.0;
      for (double v : mu) mu_norm = std::max(mu_norm, v);
      if (mu_norm > 1e12) throw OracleError("solve_strong_discrete: constraint set is infeasible (multipliers diverge)");
    }
  }
  if (res > options.kkt_tolerance)
    throw OracleError("solve_strong_discrete: dual ascent stopped at KKT residual " + format_double(res) + " after " +
                      std::to_string(sol.iterations) + " iterations");

  sol.m.resize(p.size());
  for (std::size_t x = 0; x < p.size(); ++x) sol.m[x] = std::max(kDensityFloor, st.q[x] / p[x]);
  sol.multipliers = mu;
  sol.kkt_residual = res;
  sol.value = sol.gibbs ? st.g : strong_objective(p, u, lambda, sol.m);
  for (const auto& f : constraints.forms) {
    double v = 0.0;
    for (std::size_t x = 0; x < p.size(); ++x) v += p[x] * sol.m[x] * f.coefficients[x];
    sol.max_violation = std::max(sol.max_violation, v);
  }
  return sol;
}

RelaxedControlDiscrete RelaxedControlDiscrete::dirac(std::span<const double> p, std::span<const double> m) {
  RelaxedControlDiscrete c;
  c.probability.assign(p.begin(), p.end());
  for (double v : m) {
    c.density_atoms.push_back({v});
    c.weights.push_back({1.0});
  }
  return c;
}

double RelaxedControlDiscrete::conditional_mean(std::size_t x) const {
  double acc = 0.0;
  for (std::size_t j = 0; j < weights[x].size(); ++j) acc += weights[x][j] * density_atoms[x][j];
  return acc;
}

std::vector<double> RelaxedControlDiscrete::conditional_means() const {
  std::vector<double> out(atom_count());
  for (std::size_t x = 0; x < out.size(); ++x) out[x] = conditional_mean(x);
  return out;
}

double RelaxedControlDiscrete::entropy() const {
  double acc = 0.0;
  for (std::size_t x = 0; x < atom_count(); ++x)
    for (std::size_t j = 0; j < weights[x].size(); ++j)
      acc += probability[x] * weights[x][j] * density_atoms[x][j] * std::log(density_atoms[x][j]);
  return acc;
}

double RelaxedControlDiscrete::objective(std::span<const double> u, double lambda) const {
  double acc = 0.0;
  for (std::size_t x = 0; x < atom_count(); ++x) {
    double inner = 0.0;
    for (std::size_t j = 0; j < weights[x].size(); ++j) {
      const double m = density_atoms[x][j];
      inner += weights[x][j] * (m * u[x] - lambda * m * std::log(m));
    }
    acc += probability[x] * inner;
  }
  return acc;
}

double RelaxedControlDiscrete::off_mode_mass() const {
  double worst = 0.0;
  for (std::size_t x = 0; x < weights.size(); ++x) {
    const auto& w = weights[x];
    const auto& m = density_atoms[x];
    if (w.empty()) continue;
    const std::size_t mode = static_cast<std::size_t>(std::max_element(w.begin(), w.end()) - w.begin());
    // Atoms within the merge tolerance of the mode count as the mode.
    double off = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j)
      if (std::fabs(m[j] - m[mode]) > kModeMergeTolerance * m[mode]) off += w[j];
    worst = std::max(worst, off);
  }
  return worst;
}

double RelaxedControlDiscrete::constraint_violation(const DiscreteConstraintSet& set) const {
  const auto means = conditional_means();
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& f : set.forms) {
    double v = 0.0;
    for (std::size_t x = 0; x < atom_count(); ++x) v += probability[x] * means[x] * f.coefficients[x];
    worst = std::max(worst, v);
  }
  return set.empty() ? 0.0 : worst;
}

FeasibilityReport check_feasibility(const RelaxedControlDiscrete& control, const DiscreteConstraintSet& set,
                                    double tol) {
  FeasibilityReport rep;
  double total = 0.0;
  rep.min_density = std::numeric_limits<double>::infinity();
  for (std::size_t x = 0; x < control.atom_count(); ++x) {
    total += control.probability[x] * control.conditional_mean(x);
    double wsum = 0.0;
    for (std::size_t j = 0; j < control.weights[x].size(); ++j) {
      wsum += control.weights[x][j];
      if (control.weights[x][j] > 0.0) rep.min_density = std::min(rep.min_density, control.density_atoms[x][j]);
      if (control.weights[x][j] < -tol) rep.marginal_error = std::max(rep.marginal_error, -control.weights[x][j]);
    }
    rep.marginal_error = std::max(rep.marginal_error, std::fabs(wsum - 1.0));
  }
  double psum = 0.0;
  for (double v : control.probability) psum += v;
  rep.marginal_error = std::max(rep.marginal_error, std::fabs(psum - 1.0));
  rep.normalization_error = std::fabs(total - 1.0);
  rep.entropy = control.entropy();
  rep.constraint_violation = control.constraint_violation(set);
  rep.feasible = rep.normalization_error <= tol && rep.min_density > 0.0 && rep.marginal_error <= tol &&
                 std::isfinite(rep.entropy) && rep.constraint_violation <= tol;
  return rep;
}

std::vector<double> density_grid(std::size_t count, double lo, double hi) {
  if (count < 2 || !(lo > 0.0) || !(hi > lo)) throw OracleError("density_grid: need count >= 2 and 0 < lo < hi");
  std::vector<double> out(count);
  const double a = std::log(lo);
  const double b = std::log(hi);
  for (std::size_t i = 0; i < count; ++i)
    out[i] = std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(count - 1));
  return out;
}

std::vector<std::vector<double>> atom_grids(std::span<const double> base, std::span<const double> extra) {
  std::vector<std::vector<double>> out(extra.size());
  for (std::size_t x = 0; x < extra.size(); ++x) {
    out[x].assign(base.begin(), base.end());
    const bool present = std::any_of(base.begin(), base.end(), [&](double b) {
      return std::fabs(b - extra[x]) <= 1e-12 * std::max(b, extra[x]);
    });
    if (!present) out[x].push_back(extra[x]);
  }
  return out;
}

RelaxedSolution solve_relaxed_discrete(std::span<const double> p, std::span<const double> u, double lambda,
                                       const std::vector<std::vector<double>>& grids,
                                       const DiscreteConstraintSet& constraints) {
  if (!(lambda > 0.0)) throw OracleError("solve_relaxed_discrete: lambda must be positive");
  const std::size_t n = p.size();
  if (grids.size() != n || u.size() != n) throw OracleError("solve_relaxed_discrete: size mismatch");
  std::vector<std::size_t> offset(n + 1, 0);
  for (std::size_t x = 0; x < n; ++x) {
    if (grids[x].empty()) throw OracleError("solve_relaxed_discrete: empty density grid");
    for (double m : grids[x])
      if (!(m > 0.0)) throw OracleError("solve_relaxed_discrete: density atoms must be positive");
    offset[x + 1] = offset[x] + grids[x].size();
  }
  const std::size_t cols = offset[n];

  LinearProgram lp;
  lp.objective.resize(cols);
  std::vector<double> norm(cols);
  for (std::size_t x = 0; x < n; ++x)
    for (std::size_t j = 0; j < grids[x].size(); ++j) {
      const double m = grids[x][j];
      lp.objective[offset[x] + j] = p[x] * (m * u[x] - lambda * m * std::log(m));
      norm[offset[x] + j] = p[x] * m;
    }
  lp.add_row(norm, RowSense::eq, 1.0);
  for (std::size_t x = 0; x < n; ++x) {
    std::vector<double> row(cols, 0.0);
    for (std::size_t j = 0; j < grids[x].size(); ++j) row[offset[x] + j] = 1.0;
    lp.add_row(std::move(row), RowSense::eq, 1.0);
  }
  for (const auto& f : constraints.forms) {
    std::vector<double> row(cols, 0.0);
    for (std::size_t x = 0; x < n; ++x)
      for (std::size_t j = 0; j < grids[x].size(); ++j) row[offset[x] + j] = p[x] * grids[x][j] * f.coefficients[x];
    lp.add_row(std::move(row), RowSense::le, 0.0);
  }
  const LpResult res = solve_lp(lp, 1e-13);
  if (res.status == LpResult::Status::infeasible) throw OracleError("solve_relaxed_discrete: infeasible constraint set");
  if (res.status != LpResult::Status::optimal)
    throw OracleError(std::string("solve_relaxed_discrete: linear program did not converge (") +
                      (res.status == LpResult::Status::unbounded ? "unbounded" : "iteration limit") + ", " +
                      std::to_string(res.iterations) + " pivots)");

  RelaxedSolution sol;
  sol.lp_iterations = res.iterations;
  sol.control.probability.assign(p.begin(), p.end());
  for (std::size_t x = 0; x < n; ++x) {
    std::vector<double> m_atoms, w_atoms;
    double total = 0.0;
    for (std::size_t j = 0; j < grids[x].size(); ++j) {
      const double q = res.x[offset[x] + j];
      if (q <= 0.0) continue;
      m_atoms.push_back(grids[x][j]);
      w_atoms.push_back(q);
      total += q;
    }
    for (double& w : w_atoms) w /= total;
    sol.control.density_atoms.push_back(std::move(m_atoms));
    sol.control.weights.push_back(std::move(w_atoms));
  }
  sol.value = sol.control.objective(u, lambda);
  return sol;
}

CollapseReport verify_collapse(std::span<const double> p, std::span<const double> u, double lambda,
                               const DiscreteConstraintSet& constraints, std::size_t trials, std::uint64_t seed) {
  CollapseReport rep;
  const StrongSolution strong = solve_strong_discrete(p, u, lambda, constraints);
  const auto dirac = RelaxedControlDiscrete::dirac(p, strong.m);
  const double dirac_value = dirac.objective(u, lambda);
  auto f = [](double m) { return m * std::log(m); };
  rep.min_gap = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < trials; ++t) {
    CounterRng rng(seed, t);
    CollapseTrial trial;
    trial.atom = std::min(p.size() - 1, static_cast<std::size_t>(rng.uniform() * static_cast<double>(p.size())));
    const double centre = strong.m[trial.atom];
    trial.theta = 0.05 + 0.9 * rng.uniform();
    const double shrink = rng.uniform();
    if (t % 10 == 9) {
      trial.low = trial.high = centre;
    } else {
      const double d1 = centre * shrink;
      trial.low = centre - d1;
      trial.high = centre + trial.theta * d1 / (1.0 - trial.theta);
    }
    RelaxedControlDiscrete randomized = dirac;
    randomized.density_atoms[trial.atom] = {trial.low, trial.high};
    randomized.weights[trial.atom] = {trial.theta, 1.0 - trial.theta};
    trial.observed_gap = dirac_value - randomized.objective(u, lambda);
    trial.predicted_gap =
        p[trial.atom] * lambda * (trial.theta * f(trial.low) + (1.0 - trial.theta) * f(trial.high) - f(centre));
    const bool distinct = trial.low != trial.high;
    const double scale = std::max(1.0, std::fabs(dirac_value));
    const double err = std::fabs(trial.observed_gap - trial.predicted_gap);
    rep.max_prediction_error = std::max(rep.max_prediction_error, err);
    trial.counterexample = trial.observed_gap < -1e-12 * scale || (distinct && !(trial.predicted_gap > 0.0)) ||
                           (distinct && trial.observed_gap <= 0.0 && trial.predicted_gap > 1e-12 * scale) ||
                           err > 1e-9 * scale;
    if (distinct) rep.min_gap = std::min(rep.min_gap, trial.observed_gap);
    ++rep.trials;
    if (trial.counterexample) {
      ++rep.counterexamples;
      rep.failures.push_back(trial);
    }
  }
  if (!std::isfinite(rep.min_gap)) rep.min_gap = 0.0;
  const RelaxedSolution relaxed = solve_relaxed_discrete(p, u, lambda, atom_grids(density_grid(), strong.m), constraints);
  rep.relaxed_off_mode_mass = relaxed.control.off_mode_mass();
  rep.relaxed_dirac = relaxed.control.is_dirac(1e-6);
  return rep;
}

ExtractionReport extract_strong_control(const ScenarioTree& tree, std::span<const double> conditional_mean,
                                        const ModelParams& params, const ConstraintRows& rows) {
  if (conditional_mean.size() != tree.atom_count()) throw OracleError("extract_strong_control: size mismatch");
  const ConstraintSpec spec = make_constraint_spec(params);
  const auto row_ids = included_rows(tree, rows);
  const std::size_t K = tree.outcomes_per_step;
  const double pk = 1.0 / static_cast<double>(K);

  // Level-wise node means; level D holds the atoms.
  std::vector<std::vector<double>> level_mean(tree.depth + 1);
  level_mean[tree.depth].assign(conditional_mean.begin(), conditional_mean.end());
  for (std::size_t k = tree.depth; k-- > 0;) {
    level_mean[k].assign(tree.nodes_at(k), 0.0);
    for (std::size_t n = 0; n < level_mean[k].size(); ++n)
      for (std::size_t o = 0; o < K; ++o) level_mean[k][n] += pk * level_mean[k + 1][n * K + o];
  }

  ExtractionReport rep;
  std::vector<std::vector<std::vector<double>>> trans(tree.depth);
  for (std::size_t k = 0; k < tree.depth; ++k) {
    const std::size_t span = tree.atom_count() / tree.nodes_at(k);
    trans[k].resize(tree.nodes_at(k));
    for (std::size_t n = 0; n < tree.nodes_at(k); ++n) {
      NodeControl nc;
      nc.level = k;
      nc.node = n;
      nc.mean_density = level_mean[k][n];
      nc.transition.resize(K);
      for (std::size_t o = 0; o < K; ++o) {
        nc.transition[o] = pk * level_mean[k + 1][n * K + o] / nc.mean_density;
        for (std::size_t ch = 0; ch < 3; ++ch) nc.drift[ch] += nc.transition[o] * tree.outcomes[o][ch] / tree.dt;
      }
      nc.residual = spec.residual(tree.states[n * span][k], nc.drift);
      for (std::size_t r : row_ids) rep.max_violation = std::max(rep.max_violation, nc.residual[r]);
      trans[k][n] = nc.transition;
      rep.nodes.push_back(std::move(nc));
    }
  }
  for (std::size_t x = 0; x < tree.atom_count(); ++x) {
    double m = 1.0;
    for (std::size_t k = 0; k < tree.depth; ++k) m *= trans[k][tree.node_of(x, k)][tree.outcome_of(x, k)] / pk;
    rep.reaccumulation_error = std::max(rep.reaccumulation_error, std::fabs(m - conditional_mean[x]));
  }
  return rep;
}

ExtractionReport extract_strong_control(const ScenarioTree& tree, const RelaxedControlDiscrete& control,
                                        const ModelParams& params, const ConstraintRows& rows) {
  return extract_strong_control(tree, control.conditional_means(), params, rows);
}

std::string serialize_instance(const OracleInstance& inst) {
  json forms = json::array();
  for (const auto& f : inst.constraints.forms) {
    forms.push_back({{"label", f.label},
                     {"row", f.row},
                     {"s_index", f.s_index},
                     {"t_index", f.t_index},
                     {"node", f.node},
                     {"coefficients", f.coefficients}});
  }
  const auto& t = inst.tree;
  json j = {{"tree",
             {{"depth", t.depth},
              {"branching", t.branching},
              {"channels", {t.channels[0], t.channels[1], t.channels[2]}},
              {"sigma", t.sigma},
              {"epsilon", t.epsilon},
              {"horizon", t.horizon}}},
            {"utility", inst.utility},
            {"lambda", inst.lambda},
            {"constraints", forms},
            {"solution", inst.solution}};
  return j.dump(1);
}

OracleInstance deserialize_instance(std::string_view text) {
  try {
    const json j = json::parse(text);
    const json& jt = j.at("tree");
    ModelParams params;
    params.sigma = jt.at("sigma").get<double>();
    params.epsilon = jt.at("epsilon").get<double>();
    params.horizon = jt.at("horizon").get<double>();
    const auto ch = jt.at("channels").get<std::vector<bool>>();
    if (ch.size() != 3) throw OracleError("oracle instance: channels must have 3 entries");
    OracleInstance inst;
    inst.tree = build_tree(jt.at("depth").get<std::size_t>(), jt.at("branching").get<std::size_t>(), params,
                           {ch[0], ch[1], ch[2]});
    inst.utility = j.at("utility").get<std::vector<double>>();
    inst.lambda = j.at("lambda").get<double>();
    for (const auto& jf : j.at("constraints")) {
      ConstraintForm f;
      f.label = jf.at("label").get<std::string>();
      f.row = jf.at("row").get<std::size_t>();
      f.s_index = jf.at("s_index").get<std::size_t>();
      f.t_index = jf.at("t_index").get<std::size_t>();
      f.node = jf.at("node").get<std::size_t>();
      f.coefficients = jf.at("coefficients").get<std::vector<double>>();
      inst.constraints.forms.push_back(std::move(f));
    }
    inst.solution = j.at("solution").get<std::vector<double>>();
    return inst;
  } catch (const json::exception& e) {
    throw OracleError(std::string("oracle instance: ") + e.what());
  }
}

RandomOracleCase random_oracle_case(std::uint64_t seed, std::size_t index, std::size_t max_depth,
                                    std::size_t branching, bool constrained) {
  if (max_depth < 1) throw OracleError("random_oracle_case: max_depth must be at least 1");
  CounterRng rng(seed, index);
  RandomOracleCase c;
  c.params.rate_lower = -0.2 - 1.3 * rng.uniform();
  c.params.rate_upper = 0.2 + 1.3 * rng.uniform();
  const std::size_t depth = 1 + static_cast<std::size_t>(rng.uniform() * static_cast<double>(max_depth));
  std::array<bool, 3> channels{rng.uniform() < 0.5, rng.uniform() < 0.7, rng.uniform() < 0.5};
  if (!channels[0] && !channels[1] && !channels[2]) channels[kChannelZ] = true;
  c.tree = build_tree(std::min(depth, max_depth), branching, c.params, channels);
  c.utility.resize(c.tree.atom_count());
  for (auto& v : c.utility) v = 2.0 * rng.uniform() - 1.0;
  c.lambda = 0.5 + 1.5 * rng.uniform();
  c.constrained = constrained;
  if (constrained) c.constraints = build_constraint_set(c.tree, c.params);
  return c;
}

OracleCaseCheck check_oracle_case(const RandomOracleCase& c, std::size_t trials, std::uint64_t seed) {
  OracleCaseCheck out;
  const auto& p = c.tree.probability;
  out.atoms = c.tree.atom_count();
  out.forms = c.constraints.forms.size();
  out.lambda = c.lambda;
  const auto strong = solve_strong_discrete(p, c.utility, c.lambda, c.constraints);
  out.strong = strong.value;
  out.kkt_residual = strong.kkt_residual;
  out.strong_violation = strong.max_violation;
  const auto relaxed = solve_relaxed_discrete(p, c.utility, c.lambda, atom_grids(density_grid(), strong.m), c.constraints);
  out.relaxed = relaxed.value;
  const auto collapse = verify_collapse(p, c.utility, c.lambda, c.constraints, trials, seed);
  out.collapse_trials = collapse.trials;
  out.counterexamples = collapse.counterexamples;
  out.relaxed_dirac = collapse.relaxed_dirac;
  out.off_mode_mass = collapse.relaxed_off_mode_mass;
  const auto extraction = extract_strong_control(c.tree, strong.m, c.params);
  out.extraction_violation = extraction.max_violation;
  out.reaccumulation_error = extraction.reaccumulation_error;
  return out;
}

}  // namespace optfee
