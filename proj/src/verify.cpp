#include "optfee/verify.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "optfee/oracle.h"
#include "optfee/random.h"

namespace optfee {

namespace {

CheckResult below(std::string name, double statistic, double threshold, std::string detail = {}) {
  return {std::move(name), statistic, threshold, false, statistic <= threshold, std::move(detail)};
}

double t_stat(const Estimate& e) {
  if (e.se > 0.0) return e.mean / e.se;
  if (e.mean > 1e-14) return std::numeric_limits<double>::infinity();
  return 0.0;
}

}  // namespace

FeedbackPolicy closed_form_policy(const ModelParams& params) {
  const double T = params.horizon;
  const double reach = 8.0 * std::sqrt(T);
  return FeedbackPolicy::tabulate({0.0, T, 2}, {-reach, reach, 1601}, {0.0, 0.0, 1}, {0.0, 0.0, 1},
                                  AugmentedStat::none, params.rate_lower, params.rate_upper,
                                  [&](double t, double w, double, double) { return w * (T - t) / (2.0 * params.phi_a); });
}

std::vector<NamedPolicy> standard_policies(const ModelParams& params) {
  const double L = params.rate_lower;
  const double U = params.rate_upper;
  std::vector<NamedPolicy> out;
  out.emplace_back("lower", FeedbackPolicy::constant(L, L, U));
  out.emplace_back("zero", FeedbackPolicy::constant(std::clamp(0.0, L, U), L, U));
  out.emplace_back("upper", FeedbackPolicy::constant(U, L, U));
  out.emplace_back("closed_form", closed_form_policy(params));
  return out;
}

CheckResult check_girsanov_normalization(const ModelParams& params, const NamedPolicy& policy,
                                         const SampleSpec& sample, double k) {
  const auto weights = reference_weights(params, policy.second, sample);
  const Estimate e = weight_mean(weights);
  const double stat = e.se > 0.0 ? std::fabs(e.mean - 1.0) / e.se : (e.mean == 1.0 ? 0.0 : HUGE_VAL);
  std::ostringstream d;
  d << "mean " << e.mean << " se " << e.se;
  return below("girsanov_normalization[" + policy.first + "]", stat, k, d.str());
}

std::vector<CheckResult> check_entropy_reduced(double drift, double horizon, std::size_t n_steps,
                                               const SampleSpec& sample, double k) {
  const auto weights = reduced::constant_drift_weights(drift, horizon, n_steps, sample);
  const auto rep = entropy_report(weights);
  const double target = 0.5 * drift * drift * horizon;
  std::vector<CheckResult> out;
  std::ostringstream dl, dr;
  dl << "lhs " << rep.lhs.mean << " se " << rep.lhs.se << " target " << target;
  dr << "rhs " << rep.rhs.mean << " se " << rep.rhs.se << " target " << target;
  out.push_back(below("entropy_reduced[lhs]", std::fabs(rep.lhs.mean - target) / rep.lhs.se, k, dl.str()));
  out.push_back(below("entropy_reduced[rhs]", std::fabs(rep.rhs.mean - target) / rep.rhs.se, k, dr.str()));
  return out;
}

CheckResult check_entropy_full(const ModelParams& params, const NamedPolicy& policy, const SampleSpec& sample,
                               double k) {
  const auto weights = reference_weights(params, policy.second, sample);
  const auto rep = entropy_report(weights);
  const double stat = rep.combined_se > 0.0 ? std::fabs(rep.difference()) / rep.combined_se
                                            : (rep.difference() == 0.0 ? 0.0 : HUGE_VAL);
  std::ostringstream d;
  d << "lhs " << rep.lhs.mean << " rhs " << rep.rhs.mean << " se " << rep.combined_se;
  return below("entropy_full[" + policy.first + "]", stat, k, d.str());
}

MeasureKind rate_moment_sampler(const ModelParams& params, const FeedbackPolicy& policy) {
  const double rate = std::max(std::fabs(policy.lower()), std::fabs(policy.upper()));
  const double exponent = rate * rate * params.horizon / (params.epsilon * params.epsilon);
  return exponent <= kReferenceSamplerExponent ? MeasureKind::reference : MeasureKind::controlled;
}

CheckResult check_rate_moments(const ModelParams& params, const NamedPolicy& policy, const SampleSpec& sample,
                             bool expect_violation, std::optional<MeasureKind> sampler, double k) {
  const MeasureKind measure = sampler ? *sampler : rate_moment_sampler(params, policy.second);
  const auto etas = builtin_eta_family(params);
  const auto spec = make_constraint_spec(params);
  const auto moments = constraint_moments(params, policy.second, etas, spec, sample, measure);
  double worst = -HUGE_VAL;
  std::string where;
  for (std::size_t e = 0; e < moments.size(); ++e) {
    for (std::size_t r = 0; r < ConstraintSpec::kRows; ++r) {
      if (expect_violation && r != 4) continue;
      const double t = t_stat(moments[e][r]);
      if (t > worst) {
        worst = t;
        where = etas[e].label() + " row " + std::to_string(r + 1);
      }
    }
  }
  CheckResult c;
  c.name = std::string(expect_violation ? "rate_moments_violation[" : "rate_moments[") + policy.first +
           (measure == MeasureKind::reference ? ",reference]" : ",controlled]");
  c.statistic = worst;
  c.threshold = k;
  c.above = expect_violation;
  c.pass = expect_violation ? worst > k : worst <= k;
  c.detail = "max mean/se at " + where + " over " + std::to_string(etas.size()) + " tests";
  return c;
}

double two_atom_grid_oracle(double p1, double u1, double u2, double lambda, std::size_t points) {
  const double p2 = 1.0 - p1;
  const double hi = 1.0 / p1;
  double best = -HUGE_VAL;
  for (std::size_t i = 1; i < points; ++i) {
    const double m1 = hi * static_cast<double>(i) / static_cast<double>(points);
    const double m2 = (1.0 - p1 * m1) / p2;
    const double v = p1 * (m1 * u1 - lambda * m1 * std::log(m1)) + p2 * (m2 * u2 - lambda * m2 * std::log(m2));
    best = std::max(best, v);
  }
  return best;
}

CheckResult check_gibbs(double tol) {
  const std::vector<double> p{0.5, 0.5};
  const std::vector<double> u{1.0, -1.0};
  const auto s = solve_strong_discrete(p, u, 1.0);
  const double grid = two_atom_grid_oracle(0.5, 1.0, -1.0, 1.0, 2000000);
  const double closed = std::log(std::cosh(1.0));
  const double err = std::max(std::fabs(s.value - closed), std::fabs(s.value - grid));
  std::ostringstream d;
  d.precision(12);
  d << "strong " << s.value << " closed " << closed << " grid " << grid;
  return below("oracle_gibbs", err, tol, d.str());
}

std::vector<CheckResult> check_oracle_suite(const OracleSuiteSettings& settings) {
  double gap = 0.0;
  double extraction = 0.0;
  std::size_t counterexamples = 0;
  std::size_t trials = 0;
  std::size_t non_dirac = 0;
  for (std::size_t i = 0; i < settings.instances; ++i) {
    const auto c = random_oracle_case(settings.seed, i, settings.max_depth, settings.branching, i % 2 == 1);
    const auto r = check_oracle_case(c, settings.trials, derive_seed(settings.seed, i));
    gap = std::max(gap, std::fabs(r.gap()));
    counterexamples += r.counterexamples;
    trials += r.collapse_trials;
    if (!r.relaxed_dirac) ++non_dirac;
    if (c.constrained) extraction = std::max(extraction, r.extraction_violation);
  }
  const std::string n = std::to_string(settings.instances) + " instances";
  std::vector<CheckResult> out;
  out.push_back(below("oracle_strong_relaxed_gap", gap, settings.tol, n));
  out.push_back(below("oracle_collapse_counterexamples", static_cast<double>(counterexamples + non_dirac), 0.0,
                      std::to_string(trials) + " randomizations, " + std::to_string(non_dirac) + " non-Dirac relaxed"));
  out.push_back(below("oracle_extraction_violation", extraction, settings.tol, "rate-constrained instances"));
  return out;
}

std::vector<CheckResult> check_agent_closed_form(const ModelParams& params, const HjbSolution& solution,
                                                 double policy_tol, double value_tol) {
  const auto& pol = solution.policy;
  const double T = params.horizon;
  const double w_in = 0.8 * std::max(std::fabs(pol.signal_axis().lo), std::fabs(pol.signal_axis().hi));
  const double z_in = 0.8 * std::max(std::fabs(pol.inventory_axis().lo), std::fabs(pol.inventory_axis().hi));
  double err = 0.0;
  double scale = 0.0;
  const auto values = pol.values();
  for (std::size_t it = 0; it < pol.time_axis().n; ++it)
    for (std::size_t iw = 0; iw < pol.signal_axis().n; ++iw)
      for (std::size_t iz = 0; iz < pol.inventory_axis().n; ++iz) {
        const double t = pol.time_axis().node(it);
        const double w = pol.signal_axis().node(iw);
        const double z = pol.inventory_axis().node(iz);
        if (std::fabs(w) > w_in || std::fabs(z) > z_in) continue;
        const double exact = std::clamp(w * (T - t) / (2.0 * params.phi_a), params.rate_lower, params.rate_upper);
        for (std::size_t is = 0; is < pol.stat_axis().n; ++is)
          err = std::max(err, std::fabs(values[pol.index(it, iw, iz, is)] - exact));
        scale = std::max(scale, std::fabs(exact));
      }
  const double target = std::pow(T, 4) / (48.0 * params.phi_a);
  std::vector<CheckResult> out;
  std::ostringstream dp, dv;
  dp << "sup error " << err << " sup |pi*| " << scale;
  dv << "value " << solution.value << " target " << target;
  out.push_back(below("agent_closed_form_policy", scale > 0.0 ? err / scale : err, policy_tol, dp.str()));
  out.push_back(below("agent_closed_form_value", std::fabs(solution.value - target) / target, value_tol, dv.str()));
  return out;
}

CheckResult check_agent_monte_carlo(const Contract& contract, const ModelParams& params, const HjbSolution& solution,
                                    const SampleSpec& sample, double rel_tol, double k) {
  const auto e = estimate_agent_value(contract, solution.policy, params, sample);
  const double allowed = std::max(rel_tol * std::fabs(solution.value), k * e.se);
  std::ostringstream d;
  d << "mc " << e.mean << " se " << e.se << " hjb " << solution.value << " allowed " << allowed;
  return below("agent_monte_carlo", std::fabs(e.mean - solution.value), allowed, d.str());
}

std::string format_check(const CheckResult& check) {
  std::ostringstream out;
  out << (check.pass ? "PASS " : "FAIL ") << check.name << ": " << check.statistic << (check.above ? " > " : " <= ")
      << check.threshold;
  if (!check.detail.empty()) out << " (" << check.detail << ")";
  return out.str();
}

}  // namespace optfee
