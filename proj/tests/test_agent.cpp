#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

#include "doctest.h"
#include "optfee/agent.h"

using namespace optfee;

namespace {

ModelParams box(double bound) {
  ModelParams p;
  p.rate_lower = -bound;
  p.rate_upper = bound;
  return p;
}

HjbOptions coarse(std::size_t n = 61) {
  HjbOptions o;
  o.n_signal = n;
  o.n_inventory = n;
  o.threads = 2;
  return o;
}

}  // namespace

TEST_SUITE("agent") {

TEST_CASE("zero fee: closed-form rate and value") {
  const ModelParams p = box(5.0);
  const auto sol = solve_hjb(ConstantContract{0.0}, p, coarse(81));
  const double T = p.horizon;
  CHECK(sol.value == doctest::Approx(std::pow(T, 4) / (48.0 * p.phi_a)).epsilon(0.03));
  for (double t : {0.0, 0.5}) {
    for (double w : {-1.5, 0.5, 2.0}) {
      const double expected = w * (T - t) / (2.0 * p.phi_a);
      CAPTURE(t);
      CAPTURE(w);
      CHECK(sol.policy.rate(t, w, 0.3) == doctest::Approx(expected).epsilon(0.05).scale(1.0));
    }
  }
}

TEST_CASE("frozen rate box: policy zero and value minus the fee") {
  const ModelParams p = box(0.0);
  const double c = 0.3;
  const auto sol = solve_hjb(ConstantContract{c}, p, coarse());
  for (double v : sol.policy.values()) CHECK(v == 0.0);
  CHECK(sol.value == doctest::Approx(-c).epsilon(1e-3));
}

TEST_CASE("inventory-linear fee shifts the rate") {
  const ModelParams p = box(5.0);
  const double a = 0.4;
  PolynomialContract c;
  c.degree = 1;
  c.coefficients = {0.0, a, 0.0, 0.0};
  const auto sol = solve_hjb(c, p, coarse(81));
  for (double w : {-1.0, 0.0, 1.5}) {
    const double expected = std::clamp((w * 0.5 - a) / (2.0 * p.phi_a), p.rate_lower, p.rate_upper);
    CAPTURE(w);
    CHECK(sol.policy.rate(0.5, w, 0.0) == doctest::Approx(expected).epsilon(0.05).scale(1.0));
  }
}

TEST_CASE("corner contract keeps the policy in the box") {
  ModelParams p = box(0.75);
  p.n_steps = 50;
  PolynomialContract c;
  c.degree = 1;
  c.cap = 1.0;
  c.coefficients = {1.0, 1.0, 1.0, 1.0};
  HjbOptions o = coarse(21);
  o.n_stat = 11;
  const auto sol = solve_hjb(c, p, o);
  CHECK(sol.grid.stat_kind == AugmentedStat::price);
  for (double v : sol.policy.values()) {
    CHECK(v >= p.rate_lower);
    CHECK(v <= p.rate_upper);
  }
}

TEST_CASE("unstable explicit step is refused") {
  const ModelParams p = box(5.0);
  HjbOptions o = coarse();
  o.n_time = 50;
  o.n_slices = 51;
  CHECK_THROWS_AS(solve_hjb(ConstantContract{0.0}, p, o), CflError);
  try {
    solve_hjb(ConstantContract{0.0}, p, o);
  } catch (const CflError& e) {
    CHECK(e.max_step() < 1.0 / 50.0);
  }
}

TEST_CASE("Markovian statistics") {
  const ModelParams p;
  PolynomialContract c;
  c.degree = 1;
  c.coefficients = {0.0, 1.0, 0.0, 0.0};
  CHECK(markovian_statistic(c, p) == AugmentedStat::none);
  c.op = PathOperator::time_average;
  CHECK(markovian_statistic(c, p) == AugmentedStat::inventory_integral);
  c.coefficients = {0.0, 0.0, 0.0, 1.0};
  CHECK_FALSE(markovian_statistic(c, p).has_value());
  CHECK_THROWS_AS(solve_hjb(c, p, coarse()), UnsupportedContract);
  CHECK(markovian_statistic(markovian_surrogate(c, p), p) == AugmentedStat::price);
}

TEST_CASE("Monte Carlo agent values") {
  ModelParams p = box(2.0);
  p.n_steps = 50;
  const auto zero = FeedbackPolicy::constant(0.0, p.rate_lower, p.rate_upper);
  const auto idle = estimate_agent_value(ConstantContract{0.0}, zero, p, {20000, 3, 2});
  CHECK(std::fabs(idle.mean) <= 3.0 * idle.se);

  const auto sol = solve_hjb(ConstantContract{0.0}, p, coarse());
  const auto mc = estimate_agent_value(ConstantContract{0.0}, sol.policy, p, {20000, 3, 2});
  CHECK(mc.mean <= sol.value + 3.0 * mc.se);
  CHECK(mc.mean > idle.mean);
}

TEST_CASE("reweighted estimator targets the controlled value") {
  ModelParams p = box(0.5);
  p.n_steps = 50;
  const auto policy = FeedbackPolicy::constant(0.5, p.rate_lower, p.rate_upper);
  const Contract fee = ConstantContract{0.1};
  const auto direct = estimate_agent_value(fee, policy, p, {40000, 5, 2});
  const auto weighted = estimate_agent_value_reweighted(fee, policy, p, {40000, 6, 2});
  CHECK(std::fabs(direct.mean - weighted.mean) <= 3.0 * std::hypot(direct.se, weighted.se));
}

TEST_CASE("non-Markovian fallback improves on its seed") {
  ModelParams p = box(1.0);
  p.n_steps = 20;
  PolynomialContract c;
  c.degree = 1;
  c.op = PathOperator::time_average;
  c.coefficients = {0.0, 0.0, 0.0, 0.5};
  BestResponseOptions o;
  o.hjb = coarse(21);
  o.hjb.n_stat = 11;
  o.table_time = 2;
  o.table_signal = 3;
  o.table_inventory = 2;
  o.max_iterations = 3;
  o.sample = {500, 4, 2};
  const auto br = best_response(c, p, o);
  CHECK_FALSE(br.markovian);
  REQUIRE(br.history.size() >= 2);
  for (std::size_t i = 1; i < br.history.size(); ++i) CHECK(br.history[i] >= br.history[i - 1]);
  for (double v : br.policy.values()) CHECK(std::fabs(v) <= 1.0);
}

TEST_CASE("grid exports honour the stride") {
  const ModelParams p = box(1.0);
  const auto sol = solve_hjb(ConstantContract{0.0}, p, coarse(21));
  std::ostringstream full, thin;
  write_policy_csv(full, sol.policy, 1);
  write_policy_csv(thin, sol.policy, 4);
  CHECK(full.str().rfind("t,w,z,stat,rate\n", 0) == 0);
  const auto lines = [](const std::string& s) { return std::count(s.begin(), s.end(), '\n'); };
  CHECK(lines(full.str()) == 1 + 51 * 21 * 21);
  CHECK(lines(thin.str()) == 1 + 51 * 6 * 6);
  std::ostringstream values;
  write_value_grid_csv(values, sol.grid, 4);
  CHECK(lines(values.str()) == 1 + 51 * 6 * 6);
}

}
