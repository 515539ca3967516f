#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "optfee/oracle.h"
#include "optfee/verify.h"

using namespace optfee;

namespace {

// Brute force over m_1 on a uniform grid; m_2 follows from normalization.
double brute_two_atom(double u1, double u2, double lambda, int points) {
  double best = -1e300;
  for (int k = 1; k < points; ++k) {
    const double m1 = 2.0 * k / points;
    const double m2 = 2.0 - m1;
    const double v = 0.5 * (m1 * u1 - lambda * m1 * std::log(m1)) + 0.5 * (m2 * u2 - lambda * m2 * std::log(m2));
    best = std::max(best, v);
  }
  return best;
}

std::vector<double> uniform_probability(std::size_t n) { return std::vector<double>(n, 1.0 / static_cast<double>(n)); }

}  // namespace

TEST_SUITE("oracle") {

TEST_CASE("tree shapes") {
  const ModelParams p;
  const auto one = build_tree(1, 2, p, {false, true, false});
  CHECK(one.atom_count() == 2);
  CHECK(one.probability[0] == 0.5);
  CHECK(one.probability[1] == 0.5);
  const auto two = build_tree(2, 2, p, {false, true, false});
  CHECK(two.atom_count() == 4);
  CHECK(two.nodes_at(1) == 2);
  const auto full = build_tree(2, 3, p);
  CHECK(full.outcomes_per_step == 27);
  CHECK(full.atom_count() == 729);
  CHECK_THROWS_AS(build_tree(5, 3, p), OracleError);
}

TEST_CASE("branch increments match the per-step variance") {
  ModelParams p;
  p.sigma = 1.3;
  p.epsilon = 0.4;
  for (std::size_t b : {2u, 3u}) {
    const auto tree = build_tree(2, b, p);
    const double expected[] = {p.sigma * p.sigma * tree.dt, p.epsilon * p.epsilon * tree.dt, tree.dt};
    for (std::size_t ch = 0; ch < 3; ++ch) {
      double m1 = 0.0, m2 = 0.0;
      for (const auto& o : tree.outcomes) {
        m1 += o[ch];
        m2 += o[ch] * o[ch];
      }
      m1 /= static_cast<double>(tree.outcomes.size());
      m2 /= static_cast<double>(tree.outcomes.size());
      CAPTURE(b);
      CAPTURE(ch);
      CHECK(std::fabs(m1) < 1e-15);
      CHECK(m2 == doctest::Approx(expected[ch]).epsilon(1e-12));
    }
  }
}

TEST_CASE("Gibbs closed form against brute force") {
  const std::vector<double> p{0.5, 0.5}, u{1.0, -1.0};
  const auto s = solve_strong_discrete(p, u, 1.0);
  CHECK(std::fabs(s.value - std::log(std::cosh(1.0))) <= 1e-12);
  CHECK(std::fabs(s.value - brute_two_atom(1.0, -1.0, 1.0, 2000000)) <= 1e-8);
  CHECK(std::fabs(two_atom_grid_oracle(0.5, 1.0, -1.0, 1.0, 2000000) - brute_two_atom(1.0, -1.0, 1.0, 2000000)) <= 1e-10);
  CHECK(s.m[0] == doctest::Approx(std::exp(1.0) / std::cosh(1.0)));
}

TEST_CASE("constant utility gives unit density") {
  const auto p = uniform_probability(5);
  const std::vector<double> u(5, 0.7);
  const auto s = solve_strong_discrete(p, u, 0.3);
  for (double m : s.m) CHECK(m == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(s.value == doctest::Approx(0.7).epsilon(1e-14));
}

TEST_CASE("large temperature tends to the plain mean") {
  const auto p = uniform_probability(4);
  const std::vector<double> u{0.3, -0.9, 1.0, 0.1};
  const double mean = std::inner_product(p.begin(), p.end(), u.begin(), 0.0);
  const double range = 1.9;
  CHECK(std::fabs(solve_strong_discrete(p, u, 1e3).value - mean) <= 1e-2 * range);
}

TEST_CASE("relaxed value dominates and collapses to the strong value") {
  const auto p = uniform_probability(4);
  const std::vector<double> u{0.3, -0.9, 1.0, 0.1};
  const auto strong = solve_strong_discrete(p, u, 0.5);
  const auto relaxed = solve_relaxed_discrete(p, u, 0.5, atom_grids(density_grid(), strong.m));
  CHECK(relaxed.value >= strong.value - 1e-10);
  CHECK(std::fabs(relaxed.value - strong.value) <= 1e-8);
  CHECK(relaxed.control.is_dirac());
  const auto coarse = solve_relaxed_discrete(p, u, 0.5, atom_grids(density_grid(7), std::vector<double>(4, 1.0)));
  CHECK(coarse.value <= strong.value + 1e-10);

  const std::vector<double> zero(4, 0.0);
  CHECK(std::fabs(solve_relaxed_discrete(p, zero, 0.5, atom_grids(density_grid(), std::vector<double>(4, 1.0))).value) <=
        1e-12);
}

TEST_CASE("randomization of a Dirac control") {
  const auto p = uniform_probability(4);
  const std::vector<double> u{0.3, -0.9, 1.0, 0.1};
  const auto strong = solve_strong_discrete(p, u, 0.5);
  const auto dirac = RelaxedControlDiscrete::dirac(p, strong.m);
  CHECK(dirac.objective(u, 0.5) == doctest::Approx(strong.value).epsilon(1e-12));
  RelaxedControlDiscrete same = dirac;
  same.density_atoms[1] = {strong.m[1], strong.m[1]};
  same.weights[1] = {0.3, 0.7};
  CHECK(same.objective(u, 0.5) == doctest::Approx(strong.value).epsilon(1e-14));

  const auto report = verify_collapse(p, u, 0.5, {}, 100, 17);
  CHECK(report.trials == 100);
  CHECK(report.counterexamples == 0);
  CHECK(report.min_gap >= 0.0);
  CHECK(report.relaxed_dirac);
}

TEST_CASE("unit density extracts zero drift") {
  const ModelParams p;
  const auto tree = build_tree(2, 2, p);
  const std::vector<double> ones(tree.atom_count(), 1.0);
  const auto rep = extract_strong_control(tree, ones, p);
  for (const auto& node : rep.nodes)
    for (double d : node.drift) CHECK(std::fabs(d) <= 1e-12);
  CHECK(rep.reaccumulation_error <= 1e-10);
}

TEST_CASE("constrained strong problem and extraction") {
  ModelParams p;
  p.rate_lower = -0.3;
  p.rate_upper = 0.3;
  const auto tree = build_tree(2, 2, p, {false, true, true});
  const auto set = build_constraint_set(tree, p);
  CHECK(forms_adapted(tree, set));
  ConstantContract fee{0.0};
  const auto u = atom_utility(tree, fee, p);
  std::vector<double> tilted = u;
  for (std::size_t x = 0; x < tilted.size(); ++x) tilted[x] += 2.0 * tree.states[x].back().z;
  const auto s = solve_strong_discrete(tree.probability, tilted, 0.5, set);
  CHECK(s.kkt_residual <= 1e-10);
  CHECK(s.max_violation <= 1e-8);
  const auto rep = extract_strong_control(tree, s.m, p);
  CHECK(rep.max_violation <= 1e-8);
  CHECK(rep.reaccumulation_error <= 1e-10);
  const auto feas = check_feasibility(RelaxedControlDiscrete::dirac(tree.probability, s.m), set);
  CHECK(feas.feasible);
}

TEST_CASE("random cases satisfy the equality checks") {
  for (std::size_t i = 0; i < 6; ++i) {
    const auto c = random_oracle_case(3, i, 2, 2, i % 2 == 1);
    const auto r = check_oracle_case(c, 20, 100 + i);
    CAPTURE(i);
    CHECK(std::fabs(r.gap()) <= 1e-8);
    CHECK(r.counterexamples == 0);
    CHECK(r.relaxed_dirac);
    if (c.constrained) CHECK(r.extraction_violation <= 1e-8);
  }
}

TEST_CASE("instance fixtures round-trip") {
  const ModelParams p;
  OracleInstance inst;
  inst.tree = build_tree(1, 3, p, {true, false, true});
  inst.utility.assign(inst.tree.atom_count(), 0.25);
  inst.lambda = 0.75;
  inst.constraints = build_constraint_set(inst.tree, p);
  inst.solution.assign(inst.tree.atom_count(), 1.0);
  const auto back = deserialize_instance(serialize_instance(inst));
  CHECK(back.tree.atom_count() == inst.tree.atom_count());
  CHECK(back.utility == inst.utility);
  CHECK(back.lambda == inst.lambda);
  CHECK(back.constraints.forms.size() == inst.constraints.forms.size());
  CHECK(serialize_instance(back) == serialize_instance(inst));
}

}
