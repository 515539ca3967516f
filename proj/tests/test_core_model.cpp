#include <cmath>

#include "doctest.h"
#include "optfee/core_model.h"

using namespace optfee;

TEST_SUITE("core_model") {

TEST_CASE("defaults validate and round-trip through text") {
  const ModelParams p;
  CHECK(validate_params(p) == p);
  ModelParams q;
  q.sigma = 0.1 + 0.2;
  q.rate_lower = -3.5;
  q.n_steps = 17;
  q.seed = 0xffffffffffffffffull;
  CHECK(params_from_text(params_to_text(q)) == q);
}

TEST_CASE("invalid parameters name the broken invariant") {
  ModelParams p;
  p.sigma = 0.0;
  CHECK_THROWS_WITH_AS(validate_params(p), "sigma must be positive", ModelError);
  p = {};
  p.rate_lower = 5.0;
  p.rate_upper = -5.0;
  CHECK_THROWS_WITH_AS(validate_params(p), "rate_lower exceeds rate_upper", ModelError);
  p = {};
  p.epsilon = std::nan("");
  CHECK_THROWS_AS(validate_params(p), ModelError);
  p = {};
  p.n_steps = 0;
  CHECK_THROWS_AS(validate_params(p), ModelError);
}

TEST_CASE("unknown model keys are rejected") {
  CHECK_THROWS_AS(params_from_text("sigma = 1\nvolatility = 2\n"), ConfigError);
  CHECK_THROWS_AS(params_from_text("sigma = abc\n"), ConfigError);
}

TEST_CASE("constraint rows at an interior rate") {
  const ModelParams p;
  const auto spec = make_constraint_spec(p);
  const StateSample x{0.0, 0.0, 0.3};
  const auto b = spec.b_vector(x);
  CHECK(b[0] == doctest::Approx(-0.3));
  CHECK(b[1] == doctest::Approx(0.3));
  CHECK(b[4] == doctest::Approx(-10.0));
  CHECK(b[5] == doctest::Approx(-10.0));
  const auto r = constraint_rows(spec, x, 2.0);
  const double expected[] = {0, 0, 0, 0, -8, -12};
  for (std::size_t i = 0; i < ConstraintSpec::kRows; ++i) CHECK(r[i] == doctest::Approx(expected[i]));
  CHECK(is_admissible(r));
}

TEST_CASE("rate bounds are the admissibility frontier") {
  const ModelParams p;
  const auto spec = make_constraint_spec(p);
  const StateSample x{1.0, -2.0, 0.7};
  CHECK(constraint_rows(spec, x, p.rate_upper)[4] == doctest::Approx(0.0));
  CHECK(is_admissible(constraint_rows(spec, x, p.rate_upper)));
  const auto over = constraint_rows(spec, x, p.rate_upper + 1.0);
  CHECK(over[4] == doctest::Approx(1.0));
  CHECK_FALSE(is_admissible(over));
  CHECK_FALSE(is_admissible(constraint_rows(spec, x, p.rate_lower - 0.5)));
}

TEST_CASE("paths start at the origin on a uniform grid") {
  auto path = make_path(4, 2.0);
  CHECK(path.steps() == 4);
  CHECK(path.times.back() == 2.0);
  CHECK_NOTHROW(check_path(path, 2.0));
  path.z[0] = 0.1;
  CHECK_THROWS_AS(check_path(path, 2.0), ModelError);
  path = make_path(4, 2.0);
  path.times[2] = 1.1;
  CHECK_THROWS_AS(check_path(path, 2.0), ModelError);
}

TEST_CASE("policy tables clamp into the rate box") {
  const UniformAxis t{0.0, 1.0, 2}, w{-1.0, 1.0, 3}, z{0.0, 0.0, 1}, s{0.0, 0.0, 1};
  const auto policy = FeedbackPolicy::tabulate(t, w, z, s, AugmentedStat::none, -0.5, 0.5,
                                               [](double, double wv, double, double) { return 3.0 * wv; });
  CHECK(policy.rate(0.0, 1.0, 0.0) == 0.5);
  CHECK(policy.rate(0.0, -1.0, 0.0) == -0.5);
  CHECK(policy.rate(0.5, 0.1, 0.0) == doctest::Approx(0.1 * 0.5 / 1.0));
  CHECK(policy.rate(0.5, 50.0, 0.0) == 0.5);
  CHECK(FeedbackPolicy::constant(7.0, -1.0, 1.0).rate(0.3, 0.0, 0.0) == 1.0);
  CHECK_THROWS_AS(FeedbackPolicy::constant(0.0, 1.0, -1.0), ModelError);
}

TEST_CASE("axis location clamps to the node range") {
  const UniformAxis a{0.0, 1.0, 5};
  std::size_t cell = 0;
  double frac = 0.0;
  a.locate(0.6, cell, frac);
  CHECK(cell == 2);
  CHECK(frac == doctest::Approx(0.4));
  a.locate(-3.0, cell, frac);
  CHECK(cell == 0);
  CHECK(frac == 0.0);
  a.locate(9.0, cell, frac);
  CHECK(a.node(cell) + frac * a.spacing() == doctest::Approx(1.0));
}

}
