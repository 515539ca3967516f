#include "doctest.h"
#include "optfee/simplex.h"

using namespace optfee;

TEST_SUITE("simplex") {

TEST_CASE("textbook maximization") {
  // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18: optimum (2, 6), value 36.
  LinearProgram lp;
  lp.objective = {3, 5};
  lp.add_row({1, 0}, RowSense::le, 4);
  lp.add_row({0, 2}, RowSense::le, 12);
  lp.add_row({3, 2}, RowSense::le, 18);
  const auto r = solve_lp(lp);
  REQUIRE(r.status == LpResult::Status::optimal);
  CHECK(r.value == doctest::Approx(36.0));
  CHECK(r.x[0] == doctest::Approx(2.0));
  CHECK(r.x[1] == doctest::Approx(6.0));
}

TEST_CASE("equality and lower-bound rows need phase one") {
  // max -x - y, x + y = 2, x >= 0.5, negative rhs row -x <= -0.5.
  LinearProgram lp;
  lp.objective = {-1, -2};
  lp.add_row({1, 1}, RowSense::eq, 2);
  lp.add_row({1, 0}, RowSense::ge, 0.5);
  lp.add_row({-1, 0}, RowSense::le, -0.5);
  const auto r = solve_lp(lp);
  REQUIRE(r.status == LpResult::Status::optimal);
  CHECK(r.value == doctest::Approx(-2.0));
  CHECK(r.x[0] == doctest::Approx(2.0));
}

TEST_CASE("infeasible and unbounded programs are reported") {
  LinearProgram inf;
  inf.objective = {1};
  inf.add_row({1}, RowSense::le, 1);
  inf.add_row({1}, RowSense::ge, 2);
  CHECK(solve_lp(inf).status == LpResult::Status::infeasible);

  LinearProgram unb;
  unb.objective = {1, 1};
  unb.add_row({1, -1}, RowSense::le, 1);
  CHECK(solve_lp(unb).status == LpResult::Status::unbounded);
}

TEST_CASE("degenerate program terminates") {
  // Beale's cycling example.
  LinearProgram lp;
  lp.objective = {0.75, -150, 0.02, -6};
  lp.add_row({0.25, -60, -0.04, 9}, RowSense::le, 0);
  lp.add_row({0.5, -90, -0.02, 3}, RowSense::le, 0);
  lp.add_row({0, 0, 1, 0}, RowSense::le, 1);
  const auto r = solve_lp(lp);
  REQUIRE(r.status == LpResult::Status::optimal);
  CHECK(r.value == doctest::Approx(0.05));
}

}
