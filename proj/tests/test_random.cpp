#include <boost/math/special_functions/erf.hpp>

#include <cmath>
#include <set>

#include "doctest.h"
#include "optfee/random.h"

using namespace optfee;

TEST_SUITE("random") {

TEST_CASE("normal quantile matches the inverse complementary error function") {
  for (double p : {1e-300, 1e-20, 1e-8, 0.001, 0.02425, 0.1, 0.3, 0.5, 0.7, 0.97575, 0.999, 1 - 1e-12}) {
    const double expected = -std::sqrt(2.0) * boost::math::erfc_inv(2.0 * p);
    CAPTURE(p);
    CHECK(normal_quantile(p) == doctest::Approx(expected).epsilon(1e-14).scale(1.0));
  }
  CHECK(normal_quantile(0.5) == 0.0);
  CHECK(normal_quantile(0.2) == doctest::Approx(-normal_quantile(0.8)).epsilon(1e-15));
}

TEST_CASE("fnv1a64 reference values") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
}

TEST_CASE("seed derivation is a pure function of master and tag") {
  CHECK(derive_seed(42, "simulate") == derive_seed(42, "simulate"));
  CHECK(derive_seed(42, "simulate") == derive_seed(42, fnv1a64("simulate")));
  CHECK(derive_seed(42, "simulate") != derive_seed(43, "simulate"));
  CHECK(derive_seed(42, "simulate") != derive_seed(42, "oracle"));
  CHECK(derive_seed(7, std::uint64_t{3}) == splitmix64(7 ^ splitmix64(4)));
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(derive_seed(1, i));
  CHECK(seen.size() == 1000);
}

TEST_CASE("counter generator is addressable and uniform on the open interval") {
  CounterRng a(5, 9), b(5, 9), c(5, 10);
  double sum = 0.0;
  for (int k = 0; k < 100000; ++k) {
    const double u = a.uniform();
    REQUIRE(u > 0.0);
    REQUIRE(u < 1.0);
    CHECK(u == b.uniform());
    sum += u;
  }
  CHECK(sum / 100000 == doctest::Approx(0.5).epsilon(0.01));
  CHECK(a.counter() == 100000);
  CHECK(CounterRng(5, 9).next_u64() != c.next_u64());
}

}
