#include <cmath>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "optfee/agent.h"
#include "optfee/girsanov.h"

using namespace optfee;

namespace {

ModelParams small_box() {
  ModelParams p;
  p.rate_lower = -1.0;
  p.rate_upper = 1.0;
  p.n_steps = 50;
  return p;
}

double within_se(const Estimate& e, double target) { return std::fabs(e.mean - target) / e.se; }

}  // namespace

TEST_SUITE("girsanov") {

TEST_CASE("reference paths: variance, origin, reproducibility") {
  ModelParams p;
  p.n_steps = 20;
  const std::size_t n = 100000;
  double s = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto path = reference_path(p, 3, i);
    REQUIRE(path.p[0] == 0.0);
    s += path.p.back();
    s2 += path.p.back() * path.p.back();
  }
  const double var = s2 / n - (s / n) * (s / n);
  CHECK(var == doctest::Approx(1.0).epsilon(0.02));
  const auto a = reference_path(p, 3, 17), b = reference_path(p, 3, 17), c = reference_path(p, 4, 17);
  CHECK(a.p == b.p);
  CHECK(a.z == b.z);
  CHECK(a.w == b.w);
  CHECK(a.p != c.p);
}

TEST_CASE("controlled paths drift at the policy rate") {
  ModelParams p;
  p.n_steps = 25;
  const std::size_t n = 20000;
  for (double c : {0.0, 1.5}) {
    const auto policy = FeedbackPolicy::constant(c, p.rate_lower, p.rate_upper);
    double z = 0.0, z2 = 0.0, pt = 0.0, pt2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto path = controlled_path(p, policy, 8, i);
      z += path.z.back();
      z2 += path.z.back() * path.z.back();
      pt += path.p.back();
      pt2 += path.p.back() * path.p.back();
    }
    const double zm = z / n, zse = std::sqrt((z2 / n - zm * zm) / n);
    const double pm = pt / n, pse = std::sqrt((pt2 / n - pm * pm) / n);
    CAPTURE(c);
    CHECK(std::fabs(zm - c * p.horizon) <= 3.0 * zse);
    CHECK(std::fabs(pm) <= 3.0 * pse);
  }
}

TEST_CASE("controlled and reference paths share Gaussian draws") {
  ModelParams p;
  p.n_steps = 10;
  const auto ref = reference_path(p, 5, 2);
  std::vector<double> rates;
  const auto ctl = controlled_path(p, FeedbackPolicy::constant(0.0, -1, 1), 5, 2, &rates);
  CHECK(rates.size() == 10);
  CHECK(ctl.w == ref.w);
  CHECK(ctl.z == ref.z);
}

TEST_CASE("zero drift with the signal suppressed has unit weight") {
  const ModelParams p = small_box();
  const auto zero = FeedbackPolicy::constant(0.0, p.rate_lower, p.rate_upper);
  for (std::size_t i = 0; i < 5; ++i) {
    const auto w = girsanov_weight(reference_path(p, 1, i), zero, p, {false});
    CHECK(w.m == 1.0);
    CHECK(w.log_m == 0.0);
    CHECK(w.drift_sq_integral == 0.0);
  }
}

TEST_CASE("reduced harness closed form") {
  const std::vector<double> inc(4, 0.25);
  const auto w = reduced::constant_drift_weight(inc, 1.0, 0.25);
  CHECK(w.m == doctest::Approx(std::exp(0.5)).epsilon(1e-12));
  CHECK(w.m == doctest::Approx(1.64872).epsilon(1e-5));
  CHECK(w.drift_sq_integral == doctest::Approx(1.0));
}

TEST_CASE("density of a constant rate has mean one") {
  const ModelParams p = small_box();
  const auto weights = reference_weights(p, FeedbackPolicy::constant(1.0, -1, 1), {40000, 9, 2});
  CHECK(within_se(weight_mean(weights), 1.0) <= 3.0);
}

TEST_CASE("weights are independent of the thread count") {
  const ModelParams p = small_box();
  const auto policy = FeedbackPolicy::constant(0.5, -1, 1);
  const auto a = reference_weights(p, policy, {300, 4, 1});
  const auto b = reference_weights(p, policy, {300, 4, 3});
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].log_m == b[i].log_m);
}

TEST_CASE("entropy identity in the reduced harness") {
  const auto weights = reduced::constant_drift_weights(2.0, 1.0, 50, {100000, 12, 2});
  const auto rep = entropy_report(weights);
  CHECK(within_se(rep.lhs, 2.0) <= 3.0);
  CHECK(within_se(rep.rhs, 2.0) <= 3.0);
  CHECK(rep.agrees());
}

TEST_CASE("entropy vanishes without drift") {
  const ModelParams p = small_box();
  PathBatch batch = simulate_reference(p, 50, 2);
  attach_weights(batch, FeedbackPolicy::constant(0.0, -1, 1), p, {false});
  const auto rep = entropy_report(batch);
  CHECK(rep.lhs.mean == 0.0);
  CHECK(rep.rhs.mean == 0.0);
}

TEST_CASE("eta family and grid helpers") {
  const ModelParams p;
  const auto family = builtin_eta_family(p);
  CHECK(family.size() == 63);
  for (const auto& eta : family) CHECK(eta.s < eta.t);
  CHECK(grid_index(0.5, 1.0, 250) == 125);
  CHECK(grid_index(1.0, 1.0, 250) == 250);
  CHECK(grid_index(0.3, 0.9, 3) == 1);
  auto path = make_path(4, 1.0);
  path.w = {0.0, 1.0, 3.0, 0.0, 0.0};
  CHECK(truncation_index(path, 2.0) == 2);
  CHECK(truncation_index(path, 5.0) == 4);
}

TEST_CASE("row five increments at the upper bound and at the midpoint") {
  ModelParams p = small_box();
  p.rate_lower = -0.5;
  p.rate_upper = 0.5;
  const auto spec = make_constraint_spec(p);
  const EtaTest one{EtaTest::Kind::constant, 0.0, 0.25, 0.75, 10.0};
  const std::vector<EtaTest> etas{one};
  const SampleSpec sample{20000, 21, 2};
  for (double rate : {p.rate_upper, 0.5 * (p.rate_lower + p.rate_upper)}) {
    const auto policy = FeedbackPolicy::constant(rate, p.rate_lower, p.rate_upper);
    const double expected = (rate - p.rate_upper) * (one.t - one.s);
    for (auto measure : {MeasureKind::reference, MeasureKind::controlled}) {
      const auto est = constraint_moments(p, policy, etas, spec, sample, measure)[0][4];
      CAPTURE(rate);
      CHECK(std::fabs(est.mean - expected) <= 3.0 * est.se + 1e-12);
    }
  }
}

TEST_CASE("zeta quadrature") {
  ModelParams p;
  auto path = make_path(10, 1.0);
  CHECK(zeta_integral(path, p) == 0.0);
  std::fill(path.w.begin() + 1, path.w.end(), 0.0);
  std::fill(path.z.begin() + 1, path.z.end(), 5.0);
  CHECK(zeta_integral(path, p) == 0.0);

  ModelParams q;
  q.epsilon = 1.0;
  q.sigma = 1.0;
  q.phi_a = 0.5;
  auto flat = make_path(10, 1.0);
  std::fill(flat.w.begin(), flat.w.end(), 1.0);
  std::fill(flat.z.begin(), flat.z.end(), 1.0);
  CHECK(zeta_integral(flat, q) == doctest::Approx(1.5));
}

TEST_CASE("mean of zeta under the reference measure") {
  ModelParams p;
  p.n_steps = 100;
  const std::size_t n = 40000;
  double s = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = zeta_integral(reference_path(p, 31, i), p);
    s += z;
    s2 += z * z;
  }
  const double mean = s / n, se = std::sqrt((s2 / n - mean * mean) / n);
  // Left-point sum of E[W_i^2] dt is T^2 (N - 1) / (2N).
  const double c = p.epsilon * p.epsilon * p.phi_a / (p.sigma * p.sigma);
  const double expected = c * p.horizon * p.horizon * 0.5 * (1.0 - 1.0 / p.n_steps);
  CHECK(std::fabs(mean - expected) <= 3.0 * se);
}

TEST_CASE("binary batch round-trip") {
  const ModelParams p = small_box();
  PathBatch batch = simulate_reference(p, 3, 6);
  attach_weights(batch, FeedbackPolicy::constant(0.3, -1, 1), p);
  std::stringstream buf;
  write_batch(buf, batch);
  const PathBatch back = read_batch(buf);
  REQUIRE(back.paths.size() == 3);
  REQUIRE(back.weights.size() == 3);
  CHECK(back.seed == batch.seed);
  CHECK(back.horizon == batch.horizon);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.paths[i].p == batch.paths[i].p);
    CHECK(back.paths[i].times == batch.paths[i].times);
    CHECK(back.weights[i].log_m == batch.weights[i].log_m);
  }
  std::stringstream junk("NOTABATCH");
  CHECK_THROWS(read_batch(junk));
}

}
