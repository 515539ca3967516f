#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "optfee/principal.h"

using namespace optfee;

namespace {

ModelParams model() {
  ModelParams p;
  p.rate_lower = -5.0;
  p.rate_upper = 5.0;
  p.n_steps = 100;
  p.phi_p = 0.25;
  return p;
}

PrincipalOptions fast_options(std::size_t paths = 20000) {
  PrincipalOptions o;
  o.agent.hjb.n_signal = 81;
  o.agent.hjb.n_inventory = 81;
  o.agent.hjb.threads = 2;
  o.sample = {paths, 11, 2};
  return o;
}

FamilySpec constants(double cap) {
  FamilySpec f;
  f.kind = FamilySpec::Kind::constant;
  f.cap = cap;
  return f;
}

SequenceRecord record(std::vector<double> x, double objective) {
  SequenceRecord r;
  r.coefficients = std::move(x);
  r.objective = objective;
  r.eval.jp = objective;
  r.eval.participates = std::isfinite(objective);
  r.contract_record = serialize_contract(ConstantContract{r.coefficients[0]});
  return r;
}

// Appends with the same incumbent bookkeeping as the optimizer.
void push(MaximizingSequence& seq, SequenceRecord r) {
  r.iteration = seq.records.size();
  const double best = seq.incumbent ? seq.records[*seq.incumbent].objective : -INFINITY;
  r.incumbent_update = r.objective > best;
  if (r.incumbent_update) seq.incumbent = r.iteration;
  r.incumbent_jp = std::max(best, r.objective);
  seq.records.push_back(std::move(r));
}

}  // namespace

TEST_SUITE("principal") {

TEST_CASE("pathwise principal utility") {
  PrincipalUtilitySpec spec{0.25, 1.0, 0.5};
  const std::vector<double> rates{1.0, 2.0};
  CHECK(spec.pathwise(1.0, rates, 0.5) == doctest::Approx(1.0 - 0.25 * 2.5));
}

TEST_CASE("constant fee: agent value and principal objective") {
  const ModelParams p = model();
  const double c = 0.01;
  const auto ev = principal_objective(ConstantContract{c}, p, fast_options());
  CHECK(ev.va == doctest::Approx(-c + 1.0 / 24.0).epsilon(0.05));
  CHECK(std::fabs(ev.jp - (c - 1.0 / 48.0)) <= std::max(3.0 * ev.jp_se, 0.02 / 48.0));
  CHECK(ev.participates);
  CHECK_FALSE(principal_objective(ConstantContract{0.1}, p, fast_options(100)).participates);
}

TEST_CASE("no penalty: the principal keeps the fee") {
  ModelParams p = model();
  p.phi_p = 0.0;
  const auto ev = principal_objective(ConstantContract{0.03}, p, fast_options(500));
  CHECK(ev.jp == doctest::Approx(0.03).epsilon(1e-12));
  CHECK(ev.jp_se == doctest::Approx(0.0).scale(1.0));
}

TEST_CASE("feasibility seed") {
  ModelParams p = model();
  const auto o = fast_options().agent;
  CHECK(feasibility_seed(p, constants(1.0), o).value == doctest::Approx(1.0 / 24.0).epsilon(0.05));
  const double v = best_response(ConstantContract{0.0}, p, o).value;
  p.reservation = v;
  CHECK(std::fabs(feasibility_seed(p, constants(1.0), o).value) <= 1e-12);
  ModelParams frozen = model();
  frozen.rate_lower = frozen.rate_upper = 0.0;
  frozen.reservation = 0.2;
  CHECK(feasibility_seed(frozen, constants(1.0), o).value == doctest::Approx(-0.2).epsilon(1e-3));
  CHECK_THROWS_WITH_AS(feasibility_seed(frozen, constants(0.1), o), doctest::Contains("cap"), ModelError);
}

TEST_CASE("optimizer bookkeeping") {
  const ModelParams p = model();
  OptimizeOptions o;
  o.principal = fast_options(2000);
  o.budget = 1;
  const auto single = optimize(constants(0.03), p, o);
  CHECK(single.sequence.records.size() == 1);
  const auto rep1 = convergence_report(single.sequence, 0.03);
  CHECK(rep1.limit_point == single.sequence.records[0].coefficients);

  o.budget = 8;
  const auto run = optimize(constants(0.1), p, o);
  CHECK(run.sequence.records.size() == 8);
  double prev = -INFINITY;
  for (const auto& r : run.sequence.records) {
    CHECK(r.incumbent_jp >= prev);
    prev = r.incumbent_jp;
    CHECK(std::fabs(r.coefficients[0]) <= 0.1);
  }
  REQUIRE(run.sequence.has_incumbent());
  CHECK(std::get<ConstantContract>(run.best).value == run.sequence.records[*run.sequence.incumbent].coefficients[0]);
}

TEST_CASE("optimizer reports infeasibility with the seed") {
  ModelParams p = model();
  p.reservation = 5.0;
  OptimizeOptions o;
  o.principal = fast_options(200);
  o.budget = 3;
  CHECK_THROWS_WITH_AS(optimize(constants(0.5), p, o), doctest::Contains("feasibility seed"), ModelError);
}

TEST_CASE("convergence report on hand-built sequences") {
  MaximizingSequence stationary;
  for (int k = 0; k < 6; ++k) push(stationary, record({0.4, -0.2}, 1.0 + k));
  const auto rep = convergence_report(stationary, 1.0);
  CHECK(rep.cauchy_tail == 0.0);
  CHECK(rep.incumbent_updates == 6);
  CHECK(rep.in_box);

  MaximizingSequence corner;
  for (int k = 0; k < 5; ++k) push(corner, record({1.0 - std::pow(0.5, k + 3), 1.0}, k));
  push(corner, record({1.0, 1.0}, 10.0));
  push(corner, record({0.0, 0.0}, 3.0));
  const auto c = convergence_report(corner, 1.0);
  CHECK(c.limit_point == std::vector<double>{1.0, 1.0});
  CHECK(c.limit_jp == 10.0);
  for (double inc : c.jp_increments) CHECK(inc >= 0.0);

  MaximizingSequence outside;
  push(outside, record({2.0}, 1.0));
  CHECK_FALSE(convergence_report(outside, 1.0).in_box);
  CHECK_THROWS_AS(convergence_report(MaximizingSequence{}, 1.0), ModelError);
}

TEST_CASE("sequence CSV closes with the limit point") {
  MaximizingSequence seq;
  push(seq, record({0.25}, 0.5));
  push(seq, record({0.75}, -INFINITY));
  push(seq, record({0.125}, 0.75));
  const auto rep = convergence_report(seq, 1.0);
  std::ostringstream out;
  write_sequence_csv(out, seq, rep);
  std::istringstream in(out.str());
  std::string line, last;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    last = line;
    ++rows;
  }
  CHECK(rows == 5);
  CHECK(last.rfind("3,limit,0.125,0.75,", 0) == 0);
  CHECK(out.str().find("-inf") != std::string::npos);
  const std::string json = sequence_to_json(seq);
  CHECK(json.find("\"incumbent\": 2") != std::string::npos);
}

}
