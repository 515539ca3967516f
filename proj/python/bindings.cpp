#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <limits>

#include "optfee/agent.h"
#include "optfee/contracts.h"
#include "optfee/core_model.h"
#include "optfee/girsanov.h"
#include "optfee/oracle.h"
#include "optfee/principal.h"
#include "optfee/random.h"
#include "optfee/verify.h"

namespace py = pybind11;
using namespace optfee;

namespace {

py::array_t<double> to_array(const std::vector<double>& v) { return py::array_t<double>(v.size(), v.data()); }

py::dict path_dict(const DiscretizedPath& path) {
  py::dict d;
  d["t"] = to_array(path.times);
  d["p"] = to_array(path.p);
  d["z"] = to_array(path.z);
  d["w"] = to_array(path.w);
  return d;
}

FeedbackPolicy constant_policy(double rate, const ModelParams& p) {
  return FeedbackPolicy::constant(rate, std::min(rate, p.rate_lower), std::max(rate, p.rate_upper));
}

}  // namespace

PYBIND11_MODULE(_optfee, m) {
  m.doc() = "Brokerage-fee principal-agent solver";

  py::register_exception<ModelError>(m, "ModelError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  py::class_<ModelParams>(m, "ModelParams")
      .def(py::init<>())
      .def_readwrite("sigma", &ModelParams::sigma)
      .def_readwrite("epsilon", &ModelParams::epsilon)
      .def_readwrite("phi_a", &ModelParams::phi_a)
      .def_readwrite("phi_p", &ModelParams::phi_p)
      .def_readwrite("rate_lower", &ModelParams::rate_lower)
      .def_readwrite("rate_upper", &ModelParams::rate_upper)
      .def_readwrite("horizon", &ModelParams::horizon)
      .def_readwrite("reservation", &ModelParams::reservation)
      .def_readwrite("n_steps", &ModelParams::n_steps)
      .def_readwrite("n_paths", &ModelParams::n_paths)
      .def_readwrite("seed", &ModelParams::seed)
      .def("dt", &ModelParams::dt)
      .def("__eq__", [](const ModelParams& a, const ModelParams& b) { return a == b; })
      .def("to_text", [](const ModelParams& p) { return params_to_text(p); })
      .def_static("from_text", [](const std::string& text) { return params_from_text(text); });

  m.def("validate_params", &validate_params, py::arg("params"));

  py::class_<Estimate>(m, "Estimate")
      .def_readonly("mean", &Estimate::mean)
      .def_readonly("se", &Estimate::se)
      .def("__repr__", [](const Estimate& e) {
        return "Estimate(mean=" + std::to_string(e.mean) + ", se=" + std::to_string(e.se) + ")";
      });

  // Contracts travel as their JSON text.
  m.def("constant_contract", [](double value, double cap) { return serialize_contract(ConstantContract{value, cap}); },
        py::arg("value"), py::arg("cap") = std::numeric_limits<double>::infinity());
  m.def(
      "polynomial_contract",
      [](int degree, std::vector<double> coefficients, double cap, const std::string& op) {
        PolynomialContract c{degree, std::move(coefficients), cap, path_operator_from_string(op)};
        check_contract(c);
        return serialize_contract(c);
      },
      py::arg("degree"), py::arg("coefficients"), py::arg("cap") = 1.0, py::arg("op") = "terminal");
  m.def("check_contract", [](const std::string& json) { check_contract(deserialize_contract(json)); });
  m.def("project_to_box", [](const std::string& json) { return serialize_contract(project_to_box(deserialize_contract(json))); });
  m.def(
      "evaluate_contract",
      [](const std::string& json, double p_stat, double z_stat) {
        return evaluate_statistics(deserialize_contract(json), p_stat, z_stat);
      },
      py::arg("contract"), py::arg("p_stat"), py::arg("z_stat"));

  m.def(
      "reference_path",
      [](const ModelParams& p, std::uint64_t seed, std::size_t index) { return path_dict(reference_path(p, seed, index)); },
      py::arg("params"), py::arg("seed"), py::arg("index"));
  m.def(
      "constant_rate_path",
      [](const ModelParams& p, double rate, std::uint64_t seed, std::size_t index) {
        return path_dict(controlled_path(p, constant_policy(rate, p), seed, index));
      },
      py::arg("params"), py::arg("rate"), py::arg("seed"), py::arg("index"));

  m.def(
      "weight_mean",
      [](const ModelParams& p, double rate, std::size_t count, std::uint64_t seed, int threads) {
        return weight_mean(reference_weights(p, constant_policy(rate, p), {count, seed, threads}));
      },
      py::arg("params"), py::arg("rate"), py::arg("count"), py::arg("seed") = 1, py::arg("threads") = 1,
      "Monte Carlo mean of the Girsanov density of a constant-rate policy over reference paths.");
  m.def(
      "entropy_identity",
      [](const ModelParams& p, double rate, std::size_t count, std::uint64_t seed) {
        const auto rep = entropy_report(reference_weights(p, constant_policy(rate, p), {count, seed, 1}));
        return py::make_tuple(rep.lhs, rep.rhs, rep.combined_se);
      },
      py::arg("params"), py::arg("rate"), py::arg("count"), py::arg("seed") = 1,
      "(E[m log m], E[m int |drift|^2] / 2, combined SE).");
  m.def(
      "reduced_entropy_identity",
      [](double drift, double horizon, std::size_t n_steps, std::size_t count, std::uint64_t seed) {
        const auto rep = entropy_report(reduced::constant_drift_weights(drift, horizon, n_steps, {count, seed, 1}));
        return py::make_tuple(rep.lhs, rep.rhs, rep.combined_se);
      },
      py::arg("drift"), py::arg("horizon"), py::arg("n_steps"), py::arg("count"), py::arg("seed") = 1);

  py::class_<HjbSolution>(m, "HjbSolution")
      .def_readonly("value", &HjbSolution::value)
      .def_readonly("n_time", &HjbSolution::n_time)
      .def_readonly("dt", &HjbSolution::dt)
      .def("rate", [](const HjbSolution& s, double t, double w, double z, double stat) { return s.policy.rate(t, w, z, stat); },
           py::arg("t"), py::arg("w"), py::arg("z"), py::arg("stat") = 0.0)
      .def("value_at", [](const HjbSolution& s, double t, double w, double z, double stat) { return s.grid.value(t, w, z, stat); },
           py::arg("t"), py::arg("w"), py::arg("z"), py::arg("stat") = 0.0)
      .def("agent_value_mc",
           [](const HjbSolution& s, const std::string& contract, const ModelParams& p, std::size_t count, std::uint64_t seed) {
             return estimate_agent_value(deserialize_contract(contract), s.policy, p, {count, seed, 1});
           },
           py::arg("contract"), py::arg("params"), py::arg("count"), py::arg("seed") = 1);

  m.def(
      "solve_hjb",
      [](const std::string& contract, const ModelParams& p, std::size_t n_signal, std::size_t n_inventory) {
        HjbOptions o;
        o.n_signal = n_signal;
        o.n_inventory = n_inventory;
        return solve_hjb(deserialize_contract(contract), p, o);
      },
      py::arg("contract"), py::arg("params"), py::arg("n_signal") = 0, py::arg("n_inventory") = 0);

  m.def(
      "principal_objective",
      [](const std::string& contract, const ModelParams& p, std::size_t count, std::uint64_t seed) {
        PrincipalOptions o;
        o.sample = {count, seed, 1};
        const auto e = principal_objective(deserialize_contract(contract), p, o);
        py::dict d;
        d["jp"] = e.jp;
        d["jp_se"] = e.jp_se;
        d["va"] = e.va;
        d["va_se"] = e.va_se;
        d["participates"] = e.participates;
        return d;
      },
      py::arg("contract"), py::arg("params"), py::arg("count") = 10000, py::arg("seed") = 11);

  m.def(
      "optimize_constants",
      [](const ModelParams& p, double cap, std::size_t budget, std::size_t count, std::uint64_t seed) {
        FamilySpec f;
        f.kind = FamilySpec::Kind::constant;
        f.cap = cap;
        OptimizeOptions o;
        o.budget = budget;
        o.seed = seed;
        o.principal.sample = {count, derive_seed(seed, "principal"), 1};
        const auto r = optimize(f, p, o);
        const auto rep = convergence_report(r.sequence, cap);
        const auto& best = r.sequence.records[*r.sequence.incumbent];
        py::dict d;
        d["fee"] = best.coefficients.front();
        d["jp"] = best.eval.jp;
        d["jp_se"] = best.eval.jp_se;
        d["evaluations"] = r.sequence.records.size();
        d["limit_point"] = rep.limit_point;
        return d;
      },
      py::arg("params"), py::arg("cap"), py::arg("budget") = 50, py::arg("count") = 10000, py::arg("seed") = 1);

  m.def(
      "solve_strong",
      [](std::vector<double> p, std::vector<double> u, double lambda) {
        const auto s = solve_strong_discrete(p, u, lambda);
        return py::make_tuple(s.value, to_array(s.m));
      },
      py::arg("p"), py::arg("u"), py::arg("lambda_"),
      "Unconstrained strong problem: (value, density).");
  m.def(
      "solve_relaxed",
      [](std::vector<double> p, std::vector<double> u, double lambda) {
        const auto s = solve_strong_discrete(p, u, lambda);
        const auto r = solve_relaxed_discrete(p, u, lambda, atom_grids(density_grid(), s.m));
        return py::make_tuple(r.value, r.control.off_mode_mass());
      },
      py::arg("p"), py::arg("u"), py::arg("lambda_"),
      "Relaxed LP on the default grid plus the strong optimum: (value, off-mode mass).");
  m.def(
      "oracle_case",
      [](std::uint64_t seed, std::size_t index, bool constrained, std::size_t trials) {
        const auto c = random_oracle_case(seed, index, 2, 2, constrained);
        const auto r = check_oracle_case(c, trials, seed + index);
        py::dict d;
        d["atoms"] = r.atoms;
        d["forms"] = r.forms;
        d["strong"] = r.strong;
        d["relaxed"] = r.relaxed;
        d["counterexamples"] = r.counterexamples;
        d["relaxed_dirac"] = r.relaxed_dirac;
        d["extraction_violation"] = r.extraction_violation;
        return d;
      },
      py::arg("seed"), py::arg("index"), py::arg("constrained") = false, py::arg("trials") = 20);

  m.def("two_atom_grid_oracle", &two_atom_grid_oracle, py::arg("p1"), py::arg("u1"), py::arg("u2"), py::arg("lambda_"),
        py::arg("points"));
}
