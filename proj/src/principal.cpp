#include "optfee/principal.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "json.hpp"
#include "optfee/girsanov.h"
#include "optfee/random.h"

namespace optfee {

namespace {
constexpr double kMinusInf = -std::numeric_limits<double>::infinity();
}

PrincipalUtilitySpec PrincipalUtilitySpec::from(const ModelParams& params) {
  return {params.phi_p, params.sigma, params.epsilon};
}

double PrincipalUtilitySpec::pathwise(double xi, std::span<const double> rates, double dt) const {
  double acc = 0.0;
  for (double r : rates) acc += r * r * dt;
  return xi - phi_p * acc;
}

double PrincipalUtilitySpec::reweighted(double xi, const PathWeight& weight) const {
  const double e2 = epsilon * epsilon;
  return weight.m * xi - 2.0 * e2 * phi_p * weight.m * weight.log_m +
         weight.m * (e2 * phi_p / (sigma * sigma)) * weight.w_sq_integral;
}

PrincipalEvaluation principal_objective(const Contract& contract, const ModelParams& params,
                                        const PrincipalOptions& options) {
  const BestResponse br = best_response(contract, params, options.agent);
  PrincipalEvaluation ev;
  ev.va = br.value;
  ev.va_se = br.se;
  ev.agent_converged = br.converged;
  ev.participates = ev.va >= params.reservation - 3.0 * ev.va_se;

  const PrincipalUtilitySpec spec = PrincipalUtilitySpec::from(params);
  const SampleSpec& s = options.sample;
  std::vector<double> values(s.count);
  parallel_for(s.count, s.threads, [&](std::size_t i) {
    std::vector<double> rates;
    const DiscretizedPath path = controlled_path(params, br.policy, s.seed, i, &rates);
    values[i] = spec.pathwise(evaluate(contract, path), rates, params.dt());
  });
  const Estimate e = mean_and_se(values);
  ev.jp = e.mean;
  ev.jp_se = e.se;
  return ev;
}

Estimate estimate_principal_value_reweighted(const Contract& contract, const FeedbackPolicy& policy,
                                             const ModelParams& params, const SampleSpec& sample) {
  const PrincipalUtilitySpec spec = PrincipalUtilitySpec::from(params);
  std::vector<double> values(sample.count);
  parallel_for(sample.count, sample.threads, [&](std::size_t i) {
    const DiscretizedPath path = reference_path(params, sample.seed, i);
    values[i] = spec.reweighted(evaluate(contract, path), girsanov_weight(path, policy, params));
  });
  return mean_and_se(values);
}

ConstantContract feasibility_seed(const ModelParams& params, const FamilySpec& family,
                                  const BestResponseOptions& options) {
  const BestResponse br = best_response(ConstantContract{0.0}, params, options);
  const double needed = br.value - params.reservation;
  if (std::fabs(needed) > family.cap)
    throw ModelError("feasibility seed: constant " + format_double(needed) + " needs cap K >= " +
                     format_double(std::fabs(needed)) + " (family cap is " + format_double(family.cap) + ")");
  return ConstantContract{needed, family.cap};
}

namespace {

class Search {
 public:
  Search(const FamilySpec& family, const ModelParams& params, const OptimizeOptions& options)
      : family_(family), params_(params), options_(options), dim_(family_dimension(family)) {}

  std::vector<double> project(const std::vector<double>& x) const {
    return family_coefficients(family_, make_family_contract(family_, x));
  }

  SequenceRecord evaluate_point(const std::vector<double>& raw, const char* stage) const {
    SequenceRecord rec;
    const Contract c = make_family_contract(family_, raw);
    rec.stage = stage;
    rec.coefficients = family_coefficients(family_, c);
    rec.eval = principal_objective(c, params_, options_.principal);
    rec.objective = rec.eval.participates ? rec.eval.jp : kMinusInf;
    rec.contract_record = serialize_contract(c);
    return rec;
  }

  void append(SequenceRecord rec, MaximizingSequence& seq) const {
    rec.iteration = seq.records.size();
    const double best = seq.incumbent ? seq.records[*seq.incumbent].objective : kMinusInf;
    rec.incumbent_update = rec.objective > best;
    if (rec.incumbent_update) seq.incumbent = rec.iteration;
    rec.incumbent_jp = std::max(best, rec.objective);
    seq.records.push_back(std::move(rec));
  }

  std::size_t dim() const { return dim_; }

 private:
  const FamilySpec& family_;
  const ModelParams& params_;
  const OptimizeOptions& options_;
  std::size_t dim_;
};

}  // namespace

OptimizeResult optimize(const FamilySpec& family, const ModelParams& params, const OptimizeOptions& options) {
  if (options.budget < 1) throw ModelError("optimize: budget must be at least 1");
  const Search search(family, params, options);
  const std::size_t d = search.dim();
  const double K = family.cap;
  OptimizeResult result;
  MaximizingSequence& seq = result.sequence;

  // Stage 1: Latin hypercube over [-K, K]^d.
  const std::size_t n_screen = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(options.screening_fraction * static_cast<double>(options.budget))), 1,
      options.budget);
  std::vector<std::vector<double>> design(n_screen, std::vector<double>(d));
  {
    CounterRng rng(derive_seed(options.seed, "lhs"), 0);
    for (std::size_t k = 0; k < d; ++k) {
      std::vector<std::size_t> perm(n_screen);
      std::iota(perm.begin(), perm.end(), 0);
      for (std::size_t i = n_screen; i-- > 1;) {
        const auto j = static_cast<std::size_t>(rng.uniform() * static_cast<double>(i + 1));
        std::swap(perm[i], perm[std::min(j, i)]);
      }
      for (std::size_t i = 0; i < n_screen; ++i) {
        const double u = (static_cast<double>(perm[i]) + rng.uniform()) / static_cast<double>(n_screen);
        design[i][k] = -K + 2.0 * K * u;
      }
    }
  }
  std::vector<SequenceRecord> screened(n_screen);
  OptimizeOptions inner_options = options;
  inner_options.principal.sample.threads = options.threads > 1 ? 1 : options.principal.sample.threads;
  const Search screen_search(family, params, inner_options);
  parallel_for(n_screen, options.threads,
               [&](std::size_t i) { screened[i] = screen_search.evaluate_point(design[i], "screen"); });
  for (auto& rec : screened) search.append(std::move(rec), seq);

  // Stage 2: Nelder-Mead (maximization) from the best screened point.
  std::size_t remaining = options.budget - n_screen;
  if (remaining > 0) {
    std::size_t start = 0;
    for (std::size_t i = 1; i < seq.records.size(); ++i)
      if (seq.records[i].objective > seq.records[start].objective) start = i;
    struct Vertex {
      std::vector<double> x;
      double f;
    };
    auto eval = [&](const std::vector<double>& x) -> double {
      SequenceRecord rec = search.evaluate_point(x, "refine");
      const double f = rec.objective;
      search.append(std::move(rec), seq);
      --remaining;
      return f;
    };
    std::vector<Vertex> simplex;
    simplex.push_back({seq.records[start].coefficients, seq.records[start].objective});
    const double step = 0.1 * 2.0 * K;
    for (std::size_t k = 0; k < d && remaining > 0; ++k) {
      std::vector<double> x = simplex[0].x;
      x[k] = x[k] + step <= K ? x[k] + step : x[k] - step;
      x = search.project(x);
      simplex.push_back({x, eval(x)});
    }
    auto centroid_of = [&](std::size_t skip) {
      std::vector<double> c(d, 0.0);
      for (std::size_t i = 0; i < simplex.size(); ++i) {
        if (i == skip) continue;
        for (std::size_t k = 0; k < d; ++k) c[k] += simplex[i].x[k] / static_cast<double>(simplex.size() - 1);
      }
      return c;
    };
    auto blend = [&](const std::vector<double>& a, const std::vector<double>& b, double t) {
      std::vector<double> out(d);
      for (std::size_t k = 0; k < d; ++k) out[k] = a[k] + t * (b[k] - a[k]);
      return search.project(out);
    };
    while (remaining > 0 && simplex.size() == d + 1) {
      std::stable_sort(simplex.begin(), simplex.end(), [](const Vertex& a, const Vertex& b) { return a.f > b.f; });
      const std::size_t worst = d;
      const auto c = centroid_of(worst);
      const auto xr = blend(c, simplex[worst].x, -1.0);
      const double fr = eval(xr);
      if (fr > simplex[0].f && remaining > 0) {
        const auto xe = blend(c, simplex[worst].x, -2.0);
        const double fe = eval(xe);
        simplex[worst] = fe > fr ? Vertex{xe, fe} : Vertex{xr, fr};
      } else if (fr > simplex[worst - 1].f) {
        simplex[worst] = {xr, fr};
      } else if (remaining > 0) {
        const bool outside = fr > simplex[worst].f;
        const auto xc = outside ? blend(c, xr, 0.5) : blend(c, simplex[worst].x, 0.5);
        const double fc = eval(xc);
        if (outside ? fc >= fr : fc > simplex[worst].f) {
          simplex[worst] = {xc, fc};
        } else {
          for (std::size_t i = 1; i < simplex.size() && remaining > 0; ++i) {
            simplex[i].x = blend(simplex[0].x, simplex[i].x, 0.5);
            simplex[i].f = eval(simplex[i].x);
          }
        }
      }
    }
  }

  if (!seq.has_incumbent()) {
    std::string seed_note;
    try {
      const auto seed = feasibility_seed(params, family, options.principal.agent);
      seed_note = "feasibility seed is Constant(" + format_double(seed.value) + ")";
    } catch (const ModelError& e) {
      seed_note = e.what();
    }
    throw ModelError("optimize: no contract satisfied participation within the budget; " + seed_note);
  }
  result.best = deserialize_contract(seq.records[*seq.incumbent].contract_record);
  return result;
}

ConvergenceReport convergence_report(const MaximizingSequence& sequence, double cap) {
  if (sequence.records.empty()) throw ModelError("convergence_report: empty sequence");
  ConvergenceReport rep;
  std::vector<const SequenceRecord*> incumbents;
  for (const auto& r : sequence.records) {
    if (r.incumbent_update) incumbents.push_back(&r);
    for (double v : r.coefficients)
      if (std::fabs(v) > cap * (1.0 + 1e-12)) rep.in_box = false;
  }
  rep.incumbent_updates = incumbents.size();
  for (std::size_t i = 1; i < incumbents.size(); ++i)
    rep.jp_increments.push_back(incumbents[i]->objective - incumbents[i - 1]->objective);
  if (!incumbents.empty()) {
    const std::size_t tail = std::max<std::size_t>(1, incumbents.size() / 4);
    for (std::size_t i = incumbents.size() - tail; i < incumbents.size(); ++i)
      for (std::size_t j = i + 1; j < incumbents.size(); ++j) {
        double dist = 0.0;
        for (std::size_t k = 0; k < incumbents[i]->coefficients.size(); ++k)
          dist = std::max(dist, std::fabs(incumbents[i]->coefficients[k] - incumbents[j]->coefficients[k]));
        rep.cauchy_tail = std::max(rep.cauchy_tail, dist);
      }
    rep.limit_point = incumbents.back()->coefficients;
    rep.limit_jp = incumbents.back()->objective;
  } else {
    rep.limit_point = sequence.records.back().coefficients;
    rep.limit_jp = kMinusInf;
  }
  return rep;
}

namespace {
std::string csv_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return format_double(v);
}
}  // namespace

void write_sequence_csv(std::ostream& out, const MaximizingSequence& sequence) {
  const std::size_t d = sequence.records.empty() ? 0 : sequence.records.front().coefficients.size();
  out << "iteration,stage";
  for (std::size_t k = 0; k < d; ++k) out << ",c" << k;
  out << ",jp,jp_se,va,va_se,participates,objective,incumbent_jp,incumbent_update\n";
  for (const auto& r : sequence.records) {
    out << r.iteration << ',' << r.stage;
    for (double v : r.coefficients) out << ',' << csv_number(v);
    out << ',' << csv_number(r.eval.jp) << ',' << csv_number(r.eval.jp_se) << ',' << csv_number(r.eval.va) << ','
        << csv_number(r.eval.va_se) << ',' << (r.eval.participates ? 1 : 0) << ',' << csv_number(r.objective) << ','
        << csv_number(r.incumbent_jp) << ',' << (r.incumbent_update ? 1 : 0) << '\n';
  }
}

void write_sequence_csv(std::ostream& out, const MaximizingSequence& sequence, const ConvergenceReport& report) {
  write_sequence_csv(out, sequence);
  PrincipalEvaluation eval;
  if (sequence.incumbent) eval = sequence.records[*sequence.incumbent].eval;
  out << sequence.records.size() << ",limit";
  for (double v : report.limit_point) out << ',' << csv_number(v);
  out << ',' << csv_number(report.limit_jp) << ',' << csv_number(eval.jp_se) << ',' << csv_number(eval.va) << ','
      << csv_number(eval.va_se) << ',' << (eval.participates ? 1 : 0) << ',' << csv_number(report.limit_jp) << ','
      << csv_number(report.limit_jp) << ",0\n";
}

std::string sequence_to_json(const MaximizingSequence& sequence) {
  using nlohmann::json;
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  json records = json::array();
  for (const auto& r : sequence.records) {
    records.push_back({{"iteration", r.iteration},
                       {"stage", r.stage},
                       {"coefficients", r.coefficients},
                       {"jp", num(r.eval.jp)},
                       {"jp_se", num(r.eval.jp_se)},
                       {"va", num(r.eval.va)},
                       {"va_se", num(r.eval.va_se)},
                       {"participates", r.eval.participates},
                       {"objective", num(r.objective)},
                       {"incumbent_jp", num(r.incumbent_jp)},
                       {"incumbent_update", r.incumbent_update},
                       {"contract", json::parse(r.contract_record)}});
  }
  json j = {{"records", records},
            {"incumbent", sequence.incumbent ? json(*sequence.incumbent) : json(nullptr)}};
  return j.dump(1);
}

}  // namespace optfee
