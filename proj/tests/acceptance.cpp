// Acceptance driver: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "optfee/experiment.h"
#include "optfee/principal.h"
#include "optfee/random.h"
#include "optfee/verify.h"

using namespace optfee;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> lines;

  void add(const CheckResult& c) {
    pass = pass && c.pass;
    lines.push_back(format_check(c));
  }
  void add(bool ok, const std::string& text) {
    pass = pass && ok;
    lines.push_back(std::string(ok ? "ok   " : "FAIL ") + text);
  }
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

void runtime(Outcome& out, const std::string& what, double seconds, double limit) {
  out.add(seconds < limit, what + " runtime " + fmt(seconds) + " s (limit " + fmt(limit) + " s)");
}

struct Settings {
  int threads = 4;
  fs::path workdir = "acceptance_runs";
  std::uint64_t seed = ModelParams{}.seed;
};

// Weight-based checks run on a unit rate box; see README.
ModelParams weight_model() {
  ModelParams p;
  p.rate_lower = -1.0;
  p.rate_upper = 1.0;
  return p;
}

ModelParams agent_model() {
  ModelParams p;
  p.sigma = 1.0;
  p.epsilon = 0.5;
  p.phi_a = 0.5;
  p.horizon = 1.0;
  p.rate_lower = -100.0;
  p.rate_upper = 100.0;
  return p;
}

HjbOptions agent_grid(int threads) {
  HjbOptions o;
  o.n_signal = 200;
  o.n_inventory = 200;
  o.threads = threads;
  return o;
}

Outcome girsanov_normalization(const Settings& s) {
  Outcome out;
  const ModelParams p = weight_model();
  for (const auto& np : standard_policies(p)) {
    Stopwatch sw;
    out.add(check_girsanov_normalization(p, np, {100000, derive_seed(s.seed, "verify-girsanov-" + np.first), s.threads}));
    runtime(out, np.first, sw.seconds(), 30.0);
  }
  return out;
}

Outcome entropy_identity(const Settings& s) {
  Outcome out;
  const ModelParams p = weight_model();
  for (const auto& c : check_entropy_reduced(2.0, 1.0, 250, {100000, derive_seed(s.seed, "verify-entropy-reduced"), s.threads}))
    out.add(c);
  for (const auto& np : standard_policies(p))
    out.add(check_entropy_full(p, np, {100000, derive_seed(s.seed, "verify-entropy-" + np.first), s.threads}));
  return out;
}

struct AgentRun {
  HjbSolution solution;
  double seconds = 0.0;
};

const AgentRun& agent_solution(const Settings& s) {
  static const AgentRun run = [&] {
    Stopwatch sw;
    HjbSolution sol = solve_hjb(ConstantContract{0.0}, agent_model(), agent_grid(s.threads));
    return AgentRun{std::move(sol), sw.seconds()};
  }();
  return run;
}

Outcome agent_closed_form(const Settings& s) {
  Outcome out;
  const auto& run = agent_solution(s);
  for (const auto& c : check_agent_closed_form(agent_model(), run.solution, 0.02, 0.01)) out.add(c);
  runtime(out, "200x200 HJB", run.seconds, 60.0);
  return out;
}

Outcome agent_monte_carlo(const Settings& s) {
  Outcome out;
  const auto& run = agent_solution(s);
  out.add(check_agent_monte_carlo(ConstantContract{0.0}, agent_model(), run.solution,
                                  {100000, derive_seed(s.seed, "verify-agent-mc"), s.threads}, 0.01, 3.0));
  return out;
}

Outcome principal_constant(const Settings& s) {
  Outcome out;
  ModelParams p = agent_model();
  p.phi_p = 0.25;
  p.reservation = 0.0;
  FamilySpec family;
  family.kind = FamilySpec::Kind::constant;
  family.cap = 1.0;
  OptimizeOptions o;
  o.budget = 50;
  o.seed = s.seed;
  o.threads = s.threads;
  o.principal.agent.hjb = agent_grid(s.threads);
  o.principal.sample = {100000, derive_seed(s.seed, "principal"), s.threads};
  Stopwatch sw;
  const auto result = optimize(family, p, o);
  const double seconds = sw.seconds();
  const auto& best = result.sequence.records[*result.sequence.incumbent];
  const double fee = best.coefficients[0];
  const double fee_rel = std::fabs(fee - 1.0 / 24.0) * 24.0;
  const double jp_rel = std::fabs(best.eval.jp - 1.0 / 48.0) * 48.0;
  out.add(fee_rel <= 0.02, "incumbent fee " + fmt(fee) + " vs 1/24, relative error " + fmt(fee_rel));
  out.add(jp_rel <= 0.02, "J_p " + fmt(best.eval.jp) + " +- " + fmt(best.eval.jp_se) + " vs 1/48, relative error " +
                              fmt(jp_rel));
  out.add(result.sequence.records.size() == 50, "evaluations " + std::to_string(result.sequence.records.size()));
  runtime(out, "optimize", seconds, 600.0);
  return out;
}

Outcome gibbs(const Settings&) {
  Outcome out;
  out.add(check_gibbs(1e-8));
  return out;
}

std::vector<CheckResult> oracle_suite(const Settings& s, double& seconds) {
  static std::vector<CheckResult> cached;
  static double cached_seconds = 0.0;
  if (cached.empty()) {
    OracleSuiteSettings os;
    os.instances = 100;
    os.max_depth = 2;
    os.branching = 2;
    os.trials = 100;
    os.seed = derive_seed(s.seed, "verify-oracle");
    os.tol = 1e-8;
    Stopwatch sw;
    cached = check_oracle_suite(os);
    cached_seconds = sw.seconds();
  }
  seconds = cached_seconds;
  return cached;
}

Outcome strong_relaxed_equality(const Settings& s) {
  Outcome out;
  double seconds = 0.0;
  const auto checks = oracle_suite(s, seconds);
  out.add(checks[0]);
  out.add(checks[1]);
  runtime(out, "oracle suite", seconds, 300.0);
  return out;
}

Outcome extraction(const Settings& s) {
  Outcome out;
  double seconds = 0.0;
  out.add(oracle_suite(s, seconds)[2]);
  return out;
}

Outcome rate_moments(const Settings& s) {
  Outcome out;
  const ModelParams p = weight_model();
  const SampleSpec sample{20000, derive_seed(s.seed, "verify-rate-moments"), s.threads};
  for (const auto& np : standard_policies(p)) out.add(check_rate_moments(p, np, sample, false));
  const double beyond = p.rate_upper + 1.0;
  out.add(check_rate_moments(p, {"upper_plus_one", FeedbackPolicy::constant(beyond, p.rate_lower, beyond)}, sample, true));
  return out;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism(const Settings& s) {
  Outcome out;
  const char* configs[] = {
      "run.mode = simulate\nmodel.rate_lower = -1\nmodel.rate_upper = 1\nmodel.n_paths = 5000\n"
      "run.dump_paths = 3\n",
      "run.mode = agent\nmodel.rate_lower = -2\nmodel.rate_upper = 2\nmodel.n_paths = 2000\n"
      "run.hjb_signal = 61\nrun.hjb_inventory = 61\n",
      "run.mode = oracle\noracle.instances = 10\noracle.trials = 20\n",
      "run.mode = optimize\nmodel.rate_lower = -2\nmodel.rate_upper = 2\nmodel.phi_p = 0.25\n"
      "family.class = constant\nfamily.cap = 0.1\nrun.budget = 6\nrun.jp_paths = 2000\n"
      "run.hjb_signal = 61\nrun.hjb_inventory = 61\n",
      "run.mode = report\nmodel.n_paths = 2000\nfamily.class = polynomial\nfamily.degree = 1\n"};
  for (const char* text : configs) {
    ExperimentConfig c = parse_config(text);
    c.run.threads = 1;
    const std::string mode = to_string(c.run.mode);
    std::vector<RunOutcome> runs;
    for (const char* leg : {"first", "second"}) {
      c.run.output_dir = (s.workdir / (mode + "_" + leg)).string();
      fs::remove_all(c.run.output_dir);
      std::ostringstream log;
      runs.push_back(run_experiment(c, log));
    }
    std::size_t csv = 0;
    bool same = runs[0].files == runs[1].files;
    for (const auto& f : runs[0].files) {
      if (fs::path(f).extension() != ".csv") continue;
      ++csv;
      same = same && slurp(runs[0].directory / f) == slurp(runs[1].directory / f);
    }
    out.add(same && csv > 0, mode + ": " + std::to_string(csv) + " CSV files identical across two runs");
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"optfee acceptance criteria"};
  Settings settings;
  std::set<int> only;
  std::string workdir = settings.workdir.string();
  app.add_option("--threads,-j", settings.threads, "worker threads");
  app.add_option("--workdir", workdir, "scratch directory for the determinism runs");
  app.add_option("--only", only, "criteria to run (default: all)")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);
  settings.workdir = workdir;
  fs::create_directories(settings.workdir);

  const std::vector<std::pair<std::string, std::function<Outcome(const Settings&)>>> criteria = {
      {"Girsanov normalization", girsanov_normalization},
      {"entropy identity", entropy_identity},
      {"agent closed form", agent_closed_form},
      {"Monte Carlo / HJB agreement", agent_monte_carlo},
      {"principal constant-contract optimum", principal_constant},
      {"Gibbs two-atom oracle", gibbs},
      {"strong / relaxed equality", strong_relaxed_equality},
      {"extraction admissibility", extraction},
      {"rate-constraint moments", rate_moments},
      {"determinism", determinism},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    Stopwatch sw;
    try {
      o = criteria[i].second(settings);
    } catch (const std::exception& e) {
      o.pass = false;
      o.lines.push_back(std::string("exception: ") + e.what());
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << criteria[i].first << " ("
              << fmt(sw.seconds()) << " s)\n";
    for (const auto& line : o.lines) std::cout << "    " << line << '\n';
    std::cout.flush();
    if (!o.pass) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
