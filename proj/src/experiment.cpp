#include "optfee/experiment.h"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "optfee/agent.h"
#include "optfee/girsanov.h"
#include "optfee/oracle.h"
#include "optfee/principal.h"
#include "optfee/random.h"
#include "optfee/verify.h"

namespace optfee {

namespace {

constexpr RunMode kModes[] = {RunMode::simulate, RunMode::agent,  RunMode::oracle,
                              RunMode::optimize, RunMode::verify, RunMode::report};

std::string line_of(const KvEntry& e) { return "line " + std::to_string(e.line); }

std::size_t as_size(const KvEntry& e, const std::string& key) { return static_cast<std::size_t>(kv_uint(e, key)); }

void read_run(const std::string& key, const KvEntry& e, RunSettings& r) {
  if (key == "mode") r.mode = run_mode_from_string(e.value);
  else if (key == "budget") r.budget = as_size(e, "run.budget");
  else if (key == "out") r.output_dir = e.value;
  else if (key == "threads") r.threads = static_cast<int>(kv_int(e, "run.threads"));
  else if (key == "screening_fraction") r.screening_fraction = kv_double(e, "run.screening_fraction");
  else if (key == "jp_paths") r.jp_paths = as_size(e, "run.jp_paths");
  else if (key == "agent_paths") r.agent_paths = as_size(e, "run.agent_paths");
  else if (key == "dump_paths") r.dump_paths = as_size(e, "run.dump_paths");
  else if (key == "binary_dump") r.binary_dump = kv_bool(e, "run.binary_dump");
  else if (key == "grid_stride") r.grid_stride = as_size(e, "run.grid_stride");
  else if (key == "policy") r.policy = e.value;
  else if (key == "hjb_signal") r.hjb_signal = as_size(e, "run.hjb_signal");
  else if (key == "hjb_inventory") r.hjb_inventory = as_size(e, "run.hjb_inventory");
  else if (key == "hjb_stat") r.hjb_stat = as_size(e, "run.hjb_stat");
  else throw ConfigError(line_of(e) + ": unknown key 'run." + key + "'");
}

void read_oracle(const std::string& key, const KvEntry& e, OracleSettings& o) {
  if (key == "instances") o.instances = as_size(e, "oracle.instances");
  else if (key == "max_depth") o.max_depth = as_size(e, "oracle.max_depth");
  else if (key == "branching") o.branching = as_size(e, "oracle.branching");
  else if (key == "trials") o.trials = as_size(e, "oracle.trials");
  else throw ConfigError(line_of(e) + ": unknown key 'oracle." + key + "'");
}

void read_verify(const std::string& key, const KvEntry& e, VerifySettings& v) {
  if (key == "paths") v.paths = as_size(e, "verify.paths");
  else if (key == "moment_paths") v.moment_paths = as_size(e, "verify.moment_paths");
  else if (key == "rate_bound") v.rate_bound = kv_double(e, "verify.rate_bound");
  else if (key == "oracle_instances") v.oracle_instances = as_size(e, "verify.oracle_instances");
  else throw ConfigError(line_of(e) + ": unknown key 'verify." + key + "'");
}

const std::vector<std::string> kPolicies = {"lower", "zero", "upper", "closed_form", "best_response"};

}  // namespace

const char* to_string(RunMode mode) {
  switch (mode) {
    case RunMode::simulate: return "simulate";
    case RunMode::agent: return "agent";
    case RunMode::oracle: return "oracle";
    case RunMode::optimize: return "optimize";
    case RunMode::verify: return "verify";
    case RunMode::report: return "report";
  }
  return "?";
}

RunMode run_mode_from_string(std::string_view name) {
  for (RunMode m : kModes)
    if (name == to_string(m)) return m;
  throw ConfigError("unknown mode '" + std::string(name) +
                    "' (expected simulate, agent, oracle, optimize, verify or report)");
}

ExperimentConfig parse_config(std::string_view text) {
  const KeyValues kv = parse_key_values(text);
  ExperimentConfig c;
  c.model = params_from_kv(kv, "model.");
  c.family = family_from_kv(kv, "family.");
  for (const auto& [key, entry] : kv) {
    const auto dot = key.find('.');
    const std::string section = dot == std::string::npos ? std::string() : key.substr(0, dot);
    const std::string rest = dot == std::string::npos ? key : key.substr(dot + 1);
    try {
      if (section == "model" || section == "family") continue;
      if (section == "run") read_run(rest, entry, c.run);
      else if (section == "oracle") read_oracle(rest, entry, c.oracle);
      else if (section == "verify") read_verify(rest, entry, c.verify);
      else if (key == "contract.coefficients") c.contract_coefficients = kv_doubles(entry, key);
      else throw ConfigError(line_of(entry) + ": unknown key '" + key + "'");
    } catch (const ConfigError& e) {
      const std::string what = e.what();
      if (what.rfind("line ", 0) == 0) throw;
      throw ConfigError(line_of(entry) + ": key '" + key + "': " + what);
    }
  }
  validate_config(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

void validate_config(const ExperimentConfig& c) {
  validate_params(c.model);
  if (!c.contract_coefficients.empty() && c.contract_coefficients.size() != family_dimension(c.family))
    throw ConfigError("contract.coefficients has " + std::to_string(c.contract_coefficients.size()) +
                      " entries; the family needs " + std::to_string(family_dimension(c.family)));
  if (c.run.threads < 1) throw ConfigError("run.threads must be at least 1");
  if (c.run.output_dir.empty()) throw ConfigError("run.out must not be empty");
  if (c.run.budget < 1) throw ConfigError("run.budget must be at least 1");
  if (!(c.run.screening_fraction > 0.0 && c.run.screening_fraction <= 1.0))
    throw ConfigError("run.screening_fraction must lie in (0, 1]");
  if (std::find(kPolicies.begin(), kPolicies.end(), c.run.policy) == kPolicies.end())
    throw ConfigError("run.policy '" + c.run.policy + "' is not one of lower, zero, upper, closed_form, best_response");
  if (c.run.grid_stride < 1) throw ConfigError("run.grid_stride must be at least 1");
  if (c.oracle.max_depth < 1 || c.oracle.branching < 2 || c.oracle.branching > 3)
    throw ConfigError("oracle.max_depth must be >= 1 and oracle.branching 2 or 3");
  if (!(c.verify.rate_bound > 0.0)) throw ConfigError("verify.rate_bound must be positive");
  if (c.verify.paths < 2 || c.verify.moment_paths < 2) throw ConfigError("verify path counts must be at least 2");
}

std::string echo_config(const ExperimentConfig& c) {
  KeyValues kv;
  auto put = [&](const std::string& key, std::string value) { kv[key] = KvEntry{std::move(value), 0}; };
  params_to_kv(c.model, kv, "model.");
  family_to_kv(c.family, kv, "family.");
  if (!c.contract_coefficients.empty()) put("contract.coefficients", format_doubles(c.contract_coefficients));
  put("run.mode", to_string(c.run.mode));
  put("run.budget", std::to_string(c.run.budget));
  put("run.out", c.run.output_dir);
  put("run.threads", std::to_string(c.run.threads));
  put("run.screening_fraction", format_double(c.run.screening_fraction));
  put("run.jp_paths", std::to_string(c.run.jp_paths));
  put("run.agent_paths", std::to_string(c.run.agent_paths));
  put("run.dump_paths", std::to_string(c.run.dump_paths));
  put("run.binary_dump", c.run.binary_dump ? "true" : "false");
  put("run.grid_stride", std::to_string(c.run.grid_stride));
  put("run.policy", c.run.policy);
  put("run.hjb_signal", std::to_string(c.run.hjb_signal));
  put("run.hjb_inventory", std::to_string(c.run.hjb_inventory));
  put("run.hjb_stat", std::to_string(c.run.hjb_stat));
  put("oracle.instances", std::to_string(c.oracle.instances));
  put("oracle.max_depth", std::to_string(c.oracle.max_depth));
  put("oracle.branching", std::to_string(c.oracle.branching));
  put("oracle.trials", std::to_string(c.oracle.trials));
  put("verify.paths", std::to_string(c.verify.paths));
  put("verify.moment_paths", std::to_string(c.verify.moment_paths));
  put("verify.rate_bound", format_double(c.verify.rate_bound));
  put("verify.oracle_instances", std::to_string(c.verify.oracle_instances));
  return format_key_values(kv);
}

Contract configured_contract(const ExperimentConfig& c) {
  std::vector<double> coeffs = c.contract_coefficients;
  if (coeffs.empty()) coeffs.assign(family_dimension(c.family), 0.0);
  return make_family_contract(c.family, coeffs);
}

std::string git_blob_hash(std::string_view content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw std::runtime_error("git_blob_hash: EVP_MD_CTX_new failed");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest, &length) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw std::runtime_error("git_blob_hash: SHA-1 failed");
  std::ostringstream hex;
  for (unsigned int i = 0; i < length; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

namespace {

/// Artifacts are assembled in memory and written at the end, so the manifest
/// hashes exactly the bytes on disk.
class Artifacts {
 public:
  void add(std::string name, std::string content) { files_.emplace_back(std::move(name), std::move(content)); }
  const std::vector<std::pair<std::string, std::string>>& files() const { return files_; }

 private:
  std::vector<std::pair<std::string, std::string>> files_;
};

struct RunContext {
  const ExperimentConfig& config;
  std::ostream& log;
  Artifacts artifacts;
  std::ostringstream summary;
  int exit_status = 0;

  std::uint64_t master() const { return config.model.seed; }
  int threads() const { return config.run.threads; }
  std::size_t paths_or_default(std::size_t n) const { return n > 0 ? n : config.model.n_paths; }
  SampleSpec sample(std::size_t count, std::string_view tag) const {
    return {count, derive_seed(master(), tag), threads()};
  }
  HjbOptions hjb() const {
    HjbOptions h;
    h.n_signal = config.run.hjb_signal;
    h.n_inventory = config.run.hjb_inventory;
    h.n_stat = config.run.hjb_stat;
    h.threads = threads();
    return h;
  }
  BestResponseOptions best_response_options() const {
    BestResponseOptions o;
    o.hjb = hjb();
    o.sample.seed = derive_seed(master(), "agent-fallback");
    o.sample.threads = threads();
    return o;
  }
};

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return format_double(v);
}

std::string csv_field(std::string text) {
  if (text.find_first_of(",\"\n") == std::string::npos) return text;
  std::string out = "\"";
  for (char ch : text) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + '"';
}

std::string checks_csv(const std::vector<CheckResult>& checks) {
  std::ostringstream out;
  out << "check,statistic,threshold,comparison,pass,detail\n";
  for (const auto& c : checks)
    out << c.name << ',' << num(c.statistic) << ',' << num(c.threshold) << ',' << (c.above ? "gt" : "le") << ','
        << (c.pass ? 1 : 0) << ',' << csv_field(c.detail) << '\n';
  return out.str();
}

std::string weights_csv(const std::vector<PathWeight>& weights) {
  std::ostringstream out;
  out << "path,log_m,m,drift_sq_integral,pi_sq_integral,w_sq_integral\n";
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const auto& w = weights[i];
    out << i << ',' << num(w.log_m) << ',' << num(w.m) << ',' << num(w.drift_sq_integral) << ','
        << num(w.pi_sq_integral) << ',' << num(w.w_sq_integral) << '\n';
  }
  return out.str();
}

FeedbackPolicy simulate_policy(RunContext& ctx, const Contract& contract) {
  const auto& p = ctx.config.model;
  const std::string& name = ctx.config.run.policy;
  if (name == "best_response") return best_response(contract, p, ctx.best_response_options()).policy;
  for (auto& [label, policy] : standard_policies(p))
    if (label == name) return policy;
  throw ConfigError("run.policy '" + name + "' is not recognised");
}

void run_simulate(RunContext& ctx) {
  const auto& p = ctx.config.model;
  const Contract contract = configured_contract(ctx.config);
  const FeedbackPolicy policy = simulate_policy(ctx, contract);
  const SampleSpec sample = ctx.sample(p.n_paths, "simulate");
  ctx.log << "simulate: " << sample.count << " reference paths, policy " << ctx.config.run.policy << '\n';
  const auto weights = reference_weights(p, policy, sample);
  const Estimate mean = weight_mean(weights);
  const auto entropy = entropy_report(weights);
  ctx.artifacts.add("weights.csv", weights_csv(weights));

  std::ostringstream est;
  est << "quantity,estimate,se\n";
  est << "weight_mean," << num(mean.mean) << ',' << num(mean.se) << '\n';
  est << "entropy_lhs," << num(entropy.lhs.mean) << ',' << num(entropy.lhs.se) << '\n';
  est << "entropy_rhs," << num(entropy.rhs.mean) << ',' << num(entropy.rhs.se) << '\n';
  ctx.artifacts.add("simulate.csv", est.str());

  const std::size_t dump = std::min(ctx.config.run.dump_paths, sample.count);
  if (dump > 0) {
    std::ostringstream paths;
    paths << "path,measure,step,t,p,z,w\n";
    PathBatch batch;
    batch.seed = sample.seed;
    batch.n_steps = p.n_steps;
    batch.horizon = p.horizon;
    batch.policy_id = ctx.config.run.policy;
    for (std::size_t i = 0; i < dump; ++i) {
      const auto ref = reference_path(p, sample.seed, i);
      const auto ctl = controlled_path(p, policy, sample.seed, i);
      for (const auto* path : {&ref, &ctl}) {
        const char* measure = path == &ref ? "reference" : "controlled";
        for (std::size_t k = 0; k <= path->steps(); ++k)
          paths << i << ',' << measure << ',' << k << ',' << num(path->times[k]) << ',' << num(path->p[k]) << ','
                << num(path->z[k]) << ',' << num(path->w[k]) << '\n';
      }
      batch.paths.push_back(ref);
      batch.weights.push_back(weights[i]);
    }
    ctx.artifacts.add("paths.csv", paths.str());
    if (ctx.config.run.binary_dump) {
      std::ostringstream bin(std::ios::binary);
      write_batch(bin, batch);
      ctx.artifacts.add("paths.bin", bin.str());
    }
  }
  ctx.summary << "policy: " << ctx.config.run.policy << '\n'
              << "weight mean: " << num(mean.mean) << " +- " << num(mean.se) << '\n'
              << "entropy identity: lhs " << num(entropy.lhs.mean) << " rhs " << num(entropy.rhs.mean)
              << " combined se " << num(entropy.combined_se) << (entropy.agrees() ? " (agree)" : " (disagree)") << '\n';
}

void run_agent(RunContext& ctx) {
  const auto& p = ctx.config.model;
  const Contract contract = configured_contract(ctx.config);
  ctx.log << "agent: best response to " << serialize_contract(contract) << '\n';
  std::optional<HjbSolution> hjb;
  BestResponse br;
  if (markovian_statistic(contract, p)) {
    hjb = solve_hjb(contract, p, ctx.hjb());
    br.policy = hjb->policy;
    br.value = hjb->value;
    br.history = {hjb->value};
  } else {
    br = best_response(contract, p, ctx.best_response_options());
  }
  const std::size_t n = ctx.paths_or_default(ctx.config.run.agent_paths);
  const Estimate mc = estimate_agent_value(contract, br.policy, p, ctx.sample(n, "agent-mc"));
  const Estimate rw = estimate_agent_value_reweighted(contract, br.policy, p, ctx.sample(n, "agent-reweighted"));

  std::ostringstream values;
  values << "quantity,estimate,se\n";
  values << (br.markovian ? "hjb_value," : "fallback_value,") << num(br.value) << ',' << num(br.se) << '\n';
  values << "controlled_mc," << num(mc.mean) << ',' << num(mc.se) << '\n';
  values << "reweighted_mc," << num(rw.mean) << ',' << num(rw.se) << '\n';
  ctx.artifacts.add("agent_value.csv", values.str());

  std::ostringstream policy;
  write_policy_csv(policy, br.policy, br.markovian ? ctx.config.run.grid_stride : 1);
  ctx.artifacts.add("policy.csv", policy.str());
  if (hjb) {
    std::ostringstream grid;
    write_value_grid_csv(grid, hjb->grid, ctx.config.run.grid_stride);
    ctx.artifacts.add("value_grid.csv", grid.str());
  } else {
    std::ostringstream hist;
    hist << "sweep,value\n";
    for (std::size_t i = 0; i < br.history.size(); ++i) hist << i << ',' << num(br.history[i]) << '\n';
    ctx.artifacts.add("best_response_history.csv", hist.str());
  }
  ctx.summary << "solver: " << (br.markovian ? "hjb" : "coordinate ascent") << (br.converged ? "" : " (not converged)")
              << '\n'
              << "agent value: " << num(br.value) << '\n'
              << "controlled mc: " << num(mc.mean) << " +- " << num(mc.se) << '\n'
              << "reweighted mc: " << num(rw.mean) << " +- " << num(rw.se) << '\n';
}

void run_oracle(RunContext& ctx) {
  const auto& o = ctx.config.oracle;
  const std::uint64_t seed = derive_seed(ctx.master(), "oracle");
  ctx.log << "oracle: " << o.instances << " random instances\n";
  std::ostringstream rows;
  rows << "instance,constrained,atoms,forms,lambda,strong,relaxed,gap,kkt_residual,strong_violation,"
          "collapse_trials,counterexamples,relaxed_dirac,off_mode_mass,extraction_violation,reaccumulation_error\n";
  double gap = 0.0;
  double extraction = 0.0;
  std::size_t counterexamples = 0;
  for (std::size_t i = 0; i < o.instances; ++i) {
    const auto c = random_oracle_case(seed, i, o.max_depth, o.branching, i % 2 == 1);
    const auto r = check_oracle_case(c, o.trials, derive_seed(seed, i));
    gap = std::max(gap, std::fabs(r.gap()));
    counterexamples += r.counterexamples;
    if (c.constrained) extraction = std::max(extraction, r.extraction_violation);
    rows << i << ',' << (c.constrained ? 1 : 0) << ',' << r.atoms << ',' << r.forms << ',' << num(r.lambda) << ','
         << num(r.strong) << ',' << num(r.relaxed) << ',' << num(r.gap()) << ',' << num(r.kkt_residual) << ','
         << num(r.strong_violation) << ',' << r.collapse_trials << ',' << r.counterexamples << ','
         << (r.relaxed_dirac ? 1 : 0) << ',' << num(r.off_mode_mass) << ',' << num(r.extraction_violation) << ','
         << num(r.reaccumulation_error) << '\n';
  }
  ctx.artifacts.add("oracle_instances.csv", rows.str());
  const CheckResult gibbs = check_gibbs();
  ctx.artifacts.add("oracle_gibbs.csv", checks_csv({gibbs}));
  ctx.summary << "instances: " << o.instances << '\n'
              << "max |relaxed - strong|: " << num(gap) << '\n'
              << "collapse counterexamples: " << counterexamples << '\n'
              << "max extraction violation: " << num(extraction) << '\n'
              << format_check(gibbs) << '\n';
}

void run_optimize(RunContext& ctx) {
  const auto& cfg = ctx.config;
  OptimizeOptions opt;
  opt.budget = cfg.run.budget;
  opt.screening_fraction = cfg.run.screening_fraction;
  opt.seed = ctx.master();
  opt.threads = ctx.threads();
  opt.principal.agent = ctx.best_response_options();
  opt.principal.sample = ctx.sample(ctx.paths_or_default(cfg.run.jp_paths), "principal");
  ctx.log << "optimize: family " << to_string(cfg.family.kind) << ", budget " << opt.budget << '\n';
  const OptimizeResult result = optimize(cfg.family, cfg.model, opt);
  const ConvergenceReport rep = convergence_report(result.sequence, cfg.family.cap);

  std::ostringstream seq;
  write_sequence_csv(seq, result.sequence, rep);
  ctx.artifacts.add("sequence.csv", seq.str());
  ctx.artifacts.add("sequence.json", sequence_to_json(result.sequence) + "\n");
  ctx.artifacts.add("best_contract.json", serialize_contract(result.best) + "\n");

  std::ostringstream conv;
  conv << "quantity,value\n";
  conv << "incumbent_updates," << rep.incumbent_updates << '\n';
  conv << "cauchy_tail," << num(rep.cauchy_tail) << '\n';
  conv << "in_box," << (rep.in_box ? 1 : 0) << '\n';
  conv << "limit_jp," << num(rep.limit_jp) << '\n';
  for (std::size_t k = 0; k < rep.limit_point.size(); ++k) conv << "limit_c" << k << ',' << num(rep.limit_point[k]) << '\n';
  ctx.artifacts.add("convergence.csv", conv.str());

  ctx.summary << "evaluations: " << result.sequence.records.size() << '\n'
              << "incumbent updates: " << rep.incumbent_updates << '\n'
              << "limit point: " << format_doubles(rep.limit_point) << '\n'
              << "limit J_p: " << num(rep.limit_jp) << '\n'
              << "best contract: " << serialize_contract(result.best) << '\n';
}

void run_verify(RunContext& ctx) {
  const auto& cfg = ctx.config;
  const auto& v = cfg.verify;
  ModelParams weight_params = cfg.model;
  weight_params.rate_lower = -v.rate_bound;
  weight_params.rate_upper = v.rate_bound;
  std::vector<CheckResult> checks;
  auto record = [&](CheckResult c) {
    ctx.log << format_check(c) << '\n';
    checks.push_back(std::move(c));
  };

  const auto policies = standard_policies(weight_params);
  for (const auto& np : policies)
    record(check_girsanov_normalization(weight_params, np, ctx.sample(v.paths, "verify-girsanov-" + np.first)));
  for (auto& c : check_entropy_reduced(2.0, cfg.model.horizon, cfg.model.n_steps, ctx.sample(v.paths, "verify-entropy-reduced")))
    record(std::move(c));
  for (const auto& np : policies)
    record(check_entropy_full(weight_params, np, ctx.sample(v.paths, "verify-entropy-" + np.first)));
  const SampleSpec moments = ctx.sample(v.moment_paths, "verify-rate-moments");
  for (const auto& np : policies) record(check_rate_moments(weight_params, np, moments, false));
  const double beyond = v.rate_bound + 1.0;
  record(check_rate_moments(weight_params,
                          {"upper_plus_one", FeedbackPolicy::constant(beyond, -v.rate_bound, beyond)}, moments, true));
  record(check_gibbs());
  OracleSuiteSettings os;
  os.instances = v.oracle_instances;
  os.max_depth = cfg.oracle.max_depth;
  os.branching = cfg.oracle.branching;
  os.trials = cfg.oracle.trials;
  os.seed = derive_seed(ctx.master(), "verify-oracle");
  for (auto& c : check_oracle_suite(os)) record(std::move(c));
  const HjbSolution sol = solve_hjb(ConstantContract{0.0}, cfg.model, ctx.hjb());
  for (auto& c : check_agent_closed_form(cfg.model, sol)) record(std::move(c));
  record(check_agent_monte_carlo(ConstantContract{0.0}, cfg.model, sol,
                                 ctx.sample(ctx.paths_or_default(cfg.run.agent_paths), "verify-agent-mc")));

  ctx.artifacts.add("verify.csv", checks_csv(checks));
  std::size_t failed = 0;
  for (const auto& c : checks) {
    ctx.summary << format_check(c) << '\n';
    if (!c.pass) ++failed;
  }
  ctx.summary << "checks: " << checks.size() << ", failed: " << failed << '\n';
  if (failed > 0) ctx.exit_status = 1;
}

std::vector<std::vector<double>> report_members(const FamilySpec& family, const std::vector<double>& configured) {
  const std::size_t d = family_dimension(family);
  const double K = family.cap;
  std::vector<std::vector<double>> out;
  out.push_back(std::vector<double>(d, 0.0));
  if (d <= 4) {
    for (std::size_t mask = 0; mask < (std::size_t{1} << d); ++mask) {
      std::vector<double> c(d);
      for (std::size_t k = 0; k < d; ++k) c[k] = (mask >> k) & 1 ? K : -K;
      out.push_back(std::move(c));
    }
  } else {
    for (std::size_t k = 0; k < d; ++k)
      for (double s : {-K, K}) {
        std::vector<double> c(d, 0.0);
        c[k] = s;
        out.push_back(std::move(c));
      }
  }
  if (!configured.empty()) out.push_back(configured);
  return out;
}

void run_report(RunContext& ctx) {
  const auto& cfg = ctx.config;
  const auto& p = cfg.model;
  std::ostringstream rep;
  rep << "quantity,value\n";
  rep << "family," << to_string(cfg.family.kind) << '\n';
  rep << "dimension," << family_dimension(cfg.family) << '\n';
  rep << "cap," << num(cfg.family.cap) << '\n';
  std::string seed_text;
  try {
    const ConstantContract seed = feasibility_seed(p, cfg.family, ctx.best_response_options());
    seed_text = format_double(seed.value);
    rep << "feasibility_seed," << seed_text << '\n';
  } catch (const ModelError& e) {
    seed_text = e.what();
    rep << "feasibility_seed," << csv_field(seed_text) << '\n';
  }

  const auto members = report_members(cfg.family, cfg.contract_coefficients);
  std::vector<Contract> contracts;
  nlohmann::json listing = nlohmann::json::array();
  for (const auto& c : members) {
    contracts.push_back(make_family_contract(cfg.family, c));
    listing.push_back(nlohmann::json::parse(serialize_contract(contracts.back())));
  }
  ctx.artifacts.add("family_members.json", listing.dump(1) + "\n");
  const double K = cfg.family.cap;
  const std::vector<double> levels = {0.0, 0.5 * K, K, 2.0 * K, 5.0 * K};
  ctx.log << "report: tail audit over " << contracts.size() << " family members\n";
  const auto tail = tail_expectation_audit(contracts, p, levels, ctx.sample(p.n_paths, "report-tail"));
  std::ostringstream tail_csv;
  tail_csv << "level,sup_estimate,se,contract_index,policy_rate\n";
  for (const auto& t : tail)
    tail_csv << num(t.level) << ',' << num(t.sup_estimate) << ',' << num(t.se) << ',' << t.contract_index << ','
             << num(t.policy_rate) << '\n';
  ctx.artifacts.add("tail_audit.csv", tail_csv.str());

  double worst_ratio = 0.0;
  bool holder_ok = true;
  if (cfg.family.kind == FamilySpec::Kind::table) {
    for (std::size_t i = 0; i < contracts.size(); ++i) {
      const auto audit = holder_audit(std::get<TableContract>(contracts[i]), p, 200, derive_seed(ctx.master(), i));
      worst_ratio = std::max(worst_ratio, audit.max_ratio);
      holder_ok = holder_ok && audit.within_bound;
    }
    rep << "holder_max_ratio," << num(worst_ratio) << '\n';
    rep << "holder_within_bound," << (holder_ok ? 1 : 0) << '\n';
  }
  if (const auto bound = payment_bound(contracts.front())) rep << "payment_bound," << num(*bound) << '\n';
  ctx.artifacts.add("report.csv", rep.str());

  ctx.summary << "family: " << to_string(cfg.family.kind) << " (dimension " << family_dimension(cfg.family)
              << ", cap " << num(K) << ")\n"
              << "feasibility seed: " << seed_text << '\n';
  for (const auto& t : tail)
    ctx.summary << "tail level " << num(t.level) << ": " << num(t.sup_estimate) << " +- " << num(t.se) << '\n';
  if (cfg.family.kind == FamilySpec::Kind::table)
    ctx.summary << "holder audit: max ratio " << num(worst_ratio) << (holder_ok ? " (within bound)" : " (exceeds bound)")
                << '\n';
}

}  // namespace

RunOutcome run_experiment(const ExperimentConfig& config, std::ostream& log) {
  validate_config(config);
  RunContext ctx{config, log, {}, {}, 0};
  const std::filesystem::path dir(config.run.output_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir))
    throw ConfigError("output directory '" + dir.string() + "' cannot be created");
  {
    const auto probe = dir / ".optfee_write_probe";
    std::ofstream out(probe);
    if (!out) throw ConfigError("output directory '" + dir.string() + "' is not writable");
    out.close();
    std::filesystem::remove(probe, ec);
  }

  ctx.summary << "mode: " << to_string(config.run.mode) << '\n' << "seed: " << config.model.seed << '\n';
  try {
    switch (config.run.mode) {
      case RunMode::simulate: run_simulate(ctx); break;
      case RunMode::agent: run_agent(ctx); break;
      case RunMode::oracle: run_oracle(ctx); break;
      case RunMode::optimize: run_optimize(ctx); break;
      case RunMode::verify: run_verify(ctx); break;
      case RunMode::report: run_report(ctx); break;
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const ModelError& e) {
    throw ModelError(std::string(to_string(config.run.mode)) + ": " + e.what());
  }
  ctx.artifacts.add("summary.txt", ctx.summary.str());

  RunOutcome outcome;
  outcome.directory = dir;
  outcome.exit_status = ctx.exit_status;
  outcome.summary = ctx.summary.str();
  nlohmann::json files = nlohmann::json::array();
  for (const auto& [name, content] : ctx.artifacts.files()) {
    std::ofstream out(dir / name, std::ios::binary);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw ConfigError("failed writing '" + (dir / name).string() + "'");
    files.push_back({{"path", name}, {"bytes", content.size()}, {"hash", git_blob_hash(content)}});
    outcome.files.push_back(name);
  }
  const std::string echo = echo_config(config);
  nlohmann::json manifest = {{"tool", "optfee"},
                             {"version", "0.1.0"},
                             {"mode", to_string(config.run.mode)},
                             {"seed", config.model.seed},
                             {"seed_derivation", "derive_seed(master, tag) = splitmix64(master ^ splitmix64(fnv1a64(tag) + 1))"},
                             {"threads", config.run.threads},
                             {"exit_status", ctx.exit_status},
                             {"config", echo},
                             {"config_hash", git_blob_hash(echo)},
                             {"files", files}};
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  out << manifest.dump(2) << '\n';
  if (!out) throw ConfigError("failed writing manifest");
  return outcome;
}

}  // namespace optfee
