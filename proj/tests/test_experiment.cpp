#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "optfee/experiment.h"

using namespace optfee;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("optfee_unit_" + name);
  fs::remove_all(dir);
  return dir;
}

ExperimentConfig small(RunMode mode, const std::string& name) {
  ExperimentConfig c = parse_config(
      "model.rate_lower = -1\n"
      "model.rate_upper = 1\n"
      "model.n_steps = 20\n"
      "model.n_paths = 400\n"
      "model.seed = 99\n"
      "run.hjb_signal = 31\n"
      "run.hjb_inventory = 31\n"
      "run.budget = 4\n"
      "run.dump_paths = 2\n"
      "run.binary_dump = true\n"
      "oracle.instances = 4\n"
      "oracle.trials = 10\n"
      "verify.paths = 2000\n"
      "verify.moment_paths = 500\n"
      "verify.oracle_instances = 4\n");
  c.run.mode = mode;
  c.run.output_dir = scratch(name).string();
  return c;
}

}  // namespace

TEST_SUITE("experiment") {

TEST_CASE("git blob hash matches git") {
  CHECK(git_blob_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
  CHECK(git_blob_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

TEST_CASE("config echo round-trips") {
  ExperimentConfig c = small(RunMode::optimize, "echo");
  c.family.kind = FamilySpec::Kind::polynomial;
  c.family.degree = 2;
  c.family.cap = 0.1 + 0.2;
  c.contract_coefficients = {0.1, -0.2, 0.0, 0.3};
  c.model.sigma = 1.0 / 3.0;
  CHECK(parse_config(echo_config(c)) == c);
  CHECK(echo_config(parse_config(echo_config(c))) == echo_config(c));
}

TEST_CASE("config errors cite the line") {
  CHECK_THROWS_WITH_AS(parse_config("model.sigma = 1\nrun.bogus = 3\n"), doctest::Contains("line 2"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config("oracle.trials = many\n"), doctest::Contains("line 1"), ConfigError);
  CHECK_THROWS_AS(parse_config("model.sigma = 0\n"), ModelError);
  CHECK_THROWS_AS(parse_config("family.class = constant\ncontract.coefficients = 1, 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("run.policy = sideways\n"), ConfigError);
  CHECK_THROWS_AS(run_mode_from_string("explode"), ConfigError);
  for (auto m : {RunMode::simulate, RunMode::agent, RunMode::oracle, RunMode::optimize, RunMode::verify, RunMode::report})
    CHECK(run_mode_from_string(to_string(m)) == m);
}

TEST_CASE("manifest hashes the files on disk") {
  const auto c = small(RunMode::simulate, "manifest");
  std::ostringstream log;
  const auto outcome = run_experiment(c, log);
  CHECK(outcome.exit_status == 0);
  const auto manifest = nlohmann::json::parse(slurp(outcome.directory / "manifest.json"));
  CHECK(manifest["mode"] == "simulate");
  CHECK(manifest["config_hash"] == git_blob_hash(manifest["config"].get<std::string>()));
  CHECK(parse_config(manifest["config"].get<std::string>()) == c);
  std::size_t seen = 0;
  for (const auto& f : manifest["files"]) {
    const std::string body = slurp(outcome.directory / f["path"].get<std::string>());
    CHECK(f["hash"] == git_blob_hash(body));
    CHECK(f["bytes"] == body.size());
    ++seen;
  }
  CHECK(seen == outcome.files.size());
  for (const char* name : {"weights.csv", "simulate.csv", "paths.csv", "paths.bin", "summary.txt"})
    CHECK(fs::exists(outcome.directory / name));
}

TEST_CASE("every mode runs and repeats byte for byte") {
  for (auto mode : {RunMode::simulate, RunMode::agent, RunMode::oracle, RunMode::optimize, RunMode::report}) {
    CAPTURE(to_string(mode));
    auto a = small(mode, std::string("rep_a_") + to_string(mode));
    auto b = small(mode, std::string("rep_b_") + to_string(mode));
    b.run.threads = 3;
    std::ostringstream log;
    const auto ra = run_experiment(a, log);
    const auto rb = run_experiment(b, log);
    REQUIRE(ra.files == rb.files);
    for (const auto& f : ra.files) {
      CAPTURE(f);
      CHECK(slurp(ra.directory / f) == slurp(rb.directory / f));
    }
  }
}

TEST_CASE("verify reports one row per check and sets the exit status") {
  const auto c = small(RunMode::verify, "verify");
  std::ostringstream log;
  const auto outcome = run_experiment(c, log);
  const std::string csv = slurp(outcome.directory / "verify.csv");
  CHECK(csv.rfind("check,statistic,threshold,comparison,pass,detail\n", 0) == 0);
  std::istringstream rows(csv);
  std::string line;
  std::getline(rows, line);
  std::size_t failed = 0, total = 0;
  while (std::getline(rows, line)) {
    ++total;
    std::stringstream fields(line);
    std::string field;
    for (int k = 0; k < 5; ++k) std::getline(fields, field, ',');
    if (field == "0") ++failed;
  }
  CHECK(total >= 20);
  CHECK(outcome.exit_status == (failed > 0 ? 1 : 0));
}

TEST_CASE("module errors carry the mode") {
  auto c = small(RunMode::optimize, "infeasible");
  c.model.reservation = 10.0;
  std::ostringstream log;
  CHECK_THROWS_WITH_AS(run_experiment(c, log), doctest::Contains("optimize:"), ModelError);
}

}
