#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "optfee/experiment.h"

int main(int argc, char** argv) {
  CLI::App app{"optfee: brokerage-fee contract solver and verification suite"};
  std::string mode;
  std::string config_path;
  std::optional<int> threads;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  app.add_option("mode", mode, "simulate | agent | oracle | optimize | verify | report")->required();
  app.add_option("--config,-c", config_path, "flat key = value config file")->required();
  app.add_option("--threads,-j", threads, "worker threads (1 is bit-exact deterministic)");
  app.add_option("--seed,-s", seed, "master seed, overrides model.seed");
  app.add_option("--out,-o", out_dir, "output directory, overrides run.out");
  CLI11_PARSE(app, argc, argv);

  try {
    optfee::ExperimentConfig config = optfee::load_config(config_path);
    config.run.mode = optfee::run_mode_from_string(mode);
    if (threads) config.run.threads = *threads;
    if (seed) config.model.seed = *seed;
    if (out_dir) config.run.output_dir = *out_dir;
    const auto outcome = optfee::run_experiment(config, std::cerr);
    std::cout << outcome.summary;
    std::cout << "artifacts: " << outcome.directory.string() << '\n';
    return outcome.exit_status;
  } catch (const optfee::ConfigError& e) {
    std::cerr << "optfee: config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "optfee: " << mode << " failed: " << e.what() << '\n';
    return 3;
  }
}
