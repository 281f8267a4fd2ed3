// Command-line entry point: uniot --config run.json [--mode ...] [--seed N] [--out DIR] [--quiet]
#include "uniot/config.hpp"
#include "uniot/runner.hpp"

#include "CLI11.hpp"

#include <iostream>
#include <optional>

#include <spdlog/spdlog.h>

int main(int argc, char** argv) {
  CLI::App app{"Universal domain adaptation with optimal transport on synthetic scenarios"};
  std::string config_path;
  std::optional<std::string> mode;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool quiet = false;
  bool verbose = false;
  app.add_option("--config", config_path, "Run configuration (JSON, comments allowed)");
  app.add_option("--mode", mode, "train | evaluate | sweep | ablate")
      ->check(CLI::IsMember({"train", "evaluate", "sweep", "ablate"}));
  app.add_option("--seed", seed, "Overrides the config seed");
  app.add_option("--out", out, "Output directory (overrides output_dir)");
  app.add_flag("--quiet", quiet, "Only report errors");
  app.add_flag("--verbose", verbose, "Debug logging");
  CLI11_PARSE(app, argc, argv);

  spdlog::set_level(quiet ? spdlog::level::err : (verbose ? spdlog::level::debug : spdlog::level::info));

  uniot::config::RunConfig cfg;
  try {
    cfg = config_path.empty() ? uniot::config::parse_config("{}") : uniot::config::load_config(config_path);
    if (mode) cfg.mode = uniot::config::parse_mode(*mode);
    if (seed) cfg.set_seed(*seed);
    if (out) cfg.output_dir = *out;
  } catch (const uniot::config::ConfigError& e) {
    std::cerr << (config_path.empty() ? "config" : config_path) << ": " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    return uniot::run::run(cfg);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
}
