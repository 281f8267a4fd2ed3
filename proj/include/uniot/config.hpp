#pragma once

#include "uniot/synth.hpp"
#include "uniot/trainer.hpp"

#include "json.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace uniot::config {

enum class Mode { kTrain, kEvaluate, kSweep, kAblate };

Mode parse_mode(const std::string& name);
const char* to_string(Mode m);

struct SweepConfig {
  synth::SweepField vary = synth::SweepField::kSourcePrivate;
  std::vector<Index> values{0, 5, 10, 15, 20};
};

struct RunConfig {
  synth::ScenarioConfig scenario;  // scenario.seed mirrors `seed`
  train::Hyperparameters hp;
  std::string output_dir = "out";
  std::uint64_t seed = 0;
  Mode mode = Mode::kTrain;
  SweepConfig sweep;
  std::vector<std::uint64_t> ablation_seeds;  // empty: just `seed`
  std::string checkpoint;                     // evaluate mode; empty: <output_dir>/checkpoint.json

  void validate() const;
  void set_seed(std::uint64_t s) {
    seed = s;
    scenario.seed = s;
  }
};

/// Parse or validation failure. `line` is 1-based, 0 when unknown.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(int line, const std::string& message);
  int line() const { return line_; }

 private:
  int line_;
};

/// JSON with comments. Unknown keys are rejected; missing keys take their
/// defaults.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

/// Fully resolved config, every default spelled out. Parses back to the
/// same RunConfig.
nlohmann::json to_json(const RunConfig& cfg);

}  // namespace uniot::config
