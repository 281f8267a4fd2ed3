#pragma once

#include "uniot/config.hpp"
#include "uniot/eval.hpp"
#include "uniot/synth.hpp"
#include "uniot/trainer.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace uniot::run {

/// One line of trace.csv.
struct TraceRow {
  std::int64_t step = 0;
  train::LossBundle loss;
  train::StepDiagnostics diag;
  std::optional<double> batch_recall;
  std::optional<double> batch_specificity;
};

std::string trace_csv_header();
std::string trace_csv_row(const TraceRow& row);

struct Experiment {
  synth::Scenario scenario;
  train::TrainLoop loop;
  std::vector<TraceRow> trace;
  eval::MetricsReport metrics;
  eval::EvalDetails details;
};

Experiment prepare_experiment(const synth::ScenarioConfig& scenario, const train::Hyperparameters& hp,
                              std::uint64_t seed);

/// Trains to hp.steps, recording the trace. On train::NumericFailure the
/// experiment keeps the last good state.
void train_experiment(Experiment& ex, const train::Hyperparameters& hp);

void evaluate_experiment(Experiment& ex, const train::Hyperparameters& hp, std::uint64_t seed);

/// prepare + train + evaluate.
Experiment run_experiment(const synth::ScenarioConfig& scenario, const train::Hyperparameters& hp, std::uint64_t seed);

eval::MetricsReport evaluate_model(const model::Parameters& params, const ccd::AdaptiveBeta& beta,
                                   const synth::Scenario& sc, const train::Hyperparameters& hp, std::uint64_t seed,
                                   eval::EvalDetails* details = nullptr);

struct AblationVariant {
  std::string name;
  bool use_ccd;
  bool use_fill;
  bool use_global;
  bool use_local;

  train::Hyperparameters apply(train::Hyperparameters hp) const;
};

/// CCD only; CCD+local; CCD+global; PCD only; CCD without filling + PCD; full.
const std::vector<AblationVariant>& ablation_grid();

std::string embeddings_svg(const eval::EvalDetails& details, const synth::Dataset& target);

/// Writes the text to `path`, replacing any existing file.
void write_file(const std::filesystem::path& path, const std::string& text);

/// Executes cfg.mode, writing outputs under cfg.output_dir. Returns the
/// process exit status.
int run(const config::RunConfig& cfg);

}  // namespace uniot::run
