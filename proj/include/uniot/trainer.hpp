#pragma once

#include "uniot/ccd.hpp"
#include "uniot/memory.hpp"
#include "uniot/model.hpp"
#include "uniot/pcd.hpp"
#include "uniot/synth.hpp"
#include "uniot/types.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace uniot::train {

struct Hyperparameters {
  double gamma = 0.7;
  double mu = 0.7;
  double tau = 0.1;
  double epsilon = 0.01;
  double kappa = 0.5;
  double lambda = 0.1;
  Index prototypes = 50;  // K
  Index batch_size = 36;
  Index queue_capacity = 2000;
  std::int64_t steps = 2000;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  Index warm_up_multiplier = 4;
  Index hidden_dim = 64;
  Index embed_dim = 32;
  int solver_max_iters = 1000;
  double solver_tolerance = 1e-6;
  // Loss switches for ablations.
  bool use_ccd = true;
  bool use_fill = true;
  bool use_global = true;
  bool use_local = true;

  void validate() const;

  ccd::CcdConfig ccd_config() const;
  pcd::PcdConfig pcd_config() const;
  model::SgdConfig sgd_config() const;
};

/// Per-step loss values. total = cls + lambda * (ccd + pcd), where pcd is
/// the mean of the active PCD terms.
struct LossBundle {
  double cls = 0.0;
  double ccd = 0.0;
  double global = 0.0;
  double local = 0.0;
  double pcd = 0.0;
  double total = 0.0;
};

struct StepDiagnostics {
  bool adaptation_active = false;  // queue past warm-up
  bool skipped = false;            // non-finite gradient, no update
  Index positives = 0;
  Index negatives = 0;
  Index fills = 0;
  double mean_w_t = 0.0;  // over batch rows
  Index selected = 0;
  std::vector<bool> batch_mask;
  std::vector<Index> batch_pseudo_labels;
  int ccd_solver_iterations = 0;
  int pcd_solver_iterations = 0;
  bool ccd_converged = true;
  bool pcd_converged = true;
  // max_k |colsum_k(raw Q) - 1/K| of the target-prototype coupling; negative
  // when PCD did not run this step.
  double equipartition_error = -1.0;
  Index neighbor_fallbacks = 0;
};

struct StepResult {
  LossBundle loss;
  StepDiagnostics diag;
};

struct TrainState {
  model::Parameters params;
  model::Gradients velocity;
  ccd::AdaptiveBeta beta;
  memory::MemoryQueue queue;
  Rng batch_rng;
  Rng fill_rng;
  std::int64_t step = 0;
  Index skipped_steps = 0;
  Index consecutive_skips = 0;
  // Solver warm starts carried between steps.
  Vector ccd_col_potential;
  Vector pcd_col_potential;
};

/// Independent generator streams derived from one run seed.
enum class Stream : std::uint64_t { kInit = 20, kBatches = 21, kFill = 22, kEval = 23 };
Rng make_stream(std::uint64_t seed, Stream s);
std::uint64_t stream_seed(std::uint64_t seed, Stream s);

TrainState init_state(Index input_dim, Index source_classes, const Hyperparameters& hp, std::uint64_t seed);

class NumericFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr Index kMaxConsecutiveSkips = 10;

/// One optimizer step. Couplings, pseudo-labels, masks and neighbors are
/// constants for the gradient. The target batch is enqueued after use.
StepResult train_step(TrainState& state, const Matrix& source_x, std::span<const Index> source_labels,
                      const Matrix& target_x, std::span<const std::int64_t> target_ids, const Hyperparameters& hp);

/// Draws batches by walking per-domain shuffled permutations.
class BatchSampler {
 public:
  BatchSampler(Index size, Index batch);
  std::vector<Index> next(Rng& rng);

 private:
  std::vector<Index> order_;
  Index batch_;
  Index cursor_;
};

using StepObserver = std::function<void(std::int64_t step, const StepResult&, std::span<const Index> target_rows)>;

struct TrainLoop {
  TrainState state;
  BatchSampler source_sampler;
  BatchSampler target_sampler;
};

TrainLoop start_training(const synth::Scenario& sc, const Hyperparameters& hp, std::uint64_t seed);

/// Runs steps until hp.steps. Throws NumericFailure after too many skipped
/// steps in a row; `loop.state` is left at the last good step.
void run_training(TrainLoop& loop, const synth::Scenario& sc, const Hyperparameters& hp,
                  const StepObserver& observer = {});

model::Checkpoint make_checkpoint(const TrainState& state);
std::string rng_state_string(const Rng& batch, const Rng& fill);

}  // namespace uniot::train
