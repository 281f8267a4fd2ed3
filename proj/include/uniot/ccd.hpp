#pragma once

#include "uniot/memory.hpp"
#include "uniot/model.hpp"
#include "uniot/ot.hpp"
#include "uniot/types.hpp"

#include <vector>

namespace uniot::ccd {

/// Per-row confidences read off a normalized sample x prototype coupling.
struct DetectionResult {
  Vector w_t;                        // row maxima
  Vector w_s;                        // column sums
  std::vector<Index> pseudo_labels;  // row argmax, lowest index on ties
  std::vector<bool> mask;            // filled by detect_common
};

enum class RowOrigin { kBatch, kQueue, kFakeNegative, kReusedPositive };

const char* to_string(RowOrigin origin);

struct FillReport {
  Index positives_before = 0;
  Index negatives_before = 0;
  Index fake_negatives_added = 0;
  Index positives_added = 0;
  FeatureMatrix filled_features;
  std::vector<RowOrigin> provenance;

  Index fills() const { return fake_negatives_added + positives_added; }
};

/// Prototype-side marginal, tracked as an exponential moving average of the
/// column sums of past normalized couplings.
class AdaptiveBeta {
 public:
  AdaptiveBeta(Index prototypes, double mu);
  AdaptiveBeta(ot::ProbabilityVector beta, double mu);

  const ot::ProbabilityVector& beta() const { return beta_; }
  double mu() const { return mu_; }

  /// beta <- mu beta + (1 - mu) colsum(qbar).
  void update(const ot::CouplingMatrix& qbar);

 private:
  ot::ProbabilityVector beta_;
  double mu_;
};

struct CcdConfig {
  double gamma = 0.7;
  double tau = 0.1;
  bool adaptive_fill = true;
  ot::SolverConfig solver;
};

/// Q / sum(Q).
ot::CouplingMatrix normalize_coupling(const ot::CouplingMatrix& q);

DetectionResult confidences(const ot::CouplingMatrix& qbar);

/// Statistical-mean test: row i is common iff w_t_i >= 1/n and
/// w_s[pseudo_label_i] >= 1/m.
DetectionResult detect_common(DetectionResult det, Index n, Index m);

/// Rebalances the positive / negative split around `gamma` by appending fake
/// negatives (feature mixed with its farthest prototype) or reused confident
/// rows. `z` is the queue-filled set; its first `batch_rows` rows are the
/// batch, the remainder queue rows.
FillReport adaptive_fill(const FeatureMatrix& z, Index batch_rows, const model::PrototypeBank& source,
                         double gamma, const ot::ProbabilityVector& beta, const ot::SolverConfig& solver,
                         Rng& rng);

/// Cross-entropy of the selected batch rows against their pseudo-labels,
/// averaged over the selection. Only rows [0, z_batch.rows()) of `det` are
/// read. Zero loss and gradients when nothing is selected.
model::LossGrad ccd_loss(const FeatureMatrix& z_batch, const DetectionResult& det,
                         const model::PrototypeBank& source, double tau, Index* selected = nullptr);

struct CcdOutput {
  DetectionResult detection;
  FillReport fill;
  ot::CouplingMatrix qbar;
  Index batch_rows = 0;
  int solver_iterations = 0;
  bool solver_converged = false;
  Vector col_potential;  // final prototype-side potential of the UOT solve
};

/// Queue fill -> adaptive fill -> UOT against the source prototypes ->
/// normalization -> confidences -> statistical-mean detection.
CcdOutput ccd_forward(const FeatureMatrix& z_batch, const memory::MemoryQueue& queue,
                      const model::PrototypeBank& source, const AdaptiveBeta& beta, const CcdConfig& cfg,
                      Rng& rng);

/// Same pipeline on an explicit row set (no queue).
CcdOutput ccd_detect(const FeatureMatrix& rows, Index batch_rows, const model::PrototypeBank& source,
                     const AdaptiveBeta& beta, const CcdConfig& cfg, Rng& rng);

}  // namespace uniot::ccd
