#pragma once

#include "uniot/memory.hpp"
#include "uniot/model.hpp"
#include "uniot/ot.hpp"
#include "uniot/types.hpp"

#include <cstdint>
#include <span>

namespace uniot::pcd {

/// Balanced sample x prototype coupling, scaled so every row is a
/// probability vector.
struct SoftAssignment {
  Matrix rows;              // raw * scale
  ot::CouplingMatrix raw;   // row marginal 1/n, column marginal 1/K
  double scale = 0.0;       // n, the number of rows solved
  int solver_iterations = 0;
  bool solver_converged = false;
  Vector col_potential;
};

/// Solves OT between `z` and the target prototypes with uniform marginals on
/// both sides. Rejects K > rows.
SoftAssignment assign_prototypes(const FeatureMatrix& z, const model::PrototypeBank& target,
                                 const ot::SolverConfig& cfg);

/// (1/B) sum_i l(q_i, z_i) over the B anchors, q_i = assign.rows.row(i).
model::LossGrad global_loss(const SoftAssignment& assign, const FeatureMatrix& anchors,
                            const model::PrototypeBank& target, double tau);

struct LocalLossGrad {
  double value = 0.0;
  Matrix d_anchors;
  Matrix d_prototypes;
};

/// (1/2B) sum_i [l(q_{B+i}, z_i) + l(q_i, z~_i)]: each anchor is scored
/// against its neighbor's assignment and vice versa. Neighbors are queue
/// snapshots and receive no gradient.
LocalLossGrad local_loss(const SoftAssignment& assign, const FeatureMatrix& anchors, const FeatureMatrix& neighbors,
                         const model::PrototypeBank& target, double tau);

struct PcdLoss {
  double global = 0.0;
  double local = 0.0;
  double value = 0.0;
  Matrix d_anchors;
  Matrix d_prototypes;
};

/// Mean of the active sub-losses; (global + local) / 2 when both are on.
PcdLoss pcd_loss(const model::LossGrad* global, const LocalLossGrad* local);

struct PcdConfig {
  double tau = 0.1;
  bool use_global = true;
  bool use_local = true;
  ot::SolverConfig solver;
};

struct PcdOutput {
  FeatureMatrix neighbors;
  Index neighbor_fallbacks = 0;
  SoftAssignment assignment;
  PcdLoss loss;
};

/// Neighbor retrieval -> [anchors; neighbors; queue] -> assign_prototypes ->
/// global and local losses.
PcdOutput pcd_forward(const FeatureMatrix& anchors, std::span<const std::int64_t> anchor_ids,
                      const memory::MemoryQueue& queue, const model::PrototypeBank& target, const PcdConfig& cfg);

}  // namespace uniot::pcd
