#include "uniot/pcd.hpp"

#include <stdexcept>
#include <string>

namespace uniot::pcd {

SoftAssignment assign_prototypes(const FeatureMatrix& z, const model::PrototypeBank& target,
                                 const ot::SolverConfig& cfg) {
  const Index n = z.rows();
  const Index k = target.size();
  if (k < 2) throw std::invalid_argument("assign_prototypes: need at least two prototypes");
  if (k > n) {
    throw std::invalid_argument("assign_prototypes: " + std::to_string(k) + " prototypes exceed " +
                                std::to_string(n) + " rows");
  }
  const Matrix sim = z * target.centroids.transpose();
  ot::SolveResult solve = ot::sinkhorn(sim, ot::ProbabilityVector::uniform(n), ot::ProbabilityVector::uniform(k), cfg);
  SoftAssignment out;
  out.scale = static_cast<double>(n);
  out.rows = solve.coupling.values() * out.scale;
  out.raw = std::move(solve.coupling);
  out.solver_iterations = solve.iterations;
  out.solver_converged = solve.converged();
  out.col_potential = solve.log_v;
  return out;
}

model::LossGrad global_loss(const SoftAssignment& assign, const FeatureMatrix& anchors,
                            const model::PrototypeBank& target, double tau) {
  const Index b = anchors.rows();
  if (assign.rows.rows() < b) throw std::invalid_argument("global_loss: assignment has fewer rows than anchors");
  return model::soft_cross_entropy(anchors, assign.rows.topRows(b), target.centroids, tau, static_cast<double>(b));
}

LocalLossGrad local_loss(const SoftAssignment& assign, const FeatureMatrix& anchors, const FeatureMatrix& neighbors,
                         const model::PrototypeBank& target, double tau) {
  const Index b = anchors.rows();
  if (neighbors.rows() != b) throw std::invalid_argument("local_loss: one neighbor per anchor");
  if (assign.rows.rows() < 2 * b) throw std::invalid_argument("local_loss: assignment must cover anchors and neighbors");
  const double normalizer = 2.0 * static_cast<double>(b);
  const model::LossGrad anchor_term =
      model::soft_cross_entropy(anchors, assign.rows.middleRows(b, b), target.centroids, tau, normalizer);
  const model::LossGrad neighbor_term =
      model::soft_cross_entropy(neighbors, assign.rows.topRows(b), target.centroids, tau, normalizer);
  return {anchor_term.value + neighbor_term.value, anchor_term.d_features,
          anchor_term.d_prototypes + neighbor_term.d_prototypes};
}

PcdLoss pcd_loss(const model::LossGrad* global, const LocalLossGrad* local) {
  PcdLoss out;
  const int active = (global != nullptr ? 1 : 0) + (local != nullptr ? 1 : 0);
  if (active == 0) return out;
  const double w = 1.0 / active;
  if (global != nullptr) {
    out.global = global->value;
    out.d_anchors = w * global->d_features;
    out.d_prototypes = w * global->d_prototypes;
  }
  if (local != nullptr) {
    out.local = local->value;
    if (out.d_anchors.size() == 0) {
      out.d_anchors = w * local->d_anchors;
      out.d_prototypes = w * local->d_prototypes;
    } else {
      out.d_anchors += w * local->d_anchors;
      out.d_prototypes += w * local->d_prototypes;
    }
  }
  out.value = w * (out.global + out.local);
  return out;
}

PcdOutput pcd_forward(const FeatureMatrix& anchors, std::span<const std::int64_t> anchor_ids,
                      const memory::MemoryQueue& queue, const model::PrototypeBank& target, const PcdConfig& cfg) {
  PcdOutput out;
  out.neighbors = queue.nearest_neighbors(anchors, anchor_ids, &out.neighbor_fallbacks);

  const Index b = anchors.rows();
  const memory::FilledBatch tail = queue.fill_batch(out.neighbors);
  FeatureMatrix stacked(b + tail.rows.rows(), anchors.cols());
  stacked.topRows(b) = anchors;
  stacked.bottomRows(tail.rows.rows()) = tail.rows;

  out.assignment = assign_prototypes(stacked, target, cfg.solver);

  model::LossGrad g;
  LocalLossGrad l;
  if (cfg.use_global) g = global_loss(out.assignment, anchors, target, cfg.tau);
  if (cfg.use_local) l = local_loss(out.assignment, anchors, out.neighbors, target, cfg.tau);
  out.loss = pcd_loss(cfg.use_global ? &g : nullptr, cfg.use_local ? &l : nullptr);
  return out;
}

}  // namespace uniot::pcd
