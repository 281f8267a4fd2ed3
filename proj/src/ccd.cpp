#include "uniot/ccd.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace uniot::ccd {

namespace {

// Slack for threshold comparisons: column sums of a normalized coupling can
// land one ulp below an exact 1/m.
constexpr double kThresholdSlack = 1e-12;

Index argmax_lowest(const auto& row) {
  Index best = 0;
  for (Index k = 1; k < row.size(); ++k)
    if (row[k] > row[best]) best = k;
  return best;
}

Index argmin_lowest(const auto& row) {
  Index best = 0;
  for (Index k = 1; k < row.size(); ++k)
    if (row[k] < row[best]) best = k;
  return best;
}

// `count` draws from [0, pool): distinct when possible, otherwise with
// replacement.
std::vector<Index> draw_indices(Index pool, Index count, Rng& rng) {
  std::vector<Index> out;
  out.reserve(static_cast<size_t>(count));
  if (count <= pool) {
    std::vector<Index> all(static_cast<size_t>(pool));
    std::iota(all.begin(), all.end(), Index{0});
    for (Index k = 0; k < count; ++k) {
      std::uniform_int_distribution<Index> pick(k, pool - 1);
      std::swap(all[static_cast<size_t>(k)], all[static_cast<size_t>(pick(rng))]);
      out.push_back(all[static_cast<size_t>(k)]);
    }
  } else {
    std::uniform_int_distribution<Index> pick(0, pool - 1);
    for (Index k = 0; k < count; ++k) out.push_back(pick(rng));
  }
  return out;
}

CcdOutput solve_and_detect(FillReport fill, Index batch_rows, const model::PrototypeBank& source,
                           const AdaptiveBeta& beta, const CcdConfig& cfg) {
  const Index n = fill.filled_features.rows();
  const Matrix sim = fill.filled_features * source.centroids.transpose();
  const ot::SolveResult solve =
      ot::unbalanced_sinkhorn(sim, ot::ProbabilityVector::uniform(n), beta.beta(), cfg.solver);
  CcdOutput out;
  out.qbar = normalize_coupling(solve.coupling);
  out.detection = detect_common(confidences(out.qbar), n, source.size());
  out.fill = std::move(fill);
  out.batch_rows = batch_rows;
  out.solver_iterations = solve.iterations;
  out.solver_converged = solve.converged();
  out.col_potential = solve.log_v;
  return out;
}

void count_split(const Matrix& sim, double gamma, FillReport& report) {
  for (Index i = 0; i < sim.rows(); ++i) {
    if (sim.row(i).maxCoeff() > gamma) {
      ++report.positives_before;
    } else {
      ++report.negatives_before;
    }
  }
}

}  // namespace

const char* to_string(RowOrigin origin) {
  switch (origin) {
    case RowOrigin::kBatch: return "batch";
    case RowOrigin::kQueue: return "queue";
    case RowOrigin::kFakeNegative: return "fake_negative";
    case RowOrigin::kReusedPositive: return "reused_positive";
  }
  return "unknown";
}

AdaptiveBeta::AdaptiveBeta(Index prototypes, double mu) : AdaptiveBeta(ot::ProbabilityVector::uniform(prototypes), mu) {}

AdaptiveBeta::AdaptiveBeta(ot::ProbabilityVector beta, double mu) : beta_(std::move(beta)), mu_(mu) {
  if (!(mu >= 0.0 && mu <= 1.0)) throw std::invalid_argument("mu must lie in [0, 1]");
}

void AdaptiveBeta::update(const ot::CouplingMatrix& qbar) {
  if (qbar.cols() != beta_.size()) throw std::invalid_argument("AdaptiveBeta::update: column count mismatch");
  beta_ = ot::ProbabilityVector(mu_ * beta_.weights() + (1.0 - mu_) * qbar.col_marginal());
}

ot::CouplingMatrix normalize_coupling(const ot::CouplingMatrix& q) {
  const double total = q.values().sum();
  if (!(total > 0.0)) throw std::invalid_argument("normalize_coupling: coupling has no mass");
  return ot::CouplingMatrix(q.values() / total);
}

DetectionResult confidences(const ot::CouplingMatrix& qbar) {
  DetectionResult det;
  const Matrix& q = qbar.values();
  det.w_t.resize(q.rows());
  det.pseudo_labels.resize(static_cast<size_t>(q.rows()));
  for (Index i = 0; i < q.rows(); ++i) {
    const Index k = argmax_lowest(q.row(i));
    det.pseudo_labels[static_cast<size_t>(i)] = k;
    det.w_t[i] = q(i, k);
  }
  det.w_s = qbar.col_marginal();
  return det;
}

DetectionResult detect_common(DetectionResult det, Index n, Index m) {
  if (n <= 0 || m <= 0) throw std::invalid_argument("detect_common: n and m must be positive");
  const double row_threshold = (1.0 - kThresholdSlack) / static_cast<double>(n);
  const double col_threshold = (1.0 - kThresholdSlack) / static_cast<double>(m);
  det.mask.assign(static_cast<size_t>(det.w_t.size()), false);
  for (Index i = 0; i < det.w_t.size(); ++i) {
    const Index k = det.pseudo_labels[static_cast<size_t>(i)];
    det.mask[static_cast<size_t>(i)] = det.w_t[i] >= row_threshold && det.w_s[k] >= col_threshold;
  }
  return det;
}

FillReport adaptive_fill(const FeatureMatrix& z, Index batch_rows, const model::PrototypeBank& source, double gamma,
                         const ot::ProbabilityVector& beta, const ot::SolverConfig& solver, Rng& rng) {
  const Index n = z.rows();
  if (n == 0) throw std::invalid_argument("adaptive_fill: empty feature set");
  if (batch_rows < 0 || batch_rows > n) throw std::invalid_argument("adaptive_fill: batch_rows out of range");

  FillReport report;
  report.provenance.reserve(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) report.provenance.push_back(i < batch_rows ? RowOrigin::kBatch : RowOrigin::kQueue);

  const Matrix sim = z * source.centroids.transpose();
  count_split(sim, gamma, report);

  std::vector<Vector> added;
  if (report.positives_before > report.negatives_before) {
    const Index gap = report.positives_before - report.negatives_before;
    for (Index row : draw_indices(n, gap, rng)) {
      const Index far = argmin_lowest(sim.row(row));
      Vector fake = 0.5 * (z.row(row) + source.centroids.row(far)).transpose();
      fake /= fake.norm() + kNormFloor;
      added.push_back(std::move(fake));
      report.provenance.push_back(RowOrigin::kFakeNegative);
    }
    report.fake_negatives_added = gap;
  } else if (report.negatives_before > report.positives_before) {
    const Index gap = report.negatives_before - report.positives_before;
    // Preliminary detection without filling supplies the confident pool.
    const ot::SolveResult pre = ot::unbalanced_sinkhorn(sim, ot::ProbabilityVector::uniform(n), beta, solver);
    const DetectionResult det = detect_common(confidences(normalize_coupling(pre.coupling)), n, source.size());
    std::vector<Index> pool;
    for (Index i = 0; i < n; ++i)
      if (det.mask[static_cast<size_t>(i)]) pool.push_back(i);
    if (!pool.empty()) {
      for (Index k : draw_indices(static_cast<Index>(pool.size()), gap, rng)) {
        added.push_back(z.row(pool[static_cast<size_t>(k)]).transpose());
        report.provenance.push_back(RowOrigin::kReusedPositive);
      }
      report.positives_added = gap;
    }
  }

  report.filled_features.resize(n + static_cast<Index>(added.size()), z.cols());
  report.filled_features.topRows(n) = z;
  for (size_t k = 0; k < added.size(); ++k) report.filled_features.row(n + static_cast<Index>(k)) = added[k].transpose();
  return report;
}

model::LossGrad ccd_loss(const FeatureMatrix& z_batch, const DetectionResult& det, const model::PrototypeBank& source,
                         double tau, Index* selected) {
  const Index b = z_batch.rows();
  if (static_cast<Index>(det.mask.size()) < b || static_cast<Index>(det.pseudo_labels.size()) < b) {
    throw std::invalid_argument("ccd_loss: detection result shorter than the batch");
  }
  Matrix targets = Matrix::Zero(b, source.size());
  Index count = 0;
  for (Index i = 0; i < b; ++i) {
    if (!det.mask[static_cast<size_t>(i)]) continue;
    targets(i, det.pseudo_labels[static_cast<size_t>(i)]) = 1.0;
    ++count;
  }
  if (selected != nullptr) *selected = count;
  return model::soft_cross_entropy(z_batch, targets, source.centroids, tau, static_cast<double>(count));
}

CcdOutput ccd_detect(const FeatureMatrix& rows, Index batch_rows, const model::PrototypeBank& source,
                     const AdaptiveBeta& beta, const CcdConfig& cfg, Rng& rng) {
  FillReport fill;
  if (cfg.adaptive_fill) {
    fill = adaptive_fill(rows, batch_rows, source, cfg.gamma, beta.beta(), cfg.solver, rng);
  } else {
    if (rows.rows() == 0) throw std::invalid_argument("ccd_detect: empty feature set");
    fill.filled_features = rows;
    count_split(rows * source.centroids.transpose(), cfg.gamma, fill);
    for (Index i = 0; i < rows.rows(); ++i)
      fill.provenance.push_back(i < batch_rows ? RowOrigin::kBatch : RowOrigin::kQueue);
  }
  return solve_and_detect(std::move(fill), batch_rows, source, beta, cfg);
}

CcdOutput ccd_forward(const FeatureMatrix& z_batch, const memory::MemoryQueue& queue,
                      const model::PrototypeBank& source, const AdaptiveBeta& beta, const CcdConfig& cfg, Rng& rng) {
  const memory::FilledBatch filled = queue.fill_batch(z_batch);
  return ccd_detect(filled.rows, filled.batch_rows, source, beta, cfg, rng);
}

}  // namespace uniot::ccd
