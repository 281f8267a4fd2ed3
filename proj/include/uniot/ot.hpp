#pragma once

#include "uniot/types.hpp"

#include <vector>

namespace uniot::ot {

/// Nonnegative weights summing to one. Solvers additionally require every
/// entry to be strictly positive.
class ProbabilityVector {
 public:
  explicit ProbabilityVector(Vector weights);

  static ProbabilityVector uniform(Index n);

  const Vector& weights() const { return weights_; }
  Index size() const { return weights_.size(); }
  double operator[](Index i) const { return weights_[i]; }

 private:
  Vector weights_;
};

/// Nonnegative transport plan with cached marginals.
class CouplingMatrix {
 public:
  CouplingMatrix() = default;
  explicit CouplingMatrix(Matrix values);

  const Matrix& values() const { return values_; }
  const Vector& row_marginal() const { return row_marginal_; }
  const Vector& col_marginal() const { return col_marginal_; }
  Index rows() const { return values_.rows(); }
  Index cols() const { return values_.cols(); }
  double total_mass() const { return row_marginal_.sum(); }

 private:
  Matrix values_;
  Vector row_marginal_;
  Vector col_marginal_;
};

struct SolverConfig {
  double epsilon = 0.01;
  double kappa = 0.5;
  int max_iters = 1000;
  double tolerance = 1e-6;
  // Records the dual objective after every balanced iteration.
  bool record_trace = false;
  // Starting column potential (log scaling of the prototype side); empty
  // means zero. Lets a caller resume from a previous, similar problem.
  Vector initial_col_potential;

  void validate(bool uses_kappa) const;
};

enum class SolveStatus { kConverged, kMaxIterations };

struct SolveResult {
  CouplingMatrix coupling;
  SolveStatus status = SolveStatus::kMaxIterations;
  int iterations = 0;
  int newton_steps = 0;
  // Balanced: L1 violation of the row marginal (columns are exact after the
  // final update). Unbalanced: L-infinity change of the log-scalings.
  double final_error = 0.0;
  // Log-scalings: Q_ij = exp(log_u_i + K_ij + log_v_j).
  Vector log_u;
  Vector log_v;
  // Dual objective of the equivalent cost-minimization problem (cost = -M).
  // Non-decreasing across iterations.
  std::vector<double> dual_trace;

  bool converged() const { return status == SolveStatus::kConverged; }
};

/// Entropic OT: argmax_Q Tr(Q^T M) + eps H(Q) over the transport polytope
/// U(alpha, beta). Log-domain Sinkhorn sweeps on the column potential; once
/// every row sum is within a factor of the target, damped Newton steps on
/// the sweep's fixed point equation take over.
SolveResult sinkhorn(const Matrix& similarity, const ProbabilityVector& alpha,
                     const ProbabilityVector& beta, const SolverConfig& cfg);

/// Unbalanced OT with KL-relaxed marginals weighted by kappa, solved by
/// generalized Sinkhorn updates with exponent kappa / (kappa + eps).
SolveResult unbalanced_sinkhorn(const Matrix& similarity, const ProbabilityVector& alpha,
                                const ProbabilityVector& beta, const SolverConfig& cfg);

/// -sum Q log Q with 0 log 0 = 0.
double entropy(const Matrix& q);

/// Unnormalized KL: sum p log(p/q) - p + q. +inf when q_i = 0 < p_i.
double kl_divergence(const Vector& p, const Vector& q);

/// Tr(Q^T M) + eps H(Q).
double ot_objective(const Matrix& similarity, const Matrix& q, double epsilon);
double ot_objective(const Matrix& similarity, const CouplingMatrix& q, double epsilon);

/// Tr(Q^T M) + eps H(Q) - kappa (KL(Q1 | alpha) + KL(Q^T 1 | beta)); -inf when
/// a KL term is infinite.
double uot_objective(const Matrix& similarity, const CouplingMatrix& q, const ProbabilityVector& alpha,
                     const ProbabilityVector& beta, double epsilon, double kappa);

/// Exact maximizer of Tr(Q^T M) over U(alpha, beta) by enumerating the
/// basic feasible solutions (spanning trees of the bipartite support graph).
/// Limited to 4x4.
CouplingMatrix exact_ot_oracle(const Matrix& similarity, const ProbabilityVector& alpha,
                               const ProbabilityVector& beta);

inline constexpr Index kOracleMaxDim = 4;

}  // namespace uniot::ot
