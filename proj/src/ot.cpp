#include "uniot/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace uniot::ot {

namespace {

constexpr double kSimplexTolerance = 1e-9;
// Newton steps are only tried once every row sum is within this factor.
constexpr double kNewtonRadius = 0.5;
// Below this a column's mass in the reused row softmax has lost too many
// digits to underflow; the column pass is then done from scratch.
constexpr double kMinReusedMass = 1e-200;
// A Newton step moves no potential by more than this (in log units), and is
// halved at most four times before a plain sweep is taken instead.
constexpr double kMaxNewtonMove = 2.0;
constexpr double kMinNewtonScale = 0.0625;

void check_problem(const Matrix& m, const ProbabilityVector& alpha, const ProbabilityVector& beta) {
  if (m.rows() != alpha.size() || m.cols() != beta.size()) {
    throw std::invalid_argument("similarity is " + std::to_string(m.rows()) + "x" +
                                std::to_string(m.cols()) + " but marginals have sizes " +
                                std::to_string(alpha.size()) + " and " + std::to_string(beta.size()));
  }
  if (m.size() == 0) throw std::invalid_argument("empty similarity matrix");
  if (!m.allFinite()) throw std::invalid_argument("similarity matrix has non-finite entries");
  if ((alpha.weights().array() <= 0.0).any() || (beta.weights().array() <= 0.0).any()) {
    throw std::invalid_argument("marginals must be strictly positive");
  }
}

// LSE_j (K_ij + g_j) for every row i. `softmax`, if given, receives the
// row-normalized exponentials.
Vector exact_row_lse(const Matrix& logk, const Vector& g, Matrix* softmax = nullptr) {
  Matrix local;
  Matrix& s = softmax != nullptr ? *softmax : local;
  s = logk.rowwise() + g.transpose();
  const Vector peak = s.rowwise().maxCoeff();
  s = (s.colwise() - peak).array().exp();
  const Vector acc = s.rowwise().sum();
  if (softmax != nullptr) s.array().colwise() /= acc.array();
  return peak.array() + acc.array().log();
}

// LSE_i (K_ij + f_i) for every column j. `softmax`, if given, receives the
// column-normalized exponentials.
Vector exact_col_lse(const Matrix& logk, const Vector& f, Matrix* softmax = nullptr) {
  Matrix local;
  Matrix& s = softmax != nullptr ? *softmax : local;
  s = logk.colwise() + f;
  const Vector peak = s.colwise().maxCoeff().transpose();
  s = (s.rowwise() - peak.transpose()).array().exp();
  const Vector acc = s.colwise().sum().transpose();
  if (softmax != nullptr) s.array().rowwise() /= acc.transpose().array();
  return peak.array() + acc.array().log();
}

Matrix plan_from_potentials(const Matrix& logk, const Vector& f, const Vector& g) {
  return ((logk.colwise() + f).rowwise() + g.transpose()).array().exp();
}

// Row potential as a function of the column potential, and the map
// g -> T(g) obtained by one row update followed by one column update. With
// power 1 this is a balanced Sinkhorn sweep.
struct FixedPointMap {
  const Matrix& logk;
  const Vector& log_alpha;
  const Vector& log_beta;
  double power;

  struct Point {
    Vector g;
    Vector f;       // rows updated against g
    Vector tg;      // columns updated against f
    Matrix row_sm;  // softmax over columns of logk + g, per row
    Matrix col_sm;  // softmax over rows of logk + f, per column

    double residual_norm() const { return (tg - g).cwiseAbs().maxCoeff(); }

    // Upper bound on the L1 row violation of the plan built from (f, tg):
    // each row sum is alpha_i times a convex mean of exp(tg - g).
    double row_violation_bound() const {
      const Vector d = tg - g;
      return std::max(std::abs(std::expm1(d.maxCoeff())), std::abs(std::expm1(d.minCoeff())));
    }

    double row_violation(const Matrix& logk, const Vector& alpha) const {
      const Vector rows = (f + exact_row_lse(logk, tg)).array().exp();
      return (rows - alpha).cwiseAbs().sum();
    }
  };

  Point evaluate(Vector g) const {
    Point p;
    const Vector row_lse = exact_row_lse(logk, g, &p.row_sm);
    p.f = power * (log_alpha - row_lse);
    // logk_ij + f_i = log row_sm_ij - g_j + w_i, so the column reduction
    // reuses the row softmax instead of exponentiating logk again.
    const Vector w = row_lse + p.f;
    const double w_max = w.maxCoeff();
    const Vector scale = (w.array() - w_max).exp();
    p.col_sm = p.row_sm.array().colwise() * scale.array();
    const Vector mass = p.col_sm.colwise().sum().transpose();
    Vector col_lse;
    if (mass.allFinite() && mass.minCoeff() > kMinReusedMass) {
      p.col_sm.array().rowwise() /= mass.transpose().array();
      col_lse = mass.array().log() + w_max - g.array();
    } else {
      col_lse = exact_col_lse(logk, p.f, &p.col_sm);
    }
    p.tg = power * (log_beta - col_lse);
    p.g = std::move(g);
    return p;
  }

  // Solves (I - dT/dg) step = T(g) - g, with dT/dg = power^2 col_sm^T row_sm.
  // In the balanced case constants are a null direction (the gauge f - t,
  // g + t); a rank-one term pins it.
  Vector newton_direction(const Point& p) const {
    const Index m = p.g.size();
    Matrix a = -power * power * (p.col_sm.transpose() * p.row_sm);
    a.diagonal().array() += 1.0;
    if (power == 1.0) a.array() += 1.0 / static_cast<double>(m);
    return a.partialPivLu().solve(p.tg - p.g);
  }
};

}  // namespace

ProbabilityVector::ProbabilityVector(Vector weights) : weights_(std::move(weights)) {
  if (weights_.size() == 0) throw std::invalid_argument("probability vector is empty");
  if (!weights_.allFinite()) throw std::invalid_argument("probability vector has non-finite entries");
  if ((weights_.array() < 0.0).any()) throw std::invalid_argument("probability vector has negative entries");
  if (std::abs(weights_.sum() - 1.0) > kSimplexTolerance) {
    throw std::invalid_argument("probability vector sums to " + std::to_string(weights_.sum()));
  }
}

ProbabilityVector ProbabilityVector::uniform(Index n) {
  if (n <= 0) throw std::invalid_argument("uniform vector needs n > 0");
  return ProbabilityVector(Vector::Constant(n, 1.0 / static_cast<double>(n)));
}

CouplingMatrix::CouplingMatrix(Matrix values) : values_(std::move(values)) {
  if (!values_.allFinite()) throw std::invalid_argument("coupling has non-finite entries");
  if ((values_.array() < 0.0).any()) throw std::invalid_argument("coupling has negative entries");
  row_marginal_ = values_.rowwise().sum();
  col_marginal_ = values_.colwise().sum().transpose();
}

void SolverConfig::validate(bool uses_kappa) const {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw std::invalid_argument("epsilon must be > 0");
  if (uses_kappa && (!(kappa >= 0.0) || !std::isfinite(kappa))) throw std::invalid_argument("kappa must be >= 0");
  if (max_iters <= 0) throw std::invalid_argument("max_iters must be positive");
  if (!(tolerance > 0.0)) throw std::invalid_argument("tolerance must be > 0");
  if (!initial_col_potential.allFinite()) throw std::invalid_argument("initial column potential must be finite");
}

namespace {

Vector initial_g(const SolverConfig& cfg, Index cols) {
  if (cfg.initial_col_potential.size() == 0) return Vector::Zero(cols);
  if (cfg.initial_col_potential.size() != cols) throw std::invalid_argument("initial column potential has wrong length");
  return cfg.initial_col_potential;
}

}  // namespace

SolveResult sinkhorn(const Matrix& similarity, const ProbabilityVector& alpha, const ProbabilityVector& beta,
                     const SolverConfig& cfg) {
  cfg.validate(false);
  check_problem(similarity, alpha, beta);

  const Matrix logk = similarity / cfg.epsilon;
  const Vector log_alpha = alpha.weights().array().log();
  const Vector log_beta = beta.weights().array().log();
  const FixedPointMap map{logk, log_alpha, log_beta, 1.0};

  // Every evaluated point has exact columns, so the plan has unit mass and
  // the dual reduces to eps * (<alpha, f> + <beta, g>).
  auto dual = [&](const FixedPointMap::Point& p) {
    return cfg.epsilon * (alpha.weights().dot(p.f) + beta.weights().dot(p.tg));
  };

  SolveResult result;
  FixedPointMap::Point at = map.evaluate(initial_g(cfg, similarity.cols()));
  double err = std::numeric_limits<double>::infinity();
  int it = 0;
  while (it < cfg.max_iters) {
    ++it;
    double value = dual(at);
    if (cfg.record_trace) result.dual_trace.push_back(value);
    if (at.row_violation_bound() <= cfg.tolerance) {
      err = at.row_violation(logk, alpha.weights());
      if (err <= cfg.tolerance) break;
    }
    if (it == cfg.max_iters) {
      err = at.row_violation(logk, alpha.weights());
      break;
    }

    // g -> T(g) is a plain Sinkhorn sweep. Near the solution a Newton step on
    // g - T(g) converges in a handful of sweeps; it is kept only if it raises
    // the dual, so the trace stays monotone.
    bool accepted = false;
    if (at.row_violation_bound() < kNewtonRadius) {
      const Vector step = map.newton_direction(at);
      const double first = std::min(1.0, kMaxNewtonMove / step.cwiseAbs().maxCoeff());
      for (double t = first; !accepted && t >= kMinNewtonScale * first && step.allFinite(); t *= 0.5) {
        FixedPointMap::Point trial = map.evaluate(at.g + t * step);
        if (dual(trial) > value) {
          at = std::move(trial);
          accepted = true;
          ++result.newton_steps;
        }
      }
    }
    if (!accepted) at = map.evaluate(at.tg);
  }

  result.iterations = it;
  result.final_error = err;
  result.status = err <= cfg.tolerance ? SolveStatus::kConverged : SolveStatus::kMaxIterations;
  result.coupling = CouplingMatrix(plan_from_potentials(logk, at.f, at.tg));
  result.log_u = std::move(at.f);
  result.log_v = std::move(at.tg);
  return result;
}

SolveResult unbalanced_sinkhorn(const Matrix& similarity, const ProbabilityVector& alpha,
                                const ProbabilityVector& beta, const SolverConfig& cfg) {
  cfg.validate(true);
  check_problem(similarity, alpha, beta);

  // First-order condition of the entropy term without the linear +Q part
  // contributes the -1.
  const Matrix logk = (similarity / cfg.epsilon).array() - 1.0;
  SolveResult result;
  Vector f = Vector::Zero(similarity.rows());
  Vector g = Vector::Zero(similarity.cols());

  if (cfg.kappa == 0.0) {
    result.status = SolveStatus::kConverged;
    result.coupling = CouplingMatrix(plan_from_potentials(logk, f, g));
    result.log_u = std::move(f);
    result.log_v = std::move(g);
    return result;
  }

  const double power = cfg.kappa / (cfg.kappa + cfg.epsilon);
  const Vector log_alpha = alpha.weights().array().log();
  const Vector log_beta = beta.weights().array().log();

  // f is an explicit function of g, so the iteration is a fixed point
  // g = T(g) in prototype space. T contracts with factor power^2, which is
  // slow when kappa >> epsilon; a Newton step on g - T(g) is tried first and
  // kept only if it shrinks the residual faster than a plain step would.
  const FixedPointMap map{logk, log_alpha, log_beta, power};
  g = initial_g(cfg, similarity.cols());
  FixedPointMap::Point at = map.evaluate(g);
  double change = at.residual_norm();
  int it = 0;
  while (it < cfg.max_iters && !(change < cfg.tolerance)) {
    ++it;
    const Vector plain = at.tg;
    bool accepted = false;
    const Vector step = map.newton_direction(at);
    if (step.allFinite()) {
      FixedPointMap::Point trial = map.evaluate(at.g + step);
      if (trial.residual_norm() < power * power * change) {
        at = std::move(trial);
        accepted = true;
      }
    }
    if (!accepted) at = map.evaluate(plain);
    change = at.residual_norm();
  }
  f = at.f;
  g = at.tg;
  result.iterations = it;
  result.final_error = change;
  result.status = change < cfg.tolerance ? SolveStatus::kConverged : SolveStatus::kMaxIterations;
  result.coupling = CouplingMatrix(plan_from_potentials(logk, f, g));
  result.log_u = std::move(f);
  result.log_v = std::move(g);
  return result;
}

double entropy(const Matrix& q) {
  double h = 0.0;
  for (Index i = 0; i < q.size(); ++i) {
    const double x = q.data()[i];
    if (x > 0.0) h -= x * std::log(x);
  }
  return h;
}

double kl_divergence(const Vector& p, const Vector& q) {
  if (p.size() != q.size()) throw std::invalid_argument("kl_divergence: size mismatch");
  double d = 0.0;
  for (Index i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) {
      if (q[i] <= 0.0) return std::numeric_limits<double>::infinity();
      d += p[i] * std::log(p[i] / q[i]);
    }
    d += q[i] - p[i];
  }
  return d;
}

double ot_objective(const Matrix& similarity, const Matrix& q, double epsilon) {
  if (similarity.rows() != q.rows() || similarity.cols() != q.cols()) {
    throw std::invalid_argument("ot_objective: dimension mismatch");
  }
  if ((q.array() < 0.0).any()) throw std::invalid_argument("ot_objective: negative coupling");
  const double transport = similarity.cwiseProduct(q).sum();
  return epsilon == 0.0 ? transport : transport + epsilon * entropy(q);
}

double ot_objective(const Matrix& similarity, const CouplingMatrix& q, double epsilon) {
  return ot_objective(similarity, q.values(), epsilon);
}

double uot_objective(const Matrix& similarity, const CouplingMatrix& q, const ProbabilityVector& alpha,
                     const ProbabilityVector& beta, double epsilon, double kappa) {
  if (q.rows() != alpha.size() || q.cols() != beta.size()) {
    throw std::invalid_argument("uot_objective: dimension mismatch");
  }
  const double base = ot_objective(similarity, q, epsilon);
  if (kappa == 0.0) return base;
  const double penalty =
      kl_divergence(q.row_marginal(), alpha.weights()) + kl_divergence(q.col_marginal(), beta.weights());
  if (std::isinf(penalty)) return -std::numeric_limits<double>::infinity();
  return base - kappa * penalty;
}

CouplingMatrix exact_ot_oracle(const Matrix& similarity, const ProbabilityVector& alpha,
                               const ProbabilityVector& beta) {
  const Index rows = alpha.size();
  const Index cols = beta.size();
  if (similarity.rows() != rows || similarity.cols() != cols) {
    throw std::invalid_argument("exact_ot_oracle: dimension mismatch");
  }
  if (rows > kOracleMaxDim || cols > kOracleMaxDim) {
    throw std::invalid_argument("exact_ot_oracle: limited to 4x4 problems");
  }

  // A basic feasible solution of the transportation polytope is supported on
  // a spanning tree of the complete bipartite graph (rows + cols nodes,
  // rows + cols - 1 edges). Each tree determines its flow uniquely.
  const int cells = static_cast<int>(rows * cols);
  const int tree_edges = static_cast<int>(rows + cols - 1);
  const int nodes = static_cast<int>(rows + cols);

  std::vector<int> mask(static_cast<size_t>(cells), 0);
  std::fill(mask.begin(), mask.begin() + tree_edges, 1);

  double best_value = -std::numeric_limits<double>::infinity();
  Matrix best = Matrix::Zero(rows, cols);

  std::vector<int> parent(static_cast<size_t>(nodes));
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };

  do {
    std::iota(parent.begin(), parent.end(), 0);
    std::vector<int> edges;
    bool acyclic = true;
    for (int e = 0; e < cells && acyclic; ++e) {
      if (mask[e] == 0) continue;
      const int a = find(e / static_cast<int>(cols));
      const int b = find(static_cast<int>(rows) + e % static_cast<int>(cols));
      if (a == b) acyclic = false;
      parent[a] = b;
      edges.push_back(e);
    }
    if (!acyclic) continue;

    // Leaf peeling: a node with one remaining edge fixes that edge's flow.
    std::vector<double> supply(static_cast<size_t>(nodes));
    for (Index i = 0; i < rows; ++i) supply[i] = alpha[i];
    for (Index j = 0; j < cols; ++j) supply[rows + j] = beta[j];
    std::vector<int> degree(static_cast<size_t>(nodes), 0);
    for (int e : edges) {
      ++degree[e / cols];
      ++degree[rows + e % cols];
    }
    std::vector<bool> done(edges.size(), false);
    Matrix flow = Matrix::Zero(rows, cols);
    bool feasible = true;
    for (size_t solved = 0; solved < edges.size() && feasible;) {
      bool progress = false;
      for (size_t k = 0; k < edges.size(); ++k) {
        if (done[k]) continue;
        const int e = edges[k];
        const int r = e / static_cast<int>(cols);
        const int c = static_cast<int>(rows) + e % static_cast<int>(cols);
        int leaf = -1;
        int other = -1;
        if (degree[r] == 1) {
          leaf = r;
          other = c;
        } else if (degree[c] == 1) {
          leaf = c;
          other = r;
        } else {
          continue;
        }
        const double x = supply[leaf];
        if (x < -1e-12) {
          feasible = false;
          break;
        }
        flow(r, c - rows) = std::max(x, 0.0);
        supply[leaf] = 0.0;
        supply[other] -= x;
        --degree[r];
        --degree[c];
        done[k] = true;
        ++solved;
        progress = true;
      }
      if (!progress) feasible = false;
    }
    if (!feasible) continue;
    const double value = similarity.cwiseProduct(flow).sum();
    if (value > best_value) {
      best_value = value;
      best = flow;
    }
  } while (std::prev_permutation(mask.begin(), mask.end()));

  if (!std::isfinite(best_value)) throw std::runtime_error("exact_ot_oracle: no feasible vertex found");
  return CouplingMatrix(std::move(best));
}

}  // namespace uniot::ot
