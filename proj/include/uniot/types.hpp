#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <vector>

namespace uniot {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;
using Rng = std::mt19937_64;

// Rows are l2-normalized embeddings. Producers guarantee the invariant;
// consumers that accept external data call require_unit_rows().
using FeatureMatrix = Matrix;

inline constexpr double kUnitNormTolerance = 1e-6;
inline constexpr double kNormFloor = 1e-12;

void require_unit_rows(const Matrix& rows, const char* what);
bool has_unit_rows(const Matrix& rows, double tol = kUnitNormTolerance);

// Divides each row by (norm + kNormFloor).
void normalize_rows(Matrix& rows);

// Row i of `dst` receives `src.row(idx[i])`.
Matrix gather_rows(const Matrix& src, const std::vector<Index>& idx);

}  // namespace uniot
