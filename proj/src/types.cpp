#include "uniot/types.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace uniot {

bool has_unit_rows(const Matrix& rows, double tol) {
  for (Index i = 0; i < rows.rows(); ++i) {
    const double n = rows.row(i).norm();
    if (!std::isfinite(n) || std::abs(n - 1.0) > tol) return false;
  }
  return true;
}

void require_unit_rows(const Matrix& rows, const char* what) {
  for (Index i = 0; i < rows.rows(); ++i) {
    const double n = rows.row(i).norm();
    if (!std::isfinite(n) || std::abs(n - 1.0) > kUnitNormTolerance) {
      throw std::invalid_argument(std::string(what) + ": row " + std::to_string(i) + " has norm " +
                                  std::to_string(n) + ", expected 1");
    }
  }
}

void normalize_rows(Matrix& rows) {
  for (Index i = 0; i < rows.rows(); ++i) rows.row(i) /= rows.row(i).norm() + kNormFloor;
}

Matrix gather_rows(const Matrix& src, const std::vector<Index>& idx) {
  Matrix out(static_cast<Index>(idx.size()), src.cols());
  for (size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Index>(k)) = src.row(idx[k]);
  return out;
}

}  // namespace uniot
