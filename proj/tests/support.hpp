#pragma once

#include "uniot/model.hpp"
#include "uniot/types.hpp"

#include <doctest.h>

#include <functional>
#include <random>

namespace uniot::testing {

inline Matrix uniform_matrix(Index rows, Index cols, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

inline Matrix gaussian_matrix(Index rows, Index cols, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

inline FeatureMatrix unit_rows(Index rows, Index cols, Rng& rng) {
  Matrix m = gaussian_matrix(rows, cols, rng);
  normalize_rows(m);
  return m;
}

inline Matrix basis_rows(Index count, Index dim) {
  Matrix m = Matrix::Zero(count, dim);
  for (Index i = 0; i < count; ++i) m(i, i) = 1.0;
  return m;
}

// ||a - b|| / max(||a||, ||b||), with a floor so all-zero pairs compare equal.
inline double relative_error(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-10});
  return (a - b).norm() / scale;
}

// Central differences of `loss` over every entry of every parameter tensor;
// returns the worst per-tensor relative error against `analytic`.
inline double worst_gradient_error(model::Parameters params, model::Gradients analytic,
                                   const std::function<double(const model::Parameters&)>& loss,
                                   double step = 1e-5) {
  auto p_tensors = params.tensors();
  auto g_tensors = analytic.tensors();
  double worst = 0.0;
  for (size_t t = 0; t < p_tensors.size(); ++t) {
    auto& p = p_tensors[t];
    Vector numeric(p.size());
    for (Index i = 0; i < p.size(); ++i) {
      const double keep = p[i];
      p[i] = keep + step;
      const double up = loss(params);
      p[i] = keep - step;
      const double down = loss(params);
      p[i] = keep;
      numeric[i] = (up - down) / (2.0 * step);
    }
    worst = std::max(worst, relative_error(g_tensors[t], numeric));
  }
  return worst;
}

inline model::Parameters small_parameters(Index input_dim, Index source_classes, Index target_protos, Rng& rng) {
  model::Parameters p;
  p.extractor = model::FeatureExtractor::random(input_dim, 6, 5, rng);
  std::normal_distribution<double> n(0.0, 0.1);
  for (Index i = 0; i < p.extractor.b1.size(); ++i) p.extractor.b1[i] = n(rng);
  for (Index i = 0; i < p.extractor.b2.size(); ++i) p.extractor.b2[i] = n(rng);
  p.source = model::PrototypeBank::random(source_classes, 5, rng);
  p.target = model::PrototypeBank::random(target_protos, 5, rng);
  return p;
}

}  // namespace uniot::testing
