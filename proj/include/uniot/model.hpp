#pragma once

#include "uniot/types.hpp"

#include "json.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace uniot::model {

/// Two-layer perceptron input -> hidden (tanh) -> embed, followed by
/// l2 normalization of each output row.
struct FeatureExtractor {
  Matrix w1;  // hidden x input
  Vector b1;
  Matrix w2;  // embed x hidden
  Vector b2;

  static FeatureExtractor random(Index input_dim, Index hidden_dim, Index embed_dim, Rng& rng);

  Index input_dim() const { return w1.cols(); }
  Index hidden_dim() const { return w1.rows(); }
  Index embed_dim() const { return w2.rows(); }
};

/// Intermediate values kept for the backward pass.
struct ForwardCache {
  Matrix input;
  Matrix hidden;  // tanh activations
  Matrix raw;     // pre-normalization embeddings
  FeatureMatrix features;
};

ForwardCache forward_cached(const FeatureExtractor& f, const Matrix& x);
FeatureMatrix forward(const FeatureExtractor& f, const Matrix& x);

/// Unit-norm centroids, one per row. Renormalize after every update.
struct PrototypeBank {
  Matrix centroids;

  static PrototypeBank random(Index count, Index dim, Rng& rng);
  Index size() const { return centroids.rows(); }
  void renormalize() { normalize_rows(centroids); }
};

struct Parameters {
  FeatureExtractor extractor;
  PrototypeBank source;  // classifier over source classes
  PrototypeBank target;  // K target prototypes

  static constexpr size_t kTensorCount = 6;
  std::array<Eigen::Map<Vector>, kTensorCount> tensors();
};

/// Buffers shaped like Parameters.
struct Gradients {
  Matrix w1;
  Vector b1;
  Matrix w2;
  Vector b2;
  Matrix source;
  Matrix target;

  static Gradients zeros_like(const Parameters& p);
  std::array<Eigen::Map<Vector>, Parameters::kTensorCount> tensors();
  bool all_finite() const;
  void set_zero();
};

/// Accumulates d(loss)/d(parameters) of the extractor given d(loss)/d(features).
void backward(const FeatureExtractor& f, const ForwardCache& cache, const Matrix& d_features, Gradients& grads);

/// Row-wise softmax of Z C^T / tau.
Matrix classifier_probs(const FeatureMatrix& z, const PrototypeBank& bank, double tau);

/// Value and partial derivatives of a cross-entropy term w.r.t. its feature
/// rows and prototype rows.
struct LossGrad {
  double value = 0.0;
  Matrix d_features;
  Matrix d_prototypes;
};

/// (1 / normalizer) * sum_i -sum_k targets_ik log softmax(z_i C^T / tau)_k.
/// Rows whose target row is all zero contribute nothing.
LossGrad soft_cross_entropy(const FeatureMatrix& z, const Matrix& targets, const Matrix& prototypes, double tau,
                            double normalizer);

/// Mean negative log-likelihood of the labels under classifier_probs.
LossGrad source_cls_loss(const FeatureMatrix& z, std::span<const Index> labels, const PrototypeBank& bank,
                         double tau);

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// Classical momentum: v <- m v + (g + wd p); p <- p - lr v. Prototype banks
/// are renormalized afterwards. Returns false (and leaves everything
/// untouched) when a gradient is non-finite.
bool sgd_step(Parameters& params, Gradients& velocity, Gradients& grads, const SgdConfig& cfg);

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  Parameters params;
  Gradients velocity;
  std::int64_t step = 0;
  std::vector<double> beta;
  std::string rng_state;
};

nlohmann::json to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

}  // namespace uniot::model
