#include "uniot/model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>

namespace uniot::model {

namespace {

Matrix gaussian_matrix(Index rows, Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

Eigen::Map<Vector> flat(Matrix& m) { return {m.data(), m.size()}; }
Eigen::Map<Vector> flat(Vector& v) { return {v.data(), v.size()}; }

nlohmann::json matrix_to_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

Matrix matrix_from_json(const nlohmann::json& j) {
  const Index rows = j.at("rows").get<Index>();
  const Index cols = j.at("cols").get<Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Index>(data.size()) != rows * cols) throw std::invalid_argument("checkpoint: tensor size mismatch");
  Matrix m(rows, cols);
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

Vector vector_from_json(const nlohmann::json& j) {
  const auto data = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(data.data(), static_cast<Index>(data.size()));
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

FeatureExtractor FeatureExtractor::random(Index input_dim, Index hidden_dim, Index embed_dim, Rng& rng) {
  if (input_dim <= 0 || hidden_dim <= 0 || embed_dim <= 0) throw std::invalid_argument("extractor dims must be > 0");
  FeatureExtractor f;
  f.w1 = gaussian_matrix(hidden_dim, input_dim, 1.0 / std::sqrt(static_cast<double>(input_dim)), rng);
  f.b1 = Vector::Zero(hidden_dim);
  f.w2 = gaussian_matrix(embed_dim, hidden_dim, 1.0 / std::sqrt(static_cast<double>(hidden_dim)), rng);
  f.b2 = Vector::Zero(embed_dim);
  return f;
}

ForwardCache forward_cached(const FeatureExtractor& f, const Matrix& x) {
  if (x.cols() != f.input_dim()) {
    throw std::invalid_argument("forward: input has " + std::to_string(x.cols()) + " columns, extractor expects " +
                                std::to_string(f.input_dim()));
  }
  if (!x.allFinite()) throw std::invalid_argument("forward: non-finite input");
  ForwardCache c;
  c.input = x;
  c.hidden = ((x * f.w1.transpose()).rowwise() + f.b1.transpose()).array().tanh();
  c.raw = (c.hidden * f.w2.transpose()).rowwise() + f.b2.transpose();
  c.features = c.raw;
  normalize_rows(c.features);
  return c;
}

FeatureMatrix forward(const FeatureExtractor& f, const Matrix& x) { return forward_cached(f, x).features; }

void backward(const FeatureExtractor& f, const ForwardCache& cache, const Matrix& d_features, Gradients& grads) {
  if (d_features.rows() != cache.features.rows() || d_features.cols() != cache.features.cols()) {
    throw std::invalid_argument("backward: gradient shape mismatch");
  }
  // z = h / (|h| + floor)  =>  dz/dh = I / (|h| + floor) - h h^T / (|h| (|h| + floor)^2)
  Matrix d_raw(d_features.rows(), d_features.cols());
  for (Index i = 0; i < d_raw.rows(); ++i) {
    const auto h = cache.raw.row(i);
    const auto g = d_features.row(i);
    const double n = h.norm();
    const double denom = n + kNormFloor;
    d_raw.row(i) = g / denom;
    if (n > 0.0) d_raw.row(i) -= h * (h.dot(g) / (n * denom * denom));
  }
  grads.w2.noalias() += d_raw.transpose() * cache.hidden;
  grads.b2 += d_raw.colwise().sum().transpose();
  const Matrix d_pre = (d_raw * f.w2).array() * (1.0 - cache.hidden.array().square());
  grads.w1.noalias() += d_pre.transpose() * cache.input;
  grads.b1 += d_pre.colwise().sum().transpose();
}

PrototypeBank PrototypeBank::random(Index count, Index dim, Rng& rng) {
  if (count <= 0 || dim <= 0) throw std::invalid_argument("prototype bank dims must be > 0");
  PrototypeBank bank{gaussian_matrix(count, dim, 1.0, rng)};
  bank.renormalize();
  return bank;
}

std::array<Eigen::Map<Vector>, Parameters::kTensorCount> Parameters::tensors() {
  return {flat(extractor.w1), flat(extractor.b1), flat(extractor.w2),
          flat(extractor.b2), flat(source.centroids), flat(target.centroids)};
}

Gradients Gradients::zeros_like(const Parameters& p) {
  return {Matrix::Zero(p.extractor.w1.rows(), p.extractor.w1.cols()),
          Vector::Zero(p.extractor.b1.size()),
          Matrix::Zero(p.extractor.w2.rows(), p.extractor.w2.cols()),
          Vector::Zero(p.extractor.b2.size()),
          Matrix::Zero(p.source.centroids.rows(), p.source.centroids.cols()),
          Matrix::Zero(p.target.centroids.rows(), p.target.centroids.cols())};
}

std::array<Eigen::Map<Vector>, Parameters::kTensorCount> Gradients::tensors() {
  return {flat(w1), flat(b1), flat(w2), flat(b2), flat(source), flat(target)};
}

bool Gradients::all_finite() const {
  return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite() && source.allFinite() &&
         target.allFinite();
}

void Gradients::set_zero() {
  w1.setZero();
  b1.setZero();
  w2.setZero();
  b2.setZero();
  source.setZero();
  target.setZero();
}

Matrix classifier_probs(const FeatureMatrix& z, const PrototypeBank& bank, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("classifier_probs: tau must be > 0");
  if (z.cols() != bank.centroids.cols()) throw std::invalid_argument("classifier_probs: dimension mismatch");
  Matrix logits = z * bank.centroids.transpose() / tau;
  for (Index i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
  return logits;
}

LossGrad soft_cross_entropy(const FeatureMatrix& z, const Matrix& targets, const Matrix& prototypes, double tau,
                            double normalizer) {
  if (z.rows() != targets.rows() || prototypes.rows() != targets.cols() || z.cols() != prototypes.cols()) {
    throw std::invalid_argument("soft_cross_entropy: shape mismatch");
  }
  LossGrad out;
  out.d_features = Matrix::Zero(z.rows(), z.cols());
  out.d_prototypes = Matrix::Zero(prototypes.rows(), prototypes.cols());
  if (z.rows() == 0 || normalizer <= 0.0) return out;

  const Matrix logits = z * prototypes.transpose() / tau;
  Matrix d_logits = Matrix::Zero(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const double mass = targets.row(i).sum();
    if (mass == 0.0) continue;
    const double peak = logits.row(i).maxCoeff();
    const double lse = peak + std::log((logits.row(i).array() - peak).exp().sum());
    const auto log_p = logits.row(i).array() - lse;
    out.value -= (targets.row(i).array() * log_p).sum();
    d_logits.row(i) = mass * log_p.exp().matrix() - targets.row(i);
  }
  const double scale = 1.0 / normalizer;
  out.value *= scale;
  out.d_features = d_logits * prototypes * (scale / tau);
  out.d_prototypes = d_logits.transpose() * z * (scale / tau);
  return out;
}

LossGrad source_cls_loss(const FeatureMatrix& z, std::span<const Index> labels, const PrototypeBank& bank,
                         double tau) {
  if (static_cast<Index>(labels.size()) != z.rows()) throw std::invalid_argument("source_cls_loss: one label per row");
  Matrix onehot = Matrix::Zero(z.rows(), bank.size());
  for (Index i = 0; i < z.rows(); ++i) {
    const Index y = labels[static_cast<size_t>(i)];
    if (y < 0 || y >= bank.size()) {
      throw std::out_of_range("source_cls_loss: label " + std::to_string(y) + " outside [0, " +
                              std::to_string(bank.size()) + ")");
    }
    onehot(i, y) = 1.0;
  }
  return soft_cross_entropy(z, onehot, bank.centroids, tau, static_cast<double>(z.rows()));
}

bool sgd_step(Parameters& params, Gradients& velocity, Gradients& grads, const SgdConfig& cfg) {
  if (!grads.all_finite()) return false;
  auto p = params.tensors();
  auto v = velocity.tensors();
  auto g = grads.tensors();
  for (size_t t = 0; t < Parameters::kTensorCount; ++t) {
    if (p[t].size() != g[t].size() || p[t].size() != v[t].size()) throw std::invalid_argument("sgd_step: shape mismatch");
    v[t] = cfg.momentum * v[t] + g[t] + cfg.weight_decay * p[t];
    p[t] -= cfg.lr * v[t];
  }
  params.source.renormalize();
  params.target.renormalize();
  return true;
}

nlohmann::json to_json(const Checkpoint& ckpt) {
  const auto& f = ckpt.params.extractor;
  nlohmann::json params = {{"w1", matrix_to_json(f.w1)},
                           {"b1", to_std(f.b1)},
                           {"w2", matrix_to_json(f.w2)},
                           {"b2", to_std(f.b2)},
                           {"source_prototypes", matrix_to_json(ckpt.params.source.centroids)},
                           {"target_prototypes", matrix_to_json(ckpt.params.target.centroids)}};
  const auto& v = ckpt.velocity;
  nlohmann::json velocity = {{"w1", matrix_to_json(v.w1)},
                             {"b1", to_std(v.b1)},
                             {"w2", matrix_to_json(v.w2)},
                             {"b2", to_std(v.b2)},
                             {"source_prototypes", matrix_to_json(v.source)},
                             {"target_prototypes", matrix_to_json(v.target)}};
  return {{"format_version", kCheckpointVersion},
          {"step", ckpt.step},
          {"params", params},
          {"velocity", velocity},
          {"beta", ckpt.beta},
          {"rng_state", ckpt.rng_state}};
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  const int version = j.at("format_version").get<int>();
  if (version != kCheckpointVersion) {
    throw std::invalid_argument("checkpoint format " + std::to_string(version) + " is not supported");
  }
  Checkpoint c;
  const auto& p = j.at("params");
  c.params.extractor.w1 = matrix_from_json(p.at("w1"));
  c.params.extractor.b1 = vector_from_json(p.at("b1"));
  c.params.extractor.w2 = matrix_from_json(p.at("w2"));
  c.params.extractor.b2 = vector_from_json(p.at("b2"));
  c.params.source.centroids = matrix_from_json(p.at("source_prototypes"));
  c.params.target.centroids = matrix_from_json(p.at("target_prototypes"));
  const auto& v = j.at("velocity");
  c.velocity.w1 = matrix_from_json(v.at("w1"));
  c.velocity.b1 = vector_from_json(v.at("b1"));
  c.velocity.w2 = matrix_from_json(v.at("w2"));
  c.velocity.b2 = vector_from_json(v.at("b2"));
  c.velocity.source = matrix_from_json(v.at("source_prototypes"));
  c.velocity.target = matrix_from_json(v.at("target_prototypes"));
  c.step = j.at("step").get<std::int64_t>();
  c.beta = j.at("beta").get<std::vector<double>>();
  c.rng_state = j.at("rng_state").get<std::string>();
  return c;
}

}  // namespace uniot::model
