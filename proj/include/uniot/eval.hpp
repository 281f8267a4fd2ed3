#pragma once

#include "uniot/ccd.hpp"
#include "uniot/model.hpp"
#include "uniot/synth.hpp"
#include "uniot/types.hpp"

#include "json.hpp"

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace uniot::eval {

inline constexpr Index kUnknown = -1;

struct Inference {
  std::vector<Index> labels;  // class index or kUnknown, one per input row
  ccd::CcdOutput detection;   // full-set detection, fills included
};

/// Adaptive filling over the whole target set, one UOT solve against the
/// source prototypes, then w_t >= 1/n keeps the nearest source class and
/// everything else is unknown. Fill rows are dropped from the labels.
Inference infer(const FeatureMatrix& z, const model::PrototypeBank& source, const ccd::AdaptiveBeta& beta,
                const ccd::CcdConfig& cfg, Rng& rng);

struct Accuracies {
  std::optional<double> common;   // correct class among common-truth samples
  std::optional<double> unknown;  // predicted unknown among private-truth samples
};

Accuracies per_class_accuracy(std::span<const Index> predictions, std::span<const Index> truth,
                              const std::set<Index>& common, const std::set<Index>& private_classes);

double h_score(double acc_common, double acc_unknown);
double h3_score(double acc_common, double acc_unknown, double nmi);

/// Harmonic mean; zero as soon as any term is zero.
double harmonic_mean(std::span<const double> values);

struct KMeansResult {
  std::vector<Index> assignments;
  Matrix centroids;
  double inertia = 0.0;
  std::vector<double> inertia_trace;  // after every Lloyd update
  int iterations = 0;
};

inline constexpr int kKMeansMaxIterations = 300;

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing. Empty clusters are re-seeded at the point farthest from its
/// centroid.
KMeansResult kmeans(const Matrix& points, Index k, std::uint64_t seed);

/// I(U;V) / sqrt(H(U) H(V)), natural logs.
double nmi(std::span<const Index> predicted, std::span<const Index> truth);

inline constexpr int kMetricsSchemaVersion = 1;

struct MetricsReport {
  std::optional<double> acc_common;
  std::optional<double> acc_unknown;
  std::optional<double> nmi_private;
  double h_score = 0.0;
  double h3_score = 0.0;
  std::optional<double> ccd_recall;
  std::optional<double> ccd_specificity;

  bool operator==(const MetricsReport&) const = default;
};

nlohmann::json to_json(const MetricsReport& m);
MetricsReport metrics_from_json(const nlohmann::json& j);

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsReport& m);

struct EvalConfig {
  ccd::CcdConfig ccd;
  std::uint64_t seed = 0;
};

struct EvalDetails {
  FeatureMatrix features;
  std::vector<Index> predictions;
  std::vector<std::string> caveats;
};

/// Inference + accuracies + k-means NMI over ground-truth private samples,
/// with k the true number of private classes.
MetricsReport evaluate(const model::Parameters& params, const ccd::AdaptiveBeta& beta, const synth::Dataset& target,
                       const EvalConfig& cfg, EvalDetails* details = nullptr);

}  // namespace uniot::eval
