#include "uniot/eval.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include <spdlog/spdlog.h>

namespace uniot::eval {

namespace {

constexpr double kThresholdSlack = 1e-12;

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::optional<double> optional_from(const nlohmann::json& j, const char* key) {
  const auto& v = j.at(key);
  if (v.is_null()) return std::nullopt;
  return v.get<double>();
}

double entropy_of_counts(const std::map<Index, double>& counts, double total) {
  double h = 0.0;
  for (const auto& [label, c] : counts) {
    const double p = c / total;
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

std::vector<Index> assign_nearest(const Matrix& points, const Matrix& centroids, double* inertia) {
  std::vector<Index> out(static_cast<size_t>(points.rows()));
  double total = 0.0;
  for (Index i = 0; i < points.rows(); ++i) {
    Index best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Index c = 0; c < centroids.rows(); ++c) {
      const double d = (points.row(i) - centroids.row(c)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    out[static_cast<size_t>(i)] = best;
    total += best_d;
  }
  if (inertia != nullptr) *inertia = total;
  return out;
}

double inertia_of(const Matrix& points, const Matrix& centroids, const std::vector<Index>& assign) {
  double total = 0.0;
  for (Index i = 0; i < points.rows(); ++i) total += (points.row(i) - centroids.row(assign[static_cast<size_t>(i)])).squaredNorm();
  return total;
}

}  // namespace

Inference infer(const FeatureMatrix& z, const model::PrototypeBank& source, const ccd::AdaptiveBeta& beta,
                const ccd::CcdConfig& cfg, Rng& rng) {
  if (z.rows() == 0) throw std::invalid_argument("infer: empty target set");
  Inference out;
  out.detection = ccd::ccd_detect(z, z.rows(), source, beta, cfg, rng);
  const Index n = out.detection.fill.filled_features.rows();
  const double threshold = (1.0 - kThresholdSlack) / static_cast<double>(n);
  out.labels.resize(static_cast<size_t>(z.rows()));
  for (Index i = 0; i < z.rows(); ++i) {
    out.labels[static_cast<size_t>(i)] =
        out.detection.detection.w_t[i] >= threshold ? out.detection.detection.pseudo_labels[static_cast<size_t>(i)]
                                                    : kUnknown;
  }
  return out;
}

Accuracies per_class_accuracy(std::span<const Index> predictions, std::span<const Index> truth,
                              const std::set<Index>& common, const std::set<Index>& private_classes) {
  if (predictions.size() != truth.size()) throw std::invalid_argument("per_class_accuracy: length mismatch");
  Index common_total = 0;
  Index common_hit = 0;
  Index private_total = 0;
  Index private_hit = 0;
  for (size_t i = 0; i < truth.size(); ++i) {
    if (common.contains(truth[i])) {
      ++common_total;
      common_hit += predictions[i] == truth[i] ? 1 : 0;
    } else if (private_classes.contains(truth[i])) {
      ++private_total;
      private_hit += predictions[i] == kUnknown ? 1 : 0;
    }
  }
  Accuracies acc;
  if (common_total > 0) acc.common = static_cast<double>(common_hit) / static_cast<double>(common_total);
  if (private_total > 0) acc.unknown = static_cast<double>(private_hit) / static_cast<double>(private_total);
  return acc;
}

double harmonic_mean(std::span<const double> values) {
  if (values.empty()) return 0.0;
  double inv = 0.0;
  for (double v : values) {
    if (v <= 0.0) return 0.0;
    inv += 1.0 / v;
  }
  return static_cast<double>(values.size()) / inv;
}

double h_score(double acc_common, double acc_unknown) {
  const double v[] = {acc_common, acc_unknown};
  return harmonic_mean(v);
}

double h3_score(double acc_common, double acc_unknown, double nmi_value) {
  const double v[] = {acc_common, acc_unknown, nmi_value};
  return harmonic_mean(v);
}

KMeansResult kmeans(const Matrix& points, Index k, std::uint64_t seed) {
  const Index n = points.rows();
  if (k <= 0) throw std::invalid_argument("kmeans: k must be positive");
  if (k > n) throw std::invalid_argument("kmeans: k exceeds the number of points");

  Rng rng(seed);
  KMeansResult res;
  res.centroids.resize(k, points.cols());
  std::vector<bool> chosen(static_cast<size_t>(n), false);
  {
    std::uniform_int_distribution<Index> first(0, n - 1);
    const Index f = first(rng);
    res.centroids.row(0) = points.row(f);
    chosen[static_cast<size_t>(f)] = true;
  }
  Vector d2 = (points.rowwise() - res.centroids.row(0)).rowwise().squaredNorm();
  for (Index c = 1; c < k; ++c) {
    const double total = d2.sum();
    Index pick = -1;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      for (Index i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        pick = i;
        target -= d2[i];
        if (target <= 0.0) break;
      }
    } else {
      // Every point coincides with a centroid: take any unused index.
      std::vector<Index> unused;
      for (Index i = 0; i < n; ++i)
        if (!chosen[static_cast<size_t>(i)]) unused.push_back(i);
      std::uniform_int_distribution<size_t> pick_unused(0, unused.size() - 1);
      pick = unused[pick_unused(rng)];
    }
    res.centroids.row(c) = points.row(pick);
    chosen[static_cast<size_t>(pick)] = true;
    d2 = d2.cwiseMin((points.rowwise() - res.centroids.row(c)).rowwise().squaredNorm());
  }

  res.assignments = assign_nearest(points, res.centroids, nullptr);
  for (res.iterations = 1; res.iterations <= kKMeansMaxIterations; ++res.iterations) {
    // Update step.
    Matrix sums = Matrix::Zero(k, points.cols());
    std::vector<Index> counts(static_cast<size_t>(k), 0);
    for (Index i = 0; i < n; ++i) {
      sums.row(res.assignments[static_cast<size_t>(i)]) += points.row(i);
      ++counts[static_cast<size_t>(res.assignments[static_cast<size_t>(i)])];
    }
    for (Index c = 0; c < k; ++c) {
      if (counts[static_cast<size_t>(c)] > 0) res.centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<size_t>(c)]);
    }
    for (Index c = 0; c < k; ++c) {
      if (counts[static_cast<size_t>(c)] > 0) continue;
      Index far = 0;
      double far_d = -1.0;
      for (Index i = 0; i < n; ++i) {
        const Index a = res.assignments[static_cast<size_t>(i)];
        if (counts[static_cast<size_t>(a)] <= 1) continue;  // don't empty another cluster
        const double d = (points.row(i) - res.centroids.row(a)).squaredNorm();
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      --counts[static_cast<size_t>(res.assignments[static_cast<size_t>(far)])];
      res.assignments[static_cast<size_t>(far)] = c;
      counts[static_cast<size_t>(c)] = 1;
      res.centroids.row(c) = points.row(far);
    }
    res.inertia_trace.push_back(inertia_of(points, res.centroids, res.assignments));

    // Assignment step.
    std::vector<Index> next = assign_nearest(points, res.centroids, &res.inertia);
    if (next == res.assignments) break;
    res.assignments = std::move(next);
  }
  res.iterations = std::min(res.iterations, kKMeansMaxIterations);
  res.inertia = inertia_of(points, res.centroids, res.assignments);
  return res;
}

double nmi(std::span<const Index> predicted, std::span<const Index> truth) {
  if (predicted.size() != truth.size()) throw std::invalid_argument("nmi: length mismatch");
  if (predicted.empty()) throw std::invalid_argument("nmi: empty input");
  const double total = static_cast<double>(predicted.size());
  std::map<Index, double> pu;
  std::map<Index, double> pv;
  std::map<std::pair<Index, Index>, double> joint;
  for (size_t i = 0; i < predicted.size(); ++i) {
    pu[predicted[i]] += 1.0;
    pv[truth[i]] += 1.0;
    joint[{predicted[i], truth[i]}] += 1.0;
  }
  if (pu.size() == 1 || pv.size() == 1) return (pu.size() == 1 && pv.size() == 1) ? 1.0 : 0.0;
  double mi = 0.0;
  for (const auto& [key, c] : joint) {
    mi += (c / total) * std::log(total * c / (pu[key.first] * pv[key.second]));
  }
  const double hu = entropy_of_counts(pu, total);
  const double hv = entropy_of_counts(pv, total);
  return std::clamp(mi / std::sqrt(hu * hv), 0.0, 1.0);
}

nlohmann::json to_json(const MetricsReport& m) {
  return {{"schema_version", kMetricsSchemaVersion},
          {"acc_common", optional_json(m.acc_common)},
          {"acc_unknown", optional_json(m.acc_unknown)},
          {"nmi_private", optional_json(m.nmi_private)},
          {"h_score", m.h_score},
          {"h3_score", m.h3_score},
          {"ccd_recall", optional_json(m.ccd_recall)},
          {"ccd_specificity", optional_json(m.ccd_specificity)}};
}

MetricsReport metrics_from_json(const nlohmann::json& j) {
  const int version = j.at("schema_version").get<int>();
  if (version != kMetricsSchemaVersion) throw std::invalid_argument("unsupported metrics schema " + std::to_string(version));
  MetricsReport m;
  m.acc_common = optional_from(j, "acc_common");
  m.acc_unknown = optional_from(j, "acc_unknown");
  m.nmi_private = optional_from(j, "nmi_private");
  m.h_score = j.at("h_score").get<double>();
  m.h3_score = j.at("h3_score").get<double>();
  m.ccd_recall = optional_from(j, "ccd_recall");
  m.ccd_specificity = optional_from(j, "ccd_specificity");
  return m;
}

std::string metrics_csv_header() {
  return "acc_common,acc_unknown,nmi_private,h_score,h3_score,ccd_recall,ccd_specificity";
}

std::string metrics_csv_row(const MetricsReport& m) {
  std::ostringstream out;
  out.precision(10);
  auto opt = [&](const std::optional<double>& v) {
    if (v) out << *v;
  };
  opt(m.acc_common);
  out << ',';
  opt(m.acc_unknown);
  out << ',';
  opt(m.nmi_private);
  out << ',' << m.h_score << ',' << m.h3_score << ',';
  opt(m.ccd_recall);
  out << ',';
  opt(m.ccd_specificity);
  return out.str();
}

MetricsReport evaluate(const model::Parameters& params, const ccd::AdaptiveBeta& beta, const synth::Dataset& target,
                       const EvalConfig& cfg, EvalDetails* details) {
  if (target.size() == 0) throw std::invalid_argument("evaluate: empty target set");
  const FeatureMatrix z = model::forward(params.extractor, target.inputs);
  Rng rng(cfg.seed);
  const Inference inf = infer(z, params.source, beta, cfg.ccd, rng);

  std::set<Index> common;
  std::set<Index> private_classes;
  for (Index label : target.labels) {
    const auto d = target.designation_of(label);
    if (d == synth::Designation::kCommon) common.insert(label);
    if (d == synth::Designation::kTargetPrivate) private_classes.insert(label);
  }

  MetricsReport m;
  std::vector<std::string> caveats;
  const Accuracies acc = per_class_accuracy(inf.labels, target.labels, common, private_classes);
  m.acc_common = acc.common;
  m.acc_unknown = acc.unknown;

  std::vector<Index> private_rows;
  std::vector<Index> private_truth;
  for (Index i = 0; i < target.size(); ++i) {
    const Index label = target.labels[static_cast<size_t>(i)];
    if (private_classes.contains(label)) {
      private_rows.push_back(i);
      private_truth.push_back(label);
    }
  }
  if (!private_rows.empty()) {
    const Matrix pz = gather_rows(z, private_rows);
    const KMeansResult km = kmeans(pz, static_cast<Index>(private_classes.size()), cfg.seed);
    m.nmi_private = nmi(km.assignments, private_truth);
  }

  // CCD rates over the full set: recall needs the right class, specificity
  // counts private samples left unselected.
  const auto& det = inf.detection.detection;
  Index common_total = 0, recalled = 0, private_total = 0, rejected = 0;
  for (Index i = 0; i < target.size(); ++i) {
    const Index label = target.labels[static_cast<size_t>(i)];
    const bool selected = det.mask[static_cast<size_t>(i)];
    if (common.contains(label)) {
      ++common_total;
      recalled += selected && det.pseudo_labels[static_cast<size_t>(i)] == label ? 1 : 0;
    } else if (private_classes.contains(label)) {
      ++private_total;
      rejected += selected ? 0 : 1;
    }
  }
  if (common_total > 0) m.ccd_recall = static_cast<double>(recalled) / static_cast<double>(common_total);
  if (private_total > 0) m.ccd_specificity = static_cast<double>(rejected) / static_cast<double>(private_total);

  std::vector<double> h_terms;
  if (m.acc_common) h_terms.push_back(*m.acc_common);
  if (m.acc_unknown) h_terms.push_back(*m.acc_unknown);
  std::vector<double> h3_terms = h_terms;
  if (m.nmi_private) h3_terms.push_back(*m.nmi_private);
  if (h_terms.size() < 2) caveats.emplace_back("H-score computed over defined accuracies only");
  if (h3_terms.size() < 3) caveats.emplace_back("H3-score computed over defined terms only");
  m.h_score = harmonic_mean(h_terms);
  m.h3_score = harmonic_mean(h3_terms);
  for (const auto& c : caveats) spdlog::debug("evaluate: {}", c);

  if (details != nullptr) {
    details->features = z;
    details->predictions = inf.labels;
    details->caveats = std::move(caveats);
  }
  return m;
}

}  // namespace uniot::eval
