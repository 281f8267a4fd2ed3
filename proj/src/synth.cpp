#include "uniot/synth.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace uniot::synth {

namespace {

constexpr int kMaxMeanTries = 10000;

enum StreamTag : std::uint64_t {
  kCommonMeans = 1,
  kSourcePrivateMeans = 2,
  kTargetPrivateMeans = 3,
  kShift = 4,
  kSourceSamples = 10,
  kTargetSamples = 11,
};

Rng stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(index)};
  return Rng(seq);
}

Vector random_unit(Index dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(dim);
  do {
    for (Index k = 0; k < dim; ++k) v[k] = normal(rng);
  } while (v.norm() < 1e-9);
  return v / v.norm();
}

// Appends `count` means to `means` (rows [0, filled) already occupied),
// each at least `separation` away from every earlier mean.
void draw_means(Matrix& means, Index filled, Index count, const ScenarioConfig& cfg, Rng& rng) {
  for (Index c = 0; c < count; ++c) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxMeanTries && !placed; ++attempt) {
      const Vector candidate = cfg.mean_radius * random_unit(cfg.input_dim, rng);
      placed = true;
      for (Index other = 0; other < filled + c; ++other) {
        if ((means.row(other).transpose() - candidate).norm() < cfg.min_separation()) {
          placed = false;
          break;
        }
      }
      if (placed) means.row(filled + c) = candidate.transpose();
    }
    if (!placed) {
      throw std::invalid_argument("scenario infeasible: could not place class mean " + std::to_string(filled + c) +
                                  " within " + std::to_string(kMaxMeanTries) + " tries");
    }
  }
}

Vector apply_shift(const Vector& x, const Vector& u, const Vector& w, const Vector& translation,
                   const ShiftConfig& s) {
  const double xu = x.dot(u);
  const double xw = x.dot(w);
  const double c = std::cos(s.rotation_angle);
  const double sn = std::sin(s.rotation_angle);
  Vector rotated = x + (c - 1.0) * (xu * u + xw * w) + sn * (xu * w - xw * u);
  return s.scale * rotated + translation;
}

void append_samples(Dataset& data, Index& row, Index label, const Vector& mean, const ScenarioConfig& cfg,
                    Rng rng) {
  std::normal_distribution<double> noise(0.0, cfg.cluster_std);
  for (Index s = 0; s < cfg.samples_per_class; ++s, ++row) {
    for (Index k = 0; k < cfg.input_dim; ++k) data.inputs(row, k) = mean[k] + noise(rng);
    data.labels[static_cast<size_t>(row)] = label;
  }
}

}  // namespace

void ScenarioConfig::validate() const {
  if (input_dim < 2) throw std::invalid_argument("input_dim must be at least 2");
  if (n_common < 1) throw std::invalid_argument("n_common must be at least 1");
  if (n_source_private < 0 || n_target_private < 0) throw std::invalid_argument("class counts must be >= 0");
  if (samples_per_class < 1) throw std::invalid_argument("samples_per_class must be at least 1");
  if (!(cluster_std > 0.0)) throw std::invalid_argument("cluster_std must be > 0");
  if (!(mean_radius > 0.0)) throw std::invalid_argument("mean_radius must be > 0");
  if (!(shift.scale > 0.0)) throw std::invalid_argument("shift.scale must be > 0");
  if (!std::isfinite(shift.rotation_angle) || !std::isfinite(shift.translation_magnitude)) {
    throw std::invalid_argument("shift parameters must be finite");
  }
}

const char* to_string(Designation d) {
  switch (d) {
    case Designation::kCommon: return "common";
    case Designation::kSourcePrivate: return "source_private";
    case Designation::kTargetPrivate: return "target_private";
  }
  return "unknown";
}

Scenario generate(const ScenarioConfig& cfg) {
  cfg.validate();
  Scenario sc;
  sc.config = cfg;
  const Index c = cfg.n_common;
  const Index cs = cfg.n_source_private;
  const Index ct = cfg.n_target_private;

  sc.class_means = Matrix::Zero(cfg.n_classes(), cfg.input_dim);
  {
    Rng rng = stream(cfg.seed, kCommonMeans);
    draw_means(sc.class_means, 0, c, cfg, rng);
  }
  {
    Rng rng = stream(cfg.seed, kSourcePrivateMeans);
    draw_means(sc.class_means, c, cs, cfg, rng);
  }
  {
    Rng rng = stream(cfg.seed, kTargetPrivateMeans);
    draw_means(sc.class_means, c + cs, ct, cfg, rng);
  }

  Rng shift_rng = stream(cfg.seed, kShift);
  const Vector u = random_unit(cfg.input_dim, shift_rng);
  Vector w = random_unit(cfg.input_dim, shift_rng);
  w -= w.dot(u) * u;
  w /= w.norm();
  const Vector translation = cfg.shift.translation_magnitude * random_unit(cfg.input_dim, shift_rng);
  sc.shifted_means.resize(c, cfg.input_dim);
  for (Index k = 0; k < c; ++k) {
    sc.shifted_means.row(k) = apply_shift(sc.class_means.row(k).transpose(), u, w, translation, cfg.shift).transpose();
  }

  std::vector<Designation> designations(static_cast<size_t>(cfg.n_classes()));
  for (Index k = 0; k < cfg.n_classes(); ++k) {
    designations[static_cast<size_t>(k)] =
        k < c ? Designation::kCommon : (k < c + cs ? Designation::kSourcePrivate : Designation::kTargetPrivate);
  }

  sc.source.domain = Domain::kSource;
  sc.source.designations = designations;
  sc.source.inputs.resize((c + cs) * cfg.samples_per_class, cfg.input_dim);
  sc.source.labels.resize(static_cast<size_t>(sc.source.inputs.rows()));
  Index row = 0;
  for (Index k = 0; k < c + cs; ++k) {
    append_samples(sc.source, row, k, sc.class_means.row(k).transpose(), cfg,
                   stream(cfg.seed, kSourceSamples, static_cast<std::uint64_t>(k)));
  }

  sc.target.domain = Domain::kTarget;
  sc.target.designations = designations;
  sc.target.inputs.resize((c + ct) * cfg.samples_per_class, cfg.input_dim);
  sc.target.labels.resize(static_cast<size_t>(sc.target.inputs.rows()));
  row = 0;
  for (Index k = 0; k < c; ++k) {
    append_samples(sc.target, row, k, sc.shifted_means.row(k).transpose(), cfg,
                   stream(cfg.seed, kTargetSamples, static_cast<std::uint64_t>(k)));
  }
  for (Index k = c + cs; k < cfg.n_classes(); ++k) {
    append_samples(sc.target, row, k, sc.class_means.row(k).transpose(), cfg,
                   stream(cfg.seed, kTargetSamples, static_cast<std::uint64_t>(k)));
  }
  return sc;
}

SweepField parse_sweep_field(const std::string& name) {
  if (name == "n_source_private") return SweepField::kSourcePrivate;
  if (name == "n_target_private") return SweepField::kTargetPrivate;
  throw std::invalid_argument("cannot sweep over '" + name + "' (expected n_source_private or n_target_private)");
}

const char* to_string(SweepField f) {
  return f == SweepField::kSourcePrivate ? "n_source_private" : "n_target_private";
}

std::vector<ScenarioConfig> split_sweep(const ScenarioConfig& base, SweepField vary, std::span<const Index> values) {
  std::vector<ScenarioConfig> out;
  out.reserve(values.size());
  for (Index v : values) {
    if (v < 0) throw std::invalid_argument("split_sweep: values must be non-negative");
    ScenarioConfig cfg = base;
    (vary == SweepField::kSourcePrivate ? cfg.n_source_private : cfg.n_target_private) = v;
    out.push_back(cfg);
  }
  return out;
}

void write_csv(const Dataset& data, std::ostream& out) {
  for (Index k = 0; k < data.inputs.cols(); ++k) out << "x" << k << ',';
  out << "label,designation\n";
  out.precision(17);
  for (Index i = 0; i < data.size(); ++i) {
    for (Index k = 0; k < data.inputs.cols(); ++k) out << data.inputs(i, k) << ',';
    const Index label = data.labels[static_cast<size_t>(i)];
    out << label << ',' << to_string(data.designation_of(label)) << '\n';
  }
}

}  // namespace uniot::synth
