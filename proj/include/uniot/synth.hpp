#pragma once

#include "uniot/types.hpp"

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace uniot::synth {

/// Applied to the means of common classes in the target domain:
/// x -> scale * R x + t, with R a rotation in a random 2-plane and t a
/// random direction of the given magnitude.
struct ShiftConfig {
  double rotation_angle = 0.2;  // radians
  double translation_magnitude = 0.5;
  double scale = 1.0;
};

struct ScenarioConfig {
  Index input_dim = 10;
  Index n_common = 5;
  Index n_source_private = 3;
  Index n_target_private = 4;
  Index samples_per_class = 100;
  double cluster_std = 0.3;
  // Radius of the sphere the class means are drawn on.
  double mean_radius = 3.0;
  ShiftConfig shift;
  std::uint64_t seed = 0;

  void validate() const;

  Index n_source_classes() const { return n_common + n_source_private; }
  Index n_classes() const { return n_common + n_source_private + n_target_private; }
  // Minimum pairwise distance between class means.
  double min_separation() const { return 6.0 * cluster_std; }
};

// Class ids: [0, C) common, [C, C + Cs) source-private,
// [C + Cs, C + Cs + Ct) target-private. Source ids double as classifier
// indices.
enum class Designation { kCommon, kSourcePrivate, kTargetPrivate };
enum class Domain { kSource, kTarget };

const char* to_string(Designation d);

struct Dataset {
  Matrix inputs;
  std::vector<Index> labels;
  Domain domain = Domain::kSource;
  std::vector<Designation> designations;  // indexed by class id

  Index size() const { return inputs.rows(); }
  Designation designation_of(Index label) const { return designations[static_cast<size_t>(label)]; }
};

struct Scenario {
  ScenarioConfig config;
  Dataset source;
  Dataset target;
  Matrix class_means;    // one row per class id, before shift
  Matrix shifted_means;  // common-class means as they appear in the target
};

/// Deterministic per seed. Each class group draws its means from its own
/// stream, so changing one group's size leaves earlier groups untouched.
Scenario generate(const ScenarioConfig& cfg);

enum class SweepField { kSourcePrivate, kTargetPrivate };

SweepField parse_sweep_field(const std::string& name);
const char* to_string(SweepField f);

std::vector<ScenarioConfig> split_sweep(const ScenarioConfig& base, SweepField vary, std::span<const Index> values);

/// One row per sample: features..., label, designation.
void write_csv(const Dataset& data, std::ostream& out);

}  // namespace uniot::synth
