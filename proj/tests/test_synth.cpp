#include "support.hpp"

#include "uniot/synth.hpp"

#include <cmath>
#include <set>
#include <sstream>
#include <vector>

using namespace uniot;
using namespace uniot::synth;

namespace {

Matrix class_mean(const Dataset& d, Index label) {
  Matrix sum = Matrix::Zero(1, d.inputs.cols());
  Index count = 0;
  for (Index i = 0; i < d.size(); ++i) {
    if (d.labels[static_cast<size_t>(i)] != label) continue;
    sum += d.inputs.row(i);
    ++count;
  }
  return sum / static_cast<double>(count);
}

ScenarioConfig closed_set() {
  ScenarioConfig cfg;
  cfg.n_source_private = 0;
  cfg.n_target_private = 0;
  cfg.shift = {0.0, 0.0, 1.0};
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST_SUITE("synth") {
  TEST_CASE("closed-set scenario without shift keeps source and target means identical") {
    const Scenario sc = generate(closed_set());
    CHECK(sc.shifted_means == sc.class_means);
    CHECK(sc.source.size() == sc.target.size());
    // Difference of two 100-sample means: three times its expected norm.
    const ScenarioConfig cfg = closed_set();
    const double bound = 3.0 * cfg.cluster_std * std::sqrt(2.0 * cfg.input_dim / cfg.samples_per_class);
    for (Index k = 0; k < 5; ++k) {
      CHECK((class_mean(sc.source, k) - class_mean(sc.target, k)).norm() < bound);
    }
  }

  TEST_CASE("same seed gives bitwise identical data") {
    ScenarioConfig cfg;
    cfg.seed = 11;
    const Scenario a = generate(cfg);
    const Scenario b = generate(cfg);
    CHECK(a.source.inputs == b.source.inputs);
    CHECK(a.target.inputs == b.target.inputs);
    CHECK(a.source.labels == b.source.labels);
    CHECK(a.target.labels == b.target.labels);
    cfg.seed = 12;
    CHECK(generate(cfg).source.inputs != a.source.inputs);
  }

  TEST_CASE("target commons are classified by the nearest source mean") {
    const ScenarioConfig cfg;  // the standard fixture
    CHECK(cfg.n_common == 5);
    CHECK(cfg.n_source_private == 3);
    CHECK(cfg.n_target_private == 4);
    CHECK(cfg.input_dim == 10);
    const Scenario sc = generate(cfg);
    Matrix source_means(cfg.n_source_classes(), cfg.input_dim);
    for (Index k = 0; k < cfg.n_source_classes(); ++k) source_means.row(k) = class_mean(sc.source, k);
    Index total = 0, correct = 0;
    for (Index i = 0; i < sc.target.size(); ++i) {
      const Index label = sc.target.labels[static_cast<size_t>(i)];
      if (label >= cfg.n_common) continue;
      Index best = 0;
      (source_means.rowwise() - sc.target.inputs.row(i)).rowwise().squaredNorm().minCoeff(&best);
      correct += best == label ? 1 : 0;
      ++total;
    }
    CHECK(static_cast<double>(correct) / static_cast<double>(total) >= 0.95);
  }

  TEST_CASE("class means are separated and labels respect their designation") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      ScenarioConfig cfg;
      cfg.seed = seed;
      const Scenario sc = generate(cfg);
      for (Index a = 0; a < cfg.n_classes(); ++a)
        for (Index b = a + 1; b < cfg.n_classes(); ++b)
          CHECK((sc.class_means.row(a) - sc.class_means.row(b)).norm() >= cfg.min_separation());
      const std::set<Index> source_labels(sc.source.labels.begin(), sc.source.labels.end());
      const std::set<Index> target_labels(sc.target.labels.begin(), sc.target.labels.end());
      for (Index l : source_labels) CHECK(sc.source.designation_of(l) != Designation::kTargetPrivate);
      for (Index l : target_labels) CHECK(sc.target.designation_of(l) != Designation::kSourcePrivate);
      CHECK(static_cast<Index>(source_labels.size()) == cfg.n_source_classes());
      CHECK(static_cast<Index>(target_labels.size()) == cfg.n_common + cfg.n_target_private);
    }
  }

  TEST_CASE("empirical means converge to the configured means") {
    ScenarioConfig cfg;
    cfg.samples_per_class = 1000;
    cfg.seed = 5;
    const Scenario sc = generate(cfg);
    const double bound = 3.0 * cfg.cluster_std / std::sqrt(1000.0) * 3.0;
    for (Index k = 0; k < cfg.n_source_classes(); ++k) {
      CHECK((class_mean(sc.source, k) - sc.class_means.row(k)).norm() < bound);
    }
    for (Index k = 0; k < cfg.n_common; ++k) {
      CHECK((class_mean(sc.target, k) - sc.shifted_means.row(k)).norm() < bound);
    }
  }

  TEST_CASE("infeasible separation is rejected") {
    ScenarioConfig cfg;
    cfg.input_dim = 2;
    cfg.n_common = 30;
    cfg.cluster_std = 1.0;
    CHECK_THROWS_AS(generate(cfg), std::invalid_argument);
    ScenarioConfig bad;
    bad.n_common = 0;
    CHECK_THROWS_AS(generate(bad), std::invalid_argument);
  }

  TEST_CASE("split sweeps are paired") {
    const ScenarioConfig base;
    const std::vector<Index> one{base.n_source_private};
    const std::vector<ScenarioConfig> same = split_sweep(base, SweepField::kSourcePrivate, one);
    REQUIRE(same.size() == 1);
    CHECK(same[0].n_source_private == base.n_source_private);
    CHECK(same[0].n_target_private == base.n_target_private);
    CHECK(same[0].seed == base.seed);

    const std::vector<Index> values{0, 5, 10};
    const std::vector<ScenarioConfig> sweep = split_sweep(base, SweepField::kSourcePrivate, values);
    REQUIRE(sweep.size() == 3);
    const Scenario first = generate(sweep[0]);
    for (const ScenarioConfig& cfg : sweep) {
      const Scenario sc = generate(cfg);
      CHECK(sc.class_means.topRows(base.n_common) == first.class_means.topRows(base.n_common));
    }

    const std::vector<Index> targets{0, 4, 8};
    const std::vector<ScenarioConfig> t = split_sweep(base, SweepField::kTargetPrivate, targets);
    const Index s0 = generate(t[0]).target.size();
    const Index s1 = generate(t[1]).target.size();
    const Index s2 = generate(t[2]).target.size();
    CHECK(s1 - s0 == 4 * base.samples_per_class);
    CHECK(s2 - s1 == 4 * base.samples_per_class);

    const std::vector<Index> negative{-1};
    CHECK_THROWS_AS(split_sweep(base, SweepField::kTargetPrivate, negative), std::invalid_argument);
    CHECK(parse_sweep_field("n_target_private") == SweepField::kTargetPrivate);
    CHECK_THROWS_AS(parse_sweep_field("n_common"), std::invalid_argument);
  }

  TEST_CASE("datasets export one CSV row per sample") {
    ScenarioConfig cfg;
    cfg.samples_per_class = 3;
    const Scenario sc = generate(cfg);
    std::ostringstream out;
    write_csv(sc.target, out);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    CHECK(line.rfind("x0,", 0) == 0);
    CHECK(line.find("label,designation") != std::string::npos);
    Index rows = 0;
    while (std::getline(in, line)) {
      ++rows;
      CHECK((line.ends_with(",common") || line.ends_with(",target_private")));
    }
    CHECK(rows == sc.target.size());
  }
}
