#include "support.hpp"

#include "uniot/runner.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace uniot;
using namespace uniot::train;

namespace {

synth::ScenarioConfig small_scenario() {
  synth::ScenarioConfig sc;
  sc.n_common = 3;
  sc.n_source_private = 1;
  sc.n_target_private = 2;
  sc.input_dim = 6;
  sc.samples_per_class = 20;
  sc.seed = 4;
  return sc;
}

Hyperparameters small_hp() {
  Hyperparameters hp;
  hp.prototypes = 6;
  hp.batch_size = 8;
  hp.queue_capacity = 48;
  hp.warm_up_multiplier = 2;
  hp.hidden_dim = 16;
  hp.embed_dim = 8;
  hp.steps = 40;
  hp.lr = 0.05;
  return hp;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

bool same_params(const model::Parameters& a, const model::Parameters& b) {
  return a.extractor.w1 == b.extractor.w1 && a.extractor.b1 == b.extractor.b1 && a.extractor.w2 == b.extractor.w2 &&
         a.extractor.b2 == b.extractor.b2 && a.source.centroids == b.source.centroids &&
         a.target.centroids == b.target.centroids;
}

struct Recorded {
  TrainLoop loop;
  std::vector<StepResult> steps;
};

Recorded record_run(const synth::Scenario& sc, const Hyperparameters& hp, std::uint64_t seed) {
  Recorded r{start_training(sc, hp, seed), {}};
  run_training(r.loop, sc, hp, [&](std::int64_t, const StepResult& res, std::span<const Index>) {
    r.steps.push_back(res);
  });
  return r;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("lambda zero trains exactly like the source-only model") {
    const synth::Scenario sc = synth::generate(small_scenario());
    Hyperparameters zero = small_hp();
    zero.lambda = 0.0;
    Hyperparameters source_only = zero;
    source_only.use_ccd = false;
    source_only.use_global = false;
    source_only.use_local = false;
    const Recorded a = record_run(sc, zero, 2);
    const Recorded b = record_run(sc, source_only, 2);
    CHECK(same_params(a.loop.state.params, b.loop.state.params));
    bool adapted = false;
    for (const StepResult& s : a.steps) adapted = adapted || s.diag.adaptation_active;
    CHECK(adapted);
  }

  TEST_CASE("training is deterministic per seed") {
    const synth::Scenario sc = synth::generate(small_scenario());
    const Recorded a = record_run(sc, small_hp(), 5);
    const Recorded b = record_run(sc, small_hp(), 5);
    REQUIRE(a.steps.size() == b.steps.size());
    for (size_t i = 0; i < a.steps.size(); ++i) {
      CHECK(a.steps[i].loss.total == b.steps[i].loss.total);
      CHECK(a.steps[i].diag.batch_mask == b.steps[i].diag.batch_mask);
    }
    CHECK(same_params(a.loop.state.params, b.loop.state.params));
    CHECK(a.loop.state.beta.beta().weights() == b.loop.state.beta.beta().weights());
    CHECK_FALSE(same_params(a.loop.state.params, record_run(sc, small_hp(), 6).loop.state.params));
  }

  TEST_CASE("per-step loss bookkeeping and invariants") {
    const synth::Scenario sc = synth::generate(small_scenario());
    const Hyperparameters hp = small_hp();
    TrainLoop loop = start_training(sc, hp, 7);
    Index pcd_steps = 0;
    Index expected_queue = 0;
    run_training(loop, sc, hp, [&](std::int64_t step, const StepResult& res, std::span<const Index> rows) {
      const LossBundle& l = res.loss;
      CHECK(l.total == doctest::Approx(l.cls + hp.lambda * (l.ccd + l.pcd)).epsilon(1e-14));
      CHECK(rows.size() == static_cast<size_t>(hp.batch_size));
      CHECK(res.diag.adaptation_active == (step >= hp.warm_up_multiplier));
      if (res.diag.equipartition_error >= 0.0) {
        ++pcd_steps;
        CHECK(l.pcd == doctest::Approx(0.5 * (l.global + l.local)).epsilon(1e-14));
        CHECK(res.diag.equipartition_error <= hp.solver_tolerance);
      }
      CHECK(has_unit_rows(loop.state.params.source.centroids));
      CHECK(has_unit_rows(loop.state.params.target.centroids));
      expected_queue = std::min(expected_queue + hp.batch_size, hp.queue_capacity);
      CHECK(loop.state.queue.size() == expected_queue);
      CHECK(loop.state.beta.beta().weights().sum() == doctest::Approx(1.0).epsilon(1e-12));
    });
    CHECK(pcd_steps == hp.steps - hp.warm_up_multiplier);
    CHECK(loop.state.step == hp.steps);
    CHECK(loop.state.skipped_steps == 0);
  }

  TEST_CASE("the total loss goes down over training") {
    const synth::Scenario sc = synth::generate(small_scenario());
    Hyperparameters hp = small_hp();
    hp.steps = 200;
    const Recorded r = record_run(sc, hp, 8);
    double first = 0.0, last = 0.0;
    for (size_t i = 0; i < 20; ++i) {
      first += r.steps[i].loss.total;
      last += r.steps[r.steps.size() - 20 + i].loss.total;
    }
    CHECK(last < first);
  }

  TEST_CASE("batch sampler walks full permutations") {
    Rng rng(9);
    BatchSampler s(10, 4);
    std::vector<Index> seen;
    for (int i = 0; i < 5; ++i) {
      const std::vector<Index> b = s.next(rng);
      seen.insert(seen.end(), b.begin(), b.end());
    }
    std::vector<Index> first(seen.begin(), seen.begin() + 10);
    std::sort(first.begin(), first.end());
    for (Index i = 0; i < 10; ++i) CHECK(first[static_cast<size_t>(i)] == i);
    CHECK_THROWS_AS(BatchSampler(0, 4), std::invalid_argument);
  }

  TEST_CASE("train mode writes its outputs and repeats byte for byte") {
    namespace fs = std::filesystem;
    const fs::path root = fs::temp_directory_path() / "uniot_trainer_test";
    fs::remove_all(root);
    config::RunConfig cfg;
    cfg.scenario = small_scenario();
    cfg.hp = small_hp();
    cfg.set_seed(3);
    cfg.output_dir = (root / "a").string();
    REQUIRE(run::run(cfg) == 0);
    for (const char* f : {"metrics.json", "trace.csv", "config-echo.json", "embeddings.svg"}) {
      CHECK(fs::exists(root / "a" / f));
    }
    const eval::MetricsReport m = eval::metrics_from_json(nlohmann::json::parse(slurp(root / "a" / "metrics.json")));
    CHECK(m.h_score >= 0.0);
    std::istringstream trace(slurp(root / "a" / "trace.csv"));
    std::string line;
    std::getline(trace, line);
    CHECK(line == run::trace_csv_header());
    Index rows = 0;
    while (std::getline(trace, line)) ++rows;
    CHECK(rows == cfg.hp.steps);
    CHECK(slurp(root / "a" / "embeddings.svg").rfind("<svg", 0) == 0);

    cfg.output_dir = (root / "b").string();
    REQUIRE(run::run(cfg) == 0);
    CHECK(slurp(root / "a" / "metrics.json") == slurp(root / "b" / "metrics.json"));

    // The echoed config reproduces the run.
    config::RunConfig echoed = config::parse_config(slurp(root / "a" / "config-echo.json"));
    echoed.output_dir = (root / "c").string();
    REQUIRE(run::run(echoed) == 0);
    CHECK(slurp(root / "a" / "metrics.json") == slurp(root / "c" / "metrics.json"));

    // Evaluate mode reloads the checkpoint and reproduces the metrics.
    config::RunConfig ev = cfg;
    ev.mode = config::Mode::kEvaluate;
    ev.output_dir = (root / "a").string();
    const std::string before = slurp(root / "a" / "metrics.json");
    REQUIRE(run::run(ev) == 0);
    CHECK(slurp(root / "a" / "metrics.json") == before);
    fs::remove_all(root);
  }
}
