#include "uniot/runner.hpp"

#include "uniot/svg.hpp"

#include <cmath>
#include <fstream>
#include <map>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace uniot::run {

namespace fs = std::filesystem;

namespace {

std::string opt(const std::optional<double>& v) { return v ? fmt::format("{}", *v) : std::string(); }

void append_metrics_csv(const fs::path& path, const std::string& prefix_header, const std::string& prefix,
                        const eval::MetricsReport& m) {
  const bool fresh = !fs::exists(path);
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  if (fresh) out << prefix_header << eval::metrics_csv_header() << '\n';
  out << prefix << eval::metrics_csv_row(m) << '\n';
}

std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

void write_checkpoint(const fs::path& dir, const train::TrainState& state) {
  write_file(dir / "checkpoint.json", dump(model::to_json(train::make_checkpoint(state))));
}

void write_train_outputs(const fs::path& dir, const Experiment& ex) {
  write_file(dir / "metrics.json", dump(eval::to_json(ex.metrics)));
  std::string trace = trace_csv_header() + "\n";
  for (const auto& row : ex.trace) trace += trace_csv_row(row) + "\n";
  write_file(dir / "trace.csv", trace);
  write_file(dir / "embeddings.svg", embeddings_svg(ex.details, ex.scenario.target));
  write_checkpoint(dir, ex.loop.state);
  append_metrics_csv(dir / "metrics.csv", "", "", ex.metrics);
}

config::RunConfig member_config(const config::RunConfig& base, Index value) {
  config::RunConfig c = base;
  c.mode = config::Mode::kTrain;
  (base.sweep.vary == synth::SweepField::kSourcePrivate ? c.scenario.n_source_private : c.scenario.n_target_private) =
      value;
  return c;
}

// Runs one training job and writes its outputs. Returns the exit status.
int train_into(const config::RunConfig& cfg, const fs::path& dir, std::optional<Experiment>* keep = nullptr) {
  fs::create_directories(dir);
  write_file(dir / "config-echo.json", dump(config::to_json(cfg)));
  Experiment ex = prepare_experiment(cfg.scenario, cfg.hp, cfg.seed);
  try {
    train_experiment(ex, cfg.hp);
  } catch (const train::NumericFailure& e) {
    spdlog::error("{}", e.what());
    write_checkpoint(dir, ex.loop.state);
    std::string trace = trace_csv_header() + "\n";
    for (const auto& row : ex.trace) trace += trace_csv_row(row) + "\n";
    write_file(dir / "trace.csv", trace);
    spdlog::error("checkpoint written to {}", (dir / "checkpoint.json").string());
    return 3;
  }
  evaluate_experiment(ex, cfg.hp, cfg.seed);
  write_train_outputs(dir, ex);
  spdlog::info("{}: H={:.4f} H3={:.4f}", dir.string(), ex.metrics.h_score, ex.metrics.h3_score);
  if (keep != nullptr) keep->emplace(std::move(ex));
  return 0;
}

int run_train(const config::RunConfig& cfg) { return train_into(cfg, cfg.output_dir); }

int run_evaluate(const config::RunConfig& cfg) {
  const fs::path dir = cfg.output_dir;
  const fs::path ckpt_path = cfg.checkpoint.empty() ? dir / "checkpoint.json" : fs::path(cfg.checkpoint);
  std::ifstream in(ckpt_path);
  if (!in) {
    spdlog::error("cannot open checkpoint {}", ckpt_path.string());
    return 2;
  }
  const model::Checkpoint ckpt = model::checkpoint_from_json(nlohmann::json::parse(in));
  const synth::Scenario sc = synth::generate(cfg.scenario);
  if (ckpt.params.extractor.input_dim() != sc.config.input_dim ||
      ckpt.params.source.size() != sc.config.n_source_classes()) {
    spdlog::error("checkpoint does not match the configured scenario");
    return 2;
  }
  const ccd::AdaptiveBeta beta(
      ot::ProbabilityVector(Eigen::Map<const Vector>(ckpt.beta.data(), static_cast<Index>(ckpt.beta.size()))),
      cfg.hp.mu);
  eval::EvalDetails details;
  const eval::MetricsReport m = evaluate_model(ckpt.params, beta, sc, cfg.hp, cfg.seed, &details);
  fs::create_directories(dir);
  write_file(dir / "config-echo.json", dump(config::to_json(cfg)));
  write_file(dir / "metrics.json", dump(eval::to_json(m)));
  write_file(dir / "embeddings.svg", embeddings_svg(details, sc.target));
  append_metrics_csv(dir / "metrics.csv", "", "", m);
  spdlog::info("evaluate: H={:.4f} H3={:.4f}", m.h_score, m.h3_score);
  return 0;
}

int run_sweep(const config::RunConfig& cfg) {
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  write_file(dir / "config-echo.json", dump(config::to_json(cfg)));
  const char* field = synth::to_string(cfg.sweep.vary);
  std::string csv = std::string(field) + "," + eval::metrics_csv_header() + "\n";
  svg::Series h{"H-score", {}, {}};
  svg::Series h3{"H3-score", {}, {}};
  for (Index v : cfg.sweep.values) {
    const config::RunConfig member = member_config(cfg, v);
    std::optional<Experiment> ex;
    const int status = train_into(member, dir / fmt::format("{}_{}", field, v), &ex);
    if (status != 0) return status;
    csv += fmt::format("{},{}\n", v, eval::metrics_csv_row(ex->metrics));
    h.x.push_back(static_cast<double>(v));
    h.y.push_back(ex->metrics.h_score);
    h3.x.push_back(static_cast<double>(v));
    h3.y.push_back(ex->metrics.h3_score);
  }
  write_file(dir / "sweep.csv", csv);
  write_file(dir / "sweep.svg", svg::line_chart({h, h3}, fmt::format("Scores vs {}", field), field, "score"));
  return 0;
}

int run_ablate(const config::RunConfig& cfg) {
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  write_file(dir / "config-echo.json", dump(config::to_json(cfg)));
  std::vector<std::uint64_t> seeds = cfg.ablation_seeds;
  if (seeds.empty()) seeds.push_back(cfg.seed);
  std::string csv = "variant,seed," + eval::metrics_csv_header() + "\n";
  std::string summary = "variant,runs,mean_h_score,mean_h3_score\n";
  for (const auto& variant : ablation_grid()) {
    const train::Hyperparameters hp = variant.apply(cfg.hp);
    double h = 0.0, h3 = 0.0;
    for (std::uint64_t seed : seeds) {
      synth::ScenarioConfig sc = cfg.scenario;
      sc.seed = seed;
      const Experiment ex = run_experiment(sc, hp, seed);
      csv += fmt::format("{},{},{}\n", variant.name, seed, eval::metrics_csv_row(ex.metrics));
      h += ex.metrics.h_score;
      h3 += ex.metrics.h3_score;
      spdlog::info("ablate {} seed {}: H={:.4f} H3={:.4f}", variant.name, seed, ex.metrics.h_score, ex.metrics.h3_score);
    }
    const double n = static_cast<double>(seeds.size());
    summary += fmt::format("{},{},{},{}\n", variant.name, seeds.size(), h / n, h3 / n);
  }
  write_file(dir / "ablation.csv", csv);
  write_file(dir / "ablation_summary.csv", summary);
  return 0;
}

}  // namespace

std::string trace_csv_header() {
  return "step,cls,ccd,global,local,pcd,total,active,positives,negatives,fills,mean_w_t,selected,batch_recall,"
         "batch_specificity,equipartition_error,ccd_solver_iterations,pcd_solver_iterations,ccd_converged,"
         "pcd_converged,skipped";
}

std::string trace_csv_row(const TraceRow& r) {
  const auto& l = r.loss;
  const auto& d = r.diag;
  return fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}", r.step, l.cls, l.ccd, l.global,
                     l.local, l.pcd, l.total, d.adaptation_active ? 1 : 0, d.positives, d.negatives, d.fills,
                     d.mean_w_t, d.selected, opt(r.batch_recall), opt(r.batch_specificity),
                     d.equipartition_error >= 0.0 ? fmt::format("{}", d.equipartition_error) : std::string(),
                     d.ccd_solver_iterations, d.pcd_solver_iterations, d.ccd_converged ? 1 : 0,
                     d.pcd_converged ? 1 : 0, d.skipped ? 1 : 0);
}

Experiment prepare_experiment(const synth::ScenarioConfig& scenario, const train::Hyperparameters& hp,
                              std::uint64_t seed) {
  synth::Scenario sc = synth::generate(scenario);
  train::TrainLoop loop = train::start_training(sc, hp, seed);
  return Experiment{std::move(sc), std::move(loop), {}, {}, {}};
}

void train_experiment(Experiment& ex, const train::Hyperparameters& hp) {
  const synth::Dataset& target = ex.scenario.target;
  ex.trace.reserve(static_cast<size_t>(hp.steps));
  train::run_training(ex.loop, ex.scenario, hp,
                      [&](std::int64_t step, const train::StepResult& res, std::span<const Index> rows) {
                        TraceRow row{step, res.loss, res.diag, std::nullopt, std::nullopt};
                        if (!res.diag.batch_mask.empty()) {
                          Index common = 0, recalled = 0, priv = 0, rejected = 0;
                          for (size_t i = 0; i < rows.size(); ++i) {
                            const Index label = target.labels[static_cast<size_t>(rows[i])];
                            const auto des = target.designation_of(label);
                            if (des == synth::Designation::kCommon) {
                              ++common;
                              recalled += res.diag.batch_mask[i] && res.diag.batch_pseudo_labels[i] == label ? 1 : 0;
                            } else if (des == synth::Designation::kTargetPrivate) {
                              ++priv;
                              rejected += res.diag.batch_mask[i] ? 0 : 1;
                            }
                          }
                          if (common > 0) row.batch_recall = static_cast<double>(recalled) / static_cast<double>(common);
                          if (priv > 0) row.batch_specificity = static_cast<double>(rejected) / static_cast<double>(priv);
                        }
                        // Keep the row small: the mask lives on in the recall figures.
                        row.diag.batch_mask.clear();
                        row.diag.batch_pseudo_labels.clear();
                        ex.trace.push_back(std::move(row));
                        if ((step + 1) % 500 == 0) spdlog::debug("step {}: total loss {:.5f}", step + 1, res.loss.total);
                      });
}

eval::MetricsReport evaluate_model(const model::Parameters& params, const ccd::AdaptiveBeta& beta,
                                   const synth::Scenario& sc, const train::Hyperparameters& hp, std::uint64_t seed,
                                   eval::EvalDetails* details) {
  eval::EvalConfig ec;
  ec.ccd = hp.ccd_config();
  ec.seed = train::stream_seed(seed, train::Stream::kEval);
  return eval::evaluate(params, beta, sc.target, ec, details);
}

void evaluate_experiment(Experiment& ex, const train::Hyperparameters& hp, std::uint64_t seed) {
  ex.metrics = evaluate_model(ex.loop.state.params, ex.loop.state.beta, ex.scenario, hp, seed, &ex.details);
}

Experiment run_experiment(const synth::ScenarioConfig& scenario, const train::Hyperparameters& hp,
                          std::uint64_t seed) {
  Experiment ex = prepare_experiment(scenario, hp, seed);
  train_experiment(ex, hp);
  evaluate_experiment(ex, hp, seed);
  return ex;
}

train::Hyperparameters AblationVariant::apply(train::Hyperparameters hp) const {
  hp.use_ccd = use_ccd;
  hp.use_fill = use_fill;
  hp.use_global = use_global;
  hp.use_local = use_local;
  return hp;
}

const std::vector<AblationVariant>& ablation_grid() {
  static const std::vector<AblationVariant> grid{
      {"ccd_only", true, true, false, false},        {"ccd_local", true, true, false, true},
      {"ccd_global", true, true, true, false},       {"pcd_only", false, true, true, true},
      {"ccd_no_fill_pcd", true, false, true, true},  {"full", true, true, true, true},
  };
  return grid;
}

std::string embeddings_svg(const eval::EvalDetails& details, const synth::Dataset& target) {
  const Matrix proj = svg::pca_2d(details.features);
  std::vector<svg::ScatterPoint> pts;
  pts.reserve(static_cast<size_t>(proj.rows()));
  for (Index i = 0; i < proj.rows(); ++i) {
    const bool common = target.designation_of(target.labels[static_cast<size_t>(i)]) == synth::Designation::kCommon;
    pts.push_back({proj(i, 0), proj(i, 1), common ? 0 : 1});
  }
  return svg::scatter(pts, {"common", "target-private"}, "Target embeddings (top-2 principal directions)");
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

int run(const config::RunConfig& cfg) {
  switch (cfg.mode) {
    case config::Mode::kTrain: return run_train(cfg);
    case config::Mode::kEvaluate: return run_evaluate(cfg);
    case config::Mode::kSweep: return run_sweep(cfg);
    case config::Mode::kAblate: return run_ablate(cfg);
  }
  return 2;
}

}  // namespace uniot::run
