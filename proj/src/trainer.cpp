#include "uniot/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <spdlog/spdlog.h>

namespace uniot::train {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace

void Hyperparameters::validate() const {
  require(gamma > -1.0 && gamma < 1.0, "gamma must lie in (-1, 1)");
  require(mu >= 0.0 && mu <= 1.0, "mu must lie in [0, 1]");
  require(tau > 0.0 && std::isfinite(tau), "tau must be > 0");
  require(epsilon > 0.0 && std::isfinite(epsilon), "epsilon must be > 0");
  require(kappa >= 0.0 && std::isfinite(kappa), "kappa must be >= 0");
  require(lambda >= 0.0 && std::isfinite(lambda), "lambda must be >= 0");
  require(prototypes >= 2, "K must be at least 2");
  require(batch_size >= 1, "batch_size must be at least 1");
  require(queue_capacity >= 1, "queue_capacity must be at least 1");
  require(steps >= 0, "steps must be >= 0");
  require(lr > 0.0 && std::isfinite(lr), "lr must be > 0");
  require(momentum >= 0.0 && momentum < 1.0, "momentum must lie in [0, 1)");
  require(weight_decay >= 0.0 && std::isfinite(weight_decay), "weight_decay must be >= 0");
  require(warm_up_multiplier >= 0, "warm_up_multiplier must be >= 0");
  require(hidden_dim >= 1 && embed_dim >= 2, "hidden_dim >= 1 and embed_dim >= 2 required");
  require(solver_max_iters >= 1, "solver_max_iters must be >= 1");
  require(solver_tolerance > 0.0, "solver_tolerance must be > 0");
}

ccd::CcdConfig Hyperparameters::ccd_config() const {
  ccd::CcdConfig c;
  c.gamma = gamma;
  c.tau = tau;
  c.adaptive_fill = use_fill;
  c.solver.epsilon = epsilon;
  c.solver.kappa = kappa;
  c.solver.max_iters = solver_max_iters;
  c.solver.tolerance = solver_tolerance;
  return c;
}

pcd::PcdConfig Hyperparameters::pcd_config() const {
  pcd::PcdConfig c;
  c.tau = tau;
  c.use_global = use_global;
  c.use_local = use_local;
  c.solver.epsilon = epsilon;
  c.solver.max_iters = solver_max_iters;
  c.solver.tolerance = solver_tolerance;
  return c;
}

model::SgdConfig Hyperparameters::sgd_config() const { return {lr, momentum, weight_decay}; }

std::uint64_t stream_seed(std::uint64_t seed, Stream s) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(s)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

Rng make_stream(std::uint64_t seed, Stream s) { return Rng(stream_seed(seed, s)); }

TrainState init_state(Index input_dim, Index source_classes, const Hyperparameters& hp, std::uint64_t seed) {
  hp.validate();
  Rng init = make_stream(seed, Stream::kInit);
  model::Parameters params;
  params.extractor = model::FeatureExtractor::random(input_dim, hp.hidden_dim, hp.embed_dim, init);
  params.source = model::PrototypeBank::random(source_classes, hp.embed_dim, init);
  params.target = model::PrototypeBank::random(hp.prototypes, hp.embed_dim, init);
  model::Gradients velocity = model::Gradients::zeros_like(params);
  return TrainState{std::move(params),
                    std::move(velocity),
                    ccd::AdaptiveBeta(source_classes, hp.mu),
                    memory::MemoryQueue(hp.queue_capacity, hp.embed_dim),
                    make_stream(seed, Stream::kBatches),
                    make_stream(seed, Stream::kFill),
                    0,
                    0,
                    0,
                    Vector(),
                    Vector()};
}

StepResult train_step(TrainState& state, const Matrix& source_x, std::span<const Index> source_labels,
                      const Matrix& target_x, std::span<const std::int64_t> target_ids, const Hyperparameters& hp) {
  StepResult res;
  LossBundle& loss = res.loss;
  StepDiagnostics& diag = res.diag;
  model::Parameters& params = state.params;
  model::Gradients grads = model::Gradients::zeros_like(params);

  const model::ForwardCache src = model::forward_cached(params.extractor, source_x);
  const model::LossGrad cls = model::source_cls_loss(src.features, source_labels, params.source, hp.tau);
  loss.cls = cls.value;
  grads.source += cls.d_prototypes;
  model::backward(params.extractor, src, cls.d_features, grads);

  const model::ForwardCache tgt = model::forward_cached(params.extractor, target_x);
  const FeatureMatrix& z = tgt.features;
  const Index b = z.rows();
  Matrix d_target = Matrix::Zero(b, z.cols());

  diag.adaptation_active = state.queue.size() >= hp.warm_up_multiplier * hp.batch_size;
  if (diag.adaptation_active && hp.use_ccd) {
    ccd::CcdConfig cfg = hp.ccd_config();
    cfg.solver.initial_col_potential = state.ccd_col_potential;
    const ccd::CcdOutput out = ccd::ccd_forward(z, state.queue, params.source, state.beta, cfg, state.fill_rng);
    state.ccd_col_potential = out.col_potential;
    const model::LossGrad l = ccd::ccd_loss(z, out.detection, params.source, hp.tau, &diag.selected);
    loss.ccd = l.value;
    if (hp.lambda > 0.0) {
      d_target += hp.lambda * l.d_features;
      grads.source += hp.lambda * l.d_prototypes;
    }
    state.beta.update(out.qbar);

    diag.positives = out.fill.positives_before;
    diag.negatives = out.fill.negatives_before;
    diag.fills = out.fill.fills();
    diag.mean_w_t = out.detection.w_t.head(b).mean();
    diag.batch_mask.assign(out.detection.mask.begin(), out.detection.mask.begin() + b);
    diag.batch_pseudo_labels.assign(out.detection.pseudo_labels.begin(), out.detection.pseudo_labels.begin() + b);
    diag.ccd_solver_iterations = out.solver_iterations;
    diag.ccd_converged = out.solver_converged;
    if (diag.selected == 0) spdlog::debug("step {}: no batch row passed common detection", state.step);
  }

  if (diag.adaptation_active && hp.lambda > 0.0 && (hp.use_global || hp.use_local)) {
    pcd::PcdConfig cfg = hp.pcd_config();
    cfg.solver.initial_col_potential = state.pcd_col_potential;
    const pcd::PcdOutput out = pcd::pcd_forward(z, target_ids, state.queue, params.target, cfg);
    state.pcd_col_potential = out.assignment.col_potential;
    loss.global = out.loss.global;
    loss.local = out.loss.local;
    loss.pcd = out.loss.value;
    d_target += hp.lambda * out.loss.d_anchors;
    grads.target += hp.lambda * out.loss.d_prototypes;

    const Vector colsum = out.assignment.raw.col_marginal();
    diag.equipartition_error = (colsum.array() - 1.0 / static_cast<double>(colsum.size())).abs().maxCoeff();
    diag.pcd_solver_iterations = out.assignment.solver_iterations;
    diag.pcd_converged = out.assignment.solver_converged;
    diag.neighbor_fallbacks = out.neighbor_fallbacks;
  }

  loss.total = loss.cls + hp.lambda * (loss.ccd + loss.pcd);
  model::backward(params.extractor, tgt, d_target, grads);

  if (model::sgd_step(params, state.velocity, grads, hp.sgd_config())) {
    state.consecutive_skips = 0;
  } else {
    diag.skipped = true;
    ++state.skipped_steps;
    ++state.consecutive_skips;
    spdlog::warn("step {}: non-finite gradient, update skipped", state.step);
  }

  state.queue.enqueue(z, target_ids);
  ++state.step;
  return res;
}

BatchSampler::BatchSampler(Index size, Index batch) : order_(static_cast<size_t>(size)), batch_(batch), cursor_(size) {
  if (size <= 0 || batch <= 0) throw std::invalid_argument("BatchSampler: size and batch must be positive");
  std::iota(order_.begin(), order_.end(), Index{0});
}

std::vector<Index> BatchSampler::next(Rng& rng) {
  std::vector<Index> out;
  out.reserve(static_cast<size_t>(batch_));
  while (static_cast<Index>(out.size()) < batch_) {
    if (cursor_ >= static_cast<Index>(order_.size())) {
      // Fisher-Yates with explicit draws keeps the order stable across
      // standard library implementations of std::shuffle.
      for (Index i = static_cast<Index>(order_.size()) - 1; i > 0; --i) {
        std::uniform_int_distribution<Index> pick(0, i);
        std::swap(order_[static_cast<size_t>(i)], order_[static_cast<size_t>(pick(rng))]);
      }
      cursor_ = 0;
    }
    out.push_back(order_[static_cast<size_t>(cursor_++)]);
  }
  return out;
}

TrainLoop start_training(const synth::Scenario& sc, const Hyperparameters& hp, std::uint64_t seed) {
  const Index batch = hp.batch_size;
  return TrainLoop{init_state(sc.config.input_dim, sc.config.n_source_classes(), hp, seed),
                   BatchSampler(sc.source.size(), batch), BatchSampler(sc.target.size(), batch)};
}

void run_training(TrainLoop& loop, const synth::Scenario& sc, const Hyperparameters& hp, const StepObserver& observer) {
  TrainState& st = loop.state;
  while (st.step < hp.steps) {
    const std::vector<Index> s_rows = loop.source_sampler.next(st.batch_rng);
    const std::vector<Index> t_rows = loop.target_sampler.next(st.batch_rng);
    const Matrix sx = gather_rows(sc.source.inputs, s_rows);
    const Matrix tx = gather_rows(sc.target.inputs, t_rows);
    std::vector<Index> labels;
    labels.reserve(s_rows.size());
    for (Index r : s_rows) labels.push_back(sc.source.labels[static_cast<size_t>(r)]);
    std::vector<std::int64_t> ids(t_rows.begin(), t_rows.end());

    const std::int64_t step = st.step;
    const StepResult res = train_step(st, sx, labels, tx, ids, hp);
    if (observer) observer(step, res, t_rows);
    if (st.consecutive_skips >= kMaxConsecutiveSkips) {
      throw NumericFailure("training diverged: " + std::to_string(st.consecutive_skips) +
                           " consecutive steps with non-finite gradients (last step " + std::to_string(step) + ")");
    }
  }
}

std::string rng_state_string(const Rng& batch, const Rng& fill) {
  std::ostringstream out;
  out << batch << ';' << fill;
  return out.str();
}

model::Checkpoint make_checkpoint(const TrainState& state) {
  model::Checkpoint ckpt{state.params, state.velocity, state.step, {}, rng_state_string(state.batch_rng, state.fill_rng)};
  const Vector& b = state.beta.beta().weights();
  ckpt.beta.assign(b.data(), b.data() + b.size());
  return ckpt;
}

}  // namespace uniot::train
