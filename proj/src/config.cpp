#include "uniot/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace uniot::config {

namespace {

using nlohmann::json;

int line_at(const std::string& text, size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

// Reads one JSON object, remembering where in the source text it lives so
// errors can name a line.
class Section {
 public:
  Section(const std::string& text, const json& obj, std::string name, size_t start)
      : text_(text), obj_(obj), name_(std::move(name)), start_(start) {
    if (!obj_.is_object()) fail(start_, "'" + name_ + "' must be an object");
  }

  [[noreturn]] void fail(size_t offset, const std::string& msg) const { throw ConfigError(line_at(text_, offset), msg); }

  size_t locate(const std::string& key) const {
    const size_t pos = text_.find('"' + key + '"', start_);
    return pos == std::string::npos ? start_ : pos;
  }

  void reject_unknown(std::initializer_list<const char*> allowed) const {
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, value] : obj_.items()) {
      if (!ok.contains(key)) fail(locate(key), "unknown key '" + key + "' in " + name_);
    }
  }

  bool has(const char* key) const { return obj_.contains(key); }

  template <class T>
  void read(const char* key, T& out) const {
    if (!obj_.contains(key)) return;
    const json& v = obj_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw std::invalid_argument("expected true or false");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw std::invalid_argument("expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (v.is_number_integer() && !v.is_number_unsigned()) throw std::invalid_argument("expected a non-negative integer");
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw std::invalid_argument("expected a number");
      } else {
        if (!v.is_string()) throw std::invalid_argument("expected a string");
      }
      out = v.get<T>();
    } catch (const std::exception& e) {
      fail(locate(key), name_ + "." + key + ": " + e.what());
    }
  }

  Section child(const char* key) const { return Section(text_, obj_.at(key), name_ + "." + key, locate(key)); }
  const json& value(const char* key) const { return obj_.at(key); }

 private:
  const std::string& text_;
  const json& obj_;
  std::string name_;
  size_t start_;
};

void read_scenario(const Section& s, synth::ScenarioConfig& sc) {
  s.reject_unknown({"input_dim", "n_common", "n_source_private", "n_target_private", "samples_per_class",
                    "cluster_std", "mean_radius", "shift"});
  s.read("input_dim", sc.input_dim);
  s.read("n_common", sc.n_common);
  s.read("n_source_private", sc.n_source_private);
  s.read("n_target_private", sc.n_target_private);
  s.read("samples_per_class", sc.samples_per_class);
  s.read("cluster_std", sc.cluster_std);
  s.read("mean_radius", sc.mean_radius);
  if (s.has("shift")) {
    const Section sh = s.child("shift");
    sh.reject_unknown({"rotation_angle", "translation_magnitude", "scale"});
    sh.read("rotation_angle", sc.shift.rotation_angle);
    sh.read("translation_magnitude", sc.shift.translation_magnitude);
    sh.read("scale", sc.shift.scale);
  }
}

void read_hyperparameters(const Section& s, train::Hyperparameters& hp) {
  s.reject_unknown({"gamma", "mu", "tau", "epsilon", "kappa", "lambda", "K", "batch_size", "queue_capacity", "steps",
                    "lr", "momentum", "weight_decay", "warm_up_multiplier", "hidden_dim", "embed_dim",
                    "solver_max_iters", "solver_tolerance", "use_ccd", "use_fill", "use_global", "use_local"});
  s.read("gamma", hp.gamma);
  s.read("mu", hp.mu);
  s.read("tau", hp.tau);
  s.read("epsilon", hp.epsilon);
  s.read("kappa", hp.kappa);
  s.read("lambda", hp.lambda);
  s.read("K", hp.prototypes);
  s.read("batch_size", hp.batch_size);
  s.read("queue_capacity", hp.queue_capacity);
  s.read("steps", hp.steps);
  s.read("lr", hp.lr);
  s.read("momentum", hp.momentum);
  s.read("weight_decay", hp.weight_decay);
  s.read("warm_up_multiplier", hp.warm_up_multiplier);
  s.read("hidden_dim", hp.hidden_dim);
  s.read("embed_dim", hp.embed_dim);
  s.read("solver_max_iters", hp.solver_max_iters);
  s.read("solver_tolerance", hp.solver_tolerance);
  s.read("use_ccd", hp.use_ccd);
  s.read("use_fill", hp.use_fill);
  s.read("use_global", hp.use_global);
  s.read("use_local", hp.use_local);
}

}  // namespace

ConfigError::ConfigError(int line, const std::string& message)
    : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + message : message), line_(line) {}

Mode parse_mode(const std::string& name) {
  if (name == "train") return Mode::kTrain;
  if (name == "evaluate") return Mode::kEvaluate;
  if (name == "sweep") return Mode::kSweep;
  if (name == "ablate") return Mode::kAblate;
  throw std::invalid_argument("unknown mode '" + name + "' (expected train, evaluate, sweep or ablate)");
}

const char* to_string(Mode m) {
  switch (m) {
    case Mode::kTrain: return "train";
    case Mode::kEvaluate: return "evaluate";
    case Mode::kSweep: return "sweep";
    case Mode::kAblate: return "ablate";
  }
  return "train";
}

void RunConfig::validate() const {
  scenario.validate();
  hp.validate();
  if (output_dir.empty()) throw std::invalid_argument("output_dir must not be empty");
  for (Index v : sweep.values)
    if (v < 0) throw std::invalid_argument("sweep values must be non-negative");
  if (sweep.values.empty()) throw std::invalid_argument("sweep.values must not be empty");
}

RunConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(line_at(text, e.byte > 0 ? e.byte - 1 : 0), std::string("malformed config: ") + e.what());
  }
  RunConfig cfg;
  const Section top(text, root, "config", 0);
  top.reject_unknown({"scenario", "hyperparameters", "output_dir", "seed", "mode", "sweep", "ablation", "checkpoint"});
  if (top.has("scenario")) read_scenario(top.child("scenario"), cfg.scenario);
  if (top.has("hyperparameters")) read_hyperparameters(top.child("hyperparameters"), cfg.hp);
  top.read("output_dir", cfg.output_dir);
  top.read("checkpoint", cfg.checkpoint);
  std::uint64_t seed = 0;
  top.read("seed", seed);
  cfg.set_seed(seed);
  if (top.has("mode")) {
    std::string mode;
    top.read("mode", mode);
    try {
      cfg.mode = parse_mode(mode);
    } catch (const std::invalid_argument& e) {
      top.fail(top.locate("mode"), e.what());
    }
  }
  if (top.has("sweep")) {
    const Section s = top.child("sweep");
    s.reject_unknown({"vary", "values"});
    if (s.has("vary")) {
      std::string vary;
      s.read("vary", vary);
      try {
        cfg.sweep.vary = synth::parse_sweep_field(vary);
      } catch (const std::invalid_argument& e) {
        s.fail(s.locate("vary"), e.what());
      }
    }
    if (s.has("values")) {
      const json& v = s.value("values");
      if (!v.is_array()) s.fail(s.locate("values"), "sweep.values must be an array of integers");
      cfg.sweep.values.clear();
      for (const json& x : v) {
        if (!x.is_number_integer()) s.fail(s.locate("values"), "sweep.values must be an array of integers");
        cfg.sweep.values.push_back(x.get<Index>());
      }
    }
  }
  if (top.has("ablation")) {
    const Section s = top.child("ablation");
    s.reject_unknown({"seeds"});
    if (s.has("seeds")) {
      const json& v = s.value("seeds");
      if (!v.is_array()) s.fail(s.locate("seeds"), "ablation.seeds must be an array of non-negative integers");
      for (const json& x : v) {
        if (!x.is_number_unsigned()) s.fail(s.locate("seeds"), "ablation.seeds must be an array of non-negative integers");
        cfg.ablation_seeds.push_back(x.get<std::uint64_t>());
      }
    }
  }

  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    // Point at the first key named in the message, if any.
    const std::string msg = e.what();
    const std::string key = msg.substr(0, msg.find(' '));
    const size_t pos = text.find('"' + key + '"');
    throw ConfigError(pos == std::string::npos ? 0 : line_at(text, pos), "invalid config: " + msg);
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(0, "cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

nlohmann::json to_json(const RunConfig& cfg) {
  const auto& sc = cfg.scenario;
  const auto& hp = cfg.hp;
  json values = json::array();
  for (Index v : cfg.sweep.values) values.push_back(v);
  json seeds = json::array();
  for (std::uint64_t s : cfg.ablation_seeds) seeds.push_back(s);
  return {
      {"mode", to_string(cfg.mode)},
      {"seed", cfg.seed},
      {"output_dir", cfg.output_dir},
      {"checkpoint", cfg.checkpoint},
      {"scenario",
       {{"input_dim", sc.input_dim},
        {"n_common", sc.n_common},
        {"n_source_private", sc.n_source_private},
        {"n_target_private", sc.n_target_private},
        {"samples_per_class", sc.samples_per_class},
        {"cluster_std", sc.cluster_std},
        {"mean_radius", sc.mean_radius},
        {"shift",
         {{"rotation_angle", sc.shift.rotation_angle},
          {"translation_magnitude", sc.shift.translation_magnitude},
          {"scale", sc.shift.scale}}}}},
      {"hyperparameters",
       {{"gamma", hp.gamma},
        {"mu", hp.mu},
        {"tau", hp.tau},
        {"epsilon", hp.epsilon},
        {"kappa", hp.kappa},
        {"lambda", hp.lambda},
        {"K", hp.prototypes},
        {"batch_size", hp.batch_size},
        {"queue_capacity", hp.queue_capacity},
        {"steps", hp.steps},
        {"lr", hp.lr},
        {"momentum", hp.momentum},
        {"weight_decay", hp.weight_decay},
        {"warm_up_multiplier", hp.warm_up_multiplier},
        {"hidden_dim", hp.hidden_dim},
        {"embed_dim", hp.embed_dim},
        {"solver_max_iters", hp.solver_max_iters},
        {"solver_tolerance", hp.solver_tolerance},
        {"use_ccd", hp.use_ccd},
        {"use_fill", hp.use_fill},
        {"use_global", hp.use_global},
        {"use_local", hp.use_local}}},
      {"sweep", {{"vary", synth::to_string(cfg.sweep.vary)}, {"values", values}}},
      {"ablation", {{"seeds", seeds}}},
  };
}

}  // namespace uniot::config
