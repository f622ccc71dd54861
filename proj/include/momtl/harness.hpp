#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "momtl/baselines.hpp"
#include "momtl/data.hpp"
#include "momtl/mgda.hpp"
#include "momtl/minnorm.hpp"
#include "momtl/models.hpp"
#include "momtl/rng.hpp"
#include "momtl/types.hpp"

namespace momtl {

using Json = nlohmann::json;

// ---- configuration -----------------------------------------------------------

struct DatasetConfig {
  std::string kind = "synth_regression";  // multimnist | synth_regression | quadratic

  // multimnist
  std::string images_path;
  std::string labels_path;
  int synthetic_count = 0;  // > 0: generate a stand-in digit corpus instead of reading files
  int shift = 8;
  std::string overlap = "max";  // max | clip_sum

  // shared sizes
  int train_size = 512;
  int val_size = 0;
  int test_size = 128;

  // synth_regression
  int tasks = 2;
  int d_in = 16;
  int d_repr = 4;
  int d_out = 1;
  double noise = 0.0;
  bool competing = false;

  // quadratic
  int quad_tasks = 2;
  int quad_dim = 2;

  std::string cache_path;  // optional dataset cache file
};

struct ModelConfig {
  std::string encoder = "mlp";  // linear | mlp
  int hidden = 32;
  int repr = 16;
  std::string nonlinearity = "tanh";  // tanh | relu
  bool bias = true;
};

struct ExperimentConfig {
  int config_version = 1;
  std::string method = "mgda";  // mgda | mgda_ub | uniform | single_task | grid
  std::uint64_t seed = 0;
  int epochs = 1;
  int batch_size = 64;
  double learning_rate = 1e-2;
  int lr_halve_every_epochs = 0;  // 0 = constant schedule
  double momentum = 0.0;
  std::string normalize = "none";  // none | l2 | loss
  bool check_certificates = true;
  int max_steps = 0;  // 0 = no cap
  SolverConfig solver;
  DatasetConfig dataset;
  ModelConfig model;
  int single_task_index = -1;  // -1 = train every task
  int grid_points = 21;
  std::string grid_metric = "mean_val_accuracy";
  int quad_steps = 500;
  std::string out_dir = "runs";
};

inline GradientNormalize parse_normalize(const std::string& s) {
  if (s == "none") return GradientNormalize::kNone;
  if (s == "l2") return GradientNormalize::kL2;
  if (s == "loss") return GradientNormalize::kLoss;
  throw std::invalid_argument("config: normalize must be none|l2|loss, got '" + s + "'");
}

namespace detail {

template <typename T>
T get_or(const Json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<T>();
}

}  // namespace detail

inline ExperimentConfig parse_config(const Json& j) {
  ExperimentConfig c;
  c.config_version = detail::get_or(j, "config_version", 1);
  if (c.config_version != 1) {
    throw std::invalid_argument("config: unsupported config_version " +
                                std::to_string(c.config_version));
  }
  c.method = detail::get_or<std::string>(j, "method", c.method);
  c.seed = detail::get_or<std::uint64_t>(j, "seed", c.seed);
  c.epochs = detail::get_or(j, "epochs", c.epochs);
  c.batch_size = detail::get_or(j, "batch_size", c.batch_size);
  c.learning_rate = detail::get_or(j, "learning_rate", c.learning_rate);
  c.lr_halve_every_epochs = detail::get_or(j, "lr_halve_every_epochs", c.lr_halve_every_epochs);
  c.momentum = detail::get_or(j, "momentum", c.momentum);
  c.normalize = detail::get_or<std::string>(j, "normalize", c.normalize);
  c.check_certificates = detail::get_or(j, "check_certificates", c.check_certificates);
  c.max_steps = detail::get_or(j, "max_steps", c.max_steps);
  c.out_dir = detail::get_or<std::string>(j, "out_dir", c.out_dir);
  if (j.contains("solver")) {
    const Json& s = j.at("solver");
    c.solver.max_iterations = detail::get_or(s, "max_iterations", c.solver.max_iterations);
    c.solver.gamma_tolerance = detail::get_or(s, "gamma_tolerance", c.solver.gamma_tolerance);
    c.solver.norm_stall_tolerance =
        detail::get_or(s, "norm_stall_tolerance", c.solver.norm_stall_tolerance);
    c.solver.stationarity_threshold =
        detail::get_or(s, "stationarity_threshold", c.solver.stationarity_threshold);
  }
  if (j.contains("dataset")) {
    const Json& d = j.at("dataset");
    DatasetConfig& dc = c.dataset;
    dc.kind = detail::get_or<std::string>(d, "kind", dc.kind);
    dc.images_path = detail::get_or<std::string>(d, "images", dc.images_path);
    dc.labels_path = detail::get_or<std::string>(d, "labels", dc.labels_path);
    dc.synthetic_count = detail::get_or(d, "synthetic_count", dc.synthetic_count);
    dc.shift = detail::get_or(d, "shift", dc.shift);
    dc.overlap = detail::get_or<std::string>(d, "overlap", dc.overlap);
    dc.train_size = detail::get_or(d, "train_size", dc.train_size);
    dc.val_size = detail::get_or(d, "val_size", dc.val_size);
    dc.test_size = detail::get_or(d, "test_size", dc.test_size);
    dc.tasks = detail::get_or(d, "tasks", dc.tasks);
    dc.d_in = detail::get_or(d, "d_in", dc.d_in);
    dc.d_repr = detail::get_or(d, "d_repr", dc.d_repr);
    dc.d_out = detail::get_or(d, "d_out", dc.d_out);
    dc.noise = detail::get_or(d, "noise", dc.noise);
    dc.competing = detail::get_or(d, "competing", dc.competing);
    dc.quad_tasks = detail::get_or(d, "quad_tasks", dc.quad_tasks);
    dc.quad_dim = detail::get_or(d, "quad_dim", dc.quad_dim);
    dc.cache_path = detail::get_or<std::string>(d, "cache", dc.cache_path);
  }
  if (j.contains("model")) {
    const Json& m = j.at("model");
    c.model.encoder = detail::get_or<std::string>(m, "encoder", c.model.encoder);
    c.model.hidden = detail::get_or(m, "hidden", c.model.hidden);
    c.model.repr = detail::get_or(m, "repr", c.model.repr);
    c.model.nonlinearity = detail::get_or<std::string>(m, "nonlinearity", c.model.nonlinearity);
    c.model.bias = detail::get_or(m, "bias", c.model.bias);
  }
  if (j.contains("single_task")) {
    c.single_task_index = detail::get_or(j.at("single_task"), "task", c.single_task_index);
  }
  if (j.contains("grid")) {
    c.grid_points = detail::get_or(j.at("grid"), "points", c.grid_points);
    c.grid_metric = detail::get_or<std::string>(j.at("grid"), "metric", c.grid_metric);
  }
  if (j.contains("quadratic")) {
    c.quad_steps = detail::get_or(j.at("quadratic"), "steps", c.quad_steps);
  }
  return c;
}

inline Json config_to_json(const ExperimentConfig& c) {
  Json j;
  j["config_version"] = c.config_version;
  j["method"] = c.method;
  j["seed"] = c.seed;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["lr_halve_every_epochs"] = c.lr_halve_every_epochs;
  j["momentum"] = c.momentum;
  j["normalize"] = c.normalize;
  j["check_certificates"] = c.check_certificates;
  j["max_steps"] = c.max_steps;
  j["solver"] = {{"max_iterations", c.solver.max_iterations},
                 {"gamma_tolerance", c.solver.gamma_tolerance},
                 {"norm_stall_tolerance", c.solver.norm_stall_tolerance},
                 {"stationarity_threshold", c.solver.stationarity_threshold}};
  j["dataset"] = {{"kind", c.dataset.kind},
                  {"images", c.dataset.images_path},
                  {"labels", c.dataset.labels_path},
                  {"synthetic_count", c.dataset.synthetic_count},
                  {"shift", c.dataset.shift},
                  {"overlap", c.dataset.overlap},
                  {"train_size", c.dataset.train_size},
                  {"val_size", c.dataset.val_size},
                  {"test_size", c.dataset.test_size},
                  {"tasks", c.dataset.tasks},
                  {"d_in", c.dataset.d_in},
                  {"d_repr", c.dataset.d_repr},
                  {"d_out", c.dataset.d_out},
                  {"noise", c.dataset.noise},
                  {"competing", c.dataset.competing},
                  {"quad_tasks", c.dataset.quad_tasks},
                  {"quad_dim", c.dataset.quad_dim},
                  {"cache", c.dataset.cache_path}};
  j["model"] = {{"encoder", c.model.encoder},
                {"hidden", c.model.hidden},
                {"repr", c.model.repr},
                {"nonlinearity", c.model.nonlinearity},
                {"bias", c.model.bias}};
  j["single_task"] = {{"task", c.single_task_index}};
  j["grid"] = {{"points", c.grid_points}, {"metric", c.grid_metric}};
  j["quadratic"] = {{"steps", c.quad_steps}};
  j["out_dir"] = c.out_dir;
  return j;
}

inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string config_hash(const ExperimentConfig& c) {
  return fnv1a_hex(config_to_json(c).dump());
}

inline void validate_config(const ExperimentConfig& c) {
  const bool known_method = c.method == "mgda" || c.method == "mgda_ub" ||
                            c.method == "uniform" || c.method == "single_task" ||
                            c.method == "grid";
  require(known_method, "config: unknown method '" + c.method + "'");
  require(c.epochs >= 1, "config: epochs must be >= 1");
  require(c.batch_size >= 1, "config: batch_size must be >= 1");
  require(c.learning_rate > 0.0, "config: learning_rate must be > 0");
  require(c.momentum >= 0.0 && c.momentum < 1.0, "config: momentum must be in [0, 1)");
  parse_normalize(c.normalize);
  c.solver.validate();
  const bool mgda_method = c.method == "mgda" || c.method == "mgda_ub";
  if (mgda_method && c.momentum > 0.0 && c.check_certificates) {
    throw std::invalid_argument(
        "config: momentum interacts with the descent certificate; set "
        "check_certificates=false to train mgda variants with momentum");
  }
  const DatasetConfig& d = c.dataset;
  if (d.kind == "multimnist") {
    require(d.synthetic_count > 0 || (!d.images_path.empty() && !d.labels_path.empty()),
            "config: multimnist needs images/labels paths or synthetic_count > 0");
    require(d.overlap == "max" || d.overlap == "clip_sum",
            "config: overlap must be max|clip_sum");
  } else if (d.kind == "synth_regression") {
    require(d.tasks >= 1, "config: dataset.tasks must be >= 1");
  } else if (d.kind == "quadratic") {
    require(c.method == "mgda" || c.method == "uniform" || c.method == "single_task",
            "config: quadratic dataset supports methods mgda|uniform|single_task (no "
            "representation space exists for mgda_ub)");
    require(d.quad_tasks >= 2, "config: quadratic needs >= 2 tasks");
  } else {
    throw std::invalid_argument("config: unknown dataset kind '" + d.kind + "'");
  }
  require(c.model.encoder == "linear" || c.model.encoder == "mlp",
          "config: encoder must be linear|mlp");
  require(c.model.nonlinearity == "tanh" || c.model.nonlinearity == "relu",
          "config: nonlinearity must be tanh|relu");
  if (c.method == "grid") {
    require(c.grid_points >= 2, "config: grid.points must be >= 2");
    const bool val_metric = c.grid_metric.rfind("mean_val_", 0) == 0;
    if (val_metric) {
      require(c.dataset.val_size > 0,
              "config: grid metric '" + c.grid_metric + "' needs dataset.val_size > 0");
    }
  }
}

// ---- run records ---------------------------------------------------------------

struct StepRecord {
  long step = 0;
  int epoch = 0;
  Vector losses;
  Vector alpha;
  bool has_min_norm = false;
  double min_norm_sq = 0.0;
  bool stationary = false;
  bool has_certificate = false;
  double certificate_min = 0.0;
  double certificate_scale = 0.0;
  bool certificate_ok = true;
  long cum_shared_backwards = 0;
  long cum_task_backwards = 0;
  double step_seconds = 0.0;
};

struct SplitMetrics {
  Vector loss;
  Vector accuracy;               // valid only where has_accuracy
  std::vector<bool> has_accuracy;
};

struct EpochEval {
  int epoch = 0;
  SplitMetrics val;
  bool has_val = false;
  SplitMetrics test;
};

struct RunRecord {
  std::string method;
  std::string variant;  // "", "task0", "cell07", ...
  std::string hash;
  std::uint64_t seed = 0;
  int tasks = 0;
  std::string config_echo;
  std::vector<StepRecord> steps;
  std::vector<EpochEval> evals;
  SplitMetrics final_test;
  Vector alpha_mean;
  Vector alpha_std;
  long total_shared_backwards = 0;
  long total_task_backwards = 0;
  long certificate_violations = 0;
  double certificate_worst = 0.0;  // most negative scaled margin seen
  double wall_seconds = 0.0;
};

inline void finalize_alpha_stats(RunRecord& r) {
  if (r.steps.empty() || r.tasks == 0) {
    r.alpha_mean = Vector::Zero(r.tasks);
    r.alpha_std = Vector::Zero(r.tasks);
    return;
  }
  Vector mean = Vector::Zero(r.tasks);
  for (const StepRecord& s : r.steps) mean += s.alpha;
  mean /= static_cast<double>(r.steps.size());
  Vector var = Vector::Zero(r.tasks);
  for (const StepRecord& s : r.steps) var += (s.alpha - mean).cwiseAbs2();
  var /= static_cast<double>(r.steps.size());
  r.alpha_mean = mean;
  r.alpha_std = var.cwiseSqrt();
}

// ---- evaluation ----------------------------------------------------------------

inline SplitMetrics evaluate_model(const MtlModel& model, const DataSplit& split) {
  SplitMetrics m;
  const Batch batch = split.full_batch();
  const ForwardResult fwd = forward(model, batch);
  m.loss = fwd.losses;
  m.accuracy = Vector::Zero(model.tasks());
  m.has_accuracy.assign(model.tasks(), false);
  for (int t = 0; t < model.tasks(); ++t) {
    if (model.spec().heads[t].loss != LossKind::kSoftmaxCrossEntropy) continue;
    m.has_accuracy[t] = true;
    int hits = 0;
    for (int i = 0; i < batch.size(); ++i) {
      int arg = 0;
      fwd.head_out[t].row(i).maxCoeff(&arg);
      if (arg == batch.targets[t].classes[i]) ++hits;
    }
    m.accuracy(t) = static_cast<double>(hits) / batch.size();
  }
  return m;
}

// ---- dataset / model construction ----------------------------------------------

inline MultiTaskDataset build_dataset(const ExperimentConfig& c) {
  const DatasetConfig& d = c.dataset;
  if (d.kind == "multimnist") {
    MultiMnistConfig mc;
    mc.shift = d.shift;
    mc.overlap = d.overlap == "max" ? MultiMnistConfig::Overlap::kMax
                                    : MultiMnistConfig::Overlap::kClipSum;
    mc.train_size = d.train_size;
    mc.val_size = d.val_size;
    mc.test_size = d.test_size;
    IdxTensor images, labels;
    if (d.synthetic_count > 0) {
      SyntheticDigits digits = make_synthetic_digits(d.synthetic_count, c.seed);
      images = std::move(digits.images);
      labels = std::move(digits.labels);
    } else {
      images = read_idx_file(d.images_path);
      labels = read_idx_file(d.labels_path);
    }
    return build_multimnist(images, labels, c.seed, mc);
  }
  if (d.kind == "synth_regression") {
    SynthRegressionConfig sc;
    sc.tasks = d.tasks;
    sc.d_in = d.d_in;
    sc.d_repr = d.d_repr;
    sc.d_out = d.d_out;
    sc.noise = d.noise;
    sc.train_size = d.train_size;
    sc.val_size = d.val_size;
    sc.test_size = d.test_size;
    sc.competing = d.competing;
    return synth_mtl_regression(sc, c.seed);
  }
  throw std::invalid_argument("build_dataset: kind '" + d.kind + "' has no batch data");
}

inline ModelSpec model_spec_for(const ExperimentConfig& c, const MultiTaskDataset& ds) {
  ModelSpec spec;
  spec.encoder.kind = c.model.encoder == "linear" ? EncoderKind::kLinear : EncoderKind::kMlp;
  spec.encoder.d_in = static_cast<int>(ds.train.inputs.cols());
  spec.encoder.d_hidden = c.model.hidden;
  spec.encoder.d_repr = c.model.repr;
  spec.encoder.nonlin = c.model.nonlinearity == "tanh" ? Nonlinearity::kTanh : Nonlinearity::kRelu;
  spec.encoder.bias = c.model.bias;
  for (const TaskTargets& t : ds.train.tasks) {
    HeadSpec h;
    h.loss = t.kind;
    if (t.kind == LossKind::kSoftmaxCrossEntropy) {
      h.d_out = 10;
    } else {
      h.d_out = static_cast<int>(t.values.cols());
    }
    spec.heads.push_back(h);
  }
  return spec;
}

// ---- training loops -------------------------------------------------------------

inline SgdMomentumState momentum_state_for(const MtlModel& model) {
  SgdMomentumState s;
  s.shared_vel = Vector::Zero(model.shared_dim());
  for (const Vector& b : model.params().task_blocks) s.task_vel.push_back(Vector::Zero(b.size()));
  return s;
}

namespace detail {

inline double scheduled_lr(const ExperimentConfig& c, int epoch) {
  if (c.lr_halve_every_epochs <= 0) return c.learning_rate;
  return c.learning_rate * std::pow(0.5, epoch / c.lr_halve_every_epochs);
}

inline std::vector<std::vector<int>> epoch_batches(int n, int batch_size, std::mt19937_64& rng) {
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<int>> batches;
  for (int start = 0; start < n; start += batch_size) {
    const int end = std::min(n, start + batch_size);
    batches.emplace_back(perm.begin() + start, perm.begin() + end);
  }
  return batches;
}

}  // namespace detail

// Trains one model on one dataset with either an mgda variant or a static
// weighting, recording per-step telemetry. `static_weights` selects the
// scalarized path; otherwise `mode` selects the mgda flavor.
inline RunRecord train_model_run(const ExperimentConfig& c, const MultiTaskDataset& ds,
                                 const std::string& method_label, const std::string& variant,
                                 std::optional<GradientMode> mode,
                                 std::optional<Vector> static_weights,
                                 std::uint64_t init_stream_index = 0) {
  const auto wall0 = std::chrono::steady_clock::now();
  RunRecord record;
  record.method = method_label;
  record.variant = variant;
  record.seed = c.seed;
  record.tasks = ds.tasks();
  record.hash = config_hash(c);
  record.config_echo = config_to_json(c).dump();

  MtlModel model =
      MtlModel::init(model_spec_for(c, ds), derive_seed(c.seed, "model_init", init_stream_index));
  SgdMomentumState momentum_state = momentum_state_for(model);

  long step_index = 0;
  bool hit_cap = false;
  for (int epoch = 0; epoch < c.epochs && !hit_cap; ++epoch) {
    auto shuffle_rng = make_stream(c.seed, "shuffle", epoch);
    const double lr = detail::scheduled_lr(c, epoch);
    for (const std::vector<int>& idx :
         detail::epoch_batches(ds.train.size(), c.batch_size, shuffle_rng)) {
      if (c.max_steps > 0 && step_index >= c.max_steps) {
        hit_cap = true;
        break;
      }
      const Batch batch = ds.train.batch(idx);
      StepRecord sr;
      sr.step = step_index;
      sr.epoch = epoch;
      if (static_weights) {
        ScalarizedStepReport rep = weighted_scaling_step(model, batch, lr, *static_weights,
                                                         c.momentum, &momentum_state);
        sr.losses = rep.losses_before;
        sr.alpha = rep.weights;
        sr.cum_shared_backwards = record.total_shared_backwards += rep.backward_passes_shared;
        sr.cum_task_backwards = record.total_task_backwards += rep.backward_passes_task;
        sr.step_seconds = rep.step_seconds;
      } else {
        StepOptions opts;
        opts.mode = *mode;
        opts.learning_rate = lr;
        opts.solver = c.solver;
        opts.normalize = parse_normalize(c.normalize);
        opts.check_certificate = c.check_certificates;
        opts.momentum = c.momentum;
        opts.momentum_state = &momentum_state;
        StepReport rep = mgda_step(model, batch, opts);
        sr.losses = rep.losses_before;
        sr.alpha = rep.alpha.alpha;
        sr.has_min_norm = true;
        sr.min_norm_sq = rep.min_norm_sq;
        sr.stationary = rep.stationary;
        sr.has_certificate = c.check_certificates;
        sr.certificate_min = rep.certificate_min;
        sr.certificate_scale = rep.certificate_scale;
        sr.certificate_ok = rep.certificate_ok;
        if (c.check_certificates && !rep.certificate_ok) {
          record.certificate_violations += 1;
        }
        if (c.check_certificates && rep.certificate_scale > 0.0) {
          record.certificate_worst =
              std::min(record.certificate_worst, rep.certificate_min / rep.certificate_scale);
        }
        sr.cum_shared_backwards = record.total_shared_backwards += rep.backward_passes_shared;
        sr.cum_task_backwards = record.total_task_backwards += rep.backward_passes_task;
        sr.step_seconds = rep.step_seconds;
      }
      record.steps.push_back(std::move(sr));
      ++step_index;
    }
    EpochEval ev;
    ev.epoch = epoch;
    if (ds.val.size() > 0) {
      ev.val = evaluate_model(model, ds.val);
      ev.has_val = true;
    }
    ev.test = evaluate_model(model, ds.test);
    record.evals.push_back(std::move(ev));
  }
  if (!record.evals.empty()) record.final_test = record.evals.back().test;
  finalize_alpha_stats(record);
  record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
  return record;
}

// Analytic quadratic runs share the solver and update path but carry no
// model; mgda runs the vector loop, the baselines do plain descent.
inline RunRecord train_quadratic_run(const ExperimentConfig& c, const std::string& method_label,
                                     const std::string& variant, int single_task) {
  const auto wall0 = std::chrono::steady_clock::now();
  RunRecord record;
  record.method = method_label;
  record.variant = variant;
  record.seed = c.seed;
  record.tasks = c.dataset.quad_tasks;
  record.hash = config_hash(c);
  record.config_echo = config_to_json(c).dump();

  const QuadraticTasks tasks =
      synth_quadratic_tasks(c.dataset.quad_tasks, c.dataset.quad_dim, c.seed);
  auto init_rng = make_stream(c.seed, "quadratic_init");
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector x(c.dataset.quad_dim);
  for (int i = 0; i < x.size(); ++i) x(i) = 3.0 * normal(init_rng);

  const int t_count = tasks.tasks();
  for (int step = 0; step < c.quad_steps; ++step) {
    StepRecord sr;
    sr.step = step;
    sr.epoch = 0;
    if (c.method == "mgda") {
      const VectorStepReport rep = mgda_vector_step(tasks, x, c.learning_rate, c.solver);
      sr.losses = rep.losses_before;
      sr.alpha = rep.alpha.alpha;
      sr.has_min_norm = true;
      sr.min_norm_sq = rep.min_norm_sq;
      sr.stationary = rep.stationary;
      sr.has_certificate = true;
      sr.certificate_min = rep.certificate_min;
      sr.certificate_scale = rep.certificate_scale;
      sr.certificate_ok = rep.certificate_ok;
      if (!rep.certificate_ok) record.certificate_violations += 1;
      record.steps.push_back(std::move(sr));
      if (rep.stationary) break;
    } else {
      sr.losses = tasks.losses(x);
      Vector w = Vector::Zero(t_count);
      if (c.method == "uniform") {
        w.setConstant(1.0 / t_count);
      } else {
        w(single_task) = 1.0;
      }
      x -= c.learning_rate * (tasks.gradients(x).transpose() * w);
      sr.alpha = w;
      record.steps.push_back(std::move(sr));
    }
  }
  record.final_test.loss = tasks.losses(x);
  record.final_test.accuracy = Vector::Zero(t_count);
  record.final_test.has_accuracy.assign(t_count, false);
  finalize_alpha_stats(record);
  record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
  return record;
}

inline double mean_of(const Vector& v) { return v.size() ? v.mean() : 0.0; }

// Executes the configured experiment; grid and single_task expand into
// several records (one per cell / per task).
inline std::vector<RunRecord> run_experiment(const ExperimentConfig& c) {
  validate_config(c);
  std::vector<RunRecord> records;

  if (c.dataset.kind == "quadratic") {
    if (c.method == "single_task") {
      const int lo = c.single_task_index >= 0 ? c.single_task_index : 0;
      const int hi = c.single_task_index >= 0 ? c.single_task_index + 1 : c.dataset.quad_tasks;
      for (int t = lo; t < hi; ++t) {
        records.push_back(train_quadratic_run(c, "single_task", "task" + std::to_string(t), t));
      }
    } else {
      records.push_back(train_quadratic_run(c, c.method, "", -1));
    }
    return records;
  }

  const MultiTaskDataset ds = build_dataset(c);
  if (c.method == "mgda" || c.method == "mgda_ub") {
    const GradientMode mode =
        c.method == "mgda" ? GradientMode::kFullMgda : GradientMode::kMgdaUb;
    records.push_back(train_model_run(c, ds, c.method, "", mode, std::nullopt));
  } else if (c.method == "uniform") {
    const Vector w = Vector::Constant(ds.tasks(), 1.0 / ds.tasks());
    records.push_back(train_model_run(c, ds, "uniform", "", std::nullopt, w));
  } else if (c.method == "single_task") {
    const int lo = c.single_task_index >= 0 ? c.single_task_index : 0;
    const int hi = c.single_task_index >= 0 ? c.single_task_index + 1 : ds.tasks();
    for (int t = lo; t < hi; ++t) {
      MultiTaskDataset view;
      view.seed = ds.seed;
      view.config_echo = ds.config_echo;
      view.train = ds.train.select_task(t);
      view.val = ds.val.size() > 0 ? ds.val.select_task(t) : DataSplit{};
      view.test = ds.test.select_task(t);
      records.push_back(train_model_run(c, view, "single_task", "task" + std::to_string(t),
                                        std::nullopt, Vector::Ones(1)));
    }
  } else {  // grid
    const auto grid = simplex_weight_grid(ds.tasks(), c.grid_points);
    for (std::size_t cell = 0; cell < grid.size(); ++cell) {
      char label[32];
      std::snprintf(label, sizeof(label), "cell%02zu", cell);
      records.push_back(train_model_run(c, ds, "grid", label, std::nullopt, grid[cell]));
    }
  }
  return records;
}

// ---- CSV emission ---------------------------------------------------------------

inline std::string csv_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", x);
  return buf;
}

inline std::string steps_csv(const RunRecord& r) {
  std::ostringstream out;
  out << "step,epoch";
  for (int t = 0; t < r.tasks; ++t) out << ",loss_" << t;
  for (int t = 0; t < r.tasks; ++t) out << ",alpha_" << t;
  out << ",min_norm_sq,stationary,certificate_min,certificate_scale,"
         "shared_backwards_cum,task_backwards_cum,step_seconds,config_hash,seed\n";
  for (const StepRecord& s : r.steps) {
    out << s.step << "," << s.epoch;
    for (int t = 0; t < r.tasks; ++t) out << "," << csv_double(s.losses(t));
    for (int t = 0; t < r.tasks; ++t) out << "," << csv_double(s.alpha(t));
    out << "," << (s.has_min_norm ? csv_double(s.min_norm_sq) : "");
    out << "," << (s.stationary ? "true" : "false");
    out << "," << (s.has_certificate ? csv_double(s.certificate_min) : "");
    out << "," << (s.has_certificate ? csv_double(s.certificate_scale) : "");
    out << "," << s.cum_shared_backwards << "," << s.cum_task_backwards;
    out << "," << csv_double(s.step_seconds);
    out << "," << r.hash << "," << r.seed << "\n";
  }
  return out.str();
}

// One row per run. Column order is fixed; per-task columns are sized by the
// widest record so rows from one experiment directory stay joinable.
inline std::string profile_csv(const std::vector<RunRecord>& records) {
  require(!records.empty(), "profile: no run records");
  int t_max = 0;
  for (const RunRecord& r : records) t_max = std::max(t_max, r.tasks);
  std::ostringstream out;
  out << "method,variant,config_hash,seed,tasks,steps";
  for (int t = 0; t < t_max; ++t) out << ",final_test_loss_" << t;
  for (int t = 0; t < t_max; ++t) out << ",final_test_accuracy_" << t;
  for (int t = 0; t < t_max; ++t) out << ",alpha_mean_" << t;
  for (int t = 0; t < t_max; ++t) out << ",alpha_std_" << t;
  out << ",backward_passes_shared,backward_passes_task,certificate_violations,wall_seconds\n";
  for (const RunRecord& r : records) {
    require(r.steps.size() > 0 || r.final_test.loss.size() > 0,
            "profile: record '" + r.method + "/" + r.variant + "' carries no metrics");
    out << r.method << "," << r.variant << "," << r.hash << "," << r.seed << "," << r.tasks
        << "," << r.steps.size();
    auto emit_per_task = [&](auto getter) {
      for (int t = 0; t < t_max; ++t) {
        out << ",";
        if (t < r.tasks) out << getter(t);
      }
    };
    emit_per_task([&](int t) {
      return t < r.final_test.loss.size() ? csv_double(r.final_test.loss(t)) : std::string();
    });
    emit_per_task([&](int t) {
      return (t < static_cast<int>(r.final_test.has_accuracy.size()) && r.final_test.has_accuracy[t])
                 ? csv_double(r.final_test.accuracy(t))
                 : std::string();
    });
    emit_per_task([&](int t) { return csv_double(r.alpha_mean(t)); });
    emit_per_task([&](int t) { return csv_double(r.alpha_std(t)); });
    out << "," << r.total_shared_backwards << "," << r.total_task_backwards << ","
        << r.certificate_violations << "," << csv_double(r.wall_seconds) << "\n";
  }
  return out.str();
}

// Atomic-ish file write: full content to a temp file, then rename.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + tmp.string());
    out << content;
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Json run_record_json(const RunRecord& r) {
  Json j;
  j["method"] = r.method;
  j["variant"] = r.variant;
  j["config_hash"] = r.hash;
  j["seed"] = r.seed;
  j["tasks"] = r.tasks;
  j["steps"] = r.steps.size();
  j["config"] = Json::parse(r.config_echo);
  std::vector<double> loss, acc, amean, astd;
  std::vector<bool> has_acc;
  for (int t = 0; t < r.tasks; ++t) {
    loss.push_back(t < r.final_test.loss.size() ? r.final_test.loss(t) : 0.0);
    has_acc.push_back(t < static_cast<int>(r.final_test.has_accuracy.size()) &&
                      r.final_test.has_accuracy[t]);
    acc.push_back(has_acc.back() ? r.final_test.accuracy(t) : 0.0);
    amean.push_back(r.alpha_mean(t));
    astd.push_back(r.alpha_std(t));
  }
  j["final_test_loss"] = loss;
  j["final_test_accuracy"] = acc;
  j["has_accuracy"] = has_acc;
  j["alpha_mean"] = amean;
  j["alpha_std"] = astd;
  j["backward_passes_shared"] = r.total_shared_backwards;
  j["backward_passes_task"] = r.total_task_backwards;
  j["certificate_violations"] = r.certificate_violations;
  j["certificate_worst"] = r.certificate_worst;
  j["wall_seconds"] = r.wall_seconds;
  return j;
}

inline RunRecord run_record_from_json(const Json& j) {
  RunRecord r;
  r.method = j.at("method").get<std::string>();
  r.variant = j.at("variant").get<std::string>();
  r.hash = j.at("config_hash").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.tasks = j.at("tasks").get<int>();
  r.config_echo = j.at("config").dump();
  r.steps.resize(j.at("steps").get<std::size_t>());
  const auto loss = j.at("final_test_loss").get<std::vector<double>>();
  const auto acc = j.at("final_test_accuracy").get<std::vector<double>>();
  const auto has_acc = j.at("has_accuracy").get<std::vector<bool>>();
  const auto amean = j.at("alpha_mean").get<std::vector<double>>();
  const auto astd = j.at("alpha_std").get<std::vector<double>>();
  r.final_test.loss = Eigen::Map<const Vector>(loss.data(), loss.size());
  r.final_test.accuracy = Eigen::Map<const Vector>(acc.data(), acc.size());
  r.final_test.has_accuracy = has_acc;
  r.alpha_mean = Eigen::Map<const Vector>(amean.data(), amean.size());
  r.alpha_std = Eigen::Map<const Vector>(astd.data(), astd.size());
  r.total_shared_backwards = j.at("backward_passes_shared").get<long>();
  r.total_task_backwards = j.at("backward_passes_task").get<long>();
  r.certificate_violations = j.at("certificate_violations").get<long>();
  r.certificate_worst = j.at("certificate_worst").get<double>();
  r.wall_seconds = j.at("wall_seconds").get<double>();
  return r;
}

// Writes steps csv + run-record json per run, plus a merged profile csv.
inline std::vector<std::filesystem::path> write_run_outputs(
    const std::filesystem::path& out_dir, const std::vector<RunRecord>& records) {
  std::vector<std::filesystem::path> written;
  std::filesystem::create_directories(out_dir);
  for (const RunRecord& r : records) {
    const std::string base = r.variant.empty() ? r.method : r.method + "_" + r.variant;
    const auto steps_path = out_dir / (base + "_steps.csv");
    write_file_atomic(steps_path, steps_csv(r));
    written.push_back(steps_path);
    const auto record_path = out_dir / (base + "_run.json");
    write_file_atomic(record_path, run_record_json(r).dump(2) + "\n");
    written.push_back(record_path);
  }
  const auto profile_path = out_dir / "profile.csv";
  write_file_atomic(profile_path, profile_csv(records));
  written.push_back(profile_path);
  return written;
}

}  // namespace momtl
