#pragma once

#include <chrono>
#include <stdexcept>
#include <string>
#include <vector>

#include "momtl/minnorm.hpp"
#include "momtl/models.hpp"
#include "momtl/types.hpp"

namespace momtl {

// Which coordinate space the min-norm weights are solved in: gradients of the
// shared parameters (one encoder backward per task), or gradients of the
// batch representations (task-head backwards only, one encoder backward for
// the combined direction).
enum class GradientMode { kFullMgda, kMgdaUb };

enum class GradientNormalize { kNone, kL2, kLoss };

struct PassCounts {
  long shared_backwards = 0;  // backward passes through the encoder
  long head_backwards = 0;    // backward passes through a task head
};

// Velocity state for SGD with momentum. The certified mgda path runs plain
// SGD; momentum is accepted only with certificate checking turned off.
struct SgdMomentumState {
  Vector shared_vel;
  std::vector<Vector> task_vel;
};

struct StepOptions {
  GradientMode mode = GradientMode::kFullMgda;
  double learning_rate = 1e-2;
  SolverConfig solver{};
  GradientNormalize normalize = GradientNormalize::kNone;
  bool check_certificate = true;
  double certificate_tolerance = 1e-6;  // scaled by max_t ||g_t||^2
  double momentum = 0.0;
  SgdMomentumState* momentum_state = nullptr;
};

struct StepReport {
  LossVector losses_before;
  SimplexWeights alpha;
  double min_norm_sq = 0.0;
  bool stationary = false;
  StopReason solver_stop = StopReason::kGammaZero;
  int solver_iterations = 0;
  long backward_passes_shared = 0;
  long backward_passes_task = 0;
  // Certificate: min_t <d, g_t> with d = sum alpha_t g_t, in the space where
  // alpha was solved. Nonnegative (within tolerance) when alpha converged.
  double certificate_min = 0.0;
  double certificate_scale = 0.0;
  bool certificate_ok = true;
  double step_seconds = 0.0;
};

// Per-task dot products <d, g_t> with d = sum_t alpha_t g_t. At a converged
// solution all of them are >= 0 (within tolerance) and the active ones share
// a common value; callers check against -tol * max_t ||g_t||^2.
inline Vector theorem1_certificate(const SimplexWeights& alpha, const GradientMatrix& grads) {
  require(grads.rows() == alpha.alpha.size(), "theorem1_certificate: T mismatch");
  const Vector direction = grads.transpose() * alpha.alpha;
  return grads * direction;
}

struct CertificateCheck {
  double min_product = 0.0;
  double scale = 0.0;  // max_t ||g_t||^2
  bool ok = true;
};

inline CertificateCheck check_certificate(const SimplexWeights& alpha, const GradientMatrix& grads,
                                          double tolerance = 1e-6) {
  CertificateCheck c;
  const Vector dots = theorem1_certificate(alpha, grads);
  c.min_product = dots.minCoeff();
  c.scale = grads.rowwise().squaredNorm().maxCoeff();
  c.ok = c.min_product >= -tolerance * c.scale;
  return c;
}

// Gradient descent on every task-specific block with its own task's gradient;
// the shared block is untouched.
inline void task_param_step(MtlModel& model, const TaskHeadGradients& grads, double learning_rate) {
  require(learning_rate > 0.0, "task_param_step: learning rate must be > 0");
  for (int t = 0; t < model.tasks(); ++t) {
    require_finite(grads.task_grad[t], "task_param_step: gradient task " + std::to_string(t));
    model.params().task_blocks[t] -= learning_rate * grads.task_grad[t];
  }
}

// Rows of the returned matrix live in the shared-parameter space (kFullMgda)
// or in the flattened batch-representation space (kMgdaUb).
inline GradientMatrix compute_task_gradients(const MtlModel& model, const Batch& batch,
                                             const ForwardResult& fwd, GradientMode mode,
                                             PassCounts& passes) {
  const TaskHeadGradients head_grads = backward_task_heads(model, batch, fwd);
  passes.head_backwards += model.tasks();
  const int t_count = model.tasks();
  if (mode == GradientMode::kMgdaUb) {
    const int n = batch.size();
    const int d_repr = model.spec().encoder.d_repr;
    GradientMatrix g(t_count, static_cast<long long>(n) * d_repr);
    for (int t = 0; t < t_count; ++t) {
      g.row(t) = flatten_example_major(head_grads.repr_grad[t]);
    }
    require_finite(g, "compute_task_gradients");
    return g;
  }
  GradientMatrix g(t_count, model.shared_dim());
  for (int t = 0; t < t_count; ++t) {
    g.row(t) = backward_encoder(model, batch, head_grads.repr_grad[t], fwd);
  }
  passes.shared_backwards += t_count;
  require_finite(g, "compute_task_gradients");
  return g;
}

inline GradientMatrix compute_task_gradients(const MtlModel& model, const Batch& batch,
                                             GradientMode mode, PassCounts& passes) {
  const ForwardResult fwd = forward(model, batch);
  return compute_task_gradients(model, batch, fwd, mode, passes);
}

namespace detail {

// Row scale factors for the requested normalization; 1.0 means untouched.
inline Vector normalization_scales(const GradientMatrix& g, const LossVector& losses,
                                   GradientNormalize mode) {
  Vector scales = Vector::Ones(g.rows());
  if (mode == GradientNormalize::kNone) return scales;
  for (int t = 0; t < g.rows(); ++t) {
    const double s = mode == GradientNormalize::kL2 ? g.row(t).norm() : losses(t);
    if (s > 1e-300) scales(t) = 1.0 / s;
  }
  return scales;
}

}  // namespace detail

// One multi-task training step: task-parameter descent, min-norm weights on
// the per-task gradients (recomputed after the task update), then the shared
// update with the alpha-weighted combination. In kMgdaUb mode alpha comes
// from representation gradients and the shared direction is obtained with a
// single encoder backward of the combined representation gradient.
inline StepReport mgda_step(MtlModel& model, const Batch& batch, const StepOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  require(opts.learning_rate > 0.0, "mgda_step: learning rate must be > 0");
  if (opts.momentum > 0.0) {
    require(!opts.check_certificate,
            "mgda_step: momentum is only available with certificate checking disabled");
    require(opts.momentum_state != nullptr, "mgda_step: momentum needs a state buffer");
  }

  StepReport report;
  PassCounts passes;

  ForwardResult fwd = forward(model, batch);
  report.losses_before = fwd.losses;

  TaskHeadGradients head_grads = backward_task_heads(model, batch, fwd);
  passes.head_backwards += model.tasks();
  if (opts.momentum > 0.0) {
    for (int t = 0; t < model.tasks(); ++t) {
      Vector& vel = opts.momentum_state->task_vel[t];
      vel = opts.momentum * vel + head_grads.task_grad[t];
      require_finite(vel, "mgda_step: task velocity " + std::to_string(t));
      model.params().task_blocks[t] -= opts.learning_rate * vel;
    }
  } else {
    task_param_step(model, head_grads, opts.learning_rate);
  }

  // Task blocks changed; representations did not. Refresh head outputs and
  // take the gradients the solver sees at the updated task parameters.
  forward_heads(model, batch, fwd);
  const TaskHeadGradients post_grads = backward_task_heads(model, batch, fwd);
  passes.head_backwards += model.tasks();

  const int t_count = model.tasks();
  const int n = batch.size();
  const int d_repr = model.spec().encoder.d_repr;
  GradientMatrix grads;
  if (opts.mode == GradientMode::kMgdaUb) {
    grads.resize(t_count, static_cast<long long>(n) * d_repr);
    for (int t = 0; t < t_count; ++t) {
      grads.row(t) = flatten_example_major(post_grads.repr_grad[t]);
    }
  } else {
    grads.resize(t_count, model.shared_dim());
    for (int t = 0; t < t_count; ++t) {
      grads.row(t) = backward_encoder(model, batch, post_grads.repr_grad[t], fwd);
    }
    passes.shared_backwards += t_count;
  }
  require_finite(grads, "mgda_step: task gradients");
  const Vector scales = detail::normalization_scales(grads, fwd.losses, opts.normalize);
  if (opts.normalize != GradientNormalize::kNone) {
    grads.array().colwise() *= scales.array();
  }

  const Matrix gram = gram_matrix(grads);
  const MinNormSolution sol = frank_wolfe_min_norm(gram, opts.solver);
  report.alpha = sol.weights;
  report.min_norm_sq = sol.squared_norm;
  report.solver_stop = sol.converged_by;
  report.solver_iterations = sol.iterations;
  report.stationary = is_pareto_stationary(sol, opts.solver);

  if (opts.check_certificate) {
    const CertificateCheck cert = check_certificate(sol.weights, grads, opts.certificate_tolerance);
    report.certificate_min = cert.min_product;
    report.certificate_scale = cert.scale;
    report.certificate_ok = cert.ok;
  }

  Vector shared_direction;
  if (opts.mode == GradientMode::kMgdaUb) {
    // Single encoder backward of the combined representation gradient; by
    // linearity this equals the alpha-weighted sum of per-task shared
    // gradients. Done even on stationary steps so the per-step pass count
    // stays exactly one.
    Matrix combined = Matrix::Zero(n, d_repr);
    for (int t = 0; t < t_count; ++t) {
      combined += (sol.weights.alpha(t) * scales(t)) * post_grads.repr_grad[t];
    }
    shared_direction = backward_encoder(model, batch, combined, fwd);
    passes.shared_backwards += 1;
  } else {
    shared_direction = grads.transpose() * sol.weights.alpha;
  }

  if (!report.stationary) {
    require_finite(shared_direction, "mgda_step: shared update");
    if (opts.momentum > 0.0) {
      Vector& vel = opts.momentum_state->shared_vel;
      vel = opts.momentum * vel + shared_direction;
      model.params().shared -= opts.learning_rate * vel;
    } else {
      model.params().shared -= opts.learning_rate * shared_direction;
    }
  }

  report.backward_passes_shared = passes.shared_backwards;
  report.backward_passes_task = passes.head_backwards;
  report.step_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

// ---- plain multi-objective descent on analytic objective sets --------------

// Objective concept: tasks(), dimension(), losses(x) -> Vector,
// gradients(x) -> Matrix (T x d). Used for problems with no task-specific
// parameters, e.g. analytic quadratic test beds.
struct VectorStepReport {
  LossVector losses_before;
  SimplexWeights alpha;
  double min_norm_sq = 0.0;
  bool stationary = false;
  double certificate_min = 0.0;
  double certificate_scale = 0.0;
  bool certificate_ok = true;
};

template <typename Objective>
VectorStepReport mgda_vector_step(const Objective& objective, Vector& point,
                                  double learning_rate, const SolverConfig& solver = {},
                                  double certificate_tolerance = 1e-6) {
  VectorStepReport report;
  report.losses_before = objective.losses(point);
  const GradientMatrix grads = objective.gradients(point);
  const MinNormSolution sol = frank_wolfe_min_norm(gram_matrix(grads), solver);
  report.alpha = sol.weights;
  report.min_norm_sq = sol.squared_norm;
  report.stationary = is_pareto_stationary(sol, solver);
  const CertificateCheck cert = check_certificate(sol.weights, grads, certificate_tolerance);
  report.certificate_min = cert.min_product;
  report.certificate_scale = cert.scale;
  report.certificate_ok = cert.ok;
  if (!report.stationary) {
    point -= learning_rate * (grads.transpose() * sol.weights.alpha);
  }
  return report;
}

}  // namespace momtl
