#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "momtl/mgda.hpp"
#include "momtl/models.hpp"
#include "momtl/types.hpp"

namespace momtl {

struct ScalarizedStepReport {
  LossVector losses_before;
  Vector weights;  // static task weights used for this step
  long backward_passes_shared = 0;
  long backward_passes_task = 0;
  double step_seconds = 0.0;
};

// One SGD step on all parameters against the weighted scalarized loss
// sum_t c_t * L_t. The shared gradient is taken as a single encoder backward
// of the weighted combination of representation gradients, which equals the
// weighted sum of per-task shared gradients by linearity.
inline ScalarizedStepReport weighted_scaling_step(MtlModel& model, const Batch& batch,
                                                  double learning_rate, const Vector& weights,
                                                  double momentum = 0.0,
                                                  SgdMomentumState* momentum_state = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  require(learning_rate > 0.0, "weighted_scaling_step: learning rate must be > 0");
  require(weights.size() == model.tasks(), "weighted_scaling_step: weight count mismatch");
  require_finite(weights, "weighted_scaling_step: weights");
  if (momentum > 0.0) {
    require(momentum_state != nullptr, "weighted_scaling_step: momentum needs a state buffer");
  }

  ScalarizedStepReport report;
  const ForwardResult fwd = forward(model, batch);
  report.losses_before = fwd.losses;
  report.weights = weights;

  const TaskHeadGradients grads = backward_task_heads(model, batch, fwd);
  report.backward_passes_task = model.tasks();

  Matrix combined = Matrix::Zero(batch.size(), model.spec().encoder.d_repr);
  for (int t = 0; t < model.tasks(); ++t) {
    combined += weights(t) * grads.repr_grad[t];
    const Vector task_grad = weights(t) * grads.task_grad[t];
    if (momentum > 0.0) {
      Vector& vel = momentum_state->task_vel[t];
      vel = momentum * vel + task_grad;
      model.params().task_blocks[t] -= learning_rate * vel;
    } else {
      model.params().task_blocks[t] -= learning_rate * task_grad;
    }
  }
  const Vector shared_grad = backward_encoder(model, batch, combined, fwd);
  report.backward_passes_shared = 1;
  require_finite(shared_grad, "weighted_scaling_step: shared gradient");
  if (momentum > 0.0) {
    Vector& vel = momentum_state->shared_vel;
    vel = momentum * vel + shared_grad;
    model.params().shared -= learning_rate * vel;
  } else {
    model.params().shared -= learning_rate * shared_grad;
  }

  report.step_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

inline ScalarizedStepReport uniform_scaling_step(MtlModel& model, const Batch& batch,
                                                 double learning_rate, double momentum = 0.0,
                                                 SgdMomentumState* momentum_state = nullptr) {
  return weighted_scaling_step(model, batch, learning_rate,
                               Vector::Constant(model.tasks(), 1.0 / model.tasks()), momentum,
                               momentum_state);
}

// All weight vectors {c : c_t = k_t * step, sum = 1} for the static-weight
// sweep; T = 2 with 21 points per axis is the default experiment shape.
inline std::vector<Vector> simplex_weight_grid(int tasks, int points_per_axis) {
  require(tasks >= 1, "weight grid: T must be >= 1");
  require(points_per_axis >= 2, "weight grid: need at least 2 points per axis");
  const int units = points_per_axis - 1;
  std::vector<Vector> grid;
  std::vector<int> k(tasks, 0);
  std::function<void(int, int)> rec = [&](int idx, int left) {
    if (idx == tasks - 1) {
      k[idx] = left;
      Vector c(tasks);
      for (int t = 0; t < tasks; ++t) c(t) = static_cast<double>(k[t]) / units;
      grid.push_back(c);
      return;
    }
    for (int v = 0; v <= left; ++v) {
      k[idx] = v;
      rec(idx + 1, left - v);
    }
  };
  rec(0, units);
  require(grid.size() <= 100000, "weight grid: too many cells");
  return grid;
}

struct GridCell {
  Vector weights;
  std::map<std::string, double> metrics;
};

struct GridSearchResult {
  std::vector<GridCell> cells;
  int best_index = 0;
  std::string selection_metric;
  bool maximize = true;
};

// Exhaustive sweep over static weights. Every cell is trained by the caller's
// functor under identical seed and schedule; all cells are returned so the
// full trade-off profile can be emitted, plus the best under the selection
// metric.
template <typename TrainFn>
GridSearchResult grid_search(const std::vector<Vector>& weights_grid, TrainFn&& train_fn,
                             const std::string& selection_metric, bool maximize) {
  require(!weights_grid.empty(), "grid_search: empty grid");
  GridSearchResult result;
  result.selection_metric = selection_metric;
  result.maximize = maximize;
  for (const Vector& c : weights_grid) {
    GridCell cell;
    cell.weights = c;
    cell.metrics = train_fn(c);
    require(cell.metrics.count(selection_metric) == 1,
            "grid_search: training did not report metric '" + selection_metric + "'");
    result.cells.push_back(std::move(cell));
  }
  for (int i = 1; i < static_cast<int>(result.cells.size()); ++i) {
    const double cur = result.cells[i].metrics.at(selection_metric);
    const double best = result.cells[result.best_index].metrics.at(selection_metric);
    if (maximize ? cur > best : cur < best) result.best_index = i;
  }
  return result;
}

}  // namespace momtl
