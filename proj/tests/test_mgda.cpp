#include <gtest/gtest.h>

#include <random>

#include "momtl/data.hpp"
#include "momtl/mgda.hpp"
#include "momtl/rng.hpp"

using namespace momtl;

namespace {

Batch single_mse_batch(const Matrix& x, const Matrix& y) {
  Batch b;
  b.inputs = x;
  TaskTargets t;
  t.kind = LossKind::kMeanSquaredError;
  t.values = y;
  b.targets = {t};
  return b;
}

ModelSpec tiny_spec(int tasks) {
  ModelSpec spec;
  spec.encoder.kind = EncoderKind::kMlp;
  spec.encoder.d_in = 4;
  spec.encoder.d_hidden = 3;
  spec.encoder.d_repr = 2;
  for (int t = 0; t < tasks; ++t) spec.heads.push_back(HeadSpec{1, LossKind::kMeanSquaredError});
  return spec;
}

Batch random_mse_batch(std::mt19937_64& rng, const ModelSpec& spec, int n) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Batch b;
  b.inputs.resize(n, spec.encoder.d_in);
  for (int i = 0; i < b.inputs.size(); ++i) b.inputs.data()[i] = normal(rng);
  for (const HeadSpec& h : spec.heads) {
    TaskTargets y;
    y.kind = LossKind::kMeanSquaredError;
    y.values.resize(n, h.d_out);
    for (int i = 0; i < y.values.size(); ++i) y.values.data()[i] = normal(rng);
    b.targets.push_back(std::move(y));
  }
  return b;
}

}  // namespace

TEST(TaskParamStep, ZeroGradientLeavesParameters) {
  // Loss already at its minimum: gradients vanish, parameters stay put.
  ModelSpec spec;
  spec.encoder.kind = EncoderKind::kLinear;
  spec.encoder.d_in = 2;
  spec.encoder.d_repr = 2;
  spec.heads = {HeadSpec{2, LossKind::kMeanSquaredError}};
  MtlModel model = MtlModel::init(spec, 3);
  Batch b;
  b.inputs = Matrix::Random(3, 2);
  const ForwardResult probe = forward(model, single_mse_batch(b.inputs, Matrix::Zero(3, 2)));
  const Batch batch = single_mse_batch(b.inputs, probe.head_out[0]);
  const ForwardResult fwd = forward(model, batch);
  const Vector before = model.params().task_blocks[0];
  task_param_step(model, backward_task_heads(model, batch, fwd), 0.5);
  EXPECT_EQ((model.params().task_blocks[0] - before).cwiseAbs().maxCoeff(), 0.0);
}

TEST(TaskParamStep, AnalyticQuadraticStep) {
  // Head weight a with z = 1: L = (a - y)^2, a = 0, y = 1, lr = 0.5 lands at 1.
  ModelSpec spec;
  spec.encoder.kind = EncoderKind::kLinear;
  spec.encoder.d_in = 1;
  spec.encoder.d_repr = 1;
  spec.encoder.bias = false;
  spec.heads = {HeadSpec{1, LossKind::kMeanSquaredError}};
  ParameterStore store;
  store.shared = Vector::Ones(1);
  store.task_blocks = {Vector::Zero(2)};
  MtlModel model(spec, store);
  Matrix x(1, 1), y(1, 1);
  x << 1.0;
  y << 1.0;
  const Batch batch = single_mse_batch(x, y);
  const ForwardResult fwd = forward(model, batch);
  task_param_step(model, backward_task_heads(model, batch, fwd), 0.5);
  EXPECT_DOUBLE_EQ(model.params().task_blocks[0](0), 1.0);  // weight
  EXPECT_DOUBLE_EQ(model.params().task_blocks[0](1), 1.0);  // bias
}

TEST(TaskParamStep, DisjointBlocksAreIsolated) {
  ModelSpec spec = tiny_spec(2);
  MtlModel model = MtlModel::init(spec, 7);
  auto rng = make_stream(7, "mgda_test");
  Batch batch = random_mse_batch(rng, spec, 3);
  // Task 1's targets equal its current predictions: zero gradient.
  const ForwardResult probe = forward(model, batch);
  batch.targets[1].values = probe.head_out[1];
  const ForwardResult fwd = forward(model, batch);
  const Vector block1 = model.params().task_blocks[1];
  task_param_step(model, backward_task_heads(model, batch, fwd), 0.1);
  EXPECT_EQ((model.params().task_blocks[1] - block1).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GT(model.params().task_blocks[0].cwiseAbs().maxCoeff(), 0.0);
}

TEST(ComputeTaskGradients, AnalyticReprGradient) {
  // Identity encoder, head weight W, MSE: dL/dZ = (2/N) (z W' + c - y) W.
  ModelSpec spec;
  spec.encoder.kind = EncoderKind::kLinear;
  spec.encoder.d_in = 2;
  spec.encoder.d_repr = 2;
  spec.encoder.bias = false;
  spec.heads = {HeadSpec{1, LossKind::kMeanSquaredError}};
  ParameterStore store;
  store.shared = Vector::Zero(4);
  store.shared(0) = 1.0;
  store.shared(3) = 1.0;  // W_enc = I
  Vector head(3);
  head << 2.0, -1.0, 0.5;  // A = [2, -1], c = 0.5
  store.task_blocks = {head};
  MtlModel model(spec, store);
  Matrix x(2, 2);
  x << 1, 0, 0, 1;
  Matrix y(2, 1);
  y << 0.0, 1.0;
  const Batch batch = single_mse_batch(x, y);
  PassCounts passes;
  const GradientMatrix g = compute_task_gradients(model, batch, GradientMode::kMgdaUb, passes);
  // Predictions: [2.5, -0.5]; dout = (pred - y) * 2 / 2 = [2.5, -1.5].
  // dZ row i = dout_i * A; rows flattened example-major.
  Matrix expected(2, 2);
  expected << 2.5 * 2.0, 2.5 * -1.0, -1.5 * 2.0, -1.5 * -1.0;
  const Vector flat = g.row(0).transpose();
  Matrix dz(2, 2);
  dz << flat(0), flat(1), flat(2), flat(3);
  EXPECT_NEAR((dz - expected).cwiseAbs().maxCoeff(), 0.0, 1e-14);
  EXPECT_EQ(passes.shared_backwards, 0);
  EXPECT_EQ(passes.head_backwards, 1);
}

TEST(ComputeTaskGradients, FullModeMatchesJacobianRoute) {
  ModelSpec spec = tiny_spec(3);
  MtlModel model = MtlModel::init(spec, 13);
  auto rng = make_stream(13, "mgda_test");
  const Batch batch = random_mse_batch(rng, spec, 3);
  PassCounts passes;
  const ForwardResult fwd = forward(model, batch);
  const GradientMatrix g_sh =
      compute_task_gradients(model, batch, fwd, GradientMode::kFullMgda, passes);
  EXPECT_EQ(passes.shared_backwards, 3);
  const JacobianResult jac = materialize_jacobian(model, batch);
  const TaskHeadGradients heads = backward_task_heads(model, batch, fwd);
  for (int t = 0; t < 3; ++t) {
    const Vector dz = flatten_example_major(heads.repr_grad[t]);
    const Vector via_jac = jac.jacobian.transpose() * dz;
    const double err = (g_sh.row(t).transpose() - via_jac).cwiseAbs().maxCoeff() /
                       std::max(1.0, via_jac.cwiseAbs().maxCoeff());
    EXPECT_LE(err, 1e-8);
  }
}

TEST(MgdaVectorStep, TwoQuadraticsHandExample) {
  Matrix centers(2, 2);
  centers << 1, 0, -1, 0;
  const QuadraticTasks tasks = synth_quadratic_tasks(centers);
  Vector x(2);
  x << 0, 1;
  const VectorStepReport rep = mgda_vector_step(tasks, x, 0.25);
  EXPECT_DOUBLE_EQ(rep.alpha.alpha(0), 0.5);
  EXPECT_DOUBLE_EQ(rep.alpha.alpha(1), 0.5);
  EXPECT_FALSE(rep.stationary);
  EXPECT_DOUBLE_EQ(x(0), 0.0);
  EXPECT_DOUBLE_EQ(x(1), 0.5);
  EXPECT_TRUE(rep.certificate_ok);
}

TEST(MgdaVectorStep, StationaryOnSegmentSkipsUpdate) {
  Matrix centers(2, 2);
  centers << 1, 0, -1, 0;
  const QuadraticTasks tasks = synth_quadratic_tasks(centers);
  Vector x = Vector::Zero(2);
  const VectorStepReport rep = mgda_vector_step(tasks, x, 0.25);
  EXPECT_TRUE(rep.stationary);
  EXPECT_DOUBLE_EQ(rep.min_norm_sq, 0.0);
  EXPECT_EQ(x(0), 0.0);
  EXPECT_EQ(x(1), 0.0);
}

TEST(Certificate, HandExamples) {
  Matrix g(2, 2);
  g << 1, 0, 0, 1;
  SimplexWeights w{Vector::Constant(2, 0.5)};
  const Vector dots = theorem1_certificate(w, g);
  EXPECT_DOUBLE_EQ(dots(0), 0.5);
  EXPECT_DOUBLE_EQ(dots(1), 0.5);

  Matrix g2(2, 2);
  g2 << 2, 0, -1, 0;
  Vector alpha(2);
  alpha << 1.0 / 3.0, 2.0 / 3.0;
  const Vector dots2 = theorem1_certificate(SimplexWeights{alpha}, g2);
  EXPECT_NEAR(dots2(0), 0.0, 1e-15);
  EXPECT_NEAR(dots2(1), 0.0, 1e-15);
}

TEST(Certificate, HoldsOnRandomSolvedInstances) {
  auto rng = make_stream(17, "mgda_test");
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    const int t_count = 2 + trial % 4;
    const int dim = 2 + trial % 10;
    GradientMatrix g(t_count, dim);
    for (int i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);
    const auto sol = frank_wolfe_min_norm(gram_matrix(g));
    const CertificateCheck cert = check_certificate(sol.weights, g);
    EXPECT_TRUE(cert.ok) << "margin " << cert.min_product << " scale " << cert.scale;
    // Active tasks share the common value within 1e-6 relative.
    const Vector dots = theorem1_certificate(sol.weights, g);
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (int t = 0; t < t_count; ++t) {
      if (sol.weights.alpha(t) > 1e-6) {
        lo = std::min(lo, dots(t));
        hi = std::max(hi, dots(t));
      }
    }
    EXPECT_LE(hi - lo, 1e-6 * std::max(1.0, std::abs(hi)) + 1e-4 * sol.squared_norm + 1e-9)
        << "active products spread too far";
  }
}

TEST(MgdaStep, PassAccountingExactness) {
  ModelSpec spec = tiny_spec(4);
  auto rng = make_stream(19, "mgda_test");
  const Batch batch = random_mse_batch(rng, spec, 3);
  for (GradientMode mode : {GradientMode::kFullMgda, GradientMode::kMgdaUb}) {
    MtlModel model = MtlModel::init(spec, 23);
    StepOptions opts;
    opts.mode = mode;
    opts.learning_rate = 1e-2;
    long shared = 0, task = 0;
    const int steps = 5;
    for (int s = 0; s < steps; ++s) {
      const StepReport rep = mgda_step(model, batch, opts);
      shared += rep.backward_passes_shared;
      task += rep.backward_passes_task;
    }
    EXPECT_EQ(shared, mode == GradientMode::kFullMgda ? 4 * steps : steps);
    EXPECT_EQ(task, 2 * 4 * steps);  // task step + solver gradients, per task
  }
}

TEST(MgdaStep, StationaryModelSkipsSharedUpdate) {
  // Inputs equal targets through an identity pipeline: all losses and
  // gradients are zero, so the step reports stationarity and leaves the
  // shared block alone.
  ModelSpec spec;
  spec.encoder.kind = EncoderKind::kLinear;
  spec.encoder.d_in = 2;
  spec.encoder.d_repr = 2;
  spec.encoder.bias = false;
  spec.heads = {HeadSpec{2, LossKind::kMeanSquaredError}, HeadSpec{2, LossKind::kMeanSquaredError}};
  ParameterStore store;
  store.shared = Vector::Zero(4);
  store.shared(0) = store.shared(3) = 1.0;
  Vector head = Vector::Zero(6);
  head(0) = head(3) = 1.0;
  store.task_blocks = {head, head};
  MtlModel model(spec, store);
  Matrix x = Matrix::Random(3, 2);
  Batch b;
  b.inputs = x;
  TaskTargets y;
  y.kind = LossKind::kMeanSquaredError;
  y.values = x;
  b.targets = {y, y};
  StepOptions opts;
  opts.mode = GradientMode::kMgdaUb;
  opts.learning_rate = 0.1;
  const Vector shared_before = model.params().shared;
  const StepReport rep = mgda_step(model, b, opts);
  EXPECT_TRUE(rep.stationary);
  EXPECT_EQ((model.params().shared - shared_before).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(rep.backward_passes_shared, 1);  // ub mode still runs its single pass
}

TEST(MgdaStep, MomentumRequiresCertificatesOff) {
  ModelSpec spec = tiny_spec(2);
  MtlModel model = MtlModel::init(spec, 29);
  auto rng = make_stream(29, "mgda_test");
  const Batch batch = random_mse_batch(rng, spec, 2);
  StepOptions opts;
  opts.learning_rate = 1e-2;
  opts.momentum = 0.9;
  SgdMomentumState state;
  state.shared_vel = Vector::Zero(model.shared_dim());
  for (const Vector& blk : model.params().task_blocks) state.task_vel.push_back(Vector::Zero(blk.size()));
  opts.momentum_state = &state;
  EXPECT_THROW(mgda_step(model, batch, opts), std::invalid_argument);
  opts.check_certificate = false;
  EXPECT_NO_THROW(mgda_step(model, batch, opts));
}

TEST(MgdaStep, UbCertificateHoldsInRepresentationSpace) {
  ModelSpec spec = tiny_spec(3);
  MtlModel model = MtlModel::init(spec, 31);
  auto rng = make_stream(31, "mgda_test");
  StepOptions opts;
  opts.mode = GradientMode::kMgdaUb;
  opts.learning_rate = 5e-3;
  for (int step = 0; step < 20; ++step) {
    const Batch batch = random_mse_batch(rng, spec, 4);
    const StepReport rep = mgda_step(model, batch, opts);
    EXPECT_TRUE(rep.certificate_ok)
        << "step " << step << " margin " << rep.certificate_min;
  }
}
