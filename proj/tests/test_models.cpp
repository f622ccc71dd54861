#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "momtl/models.hpp"
#include "momtl/rng.hpp"

using namespace momtl;

namespace {

// Linear encoder d_in -> d_repr with explicit weights (column-major W, then b).
MtlModel linear_model(int d_in, int d_repr, const std::vector<HeadSpec>& heads,
                      const Vector& shared, const std::vector<Vector>& blocks, bool bias = true) {
  ModelSpec spec;
  spec.encoder.kind = EncoderKind::kLinear;
  spec.encoder.d_in = d_in;
  spec.encoder.d_repr = d_repr;
  spec.encoder.bias = bias;
  spec.heads = heads;
  ParameterStore store;
  store.shared = shared;
  store.task_blocks = blocks;
  return MtlModel(spec, store);
}

Batch mse_batch(const Matrix& x, const Matrix& y) {
  Batch b;
  b.inputs = x;
  TaskTargets t;
  t.kind = LossKind::kMeanSquaredError;
  t.values = y;
  b.targets = {t};
  return b;
}

}  // namespace

TEST(Forward, ZeroEncoderZeroTargetsGivesZeroLoss) {
  const int d = 3;
  MtlModel model = linear_model(d, d, {HeadSpec{d, LossKind::kMeanSquaredError}},
                                Vector::Zero(d * d + d), {Vector::Zero(d * d + d)});
  const Batch batch = mse_batch(Matrix::Random(4, d), Matrix::Zero(4, d));
  EXPECT_EQ(forward(model, batch).losses(0), 0.0);
}

TEST(Forward, IdentityPipelineReproducesInputs) {
  const int d = 3;
  Vector enc = Vector::Zero(d * d + d);
  Vector head = Vector::Zero(d * d + d);
  for (int i = 0; i < d; ++i) {
    enc(i * d + i) = 1.0;  // W = I (column-major)
    head(i * d + i) = 1.0;
  }
  MtlModel model =
      linear_model(d, d, {HeadSpec{d, LossKind::kMeanSquaredError}}, enc, {head});
  const Matrix x = Matrix::Random(5, d);
  const Batch batch = mse_batch(x, x);
  const ForwardResult fwd = forward(model, batch);
  EXPECT_NEAR(fwd.losses(0), 0.0, 1e-15);
  EXPECT_NEAR((fwd.representations - x).cwiseAbs().maxCoeff(), 0.0, 1e-15);
}

TEST(Forward, UniformSoftmaxCrossEntropyIsLogTwo) {
  // Zero head on any representation gives logits (0, 0).
  MtlModel model = linear_model(2, 2, {HeadSpec{2, LossKind::kSoftmaxCrossEntropy}},
                                Vector::Zero(2 * 2 + 2), {Vector::Zero(2 * 2 + 2)});
  Batch b;
  b.inputs = Matrix::Random(1, 2);
  TaskTargets t;
  t.kind = LossKind::kSoftmaxCrossEntropy;
  t.classes = {0};
  b.targets = {t};
  EXPECT_NEAR(forward(model, b).losses(0), std::log(2.0), 1e-15);
}

TEST(HeadGradients, ScalarMseHandCase) {
  // Encoder 1->1 without bias, W_enc = 2, x = 1 gives z = 2; head weight 3,
  // bias 0, target 5: loss (6-5)^2 = 1 and dL/dz = 2*(6-5)*3 = 6.
  Vector enc(1);
  enc << 2.0;
  Vector head(2);
  head << 3.0, 0.0;
  MtlModel model = linear_model(1, 1, {HeadSpec{1, LossKind::kMeanSquaredError}}, enc, {head},
                                /*bias=*/false);
  Matrix x(1, 1), y(1, 1);
  x << 1.0;
  y << 5.0;
  const Batch batch = mse_batch(x, y);
  const ForwardResult fwd = forward(model, batch);
  EXPECT_DOUBLE_EQ(fwd.losses(0), 1.0);
  const TaskHeadGradients g = backward_task_heads(model, batch, fwd);
  EXPECT_DOUBLE_EQ(g.repr_grad[0](0, 0), 6.0);
  // dL/dA = dout * z = 2*1*2 = 4, dL/dc = 2.
  EXPECT_DOUBLE_EQ(g.task_grad[0](0), 4.0);
  EXPECT_DOUBLE_EQ(g.task_grad[0](1), 2.0);
}

TEST(HeadGradients, SoftmaxAtUniformLogits) {
  HeadSpec head{2, LossKind::kSoftmaxCrossEntropy};
  Matrix out(1, 2);
  out << 0.0, 0.0;
  TaskTargets y;
  y.kind = LossKind::kSoftmaxCrossEntropy;
  y.classes = {0};
  const Matrix g = head_out_grad(head, out, y);
  EXPECT_DOUBLE_EQ(g(0, 0), -0.5);
  EXPECT_DOUBLE_EQ(g(0, 1), 0.5);
}

TEST(EncoderBackward, ZeroUpstreamAndHandCase) {
  // Linear encoder: grad wrt W is U' X, grad wrt b is column sums of U.
  Vector enc(2 * 2 + 2);
  enc << 0.5, -0.25, 1.5, 2.0, 0.0, 0.0;
  MtlModel model = linear_model(2, 2, {HeadSpec{2, LossKind::kMeanSquaredError}}, enc,
                                {Vector::Zero(2 * 2 + 2)});
  Matrix x(2, 2);
  x << 1, 2, 3, 4;
  const Batch batch = mse_batch(x, Matrix::Zero(2, 2));
  const ForwardResult fwd = forward(model, batch);

  EXPECT_EQ(backward_encoder(model, batch, Matrix::Zero(2, 2), fwd).cwiseAbs().maxCoeff(), 0.0);

  Matrix u(2, 2);
  u << 1, 0, 0, 1;
  const Vector g = backward_encoder(model, batch, u, fwd);
  const Matrix expected_w = u.transpose() * x;  // [[1,2],[3,4]]
  EXPECT_DOUBLE_EQ(g(0), expected_w(0, 0));
  EXPECT_DOUBLE_EQ(g(1), expected_w(1, 0));
  EXPECT_DOUBLE_EQ(g(2), expected_w(0, 1));
  EXPECT_DOUBLE_EQ(g(3), expected_w(1, 1));
  EXPECT_DOUBLE_EQ(g(4), 1.0);  // column sums of u
  EXPECT_DOUBLE_EQ(g(5), 1.0);
}

TEST(Jacobian, LinearEncoderStructureAndRank) {
  // Single example, no bias: rank = d_repr when x != 0.
  ModelSpec spec;
  spec.encoder.kind = EncoderKind::kLinear;
  spec.encoder.d_in = 3;
  spec.encoder.d_repr = 2;
  spec.encoder.bias = false;
  spec.heads = {HeadSpec{1, LossKind::kMeanSquaredError}};
  MtlModel model = MtlModel::init(spec, 3);
  Batch b;
  b.inputs.resize(1, 3);
  b.inputs << 1.0, -2.0, 0.5;
  TaskTargets y;
  y.kind = LossKind::kMeanSquaredError;
  y.values = Matrix::Zero(1, 1);
  b.targets = {y};
  const JacobianResult jac = materialize_jacobian(model, b);
  EXPECT_EQ(jac.jacobian.rows(), 2);
  EXPECT_EQ(jac.jacobian.cols(), 6);
  // d z_k / d W(a, col) = x(col) when a == k.
  EXPECT_DOUBLE_EQ(jac.jacobian(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(jac.jacobian(1, 1), 1.0);
  EXPECT_DOUBLE_EQ(jac.jacobian(0, 2), -2.0);
  EXPECT_DOUBLE_EQ(jac.jacobian(0, 1), 0.0);
  // Wider than tall: never full rank as a map from parameter space.
  EXPECT_FALSE(jac.full_rank());

  b.inputs.setZero();
  const JacobianResult zero_jac = materialize_jacobian(model, b);
  EXPECT_EQ(zero_jac.jacobian.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_FALSE(zero_jac.full_rank());
}

TEST(Jacobian, MlpMatchesFiniteDifferences) {
  ModelSpec spec;
  spec.encoder.kind = EncoderKind::kMlp;
  spec.encoder.d_in = 3;
  spec.encoder.d_hidden = 4;
  spec.encoder.d_repr = 2;
  spec.encoder.nonlin = Nonlinearity::kTanh;
  spec.heads = {HeadSpec{1, LossKind::kMeanSquaredError}};
  MtlModel model = MtlModel::init(spec, 5);
  auto rng = make_stream(5, "jacobian_test");
  std::normal_distribution<double> normal(0.0, 1.0);
  Batch b;
  b.inputs.resize(3, 3);
  for (int i = 0; i < b.inputs.size(); ++i) b.inputs.data()[i] = normal(rng);
  TaskTargets y;
  y.kind = LossKind::kMeanSquaredError;
  y.values = Matrix::Zero(3, 1);
  b.targets = {y};

  const JacobianResult jac = materialize_jacobian(model, b);
  const double h = 1e-6;
  Vector& shared = model.params().shared;
  for (int col = 0; col < shared.size(); ++col) {
    const double saved = shared(col);
    shared(col) = saved + h;
    const Matrix z_up = encode(model, b.inputs);
    shared(col) = saved - h;
    const Matrix z_down = encode(model, b.inputs);
    shared(col) = saved;
    const Matrix fd = (z_up - z_down) / (2.0 * h);
    for (int i = 0; i < 3; ++i) {
      for (int k = 0; k < 2; ++k) {
        EXPECT_NEAR(jac.jacobian(i * 2 + k, col), fd(i, k), 1e-5);
      }
    }
  }
}

TEST(Model, TaskIsolationIsExact) {
  ModelSpec spec;
  spec.encoder.kind = EncoderKind::kMlp;
  spec.encoder.d_in = 4;
  spec.encoder.d_hidden = 3;
  spec.encoder.d_repr = 2;
  spec.heads = {HeadSpec{2, LossKind::kMeanSquaredError}, HeadSpec{1, LossKind::kMeanSquaredError}};
  MtlModel model = MtlModel::init(spec, 11);
  Batch b;
  b.inputs = Matrix::Random(3, 4);
  TaskTargets y0, y1;
  y0.kind = y1.kind = LossKind::kMeanSquaredError;
  y0.values = Matrix::Random(3, 2);
  y1.values = Matrix::Random(3, 1);
  b.targets = {y0, y1};
  const LossVector before = forward(model, b).losses;
  model.params().task_blocks[1].array() += 0.37;
  const LossVector after = forward(model, b).losses;
  EXPECT_EQ(before(0), after(0));  // task 0 untouched by task 1's parameters
  EXPECT_NE(before(1), after(1));
}

TEST(Model, ForwardIsDeterministic) {
  ModelSpec spec;
  spec.encoder.kind = EncoderKind::kMlp;
  spec.encoder.d_in = 5;
  spec.encoder.d_hidden = 4;
  spec.encoder.d_repr = 3;
  spec.heads = {HeadSpec{3, LossKind::kSoftmaxCrossEntropy}};
  MtlModel model = MtlModel::init(spec, 21);
  Batch b;
  b.inputs = Matrix::Random(4, 5);
  TaskTargets y;
  y.kind = LossKind::kSoftmaxCrossEntropy;
  y.classes = {0, 2, 1, 0};
  b.targets = {y};
  const LossVector a = forward(model, b).losses;
  const LossVector c = forward(model, b).losses;
  EXPECT_EQ(a(0), c(0));
}

TEST(Model, BatchValidationErrors) {
  MtlModel model = linear_model(2, 2, {HeadSpec{2, LossKind::kSoftmaxCrossEntropy}},
                                Vector::Zero(6), {Vector::Zero(6)});
  Batch b;
  b.inputs = Matrix::Random(2, 3);  // wrong width
  TaskTargets y;
  y.kind = LossKind::kSoftmaxCrossEntropy;
  y.classes = {0, 1};
  b.targets = {y};
  EXPECT_THROW(forward(model, b), std::invalid_argument);
  b.inputs = Matrix::Random(2, 2);
  b.targets[0].classes = {0};  // wrong count
  EXPECT_THROW(forward(model, b), std::invalid_argument);
  b.targets[0].classes = {0, 7};  // class out of range
  EXPECT_THROW(forward(model, b), std::invalid_argument);
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  ModelSpec spec;
  spec.encoder.kind = EncoderKind::kMlp;
  spec.encoder.d_in = 6;
  spec.encoder.d_hidden = 5;
  spec.encoder.d_repr = 4;
  spec.heads = {HeadSpec{3, LossKind::kSoftmaxCrossEntropy},
                HeadSpec{2, LossKind::kMeanSquaredError}};
  const MtlModel model = MtlModel::init(spec, 31);
  std::stringstream buf;
  save_checkpoint(buf, model);
  const MtlModel loaded = load_checkpoint(buf);
  EXPECT_TRUE((loaded.params().shared.array() == model.params().shared.array()).all());
  for (int t = 0; t < model.tasks(); ++t) {
    EXPECT_TRUE((loaded.params().task_blocks[t].array() ==
                 model.params().task_blocks[t].array())
                    .all());
  }
  EXPECT_EQ(loaded.spec().heads[0].d_out, 3);
}

TEST(Checkpoint, RejectsCorruptStreams) {
  std::stringstream bad("not a checkpoint");
  EXPECT_THROW(load_checkpoint(bad), std::runtime_error);

  ModelSpec spec;
  spec.encoder.d_in = 2;
  spec.encoder.d_repr = 2;
  spec.heads = {HeadSpec{1, LossKind::kMeanSquaredError}};
  const MtlModel model = MtlModel::init(spec, 1);
  std::stringstream buf;
  save_checkpoint(buf, model);
  std::string bytes = buf.str();
  bytes.resize(bytes.size() - 3);  // truncate parameters
  std::stringstream truncated(bytes);
  EXPECT_THROW(load_checkpoint(truncated), std::runtime_error);
}
