#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "momtl/rng.hpp"
#include "momtl/types.hpp"

namespace momtl {

enum class LossKind { kSoftmaxCrossEntropy, kMeanSquaredError };
enum class EncoderKind { kLinear, kMlp };
enum class Nonlinearity { kTanh, kRelu };

struct EncoderSpec {
  EncoderKind kind = EncoderKind::kLinear;
  int d_in = 0;
  int d_hidden = 0;  // MLP only
  int d_repr = 0;
  Nonlinearity nonlin = Nonlinearity::kTanh;
  bool bias = true;

  int param_count() const {
    if (kind == EncoderKind::kLinear) return d_repr * d_in + (bias ? d_repr : 0);
    return d_hidden * d_in + (bias ? d_hidden : 0) + d_repr * d_hidden + (bias ? d_repr : 0);
  }
};

struct HeadSpec {
  int d_out = 1;
  LossKind loss = LossKind::kMeanSquaredError;

  int param_count(int d_repr) const { return d_out * d_repr + d_out; }
};

struct ModelSpec {
  EncoderSpec encoder;
  std::vector<HeadSpec> heads;

  int tasks() const { return static_cast<int>(heads.size()); }
};

// Labels for one task over a batch: class indices for cross-entropy heads,
// an N x d_out target matrix for squared-error heads.
struct TaskTargets {
  LossKind kind = LossKind::kMeanSquaredError;
  std::vector<int> classes;
  Matrix values;

  int examples() const {
    return kind == LossKind::kSoftmaxCrossEntropy ? static_cast<int>(classes.size())
                                                  : static_cast<int>(values.rows());
  }
};

struct Batch {
  Matrix inputs;  // N x d_in
  std::vector<TaskTargets> targets;

  int size() const { return static_cast<int>(inputs.rows()); }
  int tasks() const { return static_cast<int>(targets.size()); }
};

// Hard-parameter-sharing model: one encoder over theta_sh feeding T linear
// heads, head t reading only its own block theta_t and the representation.
class MtlModel {
 public:
  MtlModel(ModelSpec spec, ParameterStore params) : spec_(std::move(spec)), params_(std::move(params)) {
    validate();
  }

  static MtlModel init(const ModelSpec& spec, std::uint64_t seed) {
    ParameterStore store;
    store.shared.resize(spec.encoder.param_count());
    auto stream = make_stream(seed, "model_init");
    auto fill = [&stream](double* data, int count, int fan_in) {
      const double s = 1.0 / std::sqrt(static_cast<double>(std::max(1, fan_in)));
      std::uniform_real_distribution<double> dist(-s, s);
      for (int i = 0; i < count; ++i) data[i] = dist(stream);
    };
    const EncoderSpec& e = spec.encoder;
    int off = 0;
    if (e.kind == EncoderKind::kLinear) {
      fill(store.shared.data(), e.d_repr * e.d_in, e.d_in);
      off = e.d_repr * e.d_in;
      if (e.bias) fill(store.shared.data() + off, e.d_repr, e.d_in);
    } else {
      fill(store.shared.data(), e.d_hidden * e.d_in, e.d_in);
      off = e.d_hidden * e.d_in;
      if (e.bias) {
        fill(store.shared.data() + off, e.d_hidden, e.d_in);
        off += e.d_hidden;
      }
      fill(store.shared.data() + off, e.d_repr * e.d_hidden, e.d_hidden);
      off += e.d_repr * e.d_hidden;
      if (e.bias) fill(store.shared.data() + off, e.d_repr, e.d_hidden);
    }
    for (const HeadSpec& h : spec.heads) {
      Vector block(h.param_count(e.d_repr));
      fill(block.data(), h.d_out * e.d_repr, e.d_repr);
      fill(block.data() + h.d_out * e.d_repr, h.d_out, e.d_repr);
      store.task_blocks.push_back(std::move(block));
    }
    return MtlModel(spec, std::move(store));
  }

  const ModelSpec& spec() const { return spec_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  int tasks() const { return spec_.tasks(); }
  int shared_dim() const { return static_cast<int>(params_.shared.size()); }

  // Parameter views. Shared layout: [W] or [W1][b1][W2][b2], column-major.
  Eigen::Map<const Matrix> head_weight(int t) const {
    const HeadSpec& h = spec_.heads[t];
    return {params_.task_blocks[t].data(), h.d_out, spec_.encoder.d_repr};
  }
  Eigen::Map<const Vector> head_bias(int t) const {
    const HeadSpec& h = spec_.heads[t];
    return {params_.task_blocks[t].data() + h.d_out * spec_.encoder.d_repr, h.d_out};
  }

 private:
  void validate() const {
    const EncoderSpec& e = spec_.encoder;
    require(e.d_in >= 1 && e.d_repr >= 1, "MtlModel: encoder dims must be >= 1");
    if (e.kind == EncoderKind::kMlp) require(e.d_hidden >= 1, "MtlModel: d_hidden must be >= 1");
    require(spec_.tasks() >= 1, "MtlModel: need at least one head");
    require(params_.shared.size() == e.param_count(), "MtlModel: shared block size mismatch");
    require(params_.tasks() == spec_.tasks(), "MtlModel: task block count mismatch");
    for (int t = 0; t < spec_.tasks(); ++t) {
      require(params_.task_blocks[t].size() == spec_.heads[t].param_count(e.d_repr),
              "MtlModel: task block size mismatch for task " + std::to_string(t));
    }
    params_.check_finite();
  }

  ModelSpec spec_;
  ParameterStore params_;
};

namespace detail {

struct SharedViews {
  Eigen::Map<const Matrix> w1;
  Eigen::Map<const Vector> b1;
  Eigen::Map<const Matrix> w2;
  Eigen::Map<const Vector> b2;
};

inline SharedViews shared_views(const EncoderSpec& e, const Vector& shared) {
  const double* p = shared.data();
  static const double kZero = 0.0;
  if (e.kind == EncoderKind::kLinear) {
    const double* b = e.bias ? p + e.d_repr * e.d_in : &kZero;
    return {{p, e.d_repr, e.d_in},
            {b, e.bias ? e.d_repr : 0},
            {&kZero, 0, 0},
            {&kZero, 0}};
  }
  int off = e.d_hidden * e.d_in;
  const double* b1 = e.bias ? p + off : &kZero;
  if (e.bias) off += e.d_hidden;
  const double* w2 = p + off;
  off += e.d_repr * e.d_hidden;
  const double* b2 = e.bias ? p + off : &kZero;
  return {{p, e.d_hidden, e.d_in},
          {b1, e.bias ? e.d_hidden : 0},
          {w2, e.d_repr, e.d_hidden},
          {b2, e.bias ? e.d_repr : 0}};
}

inline Matrix activate(const Matrix& pre, Nonlinearity nl) {
  if (nl == Nonlinearity::kTanh) return pre.array().tanh();
  return pre.cwiseMax(0.0);
}

inline Matrix activate_grad(const Matrix& pre, const Matrix& post, Nonlinearity nl) {
  if (nl == Nonlinearity::kTanh) return 1.0 - post.array().square();
  return (pre.array() > 0.0).cast<double>();
}

}  // namespace detail

struct ForwardResult {
  Matrix representations;        // Z, N x d_repr
  LossVector losses;             // per-task mean loss
  Matrix hidden_pre;             // MLP pre-activations (empty for linear)
  Matrix hidden;                 // MLP post-activations
  std::vector<Matrix> head_out;  // per task, N x d_out
};

inline void check_batch(const MtlModel& model, const Batch& batch) {
  require(batch.size() >= 1, "Batch: N must be >= 1");
  require(batch.inputs.cols() == model.spec().encoder.d_in, "Batch: input width mismatch");
  require_finite(batch.inputs, "Batch.inputs");
  require(batch.tasks() == model.tasks(), "Batch: task count mismatch");
  for (int t = 0; t < model.tasks(); ++t) {
    const TaskTargets& y = batch.targets[t];
    require(y.kind == model.spec().heads[t].loss, "Batch: loss kind mismatch for task " + std::to_string(t));
    require(y.examples() == batch.size(), "Batch: label count mismatch for task " + std::to_string(t));
    if (y.kind == LossKind::kSoftmaxCrossEntropy) {
      for (int c : y.classes) {
        require(c >= 0 && c < model.spec().heads[t].d_out,
                "Batch: class index out of range for task " + std::to_string(t));
      }
    } else {
      require(y.values.cols() == model.spec().heads[t].d_out,
              "Batch: target width mismatch for task " + std::to_string(t));
      require_finite(y.values, "Batch targets");
    }
  }
}

inline Matrix encode(const MtlModel& model, const Matrix& inputs, ForwardResult* cache = nullptr) {
  const EncoderSpec& e = model.spec().encoder;
  const auto v = detail::shared_views(e, model.params().shared);
  if (e.kind == EncoderKind::kLinear) {
    Matrix z = inputs * v.w1.transpose();
    if (e.bias) z.rowwise() += v.b1.transpose();
    return z;
  }
  Matrix pre = inputs * v.w1.transpose();
  if (e.bias) pre.rowwise() += v.b1.transpose();
  Matrix h = detail::activate(pre, e.nonlin);
  Matrix z = h * v.w2.transpose();
  if (e.bias) z.rowwise() += v.b2.transpose();
  if (cache) {
    cache->hidden_pre = std::move(pre);
    cache->hidden = std::move(h);
  }
  return z;
}

inline double head_loss(const HeadSpec& head, const Matrix& out, const TaskTargets& y) {
  const int n = static_cast<int>(out.rows());
  if (head.loss == LossKind::kMeanSquaredError) {
    return (out - y.values).squaredNorm() / n;
  }
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const double mx = out.row(i).maxCoeff();
    const double lse = mx + std::log((out.row(i).array() - mx).exp().sum());
    total += lse - out(i, y.classes[i]);
  }
  return total / n;
}

// Loss gradient with respect to the head outputs, already carrying the 1/N.
inline Matrix head_out_grad(const HeadSpec& head, const Matrix& out, const TaskTargets& y) {
  const int n = static_cast<int>(out.rows());
  if (head.loss == LossKind::kMeanSquaredError) {
    return 2.0 * (out - y.values) / n;
  }
  Matrix g(out.rows(), out.cols());
  for (int i = 0; i < n; ++i) {
    const double mx = out.row(i).maxCoeff();
    Eigen::RowVectorXd ex = (out.row(i).array() - mx).exp();
    ex /= ex.sum();
    g.row(i) = ex;
    g(i, y.classes[i]) -= 1.0;
  }
  return g / n;
}

inline ForwardResult forward(const MtlModel& model, const Batch& batch) {
  check_batch(model, batch);
  ForwardResult r;
  r.representations = encode(model, batch.inputs, &r);
  require_finite(r.representations, "forward: representations");
  const int t_count = model.tasks();
  r.losses.resize(t_count);
  r.head_out.resize(t_count);
  for (int t = 0; t < t_count; ++t) {
    Matrix out = r.representations * model.head_weight(t).transpose();
    out.rowwise() += model.head_bias(t).transpose();
    r.losses(t) = head_loss(model.spec().heads[t], out, batch.targets[t]);
    r.head_out[t] = std::move(out);
  }
  if (!r.losses.allFinite()) throw std::runtime_error("forward: non-finite loss");
  return r;
}

// Re-evaluates heads only, reusing cached representations. Used after a
// task-parameter update, which cannot change Z.
inline void forward_heads(const MtlModel& model, const Batch& batch, ForwardResult& r) {
  const int t_count = model.tasks();
  for (int t = 0; t < t_count; ++t) {
    Matrix out = r.representations * model.head_weight(t).transpose();
    out.rowwise() += model.head_bias(t).transpose();
    r.losses(t) = head_loss(model.spec().heads[t], out, batch.targets[t]);
    r.head_out[t] = std::move(out);
  }
  if (!r.losses.allFinite()) throw std::runtime_error("forward: non-finite loss");
}

struct TaskHeadGradients {
  std::vector<Matrix> repr_grad;   // per task, dL_t/dZ, N x d_repr
  std::vector<Vector> task_grad;   // per task, dL_t/dtheta_t, flat
};

// Analytic backward through the heads only; encoder parameters untouched.
inline TaskHeadGradients backward_task_heads(const MtlModel& model, const Batch& batch,
                                             const ForwardResult& fwd) {
  const int t_count = model.tasks();
  TaskHeadGradients g;
  g.repr_grad.resize(t_count);
  g.task_grad.resize(t_count);
  for (int t = 0; t < t_count; ++t) {
    const HeadSpec& h = model.spec().heads[t];
    const Matrix dout = head_out_grad(h, fwd.head_out[t], batch.targets[t]);
    g.repr_grad[t] = dout * model.head_weight(t);
    Vector tg(model.params().task_blocks[t].size());
    Eigen::Map<Matrix>(tg.data(), h.d_out, model.spec().encoder.d_repr) =
        dout.transpose() * fwd.representations;
    Eigen::Map<Vector>(tg.data() + h.d_out * model.spec().encoder.d_repr, h.d_out) =
        dout.colwise().sum().transpose();
    g.task_grad[t] = std::move(tg);
  }
  return g;
}

// Gradient of <upstream, Z> with respect to the shared parameters; one
// encoder backward pass. Linear in `upstream`.
inline Vector backward_encoder(const MtlModel& model, const Batch& batch, const Matrix& upstream,
                               const ForwardResult& fwd) {
  const EncoderSpec& e = model.spec().encoder;
  require(upstream.rows() == batch.size() && upstream.cols() == e.d_repr,
          "backward_encoder: upstream shape mismatch");
  require_finite(upstream, "backward_encoder: upstream");
  Vector grad(model.shared_dim());
  const auto v = detail::shared_views(e, model.params().shared);
  if (e.kind == EncoderKind::kLinear) {
    Eigen::Map<Matrix>(grad.data(), e.d_repr, e.d_in) = upstream.transpose() * batch.inputs;
    if (e.bias) {
      Eigen::Map<Vector>(grad.data() + e.d_repr * e.d_in, e.d_repr) =
          upstream.colwise().sum().transpose();
    }
    return grad;
  }
  const Matrix mid =
      (upstream * v.w2).cwiseProduct(detail::activate_grad(fwd.hidden_pre, fwd.hidden, e.nonlin));
  int off = 0;
  Eigen::Map<Matrix>(grad.data(), e.d_hidden, e.d_in) = mid.transpose() * batch.inputs;
  off += e.d_hidden * e.d_in;
  if (e.bias) {
    Eigen::Map<Vector>(grad.data() + off, e.d_hidden) = mid.colwise().sum().transpose();
    off += e.d_hidden;
  }
  Eigen::Map<Matrix>(grad.data() + off, e.d_repr, e.d_hidden) = upstream.transpose() * fwd.hidden;
  off += e.d_repr * e.d_hidden;
  if (e.bias) {
    Eigen::Map<Vector>(grad.data() + off, e.d_repr) = upstream.colwise().sum().transpose();
  }
  return grad;
}

struct JacobianResult {
  Matrix jacobian;  // (N * d_repr) x d_sh, Z flattened example-major
  double sigma_min = 0.0;
  double sigma_max = 0.0;

  bool full_rank(double tol = 1e-6) const { return sigma_min > tol * sigma_max; }
};

// Materialized dZ/dtheta_sh for test-scale models. Row (i, k) of Z maps to
// flat row i * d_repr + k; columns follow the shared storage order.
inline JacobianResult materialize_jacobian(const MtlModel& model, const Batch& batch) {
  const EncoderSpec& e = model.spec().encoder;
  check_batch(model, batch);
  const int n = batch.size();
  const long long cells = static_cast<long long>(n) * e.d_repr * model.shared_dim();
  require(cells <= 1'000'000, "materialize_jacobian: budget exceeded (N*d_repr*d_sh > 1e6)");

  ForwardResult cache;
  encode(model, batch.inputs, &cache);
  const auto v = detail::shared_views(e, model.params().shared);

  JacobianResult r;
  r.jacobian = Matrix::Zero(static_cast<long long>(n) * e.d_repr, model.shared_dim());
  auto row_of = [&](int i, int k) { return i * e.d_repr + k; };

  if (e.kind == EncoderKind::kLinear) {
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < e.d_repr; ++k) {
        for (int b = 0; b < e.d_in; ++b) {
          r.jacobian(row_of(i, k), b * e.d_repr + k) = batch.inputs(i, b);
        }
        if (e.bias) r.jacobian(row_of(i, k), e.d_repr * e.d_in + k) = 1.0;
      }
    }
  } else {
    const Matrix act_grad = detail::activate_grad(cache.hidden_pre, cache.hidden, e.nonlin);
    const int w1_size = e.d_hidden * e.d_in;
    const int b1_off = w1_size;
    const int w2_off = w1_size + (e.bias ? e.d_hidden : 0);
    const int b2_off = w2_off + e.d_repr * e.d_hidden;
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < e.d_repr; ++k) {
        const auto row = row_of(i, k);
        for (int a = 0; a < e.d_hidden; ++a) {
          const double chain = v.w2(k, a) * act_grad(i, a);
          for (int b = 0; b < e.d_in; ++b) {
            r.jacobian(row, b * e.d_hidden + a) = chain * batch.inputs(i, b);
          }
          if (e.bias) r.jacobian(row, b1_off + a) = chain;
          r.jacobian(row, w2_off + a * e.d_repr + k) = cache.hidden(i, a);
        }
        if (e.bias) r.jacobian(row, b2_off + k) = 1.0;
      }
    }
  }

  Eigen::JacobiSVD<Matrix> svd(r.jacobian);
  r.sigma_max = svd.singularValues().size() ? svd.singularValues().maxCoeff() : 0.0;
  r.sigma_min = svd.singularValues().size() ? svd.singularValues().minCoeff() : 0.0;
  // Rank deficiency also arises when the Jacobian is wider than tall.
  if (r.jacobian.rows() < r.jacobian.cols()) r.sigma_min = 0.0;
  return r;
}

// ---- checkpoint io ---------------------------------------------------------

namespace detail {

inline void write_bytes(std::ostream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
inline void write_pod(std::ostream& out, T v) {
  write_bytes(out, &v, sizeof(T));
}

template <typename T>
inline T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: truncated");
  return v;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[8] = {'M', 'O', 'M', 'T', 'L', 'C', 'K', '1'};

inline void save_checkpoint(std::ostream& out, const MtlModel& model) {
  detail::write_bytes(out, kCheckpointMagic, sizeof(kCheckpointMagic));
  const EncoderSpec& e = model.spec().encoder;
  detail::write_pod<std::uint32_t>(out, 1);  // format version
  detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(e.kind));
  detail::write_pod<std::int32_t>(out, e.d_in);
  detail::write_pod<std::int32_t>(out, e.d_hidden);
  detail::write_pod<std::int32_t>(out, e.d_repr);
  detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(e.nonlin));
  detail::write_pod<std::uint8_t>(out, e.bias ? 1 : 0);
  detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(model.tasks()));
  for (const HeadSpec& h : model.spec().heads) {
    detail::write_pod<std::int32_t>(out, h.d_out);
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(h.loss));
  }
  auto write_vec = [&out](const Vector& v) {
    detail::write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(v.size()));
    detail::write_bytes(out, v.data(), sizeof(double) * v.size());
  };
  write_vec(model.params().shared);
  for (const Vector& b : model.params().task_blocks) write_vec(b);
  if (!out) throw std::runtime_error("checkpoint: write failed");
}

inline MtlModel load_checkpoint(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic");
  }
  const auto version = detail::read_pod<std::uint32_t>(in);
  if (version != 1) throw std::runtime_error("checkpoint: unsupported version");
  ModelSpec spec;
  spec.encoder.kind = static_cast<EncoderKind>(detail::read_pod<std::uint32_t>(in));
  spec.encoder.d_in = detail::read_pod<std::int32_t>(in);
  spec.encoder.d_hidden = detail::read_pod<std::int32_t>(in);
  spec.encoder.d_repr = detail::read_pod<std::int32_t>(in);
  spec.encoder.nonlin = static_cast<Nonlinearity>(detail::read_pod<std::uint32_t>(in));
  spec.encoder.bias = detail::read_pod<std::uint8_t>(in) != 0;
  const auto t_count = detail::read_pod<std::uint32_t>(in);
  for (std::uint32_t t = 0; t < t_count; ++t) {
    HeadSpec h;
    h.d_out = detail::read_pod<std::int32_t>(in);
    h.loss = static_cast<LossKind>(detail::read_pod<std::uint32_t>(in));
    spec.heads.push_back(h);
  }
  auto read_vec = [&in]() {
    const auto n = detail::read_pod<std::uint64_t>(in);
    Vector v(static_cast<Eigen::Index>(n));
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(sizeof(double) * n));
    if (!in) throw std::runtime_error("checkpoint: truncated parameters");
    return v;
  };
  ParameterStore store;
  store.shared = read_vec();
  for (std::uint32_t t = 0; t < t_count; ++t) store.task_blocks.push_back(read_vec());
  return MtlModel(std::move(spec), std::move(store));
}

inline void save_checkpoint_file(const std::string& path, const MtlModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path);
  save_checkpoint(out, model);
}

inline MtlModel load_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  return load_checkpoint(in);
}

}  // namespace momtl
