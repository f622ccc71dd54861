#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "momtl/baselines.hpp"
#include "momtl/data.hpp"
#include "momtl/harness.hpp"
#include "momtl/mgda.hpp"
#include "momtl/minnorm.hpp"
#include "momtl/models.hpp"
#include "momtl/types.hpp"

namespace momtl {

// Machine-checkable property suites over the numerical kernels, run at fixed
// seeds. A failing property dumps its seed and inputs for bit-identical
// replay via `verify --replay`.

struct PropertyResult {
  std::string name;
  bool pass = true;
  std::string detail;
  std::string counterexample_path;
};

namespace verify_detail {

struct Context {
  std::string out_dir;
  std::uint64_t root_seed = 20260810ULL;

  std::string dump(const std::string& property, std::uint64_t seed, const Json& extra) const {
    if (out_dir.empty()) return {};
    Json j;
    j["property"] = property;
    j["seed"] = seed;
    j["inputs"] = extra;
    std::filesystem::create_directories(out_dir);
    const auto path =
        std::filesystem::path(out_dir) / ("counterexample_" + property + ".json");
    write_file_atomic(path, j.dump(2) + "\n");
    return path.string();
  }
};

inline Json matrix_json(const Matrix& m) {
  Json rows = Json::array();
  for (int i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

inline Matrix random_gradients(std::mt19937_64& rng, int t_count, int dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix g(t_count, dim);
  for (int i = 0; i < t_count; ++i) {
    for (int j = 0; j < dim; ++j) g(i, j) = normal(rng);
  }
  return g;
}

inline Batch random_batch(std::mt19937_64& rng, const ModelSpec& spec, int n) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Batch b;
  b.inputs.resize(n, spec.encoder.d_in);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < spec.encoder.d_in; ++j) b.inputs(i, j) = normal(rng);
  }
  for (const HeadSpec& h : spec.heads) {
    TaskTargets y;
    y.kind = h.loss;
    if (h.loss == LossKind::kSoftmaxCrossEntropy) {
      std::uniform_int_distribution<int> cls(0, h.d_out - 1);
      for (int i = 0; i < n; ++i) y.classes.push_back(cls(rng));
    } else {
      y.values.resize(n, h.d_out);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < h.d_out; ++j) y.values(i, j) = normal(rng);
      }
    }
    b.targets.push_back(std::move(y));
  }
  return b;
}

inline ModelSpec random_small_spec(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_int_distribution<int> d_in_dist(2, 6);
  std::uniform_int_distribution<int> hidden_dist(2, 5);
  std::uniform_int_distribution<int> repr_dist(2, 4);
  std::uniform_int_distribution<int> tasks_dist(1, 3);
  std::uniform_int_distribution<int> out_dist(1, 3);
  ModelSpec spec;
  spec.encoder.kind = coin(rng) ? EncoderKind::kMlp : EncoderKind::kLinear;
  spec.encoder.d_in = d_in_dist(rng);
  spec.encoder.d_hidden = hidden_dist(rng);
  spec.encoder.d_repr = repr_dist(rng);
  spec.encoder.nonlin = Nonlinearity::kTanh;  // smooth, so difference checks stay clean
  spec.encoder.bias = coin(rng) != 0;
  const int t_count = tasks_dist(rng);
  for (int t = 0; t < t_count; ++t) {
    HeadSpec h;
    h.loss = coin(rng) ? LossKind::kSoftmaxCrossEntropy : LossKind::kMeanSquaredError;
    h.d_out = h.loss == LossKind::kSoftmaxCrossEntropy ? 1 + out_dist(rng) : out_dist(rng);
    spec.heads.push_back(h);
  }
  return spec;
}

// Central finite differences of the per-task losses over one parameter block.
inline Matrix fd_loss_gradient(MtlModel& model, const Batch& batch, Vector& block, double h) {
  Matrix fd(model.tasks(), block.size());
  for (int j = 0; j < block.size(); ++j) {
    const double saved = block(j);
    block(j) = saved + h;
    const LossVector up = forward(model, batch).losses;
    block(j) = saved - h;
    const LossVector down = forward(model, batch).losses;
    block(j) = saved;
    fd.col(j) = (up - down) / (2.0 * h);
  }
  return fd;
}

inline double rel_err(double got, double want) {
  return std::abs(got - want) / std::max({1.0, std::abs(got), std::abs(want)});
}

}  // namespace verify_detail

inline std::vector<PropertyResult> run_verify_suite(const std::string& out_dir = "",
                                                    std::uint64_t root_seed = 20260810ULL) {
  using namespace verify_detail;
  Context ctx{out_dir, root_seed};
  std::vector<PropertyResult> results;

  auto report = [&results](PropertyResult r) { results.push_back(std::move(r)); };

  // Simplex projection: exactness on feasible inputs, repairs otherwise.
  {
    PropertyResult r{"simplex_projection"};
    auto rng = make_stream(root_seed, "verify_simplex");
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int trial = 0; trial < 200 && r.pass; ++trial) {
      const int t_count = 1 + trial % 6;
      Vector v(t_count);
      for (int i = 0; i < t_count; ++i) v(i) = normal(rng);
      const SimplexWeights w = project_to_simplex(v);
      if (!w.valid()) {
        r.pass = false;
        r.detail = "projection output violates simplex invariants";
      }
      const SimplexWeights again = project_to_simplex(w.alpha);
      if (r.pass && (again.alpha - w.alpha).cwiseAbs().maxCoeff() != 0.0) {
        r.pass = false;
        r.detail = "projection is not idempotent";
      }
      if (!r.pass) {
        Json in;
        in["v"] = std::vector<double>(v.data(), v.data() + v.size());
        r.counterexample_path = ctx.dump(r.name, root_seed, in);
      }
    }
    report(std::move(r));
  }

  // ||sum_t alpha_t g_t||^2 equals alpha' M alpha.
  {
    PropertyResult r{"composed_direction_norm_identity"};
    auto rng = make_stream(root_seed, "verify_norm_identity");
    std::uniform_int_distribution<int> t_dist(1, 6), d_dist(1, 30);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int trial = 0; trial < 300 && r.pass; ++trial) {
      const Matrix g = random_gradients(rng, t_dist(rng), d_dist(rng));
      Vector raw(g.rows());
      for (int i = 0; i < raw.size(); ++i) raw(i) = std::abs(normal(rng));
      const SimplexWeights w = project_to_simplex(raw / raw.sum());
      const double direct = combine_rows(g, w).squaredNorm();
      const double viaGram = w.alpha.dot(gram_matrix(g) * w.alpha);
      if (rel_err(direct, viaGram) > 1e-8) {
        r.pass = false;
        r.detail = "direct " + format_double(direct) + " vs gram " + format_double(viaGram);
        Json in;
        in["gradients"] = matrix_json(g);
        r.counterexample_path = ctx.dump(r.name, root_seed, in);
      }
    }
    report(std::move(r));
  }

  // Gram matrices of random gradients pass the symmetry/PSD validator.
  {
    PropertyResult r{"gram_symmetric_psd"};
    auto rng = make_stream(root_seed, "verify_gram");
    std::uniform_int_distribution<int> t_dist(1, 6), d_dist(1, 30);
    for (int trial = 0; trial < 300 && r.pass; ++trial) {
      const Matrix g = random_gradients(rng, t_dist(rng), d_dist(rng));
      try {
        check_gram(gram_matrix(g));
      } catch (const std::exception& e) {
        r.pass = false;
        r.detail = e.what();
        Json in;
        in["gradients"] = matrix_json(g);
        r.counterexample_path = ctx.dump(r.name, root_seed, in);
      }
    }
    report(std::move(r));
  }

  // Frank-Wolfe against the grid oracle and the two-task closed form.
  {
    PropertyResult r{"minnorm_oracle_agreement"};
    auto rng = make_stream(root_seed, "verify_oracle");
    std::uniform_int_distribution<int> t_dist(2, 5), d_dist(2, 20);
    for (int trial = 0; trial < 200 && r.pass; ++trial) {
      const int t_count = t_dist(rng);
      const Matrix g = random_gradients(rng, t_count, d_dist(rng));
      const Matrix m = gram_matrix(g);
      const auto fw = frank_wolfe_min_norm(m);
      const auto bf = brute_force_min_norm(m, 1e-3);
      const double bound = 2.0 * 1e-3 * m.trace();
      if (std::abs(fw.squared_norm - bf.squared_norm) > bound) {
        r.pass = false;
        r.detail = "fw " + format_double(fw.squared_norm) + " vs grid " +
                   format_double(bf.squared_norm) + " exceeds " + format_double(bound);
      }
      if (r.pass && t_count == 2) {
        const auto cf = two_task_alpha(g.row(0).transpose(), g.row(1).transpose());
        const double closed =
            (cf.alpha * g.row(0) + (1.0 - cf.alpha) * g.row(1)).squaredNorm();
        if (std::abs(fw.squared_norm - closed) > 1e-6) {
          r.pass = false;
          r.detail = "fw vs closed form differ by " +
                     format_double(std::abs(fw.squared_norm - closed));
        }
      }
      if (!r.pass) {
        Json in;
        in["gradients"] = matrix_json(g);
        r.counterexample_path = ctx.dump(r.name, root_seed, in);
      }
    }
    report(std::move(r));
  }

  // Per-iteration squared norm never increases.
  {
    PropertyResult r{"minnorm_monotone_descent"};
    auto rng = make_stream(root_seed, "verify_monotone");
    std::uniform_int_distribution<int> t_dist(2, 6), d_dist(2, 25);
    for (int trial = 0; trial < 300 && r.pass; ++trial) {
      const Matrix g = random_gradients(rng, t_dist(rng), d_dist(rng));
      const auto sol = frank_wolfe_min_norm(gram_matrix(g));
      for (std::size_t i = 1; i < sol.squared_norm_trace.size(); ++i) {
        if (sol.squared_norm_trace[i] > sol.squared_norm_trace[i - 1] + 1e-12) {
          r.pass = false;
          r.detail = "norm increased at iteration " + std::to_string(i);
          Json in;
          in["gradients"] = matrix_json(g);
          r.counterexample_path = ctx.dump(r.name, root_seed, in);
          break;
        }
      }
    }
    report(std::move(r));
  }

  // Permuting tasks permutes alpha and leaves the squared norm unchanged.
  {
    PropertyResult r{"minnorm_permutation_equivariance"};
    auto rng = make_stream(root_seed, "verify_permutation");
    std::uniform_int_distribution<int> t_dist(2, 5), d_dist(2, 20);
    for (int trial = 0; trial < 200 && r.pass; ++trial) {
      const int t_count = t_dist(rng);
      const Matrix g = random_gradients(rng, t_count, d_dist(rng));
      std::vector<int> perm(t_count);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      Matrix gp(t_count, g.cols());
      for (int i = 0; i < t_count; ++i) gp.row(i) = g.row(perm[i]);
      const auto a = frank_wolfe_min_norm(gram_matrix(g));
      const auto b = frank_wolfe_min_norm(gram_matrix(gp));
      double max_diff = std::abs(a.squared_norm - b.squared_norm);
      for (int i = 0; i < t_count; ++i) {
        max_diff = std::max(max_diff, std::abs(b.weights.alpha(i) - a.weights.alpha(perm[i])));
      }
      if (max_diff > 1e-12) {
        r.pass = false;
        r.detail = "max deviation " + format_double(max_diff);
        Json in;
        in["gradients"] = matrix_json(g);
        r.counterexample_path = ctx.dump(r.name, root_seed, in);
      }
    }
    report(std::move(r));
  }

  // Scaling M by c > 0 keeps alpha (binary-exact for power-of-two c) and
  // scales the squared norm by c.
  {
    PropertyResult r{"minnorm_scale_behavior"};
    auto rng = make_stream(root_seed, "verify_scale");
    std::uniform_int_distribution<int> t_dist(2, 5), d_dist(2, 20);
    for (int trial = 0; trial < 200 && r.pass; ++trial) {
      const Matrix g = random_gradients(rng, t_dist(rng), d_dist(rng));
      const Matrix m = gram_matrix(g);
      const auto base = frank_wolfe_min_norm(m);
      const auto doubled = frank_wolfe_min_norm(Matrix(2.0 * m));
      if ((doubled.weights.alpha - base.weights.alpha).cwiseAbs().maxCoeff() != 0.0) {
        r.pass = false;
        r.detail = "alpha changed under power-of-two scaling";
      }
      if (r.pass && rel_err(doubled.squared_norm, 2.0 * base.squared_norm) > 1e-9) {
        r.pass = false;
        r.detail = "squared norm did not scale by 2";
      }
      if (!r.pass) {
        Json in;
        in["gradients"] = matrix_json(g);
        r.counterexample_path = ctx.dump(r.name, root_seed, in);
      }
    }
    report(std::move(r));
  }

  // For T = 2 the solver agrees with the closed form in the weights.
  {
    PropertyResult r{"two_task_edge_consistency"};
    auto rng = make_stream(root_seed, "verify_two_task");
    std::uniform_int_distribution<int> d_dist(2, 20);
    for (int trial = 0; trial < 300 && r.pass; ++trial) {
      const Matrix g = random_gradients(rng, 2, d_dist(rng));
      const auto cf = two_task_alpha(g.row(0).transpose(), g.row(1).transpose());
      const auto ls = two_point_gamma(g.row(0).transpose(), g.row(1).transpose());
      const auto fw = frank_wolfe_min_norm(gram_matrix(g));
      if (std::abs(cf.alpha - ls.gamma) > 0.0) {
        r.pass = false;
        r.detail = "closed form and line search disagree";
      }
      if (r.pass && std::abs(fw.weights.alpha(0) - cf.alpha) > 1e-8) {
        r.pass = false;
        r.detail = "solver weight " + format_double(fw.weights.alpha(0)) + " vs closed form " +
                   format_double(cf.alpha);
      }
      if (!r.pass) {
        Json in;
        in["gradients"] = matrix_json(g);
        r.counterexample_path = ctx.dump(r.name, root_seed, in);
      }
    }
    report(std::move(r));
  }

  // Analytic gradients match central finite differences (h = 1e-5) on random
  // small models, for task heads, the encoder chain, and both mgda spaces.
  {
    PropertyResult r{"gradient_finite_differences"};
    auto rng = make_stream(root_seed, "verify_fd");
    for (int trial = 0; trial < 40 && r.pass; ++trial) {
      const ModelSpec spec = random_small_spec(rng);
      MtlModel model = MtlModel::init(spec, derive_seed(root_seed, "verify_fd_model", trial));
      const Batch batch = random_batch(rng, spec, 3);
      PassCounts passes;
      const Matrix analytic =
          compute_task_gradients(model, batch, GradientMode::kFullMgda, passes);
      const Matrix fd = fd_loss_gradient(model, batch, model.params().shared, 1e-5);
      const double err = (analytic - fd).cwiseAbs().maxCoeff() /
                         std::max(1.0, fd.cwiseAbs().maxCoeff());
      if (err > 1e-4) {
        r.pass = false;
        r.detail = "shared-gradient mismatch " + format_double(err);
        Json in;
        in["trial"] = trial;
        r.counterexample_path = ctx.dump(r.name, root_seed, in);
      }
      if (r.pass) {
        const ForwardResult fwd = forward(model, batch);
        const TaskHeadGradients heads = backward_task_heads(model, batch, fwd);
        for (int t = 0; t < model.tasks() && r.pass; ++t) {
          const Matrix fd_task =
              fd_loss_gradient(model, batch, model.params().task_blocks[t], 1e-5);
          const double terr = (heads.task_grad[t].transpose() - fd_task.row(t)).cwiseAbs().maxCoeff() /
                              std::max(1.0, fd_task.row(t).cwiseAbs().maxCoeff());
          if (terr > 1e-4) {
            r.pass = false;
            r.detail = "task-gradient mismatch " + format_double(terr);
            Json in;
            in["trial"] = trial;
            in["task"] = t;
            r.counterexample_path = ctx.dump(r.name, root_seed, in);
          }
        }
      }
    }
    report(std::move(r));
  }

  // backward_encoder is linear in its upstream argument.
  {
    PropertyResult r{"encoder_backward_linearity"};
    auto rng = make_stream(root_seed, "verify_linearity");
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int trial = 0; trial < 40 && r.pass; ++trial) {
      const ModelSpec spec = random_small_spec(rng);
      MtlModel model = MtlModel::init(spec, derive_seed(root_seed, "verify_lin_model", trial));
      const Batch batch = random_batch(rng, spec, 3);
      const ForwardResult fwd = forward(model, batch);
      Matrix u1(batch.size(), spec.encoder.d_repr), u2(batch.size(), spec.encoder.d_repr);
      for (int i = 0; i < u1.size(); ++i) {
        u1.data()[i] = normal(rng);
        u2.data()[i] = normal(rng);
      }
      const double a = normal(rng), b = normal(rng);
      const Vector combined = backward_encoder(model, batch, a * u1 + b * u2, fwd);
      const Vector split = a * backward_encoder(model, batch, u1, fwd) +
                           b * backward_encoder(model, batch, u2, fwd);
      const double err =
          (combined - split).cwiseAbs().maxCoeff() / std::max(1.0, split.cwiseAbs().maxCoeff());
      if (err > 1e-10) {
        r.pass = false;
        r.detail = "linearity deviation " + format_double(err);
        Json in;
        in["trial"] = trial;
        r.counterexample_path = ctx.dump(r.name, root_seed, in);
      }
    }
    report(std::move(r));
  }

  // Chain rule: shared gradients equal J' dZ with the materialized Jacobian,
  // and the norm upper bound with sigma_max(J)^2 holds.
  {
    PropertyResult r{"chain_rule_and_upper_bound"};
    auto rng = make_stream(root_seed, "verify_chain");
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int trial = 0; trial < 30 && r.pass; ++trial) {
      const ModelSpec spec = random_small_spec(rng);
      MtlModel model = MtlModel::init(spec, derive_seed(root_seed, "verify_chain_model", trial));
      const Batch batch = random_batch(rng, spec, 3);
      const ForwardResult fwd = forward(model, batch);
      const TaskHeadGradients heads = backward_task_heads(model, batch, fwd);
      const JacobianResult jac = materialize_jacobian(model, batch);
      const int n = batch.size();
      const int d_repr = spec.encoder.d_repr;
      for (int t = 0; t < model.tasks() && r.pass; ++t) {
        const Vector dz = flatten_example_major(heads.repr_grad[t]);
        const Vector via_jac = jac.jacobian.transpose() * dz;
        const Vector direct = backward_encoder(model, batch, heads.repr_grad[t], fwd);
        const double err = (via_jac - direct).cwiseAbs().maxCoeff() /
                           std::max(1.0, direct.cwiseAbs().maxCoeff());
        if (err > 1e-8) {
          r.pass = false;
          r.detail = "jacobian route mismatch " + format_double(err);
          Json in;
          in["trial"] = trial;
          in["task"] = t;
          r.counterexample_path = ctx.dump(r.name, root_seed, in);
        }
      }
      if (r.pass) {
        Vector raw(model.tasks());
        for (int i = 0; i < raw.size(); ++i) raw(i) = std::abs(normal(rng)) + 1e-3;
        const SimplexWeights w = project_to_simplex(raw / raw.sum());
        Matrix combined = Matrix::Zero(n, d_repr);
        Vector shared_combo = Vector::Zero(model.shared_dim());
        for (int t = 0; t < model.tasks(); ++t) {
          combined += w.alpha(t) * heads.repr_grad[t];
          shared_combo += w.alpha(t) * backward_encoder(model, batch, heads.repr_grad[t], fwd);
        }
        const Vector dz = flatten_example_major(combined);
        const double lhs = shared_combo.squaredNorm();
        const double rhs = jac.sigma_max * jac.sigma_max * dz.squaredNorm();
        if (lhs > rhs * (1.0 + 1e-8)) {
          r.pass = false;
          r.detail = "upper bound violated: " + format_double(lhs) + " > " + format_double(rhs);
          Json in;
          in["trial"] = trial;
          r.counterexample_path = ctx.dump(r.name, root_seed, in);
        }
      }
    }
    report(std::move(r));
  }

  // With a full-rank Jacobian, the shared-space and representation-space
  // formulations agree on stationarity in both directions.
  {
    PropertyResult r{"stationarity_agreement"};
    for (int want_stationary = 0; want_stationary < 2 && r.pass; ++want_stationary) {
      // Two identity-initialized MSE heads over a 2x2 identity batch; targets
      // mirrored around Z make the combined representation gradient vanish.
      ModelSpec spec;
      spec.encoder.kind = EncoderKind::kLinear;
      spec.encoder.d_in = 2;
      spec.encoder.d_repr = 2;
      spec.encoder.bias = false;
      spec.heads = {HeadSpec{2, LossKind::kMeanSquaredError},
                    HeadSpec{2, LossKind::kMeanSquaredError}};
      ParameterStore store;
      store.shared = Vector::Zero(4);
      store.shared(0) = 0.7;  // W = [[0.7, 0], [0, 0.3]] column-major
      store.shared(3) = 0.3;
      Vector head = Vector::Zero(6);
      head(0) = 1.0;  // A = I, c = 0
      head(3) = 1.0;
      store.task_blocks = {head, head};
      MtlModel model(spec, store);
      Batch batch;
      batch.inputs = Matrix::Identity(2, 2);
      const Matrix z = encode(model, batch.inputs);
      TaskTargets y1, y2;
      y1.kind = y2.kind = LossKind::kMeanSquaredError;
      Matrix offset(2, 2);
      offset << 0.4, -0.2, 0.1, 0.3;
      y1.values = z + offset;
      y2.values = want_stationary ? Matrix(z - offset) : Matrix(z - 0.5 * offset);
      batch.targets = {y1, y2};

      PassCounts passes;
      const Matrix g_sh = compute_task_gradients(model, batch, GradientMode::kFullMgda, passes);
      const Matrix g_z = compute_task_gradients(model, batch, GradientMode::kMgdaUb, passes);
      const auto full = frank_wolfe_min_norm(gram_matrix(g_sh));
      const auto ub = frank_wolfe_min_norm(gram_matrix(g_z));
      const JacobianResult jac = materialize_jacobian(model, batch);
      const bool full_stat = full.squared_norm <= 1e-8;
      const bool ub_stat = ub.squared_norm <= 1e-8;
      if (!jac.full_rank()) {
        r.pass = false;
        r.detail = "construction lost full rank";
      } else if (full_stat != (want_stationary == 1) || ub_stat != (want_stationary == 1)) {
        r.pass = false;
        r.detail = "stationarity disagreement: full " + std::to_string(full_stat) + ", ub " +
                   std::to_string(ub_stat) + ", want " + std::to_string(want_stationary);
        Json in;
        in["want_stationary"] = want_stationary;
        r.counterexample_path = ctx.dump(r.name, root_seed, in);
      }
    }
    report(std::move(r));
  }

  // Solver certificates: min_t <d, g_t> >= -1e-6 * max ||g||^2 over random
  // instances, in the solved space.
  {
    PropertyResult r{"descent_certificates"};
    auto rng = make_stream(root_seed, "verify_cert");
    std::uniform_int_distribution<int> t_dist(2, 6), d_dist(2, 40);
    for (int trial = 0; trial < 1000 && r.pass; ++trial) {
      const Matrix g = random_gradients(rng, t_dist(rng), d_dist(rng));
      const auto sol = frank_wolfe_min_norm(gram_matrix(g));
      const CertificateCheck cert = check_certificate(sol.weights, g);
      if (!cert.ok) {
        r.pass = false;
        r.detail = "certificate margin " + format_double(cert.min_product) + " at scale " +
                   format_double(cert.scale);
        Json in;
        in["gradients"] = matrix_json(g);
        r.counterexample_path = ctx.dump(r.name, root_seed, in);
      }
    }
    report(std::move(r));
  }

  // Non-stationary full-batch toy problems admit a small step size that
  // strictly decreases every task loss.
  {
    PropertyResult r{"loss_decrease_at_small_step"};
    auto rng = make_stream(root_seed, "verify_decrease");
    for (int trial = 0; trial < 20 && r.pass; ++trial) {
      const ModelSpec spec = random_small_spec(rng);
      MtlModel model = MtlModel::init(spec, derive_seed(root_seed, "verify_dec_model", trial));
      const Batch batch = random_batch(rng, spec, 4);
      PassCounts passes;
      const ForwardResult fwd = forward(model, batch);
      const Matrix g = compute_task_gradients(model, batch, fwd, GradientMode::kFullMgda, passes);
      const auto sol = frank_wolfe_min_norm(gram_matrix(g));
      if (is_pareto_stationary(sol)) continue;
      const Vector direction = g.transpose() * sol.weights.alpha;
      bool decreased_somewhere = false;
      const Vector saved = model.params().shared;
      for (double eta : {1e-2, 1e-3, 1e-4}) {
        model.params().shared = saved - eta * direction;
        const LossVector after = forward(model, batch).losses;
        model.params().shared = saved;
        if (((fwd.losses - after).array() > 0.0).all()) {
          decreased_somewhere = true;
          break;
        }
      }
      if (!decreased_somewhere) {
        r.pass = false;
        r.detail = "no step size in {1e-2,1e-3,1e-4} decreased all losses";
        Json in;
        in["trial"] = trial;
        r.counterexample_path = ctx.dump(r.name, root_seed, in);
      }
    }
    report(std::move(r));
  }

  // Pass accounting: T shared backwards per full step, one per ub step.
  {
    PropertyResult r{"pass_accounting"};
    ModelSpec spec;
    spec.encoder.kind = EncoderKind::kMlp;
    spec.encoder.d_in = 6;
    spec.encoder.d_hidden = 5;
    spec.encoder.d_repr = 3;
    for (int t = 0; t < 4; ++t) spec.heads.push_back(HeadSpec{2, LossKind::kMeanSquaredError});
    auto rng = make_stream(root_seed, "verify_passes");
    const Batch batch = random_batch(rng, spec, 4);
    const int steps = 7;
    for (int mode_idx = 0; mode_idx < 2 && r.pass; ++mode_idx) {
      MtlModel model = MtlModel::init(spec, derive_seed(root_seed, "verify_passes_model", 0));
      StepOptions opts;
      opts.mode = mode_idx == 0 ? GradientMode::kFullMgda : GradientMode::kMgdaUb;
      opts.learning_rate = 1e-3;
      long shared = 0;
      for (int s = 0; s < steps; ++s) shared += mgda_step(model, batch, opts).backward_passes_shared;
      const long expect = mode_idx == 0 ? static_cast<long>(spec.heads.size()) * steps : steps;
      if (shared != expect) {
        r.pass = false;
        r.detail = "mode " + std::to_string(mode_idx) + ": " + std::to_string(shared) +
                   " shared backwards, expected " + std::to_string(expect);
        Json in;
        in["mode"] = mode_idx;
        r.counterexample_path = ctx.dump(r.name, root_seed, in);
      }
    }
    report(std::move(r));
  }

  // IDX and dataset serialization round-trips, composite determinism, source
  // pixel preservation outside the overlap.
  {
    PropertyResult r{"multimnist_pipeline"};
    const SyntheticDigits digits = make_synthetic_digits(600, root_seed);
    const auto bytes = serialize_idx(digits.images);
    if (!(parse_idx(bytes) == digits.images)) {
      r.pass = false;
      r.detail = "idx round trip differs";
    }
    if (r.pass) {
      MultiMnistConfig mc;
      mc.train_size = 128;
      mc.test_size = 32;
      const MultiTaskDataset a = build_multimnist(digits.images, digits.labels, 5, mc);
      const MultiTaskDataset b = build_multimnist(digits.images, digits.labels, 5, mc);
      if ((a.train.inputs - b.train.inputs).cwiseAbs().maxCoeff() != 0.0 ||
          a.train.tasks[0].classes != b.train.tasks[0].classes ||
          a.train.tasks[1].classes != b.train.tasks[1].classes) {
        r.pass = false;
        r.detail = "same seed produced different composites";
      }
      if (r.pass) {
        // Top-left region outside the shifted overlap must be the base image.
        const int side = 28, canvas = side + mc.shift;
        bool preserved = true;
        for (int r0 = 0; r0 < mc.shift && preserved; ++r0) {
          for (int c0 = 0; c0 < side; ++c0) {
            const double src = digits.images.data[std::size_t(0) * side * side + r0 * side + c0] / 255.0;
            if (a.train.inputs(0, r0 * canvas + c0) != src) {
              preserved = false;
            }
          }
        }
        if (!preserved) {
          r.pass = false;
          r.detail = "composite does not preserve source pixels outside overlap";
        }
      }
      if (r.pass) {
        std::stringstream buf;
        save_dataset(buf, a);
        const MultiTaskDataset loaded = load_dataset(buf, a.seed, a.config_echo);
        if ((loaded.train.inputs - a.train.inputs).cwiseAbs().maxCoeff() != 0.0) {
          r.pass = false;
          r.detail = "dataset cache round trip differs";
        }
      }
    }
    if (!r.pass) r.counterexample_path = ctx.dump(r.name, root_seed, Json::object());
    report(std::move(r));
  }

  // Partner draws are uniform over the other source images (chi-square).
  {
    PropertyResult r{"multimnist_partner_uniformity"};
    const SyntheticDigits digits = make_synthetic_digits(600, root_seed + 1);
    MultiMnistConfig mc;
    mc.train_size = 60000;
    mc.test_size = 2;
    const MultiTaskDataset ds = build_multimnist(digits.images, digits.labels, 11, mc);
    // Partner label frequencies against the label distribution of the source.
    std::vector<long> label_count(10, 0), partner_count(10, 0);
    for (std::uint8_t l : digits.labels.data) label_count[l] += 1;
    for (int c : ds.train.tasks[1].classes) partner_count[c] += 1;
    const double n_src = static_cast<double>(digits.labels.data.size());
    const double draws = static_cast<double>(ds.train.size());
    double chi_sq = 0.0;
    for (int k = 0; k < 10; ++k) {
      const double expected = draws * label_count[k] / n_src;
      const double diff = partner_count[k] - expected;
      chi_sq += diff * diff / expected;
    }
    // Wilson-Hilferty critical value at p = 0.001 for df = 9.
    const double df = 9.0;
    const double z = 3.0902;
    const double crit = df * std::pow(1.0 - 2.0 / (9.0 * df) + z * std::sqrt(2.0 / (9.0 * df)), 3.0);
    if (chi_sq > crit) {
      r.pass = false;
      r.detail = "chi-square " + format_double(chi_sq) + " above critical " + format_double(crit);
      r.counterexample_path = ctx.dump(r.name, root_seed, Json::object());
    }
    report(std::move(r));
  }

  // Hull membership from support enumeration agrees with a dense grid check.
  {
    PropertyResult r{"hull_membership_oracle"};
    auto rng = make_stream(root_seed, "verify_hull");
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int trial = 0; trial < 100 && r.pass; ++trial) {
      const int t_count = 2 + trial % 2;
      const QuadraticTasks tasks = synth_quadratic_tasks(t_count, 2, root_seed + trial);
      Vector x(2);
      x << normal(rng), normal(rng);
      const double exact = tasks.hull_distance(x);
      // Dense simplex grid as the independent route.
      double grid_best = std::numeric_limits<double>::infinity();
      const int units = 400;
      for (int i = 0; i <= units; ++i) {
        if (t_count == 2) {
          const Vector p = (i / double(units)) * tasks.centers.row(0).transpose() +
                           (1.0 - i / double(units)) * tasks.centers.row(1).transpose();
          grid_best = std::min(grid_best, (p - x).norm());
        } else {
          for (int j = 0; i + j <= units; ++j) {
            const double a = i / double(units), b = j / double(units);
            const Vector p = a * tasks.centers.row(0).transpose() +
                             b * tasks.centers.row(1).transpose() +
                             (1.0 - a - b) * tasks.centers.row(2).transpose();
            grid_best = std::min(grid_best, (p - x).norm());
          }
        }
      }
      if (std::abs(exact - grid_best) > 2e-2) {
        r.pass = false;
        r.detail = "exact " + format_double(exact) + " vs grid " + format_double(grid_best);
        Json in;
        in["trial"] = trial;
        r.counterexample_path = ctx.dump(r.name, root_seed, in);
      }
    }
    report(std::move(r));
  }

  // Checkpoints round-trip bit-identically through save/load.
  {
    PropertyResult r{"checkpoint_roundtrip"};
    auto rng = make_stream(root_seed, "verify_ckpt");
    const ModelSpec spec = random_small_spec(rng);
    MtlModel model = MtlModel::init(spec, derive_seed(root_seed, "verify_ckpt_model", 0));
    std::stringstream buf;
    save_checkpoint(buf, model);
    const MtlModel loaded = load_checkpoint(buf);
    bool same = (loaded.params().shared.array() == model.params().shared.array()).all();
    for (int t = 0; same && t < model.tasks(); ++t) {
      same = (loaded.params().task_blocks[t].array() == model.params().task_blocks[t].array()).all();
    }
    if (!same) {
      r.pass = false;
      r.detail = "checkpoint parameters differ after reload";
      r.counterexample_path = ctx.dump(r.name, root_seed, Json::object());
    }
    report(std::move(r));
  }

  return results;
}

// Re-runs a single named property with a recorded seed; reproduces the dump
// deterministically so failures can be replayed bit-identically.
inline std::vector<PropertyResult> replay_property(const std::string& dump_path,
                                                   const std::string& out_dir = "") {
  std::ifstream in(dump_path);
  if (!in) throw std::runtime_error("replay: cannot open " + dump_path);
  const Json j = Json::parse(in);
  const std::string property = j.at("property").get<std::string>();
  const std::uint64_t seed = j.at("seed").get<std::uint64_t>();
  std::vector<PropertyResult> all = run_verify_suite(out_dir, seed);
  std::vector<PropertyResult> matched;
  for (PropertyResult& r : all) {
    if (r.name == property) matched.push_back(std::move(r));
  }
  if (matched.empty()) throw std::runtime_error("replay: unknown property '" + property + "'");
  return matched;
}

}  // namespace momtl
