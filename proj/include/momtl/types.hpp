#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace momtl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Per-task losses, length T. Entries must be finite and >= 0.
using LossVector = Vector;

// T x d matrix; row t is the gradient of task t over one common coordinate
// space (shared parameters, or the flattened batch representations).
using GradientMatrix = Matrix;

// Tolerances for the weight simplex {alpha >= 0, sum(alpha) = 1}.
inline constexpr double kSimplexNonnegTol = 1e-12;
inline constexpr double kSimplexSumTol = 1e-9;

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline void require_finite(const Eigen::Ref<const Matrix>& m, const std::string& what) {
  if (!m.allFinite()) throw std::invalid_argument(what + ": non-finite values");
}

inline void validate_losses(const LossVector& l) {
  require(l.size() >= 1, "LossVector: T must be >= 1");
  require_finite(l, "LossVector");
  require(l.minCoeff() >= 0.0, "LossVector: entries must be >= 0");
}

// Convex-combination coefficients over the tasks.
struct SimplexWeights {
  Vector alpha;

  int tasks() const { return static_cast<int>(alpha.size()); }

  bool valid() const {
    if (alpha.size() < 1 || !alpha.allFinite()) return false;
    if (alpha.minCoeff() < -kSimplexNonnegTol) return false;
    return std::abs(alpha.sum() - 1.0) <= kSimplexSumTol;
  }

  static SimplexWeights uniform(int t) {
    require(t >= 1, "SimplexWeights: T must be >= 1");
    return {Vector::Constant(t, 1.0 / t)};
  }
};

// Euclidean projection onto the simplex (sort-based). Inputs that already
// satisfy the invariants are returned unchanged, so repair is idempotent.
inline SimplexWeights project_to_simplex(const Vector& v) {
  require(v.size() >= 1, "project_to_simplex: empty input");
  if (!v.allFinite()) throw std::invalid_argument("project_to_simplex: non-finite input");
  SimplexWeights as_is{v};
  if (as_is.valid()) return as_is;

  std::vector<double> u(v.data(), v.data() + v.size());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0;
  double tau = 0.0;
  for (int j = 0; j < static_cast<int>(u.size()); ++j) {
    cumsum += u[j];
    const double t = (cumsum - 1.0) / (j + 1);
    if (u[j] - t > 0.0) tau = t;
  }
  return {(v.array() - tau).cwiseMax(0.0)};
}

// Gram matrix M with M(i,j) = <g_i, g_j>, rows of `grads` being the g_t.
inline Matrix gram_matrix(const GradientMatrix& grads) {
  require(grads.rows() >= 1, "gram_matrix: need at least one gradient row");
  require_finite(grads, "gram_matrix");
  return grads * grads.transpose();
}

// Direction sum_t alpha_t * g_t in the gradients' coordinate space.
inline Vector combine_rows(const GradientMatrix& grads, const SimplexWeights& w) {
  require(grads.rows() == w.alpha.size(), "combine_rows: T mismatch");
  return grads.transpose() * w.alpha;
}

// Row-major (example-major for an N x d_repr representation block) flatten;
// the convention shared by the materialized Jacobian.
inline Vector flatten_example_major(const Matrix& m) {
  Vector v(m.size());
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      v.data(), m.rows(), m.cols()) = m;
  return v;
}

// Flat parameter blocks: one shared vector plus one vector per task.
struct ParameterStore {
  Vector shared;
  std::vector<Vector> task_blocks;

  int tasks() const { return static_cast<int>(task_blocks.size()); }

  void check_finite() const {
    require_finite(shared, "ParameterStore.shared");
    for (int t = 0; t < tasks(); ++t) {
      require_finite(task_blocks[t], "ParameterStore.task_block[" + std::to_string(t) + "]");
    }
  }
};

inline std::string format_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

// Text interchange format for a gradient matrix: header "T d", then T lines
// of d whitespace-separated reals.
inline GradientMatrix read_gradient_matrix(std::istream& in) {
  long long t = 0, d = 0;
  if (!(in >> t >> d)) throw std::runtime_error("gradient file: bad header, expected 'T d'");
  if (t < 1 || d < 1) throw std::runtime_error("gradient file: T and d must be >= 1");
  GradientMatrix g(t, d);
  for (long long r = 0; r < t; ++r) {
    for (long long c = 0; c < d; ++c) {
      double x;
      if (!(in >> x)) {
        throw std::runtime_error("gradient file: truncated at row " + std::to_string(r) +
                                 ", col " + std::to_string(c));
      }
      g(r, c) = x;
    }
  }
  require_finite(g, "gradient file");
  return g;
}

inline void write_gradient_matrix(std::ostream& out, const GradientMatrix& g) {
  out << g.rows() << " " << g.cols() << "\n";
  for (Eigen::Index r = 0; r < g.rows(); ++r) {
    for (Eigen::Index c = 0; c < g.cols(); ++c) {
      if (c) out << " ";
      out << format_double(g(r, c));
    }
    out << "\n";
  }
}

}  // namespace momtl
