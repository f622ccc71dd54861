#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "momtl/types.hpp"

namespace momtl {

enum class StopReason { kGammaZero, kNormStall, kIterationLimit };

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::kGammaZero: return "gamma_zero";
    case StopReason::kNormStall: return "norm_stall";
    case StopReason::kIterationLimit: return "iteration_limit";
  }
  return "unknown";
}

struct SolverConfig {
  int max_iterations = 250;
  double gamma_tolerance = 1e-4;
  double norm_stall_tolerance = 1e-7;
  double stationarity_threshold = 1e-8;  // applied to the squared norm

  void validate() const {
    require(max_iterations >= 1, "SolverConfig: max_iterations must be >= 1");
    require(gamma_tolerance > 0 && norm_stall_tolerance > 0 && stationarity_threshold > 0,
            "SolverConfig: tolerances must be > 0");
  }
};

struct MinNormSolution {
  SimplexWeights weights;
  double squared_norm = 0.0;
  int iterations = 0;
  StopReason converged_by = StopReason::kGammaZero;
  // Squared norm after initialization and after every iteration. The solver
  // is monotone; tests assert this on the recorded trace.
  std::vector<double> squared_norm_trace;
};

struct LineSearchPoint {
  double gamma = 0.0;
  bool degenerate = false;
};

// min_{gamma in [0,1]} ||gamma*theta + (1-gamma)*theta_bar||^2 given the
// inner products tt = <theta,theta>, tb = <theta,theta_bar>, bb = <bar,bar>.
// Three-branch rule: the optimum is an edge case or the perpendicular foot.
inline LineSearchPoint two_point_gamma_from_products(double tt, double tb, double bb) {
  if (tt <= 0.0 && bb <= 0.0) return {0.5, true};  // both points at the origin
  if (tb >= tt) return {1.0, false};
  if (tb >= bb) return {0.0, false};
  return {(bb - tb) / (tt - 2.0 * tb + bb), false};
}

inline LineSearchPoint two_point_gamma(const Vector& theta, const Vector& theta_bar) {
  require(theta.size() == theta_bar.size(), "two_point_gamma: dimension mismatch");
  require_finite(theta, "two_point_gamma: theta");
  require_finite(theta_bar, "two_point_gamma: theta_bar");
  return two_point_gamma_from_products(theta.dot(theta), theta.dot(theta_bar),
                                       theta_bar.dot(theta_bar));
}

struct TwoTaskAlpha {
  double alpha = 0.5;
  bool degenerate = false;
};

// Closed form for T = 2: alpha = clip((g2-g1)'g2 / ||g1-g2||^2, 0, 1), the
// weight on g1. The three-branch line-search rule IS this clipped expression,
// so the two share one code path and agree bit for bit whenever g1 != g2.
// Identical inputs make every alpha optimal.
inline TwoTaskAlpha two_task_alpha(const Vector& g1, const Vector& g2) {
  require(g1.size() == g2.size(), "two_task_alpha: dimension mismatch");
  require_finite(g1, "two_task_alpha: g1");
  require_finite(g2, "two_task_alpha: g2");
  if ((g1.array() == g2.array()).all()) return {0.5, true};
  const LineSearchPoint ls =
      two_point_gamma_from_products(g1.dot(g1), g1.dot(g2), g2.dot(g2));
  return {ls.gamma, ls.degenerate};
}

// Symmetry within 1e-9 relative and eigenvalues >= -1e-8 * max|eigenvalue|.
inline void check_gram(const Matrix& m) {
  require(m.rows() >= 1 && m.rows() == m.cols(), "GramMatrix: must be square, T >= 1");
  require_finite(m, "GramMatrix");
  const double scale = std::max(1e-300, m.cwiseAbs().maxCoeff());
  const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-9 * scale) {
    throw std::invalid_argument("GramMatrix: not symmetric (max asymmetry " +
                                format_double(asym) + ")");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()),
                                           Eigen::EigenvaluesOnly);
  const double emax = es.eigenvalues().cwiseAbs().maxCoeff();
  const double emin = es.eigenvalues().minCoeff();
  if (emin < -1e-8 * std::max(emax, 1e-300)) {
    throw std::invalid_argument("GramMatrix: not positive semidefinite (min eigenvalue " +
                                format_double(emin) + ")");
  }
}

// Frank-Wolfe on min_{alpha in simplex} alpha' M alpha. Works on the Gram
// matrix only; the line search reuses the two-point rule in the M inner
// product. Ties in the vertex pick go to the lowest task index.
inline MinNormSolution frank_wolfe_min_norm(const Matrix& gram,
                                            const SolverConfig& config = {}) {
  config.validate();
  check_gram(gram);
  const int t_count = static_cast<int>(gram.rows());

  MinNormSolution sol;
  if (t_count == 1) {
    sol.weights.alpha = Vector::Ones(1);
    sol.squared_norm = gram(0, 0);
    sol.iterations = 0;
    sol.converged_by = StopReason::kGammaZero;
    sol.squared_norm_trace = {gram(0, 0)};
    return sol;
  }

  Vector alpha = Vector::Constant(t_count, 1.0 / t_count);
  double norm_sq = alpha.dot(gram * alpha);
  sol.squared_norm_trace.reserve(config.max_iterations + 1);
  sol.squared_norm_trace.push_back(norm_sq);

  StopReason reason = StopReason::kIterationLimit;
  int iter = 0;
  while (iter < config.max_iterations) {
    const Vector m_alpha = gram * alpha;
    int best = 0;
    for (int r = 1; r < t_count; ++r) {
      if (m_alpha(r) < m_alpha(best)) best = r;
    }
    // No vertex improves on the current point (zero Frank-Wolfe gap): the
    // line-search argmin set contains gamma = 0; take it so the stop rule
    // fires instead of bouncing between equal-value vertices.
    double gamma;
    if (m_alpha(best) >= norm_sq) {
      gamma = 0.0;
    } else {
      gamma = two_point_gamma_from_products(gram(best, best), m_alpha(best), norm_sq).gamma;
    }
    alpha *= (1.0 - gamma);
    alpha(best) += gamma;
    ++iter;

    const double prev = norm_sq;
    norm_sq = alpha.dot(gram * alpha);
    sol.squared_norm_trace.push_back(norm_sq);

    if (gamma < config.gamma_tolerance) {
      reason = StopReason::kGammaZero;
      break;
    }
    if (prev - norm_sq <
        config.norm_stall_tolerance * std::max(prev, std::numeric_limits<double>::min())) {
      reason = StopReason::kNormStall;
      break;
    }
  }

  sol.weights.alpha = alpha;
  sol.squared_norm = norm_sq;
  sol.iterations = iter;
  sol.converged_by = reason;
  return sol;
}

inline bool is_pareto_stationary(const MinNormSolution& solution,
                                 const SolverConfig& config = {}) {
  return solution.squared_norm <= config.stationarity_threshold;
}

struct ExactMinNorm {
  Vector alpha;
  double squared_norm = 0.0;
};

// Exact continuous minimum of alpha' M alpha over the simplex by enumerating
// support sets and solving the equality-constrained KKT system on each face.
// Intended for small T (cost 2^T); used for seeding and as a reference.
inline ExactMinNorm min_norm_by_support_enumeration(const Matrix& gram) {
  const int t_count = static_cast<int>(gram.rows());
  require(t_count >= 1 && gram.cols() == t_count, "support enumeration: square matrix required");
  require(t_count <= 20, "support enumeration: T too large");

  ExactMinNorm best;
  best.alpha = Vector::Zero(t_count);
  best.squared_norm = std::numeric_limits<double>::infinity();

  for (std::uint32_t mask = 1; mask < (1u << t_count); ++mask) {
    std::vector<int> support;
    for (int t = 0; t < t_count; ++t) {
      if (mask & (1u << t)) support.push_back(t);
    }
    const int s = static_cast<int>(support.size());
    Matrix kkt = Matrix::Zero(s + 1, s + 1);
    for (int i = 0; i < s; ++i) {
      for (int j = 0; j < s; ++j) kkt(i, j) = gram(support[i], support[j]);
      kkt(i, s) = 1.0;
      kkt(s, i) = 1.0;
    }
    Vector rhs = Vector::Zero(s + 1);
    rhs(s) = 1.0;
    Eigen::FullPivLU<Matrix> lu(kkt);
    if (!lu.isInvertible()) continue;
    const Vector sol = lu.solve(rhs);
    bool feasible = true;
    for (int i = 0; i < s; ++i) {
      if (sol(i) < -1e-12) {
        feasible = false;
        break;
      }
    }
    if (!feasible) continue;
    Vector alpha = Vector::Zero(t_count);
    for (int i = 0; i < s; ++i) alpha(support[i]) = std::max(0.0, sol(i));
    const double sum = alpha.sum();
    if (sum <= 0.0) continue;
    alpha /= sum;
    const double value = alpha.dot(gram * alpha);
    if (value < best.squared_norm) {
      best.squared_norm = value;
      best.alpha = alpha;
    }
  }
  return best;
}

namespace detail {

// Largest-remainder rounding of a feasible alpha onto the K-unit lattice.
inline std::vector<int> round_to_lattice(const Vector& alpha, int units) {
  const int n = static_cast<int>(alpha.size());
  std::vector<int> k(n);
  std::vector<std::pair<double, int>> frac(n);
  int used = 0;
  for (int i = 0; i < n; ++i) {
    const double scaled = std::max(0.0, alpha(i)) * units;
    k[i] = static_cast<int>(std::floor(scaled));
    if (k[i] > units) k[i] = units;
    frac[i] = {scaled - k[i], i};
    used += k[i];
  }
  int remaining = units - used;
  std::sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (int i = 0; remaining > 0 && i < n; ++i, --remaining) k[frac[i].second] += 1;
  // remaining < 0 can only happen through rounding pathologies; trim largest.
  for (int i = 0; remaining < 0 && i < n; ++i) {
    while (k[i] > 0 && remaining < 0) {
      k[i] -= 1;
      ++remaining;
    }
  }
  return k;
}

struct GridSearchState {
  const Matrix& m;
  int units;
  std::uint64_t budget;
  std::uint64_t nodes = 0;
  double best_value = std::numeric_limits<double>::infinity();
  std::vector<int> best_k;
  std::vector<int> stack;
  std::vector<double> suffix_lambda_min;
  std::vector<Vector> q_levels;  // preallocated q = M * partial_alpha per depth

  explicit GridSearchState(const Matrix& gram) : m(gram) {}

  double eval_units(const std::vector<int>& k) const {
    const int n = static_cast<int>(k.size());
    Vector a(n);
    for (int i = 0; i < n; ++i) a(i) = static_cast<double>(k[i]) / units;
    return a.dot(m * a);
  }

  void offer(const std::vector<int>& k) {
    const double v = eval_units(k);
    if (v < best_value) {
      best_value = v;
      best_k = k;
    }
  }

  // Exact minimization over the last two coordinates: a one-dimensional
  // integer quadratic, solved by rounding the continuous vertex.
  void solve_tail_pair(int a, int b, int units_left, double f_part, const Vector& q) {
    const double inv = 1.0 / units;
    const double maa = m(a, a), mab = m(a, b), mbb = m(b, b);
    const double u = units_left * inv;
    // f(x) = f_part + 2 x q_a + 2 (u - x) q_b + x^2 maa + 2 x (u - x) mab + (u - x)^2 mbb
    // with x = k * inv, k in [0, units_left].
    const double curve = maa - 2.0 * mab + mbb;
    auto value_at = [&](int k) {
      const double x = k * inv;
      const double y = u - x;
      return f_part + 2.0 * x * q(a) + 2.0 * y * q(b) + x * x * maa + 2.0 * x * y * mab +
             y * y * mbb;
    };
    int candidates[4];
    int n_cand = 0;
    if (curve > 0.0) {
      const double x_star =
          (q(b) - q(a) + u * (mbb - mab)) / curve;  // stationary point of f(x)
      const double k_star = x_star * units;
      int k0 = static_cast<int>(std::floor(k_star));
      for (int k : {k0, k0 + 1}) {
        k = std::min(units_left, std::max(0, k));
        candidates[n_cand++] = k;
      }
    }
    candidates[n_cand++] = 0;
    if (units_left != 0) candidates[n_cand++] = units_left;

    double best_local = std::numeric_limits<double>::infinity();
    int best_local_k = 0;
    for (int i = 0; i < n_cand; ++i) {
      const double v = value_at(candidates[i]);
      if (v < best_local) {
        best_local = v;
        best_local_k = candidates[i];
      }
    }
    if (best_local < best_value) {
      best_value = best_local;
      best_k = stack;
      best_k[a] = best_local_k;
      best_k[b] = units_left - best_local_k;
    }
  }

  // Exact continuous minimum over the last-pair completion given x units of
  // mass on coordinate c = n-3. Convex in x, which the caller exploits.
  double pair_completion_bound(int c, int a, int b, double f_part, const Vector& q,
                               double mass, double x) const {
    const double f_child = f_part + 2.0 * x * q(c) + x * x * m(c, c);
    const double qa = q(a) + x * m(a, c);
    const double qb = q(b) + x * m(b, c);
    const double y = mass - x;
    const double curve = m(a, a) - 2.0 * m(a, b) + m(b, b);
    double s = 0.0;
    if (curve > 0.0) {
      s = std::min(y, std::max(0.0, (qb - qa + y * (m(b, b) - m(a, b))) / curve));
    } else if (2.0 * qa + y * m(a, a) < 2.0 * qb + y * m(b, b)) {
      s = y;
    }
    const double t = y - s;
    return f_child + 2.0 * s * qa + 2.0 * t * qb + s * s * m(a, a) + 2.0 * s * t * m(a, b) +
           t * t * m(b, b);
  }

  // Level n-3: one free coordinate before the closed-form pair. The per-k
  // continuous bound is convex, so ternary-search its integer argmin and only
  // walk the sub-level interval around it.
  void enumerate_last_free(int depth, int units_left, double f_part, double mass) {
    const int n = static_cast<int>(m.rows());
    const int c = depth, a = n - 2, b = n - 1;
    const Vector& q = q_levels[depth];
    const double inv = 1.0 / units;
    auto bound_at = [&](int k) {
      return pair_completion_bound(c, a, b, f_part, q, mass, k * inv);
    };

    int lo = 0, hi = units_left;
    while (hi - lo > 2) {
      const int m1 = lo + (hi - lo) / 3;
      const int m2 = hi - (hi - lo) / 3;
      if (bound_at(m1) <= bound_at(m2)) {
        hi = m2;
      } else {
        lo = m1;
      }
    }
    int k_start = lo;
    double bv = bound_at(lo);
    for (int k = lo + 1; k <= hi; ++k) {
      const double v = bound_at(k);
      if (v < bv) {
        bv = v;
        k_start = k;
      }
    }

    auto process = [&](int k) {
      const double x = k * inv;
      const double f_child = f_part + 2.0 * x * q(c) + x * x * m(c, c);
      stack[c] = k;
      q_levels[depth + 1] = q_levels[depth] + x * m.col(c);
      if (++nodes > budget) {
        throw std::runtime_error(
            "brute_force_min_norm: grid budget exceeded (T too large for this grid step)");
      }
      solve_tail_pair(a, b, units_left - k, f_child, q_levels[depth + 1]);
    };

    // Walk outward from the bound's argmin; once the (convex) bound is at or
    // above the incumbent it stays there on that side.
    for (int k = k_start; k <= units_left; ++k) {
      if (bound_at(k) >= best_value) break;
      process(k);
    }
    for (int k = k_start - 1; k >= 0; --k) {
      if (bound_at(k) >= best_value) break;
      process(k);
    }
    stack[c] = 0;
  }

  void recurse(int depth, int units_left, double f_part) {
    const int n = static_cast<int>(m.rows());
    const Vector& q = q_levels[depth];
    if (++nodes > budget) {
      throw std::runtime_error("brute_force_min_norm: grid budget exceeded (T too large "
                               "for this grid step)");
    }
    if (depth == n - 2) {
      solve_tail_pair(n - 2, n - 1, units_left, f_part, q);
      return;
    }

    const double mass = static_cast<double>(units_left) / units;
    // Lower bound: drop the quadratic completion term except for the
    // smallest-eigenvalue contribution of the remaining principal block.
    double min_q = q(depth);
    for (int j = depth + 1; j < n; ++j) min_q = std::min(min_q, q(j));
    const int r_size = n - depth;
    const double lb =
        f_part + 2.0 * mass * min_q + suffix_lambda_min[depth] * mass * mass / r_size;
    if (lb >= best_value) return;

    // Cheap feasible completions tighten the incumbent early.
    for (int j = depth; j < n; ++j) {
      const double v = f_part + 2.0 * mass * q(j) + mass * mass * m(j, j);
      if (v < best_value) {
        best_value = v;
        best_k = stack;
        for (int t = depth; t < n; ++t) best_k[t] = 0;
        best_k[j] = units_left;
      }
    }

    const double inv = 1.0 / units;
    if (depth == n - 3) {
      enumerate_last_free(depth, units_left, f_part, mass);
      return;
    }
    for (int k = 0; k <= units_left; ++k) {
      const double x = k * inv;
      const double f_child = f_part + 2.0 * x * q(depth) + x * x * m(depth, depth);
      stack[depth] = k;
      q_levels[depth + 1] = q_levels[depth] + x * m.col(depth);
      recurse(depth + 1, units_left - k, f_child);
    }
    stack[depth] = 0;
  }
};

}  // namespace detail

// Exhaustive minimizer of alpha' M alpha over the simplex lattice
// {alpha_t = k_t / K, sum k_t = K} with K = round(1/grid_step). Realized as
// depth-first enumeration with provable pruning bounds and a closed-form
// bottom level, so the returned point is the exact lattice minimizer.
// Independent of the Frank-Wolfe path; serves as its oracle.
inline MinNormSolution brute_force_min_norm(const Matrix& gram, double grid_step,
                                            std::uint64_t node_budget = 50'000'000) {
  check_gram(gram);
  require(grid_step > 0.0 && grid_step <= 0.5, "brute_force_min_norm: grid_step in (0, 0.5]");
  const int t_count = static_cast<int>(gram.rows());
  require(t_count <= 6, "brute_force_min_norm: T too large for grid (max 6)");

  MinNormSolution sol;
  sol.converged_by = StopReason::kGammaZero;
  sol.iterations = 0;
  if (t_count == 1) {
    sol.weights.alpha = Vector::Ones(1);
    sol.squared_norm = gram(0, 0);
    sol.squared_norm_trace = {gram(0, 0)};
    return sol;
  }

  const int units = std::max<int>(2, static_cast<int>(std::llround(1.0 / grid_step)));

  // Order coordinates by descending diagonal so heavy directions are fixed
  // early and the pruning bound grows fast.
  std::vector<int> order(t_count);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (gram(a, a) != gram(b, b)) return gram(a, a) > gram(b, b);
    return a < b;
  });
  Matrix pm(t_count, t_count);
  for (int i = 0; i < t_count; ++i) {
    for (int j = 0; j < t_count; ++j) pm(i, j) = gram(order[i], order[j]);
  }

  detail::GridSearchState state(pm);
  state.units = units;
  state.budget = node_budget;
  state.stack.assign(t_count, 0);
  state.suffix_lambda_min.assign(t_count, 0.0);
  for (int d = 0; d < t_count; ++d) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(pm.block(d, d, t_count - d, t_count - d),
                                             Eigen::EigenvaluesOnly);
    state.suffix_lambda_min[d] = std::max(0.0, es.eigenvalues().minCoeff());
  }

  // Incumbents: uniform weights, every vertex, and the rounded continuous
  // optimum from support enumeration.
  {
    std::vector<int> k(t_count, 0);
    const int base = units / t_count;
    int rem = units - base * t_count;
    for (int i = 0; i < t_count; ++i) k[i] = base + (i < rem ? 1 : 0);
    state.offer(k);
    for (int v = 0; v < t_count; ++v) {
      std::vector<int> kv(t_count, 0);
      kv[v] = units;
      state.offer(kv);
    }
  }
  const ExactMinNorm exact = min_norm_by_support_enumeration(pm);
  state.offer(detail::round_to_lattice(exact.alpha, units));

  // If the incumbent already matches the continuous lower bound to floating
  // point resolution, no lattice point can improve on it.
  const double fp_slack = 1e-13 * std::max(1.0, pm.trace());
  if (state.best_value > exact.squared_norm + fp_slack) {
    state.q_levels.assign(t_count + 1, Vector::Zero(t_count));
    state.recurse(0, units, 0.0);
  }

  Vector alpha = Vector::Zero(t_count);
  for (int i = 0; i < t_count; ++i) {
    alpha(order[i]) = static_cast<double>(state.best_k[i]) / units;
  }
  sol.weights.alpha = alpha;
  sol.squared_norm = alpha.dot(gram * alpha);
  sol.squared_norm_trace = {sol.squared_norm};
  return sol;
}

}  // namespace momtl
