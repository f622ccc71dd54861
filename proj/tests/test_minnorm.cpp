#include <gtest/gtest.h>

#include <random>

#include "momtl/minnorm.hpp"
#include "momtl/rng.hpp"

using namespace momtl;

namespace {

Vector vec2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

Matrix random_gram(std::mt19937_64& rng, int t_count, int dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix g(t_count, dim);
  for (int i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);
  return gram_matrix(g);
}

// Test-only oracle: plain exhaustive lattice enumeration, no pruning.
void enumerate_lattice(const Matrix& m, int depth, int left, int units, std::vector<int>& k,
                       double& best, std::vector<int>& best_k) {
  const int t_count = static_cast<int>(m.rows());
  if (depth == t_count - 1) {
    k[depth] = left;
    Vector a(t_count);
    for (int i = 0; i < t_count; ++i) a(i) = static_cast<double>(k[i]) / units;
    const double v = a.dot(m * a);
    if (v < best) {
      best = v;
      best_k = k;
    }
    return;
  }
  for (int x = 0; x <= left; ++x) {
    k[depth] = x;
    enumerate_lattice(m, depth + 1, left - x, units, k, best, best_k);
  }
}

double plain_lattice_min(const Matrix& m, int units) {
  std::vector<int> k(m.rows(), 0), best_k;
  double best = std::numeric_limits<double>::infinity();
  enumerate_lattice(m, 0, units, units, k, best, best_k);
  return best;
}

}  // namespace

TEST(TwoPointGamma, CollinearEdgeCase) {
  const auto r = two_point_gamma(vec2(1, 0), vec2(3, 0));
  EXPECT_FALSE(r.degenerate);
  EXPECT_DOUBLE_EQ(r.gamma, 1.0);
}

TEST(TwoPointGamma, SymmetricInterior) {
  const auto r = two_point_gamma(vec2(1, 0), vec2(0, 1));
  EXPECT_FALSE(r.degenerate);
  EXPECT_DOUBLE_EQ(r.gamma, 0.5);
}

TEST(TwoPointGamma, HullContainsOrigin) {
  const auto r = two_point_gamma(vec2(2, 0), vec2(-1, 0));
  EXPECT_NEAR(r.gamma, 1.0 / 3.0, 1e-15);
  const Vector combined = r.gamma * vec2(2, 0) + (1 - r.gamma) * vec2(-1, 0);
  EXPECT_NEAR(combined.norm(), 0.0, 1e-15);
}

TEST(TwoPointGamma, ErrorsAndDegenerate) {
  Vector a(2), b(3);
  a.setZero();
  b.setZero();
  EXPECT_THROW(two_point_gamma(a, b), std::invalid_argument);
  const auto r = two_point_gamma(vec2(0, 0), vec2(0, 0));
  EXPECT_TRUE(r.degenerate);
  EXPECT_DOUBLE_EQ(r.gamma, 0.5);
}

TEST(TwoTaskAlpha, SymmetricPair) {
  const auto r = two_task_alpha(vec2(0, 1), vec2(1, 0));
  EXPECT_DOUBLE_EQ(r.alpha, 0.5);
}

TEST(TwoTaskAlpha, CollinearClips) {
  const auto r = two_task_alpha(vec2(1, 0), vec2(10, 0));
  EXPECT_DOUBLE_EQ(r.alpha, 1.0);
}

TEST(TwoTaskAlpha, MatchesDenseGridMinimizer) {
  const Vector g1 = vec2(1, 0.2), g2 = vec2(0.2, 1);
  const auto r = two_task_alpha(g1, g2);
  // Independent oracle: 1e5-point grid over alpha.
  double best_alpha = 0.0, best = std::numeric_limits<double>::infinity();
  for (int k = 0; k <= 100000; ++k) {
    const double a = k / 100000.0;
    const double v = (a * g1 + (1 - a) * g2).squaredNorm();
    if (v < best) {
      best = v;
      best_alpha = a;
    }
  }
  EXPECT_NEAR(best_alpha, 0.5, 1e-5);
  EXPECT_DOUBLE_EQ(r.alpha, 0.5);
}

TEST(TwoTaskAlpha, IdenticalInputsDegenerate) {
  const auto r = two_task_alpha(vec2(3, 4), vec2(3, 4));
  EXPECT_TRUE(r.degenerate);
  EXPECT_DOUBLE_EQ(r.alpha, 0.5);
}

TEST(TwoTaskAlpha, ConsistentWithTwoPointGamma) {
  auto rng = make_stream(7, "minnorm_test");
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    Vector g1(3), g2(3);
    for (int i = 0; i < 3; ++i) {
      g1(i) = normal(rng);
      g2(i) = normal(rng);
    }
    const auto a = two_task_alpha(g1, g2);
    const auto g = two_point_gamma(g1, g2);
    EXPECT_EQ(a.alpha, g.gamma);
  }
}

TEST(FrankWolfe, SingleTaskImmediate) {
  Matrix m(1, 1);
  m << 4.0;
  const auto sol = frank_wolfe_min_norm(m);
  EXPECT_EQ(sol.weights.alpha(0), 1.0);
  EXPECT_EQ(sol.squared_norm, 4.0);
  EXPECT_EQ(sol.iterations, 0);
  EXPECT_EQ(sol.converged_by, StopReason::kGammaZero);
}

TEST(FrankWolfe, ThreeGradientExample) {
  // g1=(1,0), g2=(0,1), g3=(1,1); minimum 0.5 at (0.5, 0.5, 0) on the g1-g2
  // edge. Plain Frank-Wolfe drains the third weight sublinearly, so it is
  // held to the grid-oracle agreement bound; the grid oracle itself lands on
  // the exact lattice minimizer.
  Matrix m(3, 3);
  m << 1, 0, 1, 0, 1, 1, 1, 1, 2;
  const auto sol = frank_wolfe_min_norm(m);
  const double bound = 2.0 * 1e-3 * m.trace();
  EXPECT_NEAR(sol.squared_norm, 0.5, bound);
  EXPECT_NEAR(sol.weights.alpha(0), 0.5, 0.01);
  EXPECT_NEAR(sol.weights.alpha(1), 0.5, 0.01);
  EXPECT_NEAR(sol.weights.alpha(2), 0.0, 0.01);
  const auto bf = brute_force_min_norm(m, 1e-3);
  EXPECT_DOUBLE_EQ(bf.weights.alpha(0), 0.5);
  EXPECT_DOUBLE_EQ(bf.weights.alpha(1), 0.5);
  EXPECT_DOUBLE_EQ(bf.weights.alpha(2), 0.0);
  EXPECT_DOUBLE_EQ(bf.squared_norm, 0.5);
}

TEST(FrankWolfe, IdenticalGradientsStopImmediately) {
  Vector g(3);
  g << 1, 2, 3;
  Matrix rows(4, 3);
  for (int i = 0; i < 4; ++i) rows.row(i) = g;
  const auto sol = frank_wolfe_min_norm(gram_matrix(rows));
  EXPECT_EQ(sol.iterations, 1);
  EXPECT_EQ(sol.converged_by, StopReason::kGammaZero);
  EXPECT_NEAR(sol.squared_norm, g.squaredNorm(), 1e-12);
}

TEST(FrankWolfe, RejectsInvalidGram) {
  Matrix asym(2, 2);
  asym << 1, 0.5, 0.2, 1;
  EXPECT_THROW(frank_wolfe_min_norm(asym), std::invalid_argument);
  Matrix indef(2, 2);
  indef << 1, -2, -2, 1;  // eigenvalues 3, -1
  EXPECT_THROW(frank_wolfe_min_norm(indef), std::invalid_argument);
  SolverConfig bad;
  bad.max_iterations = 0;
  Matrix ok(1, 1);
  ok << 1;
  EXPECT_THROW(frank_wolfe_min_norm(ok, bad), std::invalid_argument);
}

TEST(FrankWolfe, MonotoneDescentTrace) {
  auto rng = make_stream(11, "minnorm_test");
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix m = random_gram(rng, 2 + trial % 4, 3 + trial % 10);
    const auto sol = frank_wolfe_min_norm(m);
    for (std::size_t i = 1; i < sol.squared_norm_trace.size(); ++i) {
      EXPECT_LE(sol.squared_norm_trace[i], sol.squared_norm_trace[i - 1] + 1e-12);
    }
    EXPECT_NEAR(sol.squared_norm, sol.weights.alpha.dot(m * sol.weights.alpha),
                1e-9 * std::max(1.0, sol.squared_norm));
    EXPECT_TRUE(sol.weights.valid());
  }
}

TEST(BruteForce, TrivialAndSymmetricCases) {
  Matrix one(1, 1);
  one << 2.5;
  EXPECT_EQ(brute_force_min_norm(one, 1e-3).weights.alpha(0), 1.0);

  const Matrix eye = Matrix::Identity(2, 2);
  const auto sol = brute_force_min_norm(eye, 1e-3);
  EXPECT_DOUBLE_EQ(sol.weights.alpha(0), 0.5);
  EXPECT_DOUBLE_EQ(sol.squared_norm, 0.5);
}

TEST(BruteForce, RejectsBadArguments) {
  const Matrix eye7 = Matrix::Identity(7, 7);
  EXPECT_THROW(brute_force_min_norm(eye7, 0.01), std::invalid_argument);
  const Matrix eye2 = Matrix::Identity(2, 2);
  EXPECT_THROW(brute_force_min_norm(eye2, 0.0), std::invalid_argument);
  EXPECT_THROW(brute_force_min_norm(eye2, 0.7), std::invalid_argument);
}

TEST(BruteForce, MatchesPlainEnumeration) {
  auto rng = make_stream(13, "minnorm_test");
  for (int trial = 0; trial < 30; ++trial) {
    const int t_count = 3 + trial % 3;  // 3..5
    const int units = t_count <= 3 ? 60 : 24;
    const Matrix m = random_gram(rng, t_count, 2 + trial % 12);
    const auto pruned = brute_force_min_norm(m, 1.0 / units);
    const double plain = plain_lattice_min(m, units);
    // The pruned search may stop at the continuous bound within fp slack.
    EXPECT_NEAR(pruned.squared_norm, plain, 1e-12 * std::max(1.0, m.trace()));
  }
}

TEST(BruteForce, WithinBoundOfFrankWolfe) {
  auto rng = make_stream(17, "minnorm_test");
  for (int trial = 0; trial < 25; ++trial) {
    const Matrix m = random_gram(rng, 4, 2 + trial % 12);
    const auto fw = frank_wolfe_min_norm(m);
    const auto bf = brute_force_min_norm(m, 1e-3);
    const double bound = 2.0 * 1e-3 * m.trace();
    EXPECT_GE(bf.squared_norm, fw.squared_norm - bound);
    EXPECT_LE(std::abs(bf.squared_norm - fw.squared_norm), bound);
  }
}

TEST(Stationarity, ThresholdOnSquaredNorm) {
  MinNormSolution sol;
  sol.squared_norm = 0.0;
  EXPECT_TRUE(is_pareto_stationary(sol));
  sol.squared_norm = 1e-12;
  EXPECT_TRUE(is_pareto_stationary(sol));
  sol.squared_norm = 0.5;
  EXPECT_FALSE(is_pareto_stationary(sol));
}

TEST(SupportEnumeration, ExactOnKnownCases) {
  // Origin inside the hull of (2,0) and (-1,0): minimum norm 0 at alpha=(1/3,2/3).
  Matrix g(2, 2);
  g << 2, 0, -1, 0;
  const auto e = min_norm_by_support_enumeration(gram_matrix(g));
  EXPECT_NEAR(e.squared_norm, 0.0, 1e-15);
  EXPECT_NEAR(e.alpha(0), 1.0 / 3.0, 1e-12);

  const auto eye = min_norm_by_support_enumeration(Matrix::Identity(3, 3));
  EXPECT_NEAR(eye.squared_norm, 1.0 / 3.0, 1e-12);
}
