#include <limits>
#include <random>

#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "softarm/qp.hpp"

namespace softarm {
namespace {

QpProblem box_problem(const MatX& w, const VecX& r, double lo, double hi) {
  QpProblem p;
  p.W = w;
  p.r = r;
  p.lower = VecX::Constant(w.cols(), lo);
  p.upper = VecX::Constant(w.cols(), hi);
  return p;
}

// Best feasible point over every lower/upper/free assignment.
VecX enumerate_active_sets(const QpProblem& p) {
  const int n = p.size();
  MatX h = p.W.transpose() * p.W;
  if (p.regularization.size()) h.diagonal() += p.regularization;
  const VecX g = p.W.transpose() * p.r;
  int patterns = 1;
  for (int i = 0; i < n; ++i) patterns *= 3;
  VecX best;
  double best_value = std::numeric_limits<double>::infinity();
  for (int code = 0; code < patterns; ++code) {
    VecX x = VecX::Zero(n);
    std::vector<int> free;
    int c = code;
    for (int i = 0; i < n; ++i, c /= 3) {
      if (c % 3 == 0) free.push_back(i);
      x(i) = c % 3 == 1 ? p.lower(i) : p.upper(i);
    }
    if (!free.empty()) {
      const int m = static_cast<int>(free.size());
      MatX hf(m, m);
      VecX rhs(m);
      for (int a = 0; a < m; ++a) {
        rhs(a) = g(free[a]);
        for (int j = 0; j < n; ++j)
          if (std::find(free.begin(), free.end(), j) == free.end()) rhs(a) -= h(free[a], j) * x(j);
        for (int b = 0; b < m; ++b) hf(a, b) = h(free[a], free[b]);
      }
      const VecX xf = hf.ldlt().solve(rhs);
      for (int a = 0; a < m; ++a) x(free[a]) = xf(a);
    }
    if (((x - p.lower).array() < -1e-12).any() || ((p.upper - x).array() < -1e-12).any()) continue;
    const double value = qp_objective(p, x);
    if (value < best_value) {
      best_value = value;
      best = x;
    }
  }
  return best;
}

TEST(SolveQp, IdentityUnconstrained) {
  const VecX r = (VecX(2) << 0.1, -0.2).finished();
  const QpSolution s = solve_qp(box_problem(MatX::Identity(2, 2), r, -1.0, 1.0));
  EXPECT_TRUE(s.converged);
  EXPECT_LT((s.x - r).norm(), 1e-12);
  EXPECT_EQ(s.active[0], BoundState::kFree);
}

TEST(SolveQp, ClampedAtUpperBound) {
  const QpSolution s = solve_qp(box_problem(MatX::Ones(1, 1), VecX::Constant(1, 2.0), 0.0, 1.0));
  EXPECT_TRUE(s.converged);
  EXPECT_DOUBLE_EQ(s.x(0), 1.0);
  EXPECT_EQ(s.active[0], BoundState::kUpper);
  EXPECT_NEAR(s.objective, 1.0, 1e-12);
}

TEST(SolveQp, PinsMatchTheEliminatedProblem) {
  std::mt19937 rng(12);
  std::normal_distribution<double> g(0.0, 1.0);
  const MatX w = MatX::NullaryExpr(4, 5, [&] { return g(rng); });
  const VecX r = VecX::NullaryExpr(4, [&] { return g(rng); });
  QpProblem full = box_problem(w, r, -0.5, 0.5);
  full.pins = {{0, 0.3}, {2, -0.125}};
  const QpSolution s = solve_qp(full);
  ASSERT_TRUE(s.converged);
  EXPECT_EQ(s.x(0), 0.3);
  EXPECT_EQ(s.x(2), -0.125);
  EXPECT_EQ(s.active[0], BoundState::kPinned);

  MatX wr(4, 3);
  wr << w.col(1), w.col(3), w.col(4);
  const VecX rr = r - w.col(0) * 0.3 - w.col(2) * -0.125;
  const QpSolution reduced = solve_qp(box_problem(wr, rr, -0.5, 0.5));
  EXPECT_NEAR(s.x(1), reduced.x(0), 1e-10);
  EXPECT_NEAR(s.x(3), reduced.x(1), 1e-10);
  EXPECT_NEAR(s.x(4), reduced.x(2), 1e-10);
}

TEST(SolveQp, MatchesActiveSetEnumeration) {
  std::mt19937 rng(2024);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const int rows = 2 + trial % 5;  // includes rank-deficient cases with regularization
    QpProblem p;
    p.W = MatX::NullaryExpr(rows, 4, [&] { return g(rng); });
    p.r = 2.0 * VecX::NullaryExpr(rows, [&] { return g(rng); });
    p.lower = -VecX::NullaryExpr(4, [&] { return u(rng); });
    p.upper = VecX::NullaryExpr(4, [&] { return u(rng); });
    if (rows < 4) p.regularization = default_regularization(p.W, 1e-3);
    const QpSolution s = solve_qp(p);
    ASSERT_TRUE(s.converged) << trial;
    const VecX oracle = enumerate_active_sets(p);
    EXPECT_LT((s.x - oracle).cwiseAbs().maxCoeff(), 1e-8) << trial;
    EXPECT_TRUE(((s.x - p.lower).array() >= -1e-9).all());
    EXPECT_TRUE(((p.upper - s.x).array() >= -1e-9).all());
    EXPECT_LE(s.stationarity, 1e-6 * std::max(s.scale, 1e-300)) << trial;
  }
}

TEST(SolveQp, ProjectedGradientVanishes) {
  std::mt19937 rng(99);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    QpProblem p = box_problem(MatX::NullaryExpr(6, 8, [&] { return g(rng); }),
                              VecX::NullaryExpr(6, [&] { return g(rng); }), -0.3, 0.3);
    p.regularization = default_regularization(p.W);
    const QpSolution s = solve_qp(p);
    ASSERT_TRUE(s.converged);
    const VecX grad = p.W.transpose() * (p.W * s.x - p.r) + p.regularization.cwiseProduct(s.x);
    double worst = 0.0;
    for (int i = 0; i < p.size(); ++i) {
      double gi = grad(i);
      if (s.x(i) <= p.lower(i) + 1e-12) gi = std::min(gi, 0.0);
      if (s.x(i) >= p.upper(i) - 1e-12) gi = std::max(gi, 0.0);
      worst = std::max(worst, std::abs(gi));
    }
    EXPECT_LE(worst, 1e-6 * (p.W.transpose() * p.r).norm());
  }
}

TEST(SolveQp, InvariantToUniformScaling) {
  std::mt19937 rng(5);
  std::normal_distribution<double> g(0.0, 1.0);
  QpProblem p = box_problem(MatX::NullaryExpr(6, 4, [&] { return g(rng); }),
                            VecX::NullaryExpr(6, [&] { return g(rng); }), -0.4, 0.4);
  p.regularization = default_regularization(p.W);
  const QpSolution a = solve_qp(p);
  p.W *= 37.0;
  p.r *= 37.0;
  p.regularization *= 37.0 * 37.0;
  const QpSolution b = solve_qp(p);
  EXPECT_LT((a.x - b.x).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(SolveQp, InvariantToColumnUnits) {
  // Same problem with one variable expressed in kilo-units.
  std::mt19937 rng(6);
  std::normal_distribution<double> g(0.0, 1.0);
  QpProblem p = box_problem(MatX::NullaryExpr(3, 3, [&] { return g(rng); }),
                            VecX::NullaryExpr(3, [&] { return g(rng); }), -0.5, 0.5);
  p.regularization = default_regularization(p.W);
  const QpSolution a = solve_qp(p);
  QpProblem q = p;
  q.W.col(1) /= 1000.0;
  q.lower(1) *= 1000.0;
  q.upper(1) *= 1000.0;
  q.regularization = default_regularization(q.W);
  const QpSolution b = solve_qp(q);
  EXPECT_NEAR(a.x(0), b.x(0), 1e-9);
  EXPECT_NEAR(a.x(1), b.x(1) / 1000.0, 1e-9);
  EXPECT_NEAR(a.x(2), b.x(2), 1e-9);
}

TEST(SolveQp, DuplicateColumnsSplitEvenly) {
  MatX w(2, 3);
  w << 1, 1, 0, 0, 0, 1;
  QpProblem p = box_problem(w, (VecX(2) << 1.0, 0.5).finished(), -5.0, 5.0);
  p.regularization = default_regularization(p.W);
  const QpSolution s = solve_qp(p);
  EXPECT_NEAR(s.x(0), s.x(1), 1e-9);
  EXPECT_NEAR(s.x(0) + s.x(1), 1.0, 1e-6);
}

TEST(SolveQp, EmptyProblem) {
  QpProblem p;
  p.W = MatX::Zero(3, 0);
  p.r = VecX::Ones(3);
  p.lower = VecX(0);
  p.upper = VecX(0);
  const QpSolution s = solve_qp(p);
  EXPECT_TRUE(s.converged);
  EXPECT_EQ(s.x.size(), 0);
  EXPECT_NEAR(s.objective, 3.0, 1e-15);
}

TEST(SolveQp, InvalidProblemsAreRejected) {
  const QpProblem good = box_problem(MatX::Identity(2, 2), VecX::Zero(2), -1.0, 1.0);
  QpProblem p = good;
  p.r = VecX::Zero(3);
  EXPECT_THROW(solve_qp(p), InputError);
  p = good;
  p.lower(1) = 2.0;
  EXPECT_THROW(solve_qp(p), InputError);
  p = good;
  p.pins = {{0, 1.5}};
  EXPECT_THROW(solve_qp(p), InputError);
  p = good;
  p.pins = {{2, 0.0}};
  EXPECT_THROW(solve_qp(p), InputError);
  p = good;
  p.pins = {{1, 0.0}, {1, 0.5}};
  EXPECT_THROW(solve_qp(p), InputError);
  p = good;
  p.regularization = VecX::Constant(2, -1.0);
  EXPECT_THROW(solve_qp(p), InputError);
}

TEST(SolveQp, IterationLimitFlagsNonConvergence) {
  std::mt19937 rng(8);
  std::normal_distribution<double> g(0.0, 1.0);
  const QpProblem p = box_problem(MatX::NullaryExpr(8, 8, [&] { return g(rng); }),
                                  10.0 * VecX::NullaryExpr(8, [&] { return g(rng); }), -0.1, 0.1);
  const QpSolution s = solve_qp(p, 1);
  EXPECT_FALSE(s.converged);
  EXPECT_TRUE(((s.x - p.lower).array() >= -1e-12).all());
  EXPECT_TRUE(((p.upper - s.x).array() >= -1e-12).all());
}

}  // namespace
}  // namespace softarm
