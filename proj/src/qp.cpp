#include "softarm/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Cholesky>
#include <Eigen/QR>

namespace softarm {

void QpProblem::validate() const {
  const int n = size();
  if (r.size() != W.rows()) throw InputError("qp: residual length does not match W rows");
  if (lower.size() != n || upper.size() != n) throw InputError("qp: bounds length does not match W columns");
  if (regularization.size() != 0 && regularization.size() != n)
    throw InputError("qp: regularization length does not match W columns");
  for (int i = 0; i < n; ++i) {
    if (!(lower(i) <= upper(i))) throw InputError("qp: lower bound exceeds upper bound for variable " + std::to_string(i));
    if (regularization.size() && !(regularization(i) >= 0.0)) throw InputError("qp: negative regularization");
  }
  std::vector<char> seen(n, 0);
  for (const auto& [i, v] : pins) {
    if (i < 0 || i >= n) throw InputError("qp: pin index " + std::to_string(i) + " out of range");
    if (seen[i]) throw InputError("qp: variable " + std::to_string(i) + " pinned twice");
    seen[i] = 1;
    if (!(v >= lower(i) && v <= upper(i)))
      throw InputError("qp: pin value for variable " + std::to_string(i) + " lies outside its bounds");
  }
}

VecX default_regularization(const MatX& W, double weight) { return weight * W.colwise().squaredNorm().transpose(); }

double qp_objective(const QpProblem& p, const VecX& x) {
  double obj = (p.W * x - p.r).squaredNorm();
  if (p.regularization.size()) obj += (p.regularization.array() * x.array().square()).sum();
  return obj;
}

namespace {

// Solves Q_FF y_F = rhs_F; falls back to a minimum-norm solve when Q_FF is
// only semidefinite.
VecX solve_free(const MatX& q, const VecX& rhs, const std::vector<int>& free) {
  const int m = static_cast<int>(free.size());
  MatX a(m, m);
  VecX b(m);
  for (int i = 0; i < m; ++i) {
    b(i) = rhs(free[i]);
    for (int j = 0; j < m; ++j) a(i, j) = q(free[i], free[j]);
  }
  Eigen::LLT<MatX> llt(a);
  if (llt.info() == Eigen::Success) return llt.solve(b);
  return a.completeOrthogonalDecomposition().solve(b);
}

}  // namespace

QpSolution solve_qp(const QpProblem& p, int max_iterations) {
  p.validate();
  const int n = p.size();
  QpSolution sol;
  sol.x = VecX::Zero(n);
  sol.active.assign(n, BoundState::kFree);
  const VecX wtr = p.W.transpose() * p.r;
  sol.scale = wtr.norm();
  if (n == 0) {
    sol.converged = true;
    sol.objective = p.r.squaredNorm();
    return sol;
  }

  // Jacobi scaling x = D y.
  MatX q = p.W.transpose() * p.W;
  if (p.regularization.size()) q.diagonal() += p.regularization;
  VecX d(n);
  for (int i = 0; i < n; ++i) d(i) = q(i, i) > 0.0 ? 1.0 / std::sqrt(q(i, i)) : 1.0;
  const MatX qs = d.asDiagonal() * q * d.asDiagonal();
  const VecX cs = d.asDiagonal() * wtr;
  const VecX lo = p.lower.cwiseQuotient(d), hi = p.upper.cwiseQuotient(d);

  std::vector<BoundState> state(n, BoundState::kFree);
  VecX y = VecX::Zero(n);
  for (const auto& [i, v] : p.pins) {
    state[i] = BoundState::kPinned;
    y(i) = v / d(i);
  }
  // Feasible start: zero clamped into the box, at-bound variables active.
  for (int i = 0; i < n; ++i) {
    if (state[i] == BoundState::kPinned) continue;
    if (lo(i) >= 0.0) {
      y(i) = lo(i);
      state[i] = BoundState::kLower;
    } else if (hi(i) <= 0.0) {
      y(i) = hi(i);
      state[i] = BoundState::kUpper;
    }
    if (lo(i) == hi(i)) state[i] = BoundState::kLower;
  }

  if (max_iterations <= 0) max_iterations = 50 * n + 100;
  const double tol = 1e-13 * std::max(1.0, cs.cwiseAbs().maxCoeff());
  int it = 0;
  for (; it < max_iterations; ++it) {
    std::vector<int> free;
    for (int i = 0; i < n; ++i)
      if (state[i] == BoundState::kFree) free.push_back(i);

    // Candidate optimum over the free variables with the rest held fixed.
    VecX rhs = cs;
    for (int j = 0; j < n; ++j)
      if (state[j] != BoundState::kFree) rhs -= qs.col(j) * y(j);
    VecX target = y;
    if (!free.empty()) {
      const VecX yf = solve_free(qs, rhs, free);
      for (std::size_t k = 0; k < free.size(); ++k) target(free[k]) = yf(k);
    }

    // Longest feasible step toward the candidate.
    double step = 1.0;
    int blocking = -1;
    for (int i : free) {
      const double delta = target(i) - y(i);
      if (delta < 0.0 && target(i) < lo(i)) {
        const double a = (lo(i) - y(i)) / delta;
        if (a < step) step = a, blocking = i;
      } else if (delta > 0.0 && target(i) > hi(i)) {
        const double a = (hi(i) - y(i)) / delta;
        if (a < step) step = a, blocking = i;
      }
    }
    step = std::max(step, 0.0);
    for (int i : free) y(i) += step * (target(i) - y(i));
    if (blocking >= 0) {
      const bool at_lower = target(blocking) < lo(blocking);
      y(blocking) = at_lower ? lo(blocking) : hi(blocking);
      state[blocking] = at_lower ? BoundState::kLower : BoundState::kUpper;
      continue;
    }

    // At the subspace optimum: release the bound with the worst multiplier.
    const VecX g = qs * y - cs;
    int release = -1;
    double worst = tol;
    for (int i = 0; i < n; ++i) {
      if (lo(i) == hi(i)) continue;
      const double push = state[i] == BoundState::kLower ? -g(i) : state[i] == BoundState::kUpper ? g(i) : 0.0;
      if (push > worst) worst = push, release = i;
    }
    if (release < 0) {
      sol.converged = true;
      break;
    }
    state[release] = BoundState::kFree;
  }

  sol.iterations = it + (sol.converged ? 1 : 0);
  sol.x = d.asDiagonal() * y;
  for (int i = 0; i < n; ++i) {
    if (state[i] == BoundState::kLower) sol.x(i) = p.lower(i);
    else if (state[i] == BoundState::kUpper) sol.x(i) = p.upper(i);
    else sol.x(i) = std::clamp(sol.x(i), p.lower(i), p.upper(i));
  }
  for (const auto& [i, v] : p.pins) sol.x(i) = v;
  sol.active = state;
  sol.objective = qp_objective(p, sol.x);

  const VecX g = q * sol.x - wtr;
  for (int i = 0; i < n; ++i) {
    sol.primal_infeasibility =
        std::max({sol.primal_infeasibility, p.lower(i) - sol.x(i), sol.x(i) - p.upper(i)});
    if (state[i] == BoundState::kPinned) continue;
    double pg = g(i);
    if (sol.x(i) <= p.lower(i)) pg = std::min(pg, 0.0);
    if (sol.x(i) >= p.upper(i)) pg = std::max(pg, 0.0);
    sol.stationarity = std::max(sol.stationarity, std::abs(pg));
    const double slack_lo = sol.x(i) - p.lower(i), slack_hi = p.upper(i) - sol.x(i);
    if (g(i) > 0.0) sol.complementarity += g(i) * slack_lo;
    if (g(i) < 0.0) sol.complementarity += -g(i) * slack_hi;
  }
  return sol;
}

}  // namespace softarm
