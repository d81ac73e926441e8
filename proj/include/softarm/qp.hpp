#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "softarm/types.hpp"

namespace softarm {

// minimize |W x - r|^2 + sum_i reg_i x_i^2
// subject to lower <= x <= upper and x_i = v for every pin (i, v).
struct QpProblem {
  MatX W;
  VecX r;
  VecX lower;
  VecX upper;
  std::vector<std::pair<int, double>> pins;
  VecX regularization;  // per variable; empty means none

  int size() const { return static_cast<int>(W.cols()); }
  // Throws InputError on shape mismatches, lower > upper, or pins that are
  // out of range, duplicated or outside their bounds.
  void validate() const;
};

enum class BoundState : std::uint8_t { kFree, kLower, kUpper, kPinned };

struct QpSolution {
  VecX x;
  double objective = 0.0;
  bool converged = false;
  int iterations = 0;
  // KKT diagnostics, all in units of the half gradient (W^T W + reg) x - W^T r.
  double primal_infeasibility = 0.0;
  double stationarity = 0.0;     // infinity norm of the projected gradient
  double complementarity = 0.0;  // sum |multiplier * slack|
  double scale = 0.0;            // |W^T r|, reference for the above
  std::vector<BoundState> active;
};

// 1e-8 * diag(W^T W): ties broken per column, invariant to effort units.
VecX default_regularization(const MatX& W, double weight = 1e-8);

// Primal active-set method on the Jacobi-scaled problem. Pins are eliminated
// and passed through unchanged. max_iterations <= 0 picks 50 n + 100.
QpSolution solve_qp(const QpProblem& problem, int max_iterations = 0);

double qp_objective(const QpProblem& problem, const VecX& x);

}  // namespace softarm
