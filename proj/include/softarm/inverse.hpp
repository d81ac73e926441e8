#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "softarm/qp.hpp"
#include "softarm/scene.hpp"
#include "softarm/types.hpp"

namespace softarm {

// W = O K^-1 H^T, where O maps free dofs to the observed (masked, local)
// rotation components of every effector.
struct SensitivityMatrix {
  MatX W;
  std::vector<int> row_effector;
  std::vector<int> row_axis;
};

// Low-level form: one solve per effort column against an existing
// factorization. Throws SolverError if `system` is stale for `stamp`.
MatX assemble_W(const TangentSystem& system, std::uint64_t stamp, const MatX& effort_columns_free,
                const MatX& observation_free);

// Observation rows over free dofs at the scene's current configuration.
MatX observation_matrix(const Scene& scene, std::vector<int>* row_effector = nullptr,
                        std::vector<int>* row_axis = nullptr);

SensitivityMatrix sensitivity(Scene& scene);

// Stacked masked residuals log(R_sim^T R_target) over effectors.
VecX orientation_residual(const Scene& scene, const std::vector<Mat3>& targets);
// Largest per-effector masked residual angle, in degrees.
double max_residual_deg(const Scene& scene, const std::vector<Mat3>& targets);

struct InverseOptions {
  // Efforts the solver may change; others stay at their pinned or current
  // values. Empty selects every chamber plus the active force actuators.
  std::vector<char> free;
  std::vector<std::pair<int, double>> pins;  // simulated units
  double tolerance_deg = -1.0;              // <= 0: scene solver setting
  int max_iterations = -1;                   // <= 0: scene solver setting
  int max_halvings = 8;
  int stall_window = 5;
  double stall_decrease = 1e-3;
};

struct InverseResult {
  VecX efforts;
  std::vector<double> history_deg;  // residual norm before each iteration and at the end
  double residual_deg = 0.0;        // largest per-effector residual at the end
  int iterations = 0;
  bool converged = false;
  bool stalled = false;
  bool saturated = false;  // stopped with a free effort held at a bound
};

class InverseDivergenceError : public ConvergenceError {
 public:
  InverseDivergenceError(const std::string& what, std::vector<double> history)
      : ConvergenceError(what, history.empty() ? 0.0 : history.back()), history_(std::move(history)) {}
  const std::vector<double>& history() const { return history_; }

 private:
  std::vector<double> history_;
};

// Finds efforts whose equilibrium reproduces the target orientations
// (world rotations, one per effector). Leaves the scene at the result.
InverseResult inverse_iterate(Scene& scene, const std::vector<Mat3>& targets, const InverseOptions& options = {});

// Default free mask: all chambers and active force actuators.
std::vector<char> default_free_mask(const Scene& scene);
std::vector<char> pressure_only_mask(const Scene& scene);
std::vector<char> force_only_mask(const Scene& scene);

}  // namespace softarm
