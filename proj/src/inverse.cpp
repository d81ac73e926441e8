#include "softarm/inverse.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace softarm {

namespace {

constexpr double kDeg = 180.0 / std::numbers::pi;

}  // namespace

MatX assemble_W(const TangentSystem& system, std::uint64_t stamp, const MatX& effort_columns_free,
                const MatX& observation_free) {
  if (observation_free.cols() != effort_columns_free.rows())
    throw InputError("observation matrix width does not match the effort columns");
  const MatX compliance = solve_columns(system, effort_columns_free, stamp);
  return observation_free * compliance;
}

MatX observation_matrix(const Scene& scene, std::vector<int>* row_effector, std::vector<int>* row_axis) {
  const DofMap& dofs = scene.dofs();
  int rows = 0;
  for (const auto& e : scene.layout().effectors) rows += mask_count(e.mask);
  MatX o = MatX::Zero(rows, dofs.free_count());
  int row = 0;
  for (int k = 0; k < scene.effector_count(); ++k) {
    const OrientationEffector& e = scene.layout().effectors[k];
    const Mat3 rt = frame_orientation(scene.state().q, e).transpose();
    const Eigen::Matrix3Xd local = rt * orientation_jacobian(scene.state().q, e);
    for (int axis = 0; axis < 3; ++axis) {
      if (!e.mask[axis]) continue;
      for (std::size_t j = 0; j < e.nodes.size(); ++j)
        for (int c = 0; c < 3; ++c) {
          const int f = dofs.free_index(3 * e.nodes[j] + c);
          if (f >= 0) o(row, f) += local(axis, 3 * j + c);
        }
      if (row_effector) row_effector->push_back(k);
      if (row_axis) row_axis->push_back(axis);
      ++row;
    }
  }
  return o;
}

SensitivityMatrix sensitivity(Scene& scene) {
  SensitivityMatrix s;
  const TangentSystem& k = scene.tangent();
  const MatX h = scene.dofs().restrict_rows(scene.effort_matrix());
  const MatX o = observation_matrix(scene, &s.row_effector, &s.row_axis);
  s.W = assemble_W(k, scene.stamp(), h, o);
  return s;
}

VecX orientation_residual(const Scene& scene, const std::vector<Mat3>& targets) {
  if (static_cast<int>(targets.size()) != scene.effector_count())
    throw InputError("expected one target orientation per effector");
  std::vector<double> out;
  for (int k = 0; k < scene.effector_count(); ++k) {
    const AxisMask& mask = scene.layout().effectors[k].mask;
    const Vec3 d = local_residual(targets[k], scene.orientation(k), mask);
    for (int axis = 0; axis < 3; ++axis)
      if (mask[axis]) out.push_back(d(axis));
  }
  return Eigen::Map<VecX>(out.data(), static_cast<Eigen::Index>(out.size()));
}

double max_residual_deg(const Scene& scene, const std::vector<Mat3>& targets) {
  double worst = 0.0;
  for (int k = 0; k < scene.effector_count(); ++k)
    worst = std::max(worst, local_residual(targets[k], scene.orientation(k), scene.layout().effectors[k].mask).norm());
  return worst * kDeg;
}

std::vector<char> default_free_mask(const Scene& scene) {
  std::vector<char> free(scene.effort_count(), 1);
  for (int i = 0; i < scene.force_count(); ++i) free[scene.chamber_count() + i] = scene.force_active(i) ? 1 : 0;
  return free;
}

std::vector<char> pressure_only_mask(const Scene& scene) {
  std::vector<char> free(scene.effort_count(), 0);
  std::fill(free.begin(), free.begin() + scene.chamber_count(), 1);
  return free;
}

std::vector<char> force_only_mask(const Scene& scene) {
  std::vector<char> free(scene.effort_count(), 0);
  for (int i = 0; i < scene.force_count(); ++i) free[scene.chamber_count() + i] = scene.force_active(i) ? 1 : 0;
  return free;
}

InverseResult inverse_iterate(Scene& scene, const std::vector<Mat3>& targets, const InverseOptions& options) {
  const int m = scene.effort_count();
  std::vector<char> free = options.free.empty() ? default_free_mask(scene) : options.free;
  if (static_cast<int>(free.size()) != m) throw InputError("free mask length does not match the effort count");
  const double tol = options.tolerance_deg > 0.0 ? options.tolerance_deg : scene.config().solver.inverse_tolerance_deg;
  const int max_it = options.max_iterations > 0 ? options.max_iterations : scene.config().solver.inverse_max_iterations;
  const VecX lower = scene.effort_lower(), upper = scene.effort_upper();

  VecX lambda = scene.efforts();
  for (const auto& [i, v] : options.pins) {
    if (i < 0 || i >= m) throw InputError("pin index out of range");
    if (!(v >= lower(i) && v <= upper(i)))
      throw InputError("pinned effort " + std::to_string(i) + " lies outside its bounds");
    lambda(i) = v;
    free[i] = 0;
  }
  for (int i = 0; i < m; ++i)
    if (free[i]) lambda(i) = std::clamp(lambda(i), lower(i), upper(i));
  scene.set_efforts(lambda);
  scene.solve_equilibrium();

  InverseResult result;
  VecX r = orientation_residual(scene, targets);
  double norm = r.norm() * kDeg;
  result.history_deg.push_back(norm);
  int increases = 0;
  bool at_bound = false;

  for (int it = 0; it < max_it; ++it) {
    if (max_residual_deg(scene, targets) < tol) {
      result.converged = true;
      break;
    }
    const SensitivityMatrix s = sensitivity(scene);
    QpProblem qp;
    qp.W = s.W;
    qp.r = r;
    qp.lower = lower - lambda;
    qp.upper = upper - lambda;
    for (int i = 0; i < m; ++i) {
      qp.lower(i) = std::min(qp.lower(i), 0.0);
      qp.upper(i) = std::max(qp.upper(i), 0.0);
      if (!free[i]) qp.pins.emplace_back(i, 0.0);
    }
    qp.regularization = default_regularization(qp.W, scene.config().solver.regularization);
    const QpSolution sol = solve_qp(qp);
    at_bound = false;
    for (int i = 0; i < m; ++i)
      if (free[i] && (sol.active[i] == BoundState::kLower || sol.active[i] == BoundState::kUpper) &&
          lower(i) != upper(i))
        at_bound = true;

    const VecX q0 = scene.state().q;
    const VecX step = sol.x;
    if (step.cwiseAbs().maxCoeff() <= 1e-14 * std::max(1.0, upper.cwiseAbs().maxCoeff())) {
      result.stalled = true;
      ++result.iterations;
      break;
    }
    double scale = 1.0;
    double new_norm = norm;
    VecX new_r = r;
    for (int h = 0; h <= options.max_halvings; ++h, scale *= 0.5) {
      VecX trial = lambda + scale * step;
      for (int i = 0; i < m; ++i)
        if (free[i]) trial(i) = std::clamp(trial(i), lower(i), upper(i));
      scene.set_positions(q0);
      scene.set_efforts(trial);
      bool solved = true;
      try {
        scene.solve_equilibrium();
      } catch (const ConvergenceError&) {
        solved = false;
      }
      if (solved) {
        new_r = orientation_residual(scene, targets);
        new_norm = new_r.norm() * kDeg;
        if (new_norm <= norm || h == options.max_halvings) {
          lambda = trial;
          break;
        }
      } else if (h == options.max_halvings) {
        scene.set_positions(q0);
        scene.set_efforts(lambda);
        scene.solve_equilibrium();
        new_r = r;
        new_norm = norm;
      }
    }
    ++result.iterations;
    increases = new_norm > norm ? increases + 1 : 0;
    r = new_r;
    norm = new_norm;
    result.history_deg.push_back(norm);
    if (increases >= 3)
      throw InverseDivergenceError("inverse solve diverged: residual grew for 3 consecutive iterations",
                                   result.history_deg);
    const int n = static_cast<int>(result.history_deg.size());
    if (n > options.stall_window) {
      const double before = result.history_deg[n - 1 - options.stall_window];
      if (before - norm < options.stall_decrease * before && max_residual_deg(scene, targets) >= tol) {
        result.stalled = true;
        break;
      }
    }
  }
  if (!result.converged && max_residual_deg(scene, targets) < tol) result.converged = true;
  result.efforts = scene.efforts();
  result.residual_deg = max_residual_deg(scene, targets);
  result.saturated = !result.converged && at_bound;
  return result;
}

}  // namespace softarm
