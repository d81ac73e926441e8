#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "softarm/actuators.hpp"
#include "softarm/fem.hpp"
#include "softarm/mesh.hpp"
#include "softarm/observer.hpp"
#include "softarm/types.hpp"

namespace softarm {

struct ForceActuatorConfig {
  std::string label;
  int effector = 1;               // frame and default application point
  Vec3 direction = Vec3::UnitX();  // in the effector's local frame
  double f_max = 5.0;
  bool active = true;
  std::optional<Vec3> point;  // rest position; defaults to the effector point
};

struct SolverSettings {
  double residual_tolerance = 1e-6;  // relative to the applied load norm
  int max_halvings = 8;
  int max_equilibrium_steps = 60;
  double inverse_tolerance_deg = 0.1;
  int inverse_max_iterations = 40;
  double regularization = 1e-8;
};

enum class CalibrationMode { kNone, kPressureMap, kForceScale };
std::string to_string(CalibrationMode mode);
CalibrationMode calibration_mode_from_string(const std::string& name);

struct CalibrationFactors {
  double alpha = 1.0;     // Young's modulus scale
  std::vector<double> nu;  // per chamber; simulated pressure = commanded / nu
  CalibrationMode mode = CalibrationMode::kNone;
};

// Mesh loaded from files instead of the generator. Paths are relative to the
// config file's directory.
struct MeshFiles {
  std::string tet_mesh;
  std::vector<std::string> cavities;
  std::vector<std::string> chamber_labels;
  std::vector<int> chamber_segment;
  std::vector<std::vector<int>> effector_node_sets;
  std::vector<Vec3> effector_points;
  std::vector<std::vector<Vec3>> fiber_loops;
};

struct SceneConfig {
  ArmParams arm;
  std::optional<MeshFiles> mesh_files;
  std::string base_dir = ".";
  Material soft = default_soft_material();
  Material rigid = default_rigid_material();
  Vec3 gravity = Vec3(0.0, 0.0, -9.81);
  double p_max = 65.0e3;
  bool fibers = true;
  double fiber_stiffness = 1.0e4;
  AxisMask mask = kBendingAxes;
  std::vector<ForceActuatorConfig> forces = default_forces();
  SolverSettings solver;
  CalibrationFactors calibration;

  static std::vector<ForceActuatorConfig> default_forces();
  void validate() const;
};

void to_json(nlohmann::json& j, const SceneConfig& c);
void from_json(const nlohmann::json& j, SceneConfig& c);
SceneConfig load_scene_config(const std::string& path);

// Geometry and actuator layout shared by every copy of a scene.
struct SceneLayout {
  std::shared_ptr<const TetMesh> mesh;
  std::vector<PressureActuator> chambers;
  std::vector<OrientationEffector> effectors;
  std::vector<Embedding> effector_points;
  std::vector<Vec3> effector_rest_points;
  std::vector<ForceActuator> forces;
  std::vector<char> force_active;
  FiberReinforcement fibers;
  SurfaceMesh outer_surface;
};

struct DeadLoad {
  Embedding point;
  Vec3 force = Vec3::Zero();  // world frame, N
};

struct StepReport {
  double residual_before = 0.0;
  double residual_after = 0.0;
  double step_scale = 1.0;  // 2^-halvings
  bool converged = false;   // residual_after below tolerance
};

struct EquilibriumReport {
  int steps = 0;
  double residual = 0.0;
  double tolerance = 0.0;
  bool converged = false;
};

// A simulated arm: FEM model, current configuration, actuation efforts and
// extra loads. Efforts are ordered pressures first (simulated Pa), then
// forces (N). Copies share the immutable layout and get their own state.
class Scene {
 public:
  explicit Scene(const SceneConfig& config);
  Scene(const Scene& other);
  Scene& operator=(const Scene&) = delete;
  ~Scene();

  const SceneConfig& config() const { return config_; }
  const SceneLayout& layout() const { return *layout_; }
  const TetMesh& mesh() const { return *layout_->mesh; }
  const FemModel& fem() const { return fem_; }
  const FemState& state() const { return state_; }
  const DofMap& dofs() const { return dofs_; }

  int chamber_count() const { return static_cast<int>(layout_->chambers.size()); }
  int force_count() const { return static_cast<int>(layout_->forces.size()); }
  int effort_count() const { return chamber_count() + force_count(); }
  int effector_count() const { return static_cast<int>(layout_->effectors.size()); }

  const VecX& efforts() const { return efforts_; }
  void set_efforts(const VecX& efforts);
  VecX pressures() const { return efforts_.head(chamber_count()); }
  VecX forces() const { return efforts_.tail(force_count()); }
  void set_pressures(const VecX& simulated);
  void set_forces(const VecX& forces);
  // Commanded (real) pressures <-> simulated ones through nu.
  VecX simulated_from_commanded(const VecX& commanded) const;
  VecX commanded_from_simulated(const VecX& simulated) const;
  void set_commanded_pressures(const VecX& commanded);

  // Effort bounds: pressures [0, p_max / nu] (p_max in commanded units),
  // forces [-f_max, f_max].
  VecX effort_lower() const;
  VecX effort_upper() const;
  bool force_active(int i) const { return layout_->force_active[i] != 0; }

  const CalibrationFactors& calibration() const { return calibration_; }
  void set_calibration(const CalibrationFactors& factors);
  // Raises every pressure bound; used when estimating on uncalibrated models.
  void set_pressure_limit(double commanded_p_max);
  double pressure_limit() const { return p_max_; }

  void set_dead_loads(std::vector<DeadLoad> loads);
  const std::vector<DeadLoad>& dead_loads() const { return dead_loads_; }
  void set_tethers(std::vector<Spring> tethers);
  const std::vector<Spring>& tethers() const { return tethers_; }

  // Positions; resets rotations' history only through the FEM state.
  void set_positions(const VecX& q);
  void reset();

  // Applied loads (gravity, efforts, dead loads) and the equilibrium residual
  // P + F(q) + H^T lambda, both over all dofs.
  VecX applied_load() const;
  VecX residual();
  double residual_norm();
  double residual_tolerance() const;

  // Tangent stiffness at the current q (elastic + fibers + tethers +
  // pressure load stiffness), assembled and factorized on demand and cached
  // until q or the pressures change. If the pressure term makes the matrix
  // indefinite it is dropped for that assembly.
  const TangentSystem& tangent();
  std::uint64_t stamp() const { return state_.version; }

  // Total potential of the conservative loads: elastic and spring energy
  // minus the work of gravity, dead loads and cavity pressures. Force
  // actuators enter with their current direction frozen.
  double potential_energy() const;

  // One Newton step with step halving. A trial is accepted when it
  // sufficiently decreases the potential or decreases the residual norm.
  StepReport static_step();
  EquilibriumReport solve_equilibrium();

  // H^T as columns over all dofs, at the current q.
  MatX effort_matrix() const;

  std::vector<Mat3> orientations() const;
  Mat3 orientation(int effector) const;
  Vec3 effector_position(int effector) const;
  Vec3 tip_position() const { return effector_position(effector_count() - 1); }
  Embedding embed(const Vec3& rest_point) const;

 private:
  void invalidate();
  VecX force_actuator_load() const;
  double potential_energy(const VecX& force_load) const;
  void evaluate(bool with_stiffness);

  SceneConfig config_;
  std::shared_ptr<const SceneLayout> layout_;
  FemModel fem_;
  FemState state_;
  DofMap dofs_;
  VecX gravity_load_;
  VecX efforts_;
  double p_max_;
  CalibrationFactors calibration_;
  std::vector<DeadLoad> dead_loads_;
  std::vector<Spring> tethers_;

  // Cached evaluation at state_.version.
  std::uint64_t forces_stamp_ = ~std::uint64_t{0};
  VecX internal_;  // elastic + springs
  VecX tangent_pressures_;
  bool load_stiffness_ = true;
  std::unique_ptr<TangentSystem> tangent_;
};

std::shared_ptr<const SceneLayout> build_layout(const SceneConfig& config);

}  // namespace softarm
