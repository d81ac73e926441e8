#include "softarm/scene.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace softarm {

using nlohmann::json;

std::string to_string(CalibrationMode mode) {
  switch (mode) {
    case CalibrationMode::kPressureMap:
      return "pressure-map";
    case CalibrationMode::kForceScale:
      return "force-scale";
    default:
      return "none";
  }
}

CalibrationMode calibration_mode_from_string(const std::string& name) {
  if (name == "none") return CalibrationMode::kNone;
  if (name == "pressure-map") return CalibrationMode::kPressureMap;
  if (name == "force-scale") return CalibrationMode::kForceScale;
  throw InputError("unknown calibration mode '" + name + "'");
}

std::vector<ForceActuatorConfig> SceneConfig::default_forces() {
  // Local x/y pushes at both rigid sections; only the tip pair is active.
  return {
      {"e1x", 0, Vec3::UnitX(), 5.0, false, std::nullopt},
      {"e1y", 0, Vec3::UnitY(), 5.0, false, std::nullopt},
      {"e2x", 1, Vec3::UnitX(), 5.0, true, std::nullopt},
      {"e2y", 1, Vec3::UnitY(), 5.0, true, std::nullopt},
  };
}

void SceneConfig::validate() const {
  if (!mesh_files) arm.validate();
  soft.validate();
  rigid.validate();
  if (!(p_max > 0.0)) throw InputError("p_max must be positive");
  if (fibers && !(fiber_stiffness > 0.0)) throw InputError("fiber stiffness must be positive");
  if (mask_count(mask) == 0) throw InputError("axis mask is empty");
  if (!(solver.residual_tolerance > 0.0) || !(solver.inverse_tolerance_deg > 0.0))
    throw InputError("solver tolerances must be positive");
  if (solver.max_halvings < 0 || solver.max_equilibrium_steps < 1 || solver.inverse_max_iterations < 1)
    throw InputError("solver iteration limits must be positive");
  if (!(solver.regularization >= 0.0)) throw InputError("regularization must be non-negative");
  if (!(calibration.alpha > 0.0)) throw InputError("calibration alpha must be positive");
  for (double v : calibration.nu)
    if (!(v > 0.0)) throw InputError("calibration nu factors must be positive");
  for (const auto& f : forces) {
    if (!(f.direction.norm() > 0.0)) throw InputError("force actuator '" + f.label + "' has a zero direction");
    if (!(f.f_max >= 0.0)) throw InputError("force actuator '" + f.label + "' has a negative bound");
  }
}

// --- JSON -----------------------------------------------------------------

namespace {

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw InputError("expected a 3-vector, got " + j.dump());
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

json material_json(const Material& m) {
  return {{"young_modulus", m.young_modulus}, {"poisson_ratio", m.poisson_ratio}, {"density", m.density}};
}

Material material_from(const json& j, Material m) {
  m.young_modulus = j.value("young_modulus", m.young_modulus);
  m.poisson_ratio = j.value("poisson_ratio", m.poisson_ratio);
  m.density = j.value("density", m.density);
  return m;
}

json mask_json(const AxisMask& mask) {
  json out = json::array();
  const char* names[] = {"x", "y", "z"};
  for (int i = 0; i < 3; ++i)
    if (mask[i]) out.push_back(names[i]);
  return out;
}

AxisMask mask_from(const json& j) {
  AxisMask mask{false, false, false};
  for (const auto& a : j) {
    const std::string s = a.get<std::string>();
    if (s == "x") mask[0] = true;
    else if (s == "y") mask[1] = true;
    else if (s == "z") mask[2] = true;
    else throw InputError("unknown axis '" + s + "' in axis_mask");
  }
  return mask;
}

std::vector<Vec3> points_from(const json& j) {
  std::vector<Vec3> out;
  for (const auto& p : j) out.push_back(vec_from(p));
  return out;
}

json points_json(const std::vector<Vec3>& pts) {
  json out = json::array();
  for (const auto& p : pts) out.push_back(vec_json(p));
  return out;
}

}  // namespace

void to_json(json& j, const SceneConfig& c) {
  j = json::object();
  j["schema_version"] = 1;
  if (c.mesh_files) {
    const MeshFiles& m = *c.mesh_files;
    json loops = json::array();
    for (const auto& l : m.fiber_loops) loops.push_back(points_json(l));
    j["mesh"] = {{"tet_mesh", m.tet_mesh},
                 {"cavities", m.cavities},
                 {"chamber_labels", m.chamber_labels},
                 {"chamber_segment", m.chamber_segment},
                 {"effectors", m.effector_node_sets},
                 {"effector_points", points_json(m.effector_points)},
                 {"fiber_loops", loops}};
  } else {
    j["arm"] = c.arm;
  }
  j["materials"] = {{"soft", material_json(c.soft)}, {"rigid", material_json(c.rigid)}};
  j["gravity"] = vec_json(c.gravity);
  j["p_max"] = c.p_max;
  j["fibers"] = {{"enabled", c.fibers}, {"stiffness", c.fiber_stiffness}};
  j["axis_mask"] = mask_json(c.mask);
  json forces = json::array();
  for (const auto& f : c.forces) {
    json fj = {{"label", f.label},
               {"effector", f.effector},
               {"direction", vec_json(f.direction)},
               {"f_max", f.f_max},
               {"active", f.active}};
    if (f.point) fj["point"] = vec_json(*f.point);
    forces.push_back(fj);
  }
  j["forces"] = forces;
  j["solver"] = {{"residual_tolerance", c.solver.residual_tolerance},
                 {"max_halvings", c.solver.max_halvings},
                 {"max_equilibrium_steps", c.solver.max_equilibrium_steps},
                 {"inverse_tolerance_deg", c.solver.inverse_tolerance_deg},
                 {"inverse_max_iterations", c.solver.inverse_max_iterations},
                 {"regularization", c.solver.regularization}};
  j["calibration"] = {{"alpha", c.calibration.alpha},
                      {"nu", c.calibration.nu},
                      {"mode", to_string(c.calibration.mode)}};
}

void from_json(const json& j, SceneConfig& c) {
  try {
    if (j.contains("schema_version") && j.at("schema_version").get<int>() != 1)
      throw InputError("unsupported scene schema_version " + j.at("schema_version").dump());
    if (j.contains("arm")) c.arm = j.at("arm").get<ArmParams>();
    if (j.contains("mesh")) {
      const json& m = j.at("mesh");
      MeshFiles files;
      files.tet_mesh = m.at("tet_mesh").get<std::string>();
      files.cavities = m.value("cavities", std::vector<std::string>{});
      files.chamber_labels = m.value("chamber_labels", std::vector<std::string>{});
      files.chamber_segment = m.value("chamber_segment", std::vector<int>{});
      files.effector_node_sets = m.value("effectors", std::vector<std::vector<int>>{});
      if (m.contains("effector_points")) files.effector_points = points_from(m.at("effector_points"));
      if (m.contains("fiber_loops"))
        for (const auto& l : m.at("fiber_loops")) files.fiber_loops.push_back(points_from(l));
      c.mesh_files = files;
    }
    if (j.contains("materials")) {
      const json& m = j.at("materials");
      if (m.contains("soft")) c.soft = material_from(m.at("soft"), c.soft);
      if (m.contains("rigid")) c.rigid = material_from(m.at("rigid"), c.rigid);
    }
    if (j.contains("gravity")) c.gravity = vec_from(j.at("gravity"));
    c.p_max = j.value("p_max", c.p_max);
    if (j.contains("fibers")) {
      c.fibers = j.at("fibers").value("enabled", c.fibers);
      c.fiber_stiffness = j.at("fibers").value("stiffness", c.fiber_stiffness);
    }
    if (j.contains("axis_mask")) c.mask = mask_from(j.at("axis_mask"));
    if (j.contains("forces")) {
      c.forces.clear();
      for (const auto& f : j.at("forces")) {
        ForceActuatorConfig a;
        a.label = f.value("label", std::string("f") + std::to_string(c.forces.size() + 1));
        a.effector = f.value("effector", a.effector);
        if (f.contains("direction")) a.direction = vec_from(f.at("direction"));
        a.f_max = f.value("f_max", a.f_max);
        a.active = f.value("active", a.active);
        if (f.contains("point")) a.point = vec_from(f.at("point"));
        c.forces.push_back(a);
      }
    }
    if (j.contains("solver")) {
      const json& s = j.at("solver");
      c.solver.residual_tolerance = s.value("residual_tolerance", c.solver.residual_tolerance);
      c.solver.max_halvings = s.value("max_halvings", c.solver.max_halvings);
      c.solver.max_equilibrium_steps = s.value("max_equilibrium_steps", c.solver.max_equilibrium_steps);
      c.solver.inverse_tolerance_deg = s.value("inverse_tolerance_deg", c.solver.inverse_tolerance_deg);
      c.solver.inverse_max_iterations = s.value("inverse_max_iterations", c.solver.inverse_max_iterations);
      c.solver.regularization = s.value("regularization", c.solver.regularization);
    }
    if (j.contains("calibration")) {
      const json& k = j.at("calibration");
      c.calibration.alpha = k.value("alpha", c.calibration.alpha);
      c.calibration.nu = k.value("nu", c.calibration.nu);
      c.calibration.mode = calibration_mode_from_string(k.value("mode", std::string("none")));
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("scene config: ") + e.what());
  }
}

SceneConfig load_scene_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open scene config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputError("scene config '" + path + "': " + e.what());
  }
  SceneConfig c = j.get<SceneConfig>();
  c.base_dir = std::filesystem::path(path).parent_path().string();
  if (c.base_dir.empty()) c.base_dir = ".";
  c.validate();
  return c;
}

// --- layout -----------------------------------------------------------------

namespace {

std::string read_text(const std::string& base, const std::string& rel) {
  const std::filesystem::path p = std::filesystem::path(rel).is_absolute() ? std::filesystem::path(rel)
                                                                            : std::filesystem::path(base) / rel;
  std::ifstream in(p);
  if (!in) throw InputError("cannot open '" + p.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ArmModel arm_from_files(const SceneConfig& config) {
  const MeshFiles& f = *config.mesh_files;
  ArmModel arm;
  arm.body = load_tet_mesh(read_text(config.base_dir, f.tet_mesh)).mesh;
  for (std::size_t i = 0; i < f.cavities.size(); ++i) {
    arm.cavities.push_back(load_surface_obj(read_text(config.base_dir, f.cavities[i]), arm.body));
    arm.chamber_labels.push_back(i < f.chamber_labels.size() ? f.chamber_labels[i] : "c" + std::to_string(i + 1));
    arm.chamber_segment.push_back(i < f.chamber_segment.size() ? f.chamber_segment[i] : 0);
  }
  arm.effector_node_sets = f.effector_node_sets;
  arm.effector_points = f.effector_points;
  if (arm.effector_points.size() != arm.effector_node_sets.size())
    throw InputError("mesh: effector_points must list one point per effector node set");
  arm.fiber_loops = f.fiber_loops;
  return arm;
}

}  // namespace

std::shared_ptr<const SceneLayout> build_layout(const SceneConfig& config) {
  config.validate();
  ArmModel arm = config.mesh_files ? arm_from_files(config) : generate_arm(config.arm);
  arm.body.validate();
  if (arm.body.fixed_nodes.empty()) throw InputError("scene mesh has no fixed nodes");

  auto layout = std::make_shared<SceneLayout>();
  layout->mesh = std::make_shared<const TetMesh>(std::move(arm.body));
  const TetMesh& mesh = *layout->mesh;

  for (std::size_t i = 0; i < arm.cavities.size(); ++i) {
    if (!arm.cavities[i].is_closed()) throw InputError("cavity " + arm.chamber_labels[i] + " is not closed");
    PressureActuator p;
    p.cavity = arm.cavities[i];
    p.label = arm.chamber_labels[i];
    p.segment = arm.chamber_segment[i];
    p.p_max = config.p_max;
    layout->chambers.push_back(std::move(p));
  }
  for (const auto& set : arm.effector_node_sets)
    layout->effectors.push_back(OrientationEffector::make(mesh, set, config.mask));
  const BarycentricEmbedding points = embed_points(mesh, arm.effector_points);
  layout->effector_points = points.points;
  layout->effector_rest_points = arm.effector_points;

  for (const auto& f : config.forces) {
    if (f.effector < 0 || f.effector >= static_cast<int>(layout->effectors.size()))
      throw InputError("force actuator '" + f.label + "' refers to a missing effector");
    const Embedding at = f.point ? embed_points(mesh, {*f.point}).points[0] : layout->effector_points[f.effector];
    layout->forces.push_back(ForceActuator::make(at, f.direction, f.effector, f.f_max, f.label));
    layout->force_active.push_back(f.active ? 1 : 0);
  }
  if (config.fibers && !arm.fiber_loops.empty())
    layout->fibers = FiberReinforcement::from_loops(mesh, arm.fiber_loops, config.fiber_stiffness);
  layout->outer_surface = boundary_surface(mesh);
  return layout;
}

// --- scene ------------------------------------------------------------------

Scene::Scene(const SceneConfig& config)
    : config_(config),
      layout_(build_layout(config)),
      fem_(layout_->mesh, {config.soft, config.rigid}, config.gravity),
      state_(FemState::at_rest(fem_)),
      dofs_(layout_->mesh->node_count(), layout_->mesh->fixed_nodes),
      gravity_load_(fem_.gravity_load()),
      efforts_(VecX::Zero(chamber_count() + force_count())),
      p_max_(config.p_max),
      tangent_(std::make_unique<TangentSystem>()) {
  CalibrationFactors factors = config.calibration;
  if (factors.nu.empty()) factors.nu.assign(chamber_count(), 1.0);
  set_calibration(factors);
}

Scene::Scene(const Scene& other)
    : config_(other.config_),
      layout_(other.layout_),
      fem_(other.fem_),
      state_(other.state_),
      dofs_(other.dofs_),
      gravity_load_(other.gravity_load_),
      efforts_(other.efforts_),
      p_max_(other.p_max_),
      calibration_(other.calibration_),
      dead_loads_(other.dead_loads_),
      tethers_(other.tethers_),
      forces_stamp_(other.forces_stamp_),
      internal_(other.internal_),
      tangent_(std::make_unique<TangentSystem>()) {}

Scene::~Scene() = default;

void Scene::invalidate() { ++state_.version; }

void Scene::set_efforts(const VecX& efforts) {
  if (efforts.size() != effort_count()) throw InputError("effort vector has wrong length");
  efforts_ = efforts;
}

void Scene::set_pressures(const VecX& simulated) {
  if (simulated.size() != chamber_count()) throw InputError("pressure vector has wrong length");
  efforts_.head(chamber_count()) = simulated;
}

void Scene::set_forces(const VecX& forces) {
  if (forces.size() != force_count()) throw InputError("force vector has wrong length");
  efforts_.tail(force_count()) = forces;
}

VecX Scene::simulated_from_commanded(const VecX& commanded) const {
  if (commanded.size() != chamber_count()) throw InputError("pressure vector has wrong length");
  VecX out(chamber_count());
  for (int i = 0; i < chamber_count(); ++i) out(i) = commanded(i) / calibration_.nu[i];
  return out;
}

VecX Scene::commanded_from_simulated(const VecX& simulated) const {
  VecX out(chamber_count());
  for (int i = 0; i < chamber_count(); ++i) out(i) = simulated(i) * calibration_.nu[i];
  return out;
}

void Scene::set_commanded_pressures(const VecX& commanded) { set_pressures(simulated_from_commanded(commanded)); }

VecX Scene::effort_lower() const {
  VecX lo(effort_count());
  for (int i = 0; i < chamber_count(); ++i) lo(i) = 0.0;
  for (int i = 0; i < force_count(); ++i) lo(chamber_count() + i) = -layout_->forces[i].f_max;
  return lo;
}

VecX Scene::effort_upper() const {
  VecX hi(effort_count());
  for (int i = 0; i < chamber_count(); ++i) hi(i) = p_max_ / calibration_.nu[i];
  for (int i = 0; i < force_count(); ++i) hi(chamber_count() + i) = layout_->forces[i].f_max;
  return hi;
}

void Scene::set_calibration(const CalibrationFactors& factors) {
  if (static_cast<int>(factors.nu.size()) != chamber_count())
    throw InputError("calibration needs one nu factor per chamber");
  for (double v : factors.nu)
    if (!(v > 0.0)) throw InputError("calibration nu factors must be positive");
  fem_.set_modulus_scale(factors.alpha);
  calibration_ = factors;
  invalidate();
}

void Scene::set_pressure_limit(double commanded_p_max) {
  if (!(commanded_p_max > 0.0)) throw InputError("pressure limit must be positive");
  p_max_ = commanded_p_max;
}

void Scene::set_dead_loads(std::vector<DeadLoad> loads) { dead_loads_ = std::move(loads); }

void Scene::set_tethers(std::vector<Spring> tethers) {
  tethers_ = std::move(tethers);
  invalidate();
}

void Scene::set_positions(const VecX& q) { state_.set_positions(q); }

void Scene::reset() {
  state_ = FemState::at_rest(fem_);
  efforts_.setZero();
  dead_loads_.clear();
  tethers_.clear();
  forces_stamp_ = ~std::uint64_t{0};
  tangent_ = std::make_unique<TangentSystem>();
}

Embedding Scene::embed(const Vec3& rest_point) const { return embed_points(mesh(), {rest_point}).points[0]; }

void Scene::evaluate(bool with_stiffness) {
  const bool forces_ok = forces_stamp_ == state_.version;
  const bool tangent_ok = tangent_->factorized() && tangent_->stamp() == state_.version &&
                          tangent_pressures_.size() == chamber_count() && tangent_pressures_ == pressures();
  if (forces_ok && (!with_stiffness || tangent_ok)) return;

  std::vector<Triplet> triplets;
  assemble_elastic(fem_, state_, &internal_, with_stiffness ? &triplets : nullptr);
  add_spring_loads(layout_->fibers.springs, mesh(), state_.q, internal_, with_stiffness ? &triplets : nullptr);
  add_spring_loads(tethers_, mesh(), state_.q, internal_, with_stiffness ? &triplets : nullptr);
  forces_stamp_ = state_.version;
  if (!with_stiffness) return;
  tangent_pressures_ = pressures();
  const std::size_t base = triplets.size();
  if (load_stiffness_)
    for (int i = 0; i < chamber_count(); ++i)
      if (efforts_(i) != 0.0) add_pressure_stiffness(layout_->chambers[i].cavity, state_.q, efforts_(i), triplets);
  tangent_->assemble(triplets, dofs_, state_.version);
  try {
    tangent_->factorize();
  } catch (const SolverError&) {
    if (triplets.size() == base) throw;
    triplets.resize(base);
    tangent_->assemble(triplets, dofs_, state_.version);
    tangent_->factorize();
  }
}

VecX Scene::applied_load() const {
  VecX p = gravity_load_;
  for (int i = 0; i < chamber_count(); ++i)
    if (efforts_(i) != 0.0) p += efforts_(i) * pressure_row(layout_->chambers[i].cavity, state_.q);
  if ((efforts_.tail(force_count()).array() != 0.0).any()) p += force_actuator_load();
  for (const DeadLoad& d : dead_loads_) {
    const auto& tet = mesh().tets[d.point.tet];
    for (int k = 0; k < 4; ++k) p.segment<3>(3 * tet[k]) += d.point.weights[k] * d.force;
  }
  return p;
}

VecX Scene::residual() {
  evaluate(false);
  return internal_ + applied_load();
}

double Scene::residual_norm() { return dofs_.restrict(residual()).norm(); }

double Scene::residual_tolerance() const {
  return config_.solver.residual_tolerance * (dofs_.restrict(applied_load()).norm() + 1e-8);
}

const TangentSystem& Scene::tangent() {
  evaluate(true);
  return *tangent_;
}

VecX Scene::force_actuator_load() const {
  VecX load = VecX::Zero(fem_.dof_count());
  for (int i = 0; i < force_count(); ++i) {
    const double f = efforts_(chamber_count() + i);
    if (f == 0.0) continue;
    const ForceActuator& a = layout_->forces[i];
    const Mat3 r = a.frame >= 0 ? orientation(a.frame) : Mat3::Identity();
    load += f * force_row(a, mesh(), r);
  }
  return load;
}

double Scene::potential_energy() const { return potential_energy(force_actuator_load()); }

double Scene::potential_energy(const VecX& force_load) const {
  const VecX& q = state_.q;
  double e = elastic_energy(fem_, state_) + spring_energy(layout_->fibers.springs, mesh(), q) +
             spring_energy(tethers_, mesh(), q);
  e -= gravity_load_.dot(q - state_.q_rest);
  for (int i = 0; i < chamber_count(); ++i)
    if (efforts_(i) != 0.0) e -= efforts_(i) * layout_->chambers[i].cavity.enclosed_volume(q);
  e -= force_load.dot(q);
  for (const DeadLoad& d : dead_loads_) {
    const auto& tet = mesh().tets[d.point.tet];
    for (int k = 0; k < 4; ++k) e -= d.point.weights[k] * d.force.dot(node_position(q, tet[k]));
  }
  return e;
}

StepReport Scene::static_step() {
  StepReport report;
  const VecX r0 = dofs_.restrict(residual());
  const double n0 = r0.norm();
  const double tol = residual_tolerance();
  report.residual_before = report.residual_after = n0;
  if (n0 <= tol) {
    report.converged = true;
    return report;
  }
  const VecX step = tangent().solve(r0);
  const VecX dq = dofs_.expand(step);
  const double slope = -r0.dot(step);  // d(potential)/ds at s = 0
  const VecX frozen = force_actuator_load();
  const double e0 = potential_energy(frozen);
  const VecX q0 = state_.q;
  double scale = 1.0;
  for (int h = 0; h <= config_.solver.max_halvings; ++h, scale *= 0.5) {
    state_.set_positions(q0 + scale * dq);
    const double n1 = residual_norm();
    const bool descent = slope < 0.0 && potential_energy(frozen) <= e0 + 1e-4 * scale * slope;
    if (descent || n1 < n0) {
      report.residual_after = n1;
      report.step_scale = scale;
      report.converged = n1 <= tol;
      return report;
    }
  }
  state_.set_positions(q0);
  throw ConvergenceError("static step did not reduce the residual after " +
                             std::to_string(config_.solver.max_halvings) + " halvings",
                         n0);
}

EquilibriumReport Scene::solve_equilibrium() {
  EquilibriumReport report;
  for (int s = 0; s < config_.solver.max_equilibrium_steps; ++s) {
    const StepReport step = static_step();
    report.residual = step.residual_after;
    if (step.converged) {
      report.converged = true;
      report.steps = s;
      if (step.residual_before > step.residual_after) report.steps = s + 1;
      report.tolerance = residual_tolerance();
      return report;
    }
    report.steps = s + 1;
  }
  throw ConvergenceError("equilibrium not reached in " + std::to_string(config_.solver.max_equilibrium_steps) +
                             " steps",
                         report.residual);
}

MatX Scene::effort_matrix() const {
  MatX h(fem_.dof_count(), effort_count());
  for (int i = 0; i < chamber_count(); ++i) h.col(i) = pressure_row(layout_->chambers[i].cavity, state_.q);
  for (int i = 0; i < force_count(); ++i) {
    const ForceActuator& a = layout_->forces[i];
    const Mat3 r = a.frame >= 0 ? orientation(a.frame) : Mat3::Identity();
    h.col(chamber_count() + i) = force_row(a, mesh(), r);
  }
  return h;
}

Mat3 Scene::orientation(int effector) const { return frame_orientation(state_.q, layout_->effectors.at(effector)); }

std::vector<Mat3> Scene::orientations() const {
  std::vector<Mat3> out;
  for (int e = 0; e < effector_count(); ++e) out.push_back(orientation(e));
  return out;
}

Vec3 Scene::effector_position(int effector) const {
  const Embedding& e = layout_->effector_points.at(effector);
  Vec3 x = Vec3::Zero();
  for (int k = 0; k < 4; ++k) x += e.weights[k] * node_position(state_.q, mesh().tets[e.tet][k]);
  return x;
}

}  // namespace softarm
