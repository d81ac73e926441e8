#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Geometry>

#include "json.hpp"

#include "softarm/inverse.hpp"
#include "softarm/scene.hpp"

namespace softarm {

// One logged sample: commanded chamber pressures, rectified segment
// orientations and an optional 1-axis gauge force.
struct SensorFrame {
  double t = 0.0;
  VecX pressures = VecX::Zero(6);  // commanded, Pa
  std::vector<Eigen::Quaterniond> orientations{Eigen::Quaterniond::Identity(), Eigen::Quaterniond::Identity()};
  std::optional<double> force;  // N

  std::vector<Mat3> rotations() const;
};

// Column layout of the frame CSV.
inline constexpr std::string_view kFrameCsvHeader =
    "t,p1,p2,p3,p4,p5,p6,qBI_w,qBI_x,qBI_y,qBI_z,qIT_w,qIT_x,qIT_y,qIT_z,f_meas";

std::string write_frames_csv(const std::vector<SensorFrame>& frames);

struct RowError {
  int line = 0;
  std::string message;
};

struct ImportResult {
  std::vector<SensorFrame> frames;
  std::vector<RowError> rejected;
};

// Parses a frame CSV. A bad header throws ParseError; bad rows (field
// count, numbers, pressures outside [0, 1.1 p_max], quaternion norm off by
// more than 1e-3, non-increasing time) are collected in `rejected`.
ImportResult import_log(std::string_view csv, double p_max = 65.0e3);
ImportResult import_log_file(const std::string& path, double p_max = 65.0e3);

std::string format_double(double v);

enum class Protocol { kHold, kSweep, kRandom, kForceRamp, kTetheredRamp };
std::string to_string(Protocol p);

struct ScenarioSpec {
  Protocol protocol = Protocol::kHold;
  std::uint64_t seed = 1;
  double dt = 0.5;  // s between frames
  // Twin deviations from the nominal model.
  double twin_alpha = 1.0;
  std::vector<double> twin_nu;  // empty: all ones
  double noise_deg = 0.0;       // isotropic rotation-vector noise, per axis

  // hold
  int frames = 5;
  VecX pressures = VecX::Zero(6);  // commanded; also the base for ramps
  // sweep
  double sweep_step = 5.0e3;
  int sweep_levels = 14;
  std::vector<int> sweep_chambers{0, 1, 2, 3, 4, 5};
  // random actuation
  int trials = 20;
  int active_per_segment = 2;
  double p_low = 0.0;
  double p_high = 65.0e3;
  // force ramp at the tip
  double force_max = 0.66;
  int force_steps = 12;
  Vec3 force_direction = -Vec3::UnitX();
  // tethered pressure ramp
  std::vector<int> tether_chambers{0, 3};
  double tether_pressure = 65.0e3;
  int tether_steps = 13;
  double tether_stiffness = 2.0e3;  // N/m
  double tether_length = 0.1;       // m
  Vec3 tether_direction = Vec3::UnitX();

  void validate(int chambers) const;
};

void to_json(nlohmann::json& j, const ScenarioSpec& s);
void from_json(const nlohmann::json& j, ScenarioSpec& s);

// Exact twin quantities behind each frame, before noise.
struct TwinTruth {
  VecX simulated_pressures;
  double force = 0.0;
  Vec3 tip = Vec3::Zero();
  std::vector<Mat3> orientations;
};

struct SynthResult {
  std::vector<SensorFrame> frames;
  std::vector<TwinTruth> truth;
};

// Forward-simulates the protocol on a copy of `prototype` carrying the
// twin's calibration factors.
SynthResult synth_experiment(const Scene& prototype, const ScenarioSpec& spec);

struct DisturbanceOptions {
  std::vector<int> actuators;  // force actuator indices; empty: the active ones
  double tolerance_deg = 0.01;
};

struct DisturbanceEstimate {
  VecX forces;                 // per force actuator, N along its local direction
  std::vector<Vec3> world;     // per force actuator, world frame
  Vec3 total = Vec3::Zero();   // sum of world vectors
  double magnitude = 0.0;
  double residual_deg = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Pins pressures to the frame's (through nu) and solves for the force
// efforts that explain the orientations. Warm-starts from the scene state.
DisturbanceEstimate estimate_disturbance(Scene& scene, const SensorFrame& frame, const DisturbanceOptions& options = {});

struct TeachEstimate {
  VecX commanded;  // Pa, within [0, p_max]
  VecX simulated;
  double residual_deg = 0.0;
  int iterations = 0;
  bool converged = false;
  bool saturated = false;
  bool reachable() const { return converged; }
};

// All chambers free, forces off.
TeachEstimate teach_step(Scene& scene, const std::vector<Mat3>& targets, double tolerance_deg = -1.0);

struct RampSchedule {
  std::vector<double> times;
  std::vector<VecX> commanded;
};

struct TeachState {
  std::vector<Mat3> targets;
  VecX current = VecX::Zero(6);  // commanded pressures now applied
  std::optional<TeachEstimate> estimate;
  bool committed = false;
  RampSchedule ramp;
};

// Linear per-chamber ramp from the current to the estimated pressures.
// Refuses unreachable estimates.
RampSchedule teach_commit(TeachState& state, double p_max, double duration = 2.0, int steps = 20);

struct ErrorStats {
  double min = 0.0, max = 0.0, mean = 0.0, std = 0.0;
  int count = 0;
};
ErrorStats summarize(const std::vector<double>& values);
nlohmann::json to_json(const ErrorStats& s);

Eigen::Quaterniond to_quaternion(const Mat3& r);

}  // namespace softarm
