#pragma once

#include <string>
#include <vector>

#include "softarm/mesh.hpp"
#include "softarm/types.hpp"

namespace softarm {

// Pressurized cavity. Efforts are in Pa of simulated pressure; `calibration`
// is the per-chamber factor nu mapping commanded to simulated pressure
// (simulated = commanded / nu).
struct PressureActuator {
  SurfaceMesh cavity;
  std::string label;
  int segment = 0;
  double p_max = 65.0e3;
  double calibration = 1.0;
};

// Nodal force per unit pressure: each vertex receives A_t n_t / 3 from every
// incident triangle, evaluated at the flattened positions `q`. Degenerate
// triangles (area < 1e-14 m^2) are skipped and counted.
VecX pressure_row(const SurfaceMesh& cavity, const VecX& q, int* skipped = nullptr);

// On a closed surface the row above is the gradient of the enclosed volume,
// so a constant pressure is conservative. Adds its load stiffness
// -pressure * d2V/dq2 (symmetric) to `stiffness`.
void add_pressure_stiffness(const SurfaceMesh& cavity, const VecX& q, double pressure,
                            std::vector<Triplet>& stiffness);

// Point force with a fixed direction in the frame of an orientation effector
// (frame < 0: world frame).
struct ForceActuator {
  Embedding point;
  Vec3 direction = Vec3::UnitX();
  int frame = -1;
  double f_max = 5.0;
  std::string label;

  // Throws InputError for a zero direction; normalizes otherwise.
  static ForceActuator make(const Embedding& point, const Vec3& direction, int frame, double f_max,
                            std::string label);
};

VecX force_row(const ForceActuator& actuator, const TetMesh& mesh, const Mat3& frame_rotation);

// A linear spring between two embedded points, or between an embedded point
// and a fixed world anchor. Unilateral springs only pull (cords, tethers).
struct SpringEnd {
  Embedding embedding;
  bool anchored = false;
  Vec3 anchor = Vec3::Zero();
};

struct Spring {
  SpringEnd a;
  SpringEnd b;
  double rest_length = 0.0;
  double stiffness = 0.0;
  bool unilateral = false;
};

Vec3 spring_end_position(const SpringEnd& end, const TetMesh& mesh, const VecX& q);

struct SpringLoads {
  int skipped = 0;  // springs with coincident endpoints
};

// Adds spring forces to `forces` and K = -df/dq blocks to `stiffness`.
SpringLoads add_spring_loads(const std::vector<Spring>& springs, const TetMesh& mesh, const VecX& q,
                             VecX& forces, std::vector<Triplet>* stiffness);
double spring_energy(const std::vector<Spring>& springs, const TetMesh& mesh, const VecX& q);
// Tension (N, >= 0 for unilateral springs) of one spring at q.
double spring_tension(const Spring& spring, const TetMesh& mesh, const VecX& q);

struct FiberReinforcement {
  std::vector<Spring> springs;
  double stiffness = 1.0e4;  // N/m

  // Closed loops of rest positions; consecutive points become springs.
  static FiberReinforcement from_loops(const TetMesh& mesh, const std::vector<std::vector<Vec3>>& loops,
                                       double stiffness);
};

// Fiber forces and their stiffness at q; equivalent to add_spring_loads on
// the fiber springs.
SpringLoads fiber_contribution(const FiberReinforcement& fibers, const TetMesh& mesh, const VecX& q,
                               VecX& forces, std::vector<Triplet>* stiffness);

}  // namespace softarm
