#include "softarm/actuators.hpp"

#include <cstdio>

#include <Eigen/Geometry>

namespace softarm {

VecX pressure_row(const SurfaceMesh& cavity, const VecX& q, int* skipped) {
  VecX row = VecX::Zero(q.size());
  int bad = 0;
  for (const auto& t : cavity.triangles) {
    const Vec3 a = node_position(q, t[0]);
    const Vec3 area_normal = 0.5 * (node_position(q, t[1]) - a).cross(node_position(q, t[2]) - a);
    if (area_normal.norm() < 1e-14) {
      ++bad;
      continue;
    }
    for (int v : t) row.segment<3>(3 * v) += area_normal / 3.0;
  }
  if (bad > 0 && !skipped) std::fprintf(stderr, "warning: skipped %d degenerate cavity triangles\n", bad);
  if (skipped) *skipped = bad;
  return row;
}

void add_pressure_stiffness(const SurfaceMesh& cavity, const VecX& q, double pressure,
                            std::vector<Triplet>& stiffness) {
  // V_t = x_a . (x_b x x_c) / 6, so d2V/dx_a dx_b = -[x_c]x / 6 and cyclic.
  const double s = -pressure / 6.0;
  auto add = [&](int i, int j, const Vec3& x, double sign) {
    Mat3 m;
    m << 0.0, -x.z(), x.y(), x.z(), 0.0, -x.x(), -x.y(), x.x(), 0.0;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        if (m(r, c) != 0.0) stiffness.emplace_back(3 * i + r, 3 * j + c, sign * s * m(r, c));
  };
  for (const auto& t : cavity.triangles) {
    const int a = t[0], b = t[1], c = t[2];
    const Vec3 xa = node_position(q, a), xb = node_position(q, b), xc = node_position(q, c);
    add(a, b, xc, -1.0);
    add(b, a, xc, 1.0);
    add(b, c, xa, -1.0);
    add(c, b, xa, 1.0);
    add(c, a, xb, -1.0);
    add(a, c, xb, 1.0);
  }
}

ForceActuator ForceActuator::make(const Embedding& point, const Vec3& direction, int frame, double f_max,
                                  std::string label) {
  const double n = direction.norm();
  if (!(n > 0.0)) throw InputError("force actuator '" + label + "' has a zero direction");
  if (!(f_max >= 0.0)) throw InputError("force actuator '" + label + "' has a negative bound");
  ForceActuator a;
  a.point = point;
  a.direction = direction / n;
  a.frame = frame;
  a.f_max = f_max;
  a.label = std::move(label);
  return a;
}

VecX force_row(const ForceActuator& actuator, const TetMesh& mesh, const Mat3& frame_rotation) {
  VecX row = VecX::Zero(3 * mesh.node_count());
  const Vec3 world = frame_rotation * actuator.direction;
  const auto& tet = mesh.tets.at(actuator.point.tet);
  for (int k = 0; k < 4; ++k) row.segment<3>(3 * tet[k]) += actuator.point.weights[k] * world;
  return row;
}

Vec3 spring_end_position(const SpringEnd& end, const TetMesh& mesh, const VecX& q) {
  if (end.anchored) return end.anchor;
  Vec3 x = Vec3::Zero();
  const auto& tet = mesh.tets[end.embedding.tet];
  for (int k = 0; k < 4; ++k) x += end.embedding.weights[k] * node_position(q, tet[k]);
  return x;
}

namespace {

bool slack(const Spring& s, double length) { return s.unilateral && length <= s.rest_length; }

}  // namespace

SpringLoads add_spring_loads(const std::vector<Spring>& springs, const TetMesh& mesh, const VecX& q,
                             VecX& forces, std::vector<Triplet>* stiffness) {
  SpringLoads out;
  for (const Spring& s : springs) {
    const Vec3 d = spring_end_position(s.a, mesh, q) - spring_end_position(s.b, mesh, q);
    const double len = d.norm();
    if (len < 1e-12) {
      ++out.skipped;
      continue;
    }
    if (slack(s, len)) continue;
    const Vec3 u = d / len;
    const Vec3 fa = -s.stiffness * (len - s.rest_length) * u;  // force on end a
    const Mat3 h = s.stiffness * (u * u.transpose() +
                                  (1.0 - s.rest_length / len) * (Mat3::Identity() - u * u.transpose()));

    // Nodes and signed weights of both ends (+ for a, - for b).
    int nodes[8];
    double weights[8];
    int count = 0;
    for (int side = 0; side < 2; ++side) {
      const SpringEnd& end = side == 0 ? s.a : s.b;
      if (end.anchored) continue;
      const auto& tet = mesh.tets[end.embedding.tet];
      for (int k = 0; k < 4; ++k) {
        nodes[count] = tet[k];
        weights[count] = (side == 0 ? 1.0 : -1.0) * end.embedding.weights[k];
        ++count;
      }
    }
    for (int i = 0; i < count; ++i) forces.segment<3>(3 * nodes[i]) += weights[i] * fa;
    if (!stiffness) continue;
    for (int i = 0; i < count; ++i)
      for (int j = 0; j < count; ++j) {
        const double w = weights[i] * weights[j];
        if (w == 0.0) continue;
        for (int r = 0; r < 3; ++r)
          for (int c = 0; c < 3; ++c) stiffness->emplace_back(3 * nodes[i] + r, 3 * nodes[j] + c, w * h(r, c));
      }
  }
  return out;
}

double spring_energy(const std::vector<Spring>& springs, const TetMesh& mesh, const VecX& q) {
  double e = 0.0;
  for (const Spring& s : springs) {
    const double len = (spring_end_position(s.a, mesh, q) - spring_end_position(s.b, mesh, q)).norm();
    if (len < 1e-12 || slack(s, len)) continue;
    e += 0.5 * s.stiffness * (len - s.rest_length) * (len - s.rest_length);
  }
  return e;
}

double spring_tension(const Spring& s, const TetMesh& mesh, const VecX& q) {
  const double len = (spring_end_position(s.a, mesh, q) - spring_end_position(s.b, mesh, q)).norm();
  if (slack(s, len)) return 0.0;
  return s.stiffness * (len - s.rest_length);
}

FiberReinforcement FiberReinforcement::from_loops(const TetMesh& mesh, const std::vector<std::vector<Vec3>>& loops,
                                                  double stiffness) {
  if (!(stiffness > 0.0)) throw InputError("fiber stiffness must be positive");
  FiberReinforcement fibers;
  fibers.stiffness = stiffness;
  for (const auto& loop : loops) {
    const BarycentricEmbedding emb = embed_points(mesh, loop);
    const int n = static_cast<int>(loop.size());
    for (int i = 0; i < n; ++i) {
      Spring s;
      s.a.embedding = emb.points[i];
      s.b.embedding = emb.points[(i + 1) % n];
      s.stiffness = stiffness;
      s.rest_length = (spring_end_position(s.a, mesh, mesh.positions()) -
                       spring_end_position(s.b, mesh, mesh.positions()))
                          .norm();
      if (!(s.rest_length > 0.0)) throw InputError("fiber loop has coincident consecutive points");
      fibers.springs.push_back(s);
    }
  }
  return fibers;
}

SpringLoads fiber_contribution(const FiberReinforcement& fibers, const TetMesh& mesh, const VecX& q, VecX& forces,
                               std::vector<Triplet>* stiffness) {
  return add_spring_loads(fibers.springs, mesh, q, forces, stiffness);
}

}  // namespace softarm
