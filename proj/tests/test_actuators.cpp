#include <random>

#include <gtest/gtest.h>

#include "softarm/actuators.hpp"
#include "softarm/rotation.hpp"
#include "softarm/scene.hpp"

namespace softarm {
namespace {

SpMat to_matrix(const std::vector<Triplet>& trip, int n) {
  SpMat k(n, n);
  k.setFromTriplets(trip.begin(), trip.end());
  return k;
}

VecX random_vector(int n, double scale, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  VecX v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

// Net force and torque about `center` of nodal loads f.
std::pair<Vec3, Vec3> wrench(const VecX& f, const VecX& q, const Vec3& center) {
  Vec3 force = Vec3::Zero(), torque = Vec3::Zero();
  for (int i = 0; i < f.size() / 3; ++i) {
    force += f.segment<3>(3 * i);
    torque += (q.segment<3>(3 * i) - center).cross(f.segment<3>(3 * i));
  }
  return {force, torque};
}

TEST(PressureRow, SingleTriangleLumpsAThirdOfTheAreaVector) {
  SurfaceMesh s;
  s.triangles = {{0, 1, 2}};
  VecX q(9);
  q << 0, 0, 0, 1, 0, 0, 0, 1, 0;
  const VecX row = pressure_row(s, q);
  for (int v = 0; v < 3; ++v) {
    EXPECT_NEAR(row(3 * v), 0.0, 1e-15);
    EXPECT_NEAR(row(3 * v + 1), 0.0, 1e-15);
    EXPECT_NEAR(row(3 * v + 2), 1.0 / 6.0, 1e-15);
  }
}

TEST(PressureRow, DegenerateTriangleIsSkipped) {
  SurfaceMesh s;
  s.triangles = {{0, 1, 2}, {0, 1, 3}};
  VecX q(12);
  q << 0, 0, 0, 1, 0, 0, 0, 1, 0, 2, 0, 0;
  int skipped = 0;
  const VecX row = pressure_row(s, q, &skipped);
  EXPECT_EQ(skipped, 1);
  EXPECT_EQ(row.segment<3>(9), Vec3::Zero());
}

TEST(PressureRow, ClosedBoxSumsToZero) {
  const TetMesh mesh = generate_box(0.3, 0.2, 0.1, 3, 2, 2);
  const SurfaceMesh surface = boundary_surface(mesh);
  ASSERT_TRUE(surface.is_closed());
  const VecX q = mesh.positions();
  const VecX row = pressure_row(surface, q);
  Vec3 sum = Vec3::Zero();
  for (int i = 0; i < mesh.node_count(); ++i) sum += row.segment<3>(3 * i);
  EXPECT_LT(sum.norm(), 1e-12);
  // Outward normals: pressure pushes the +x face along +x.
  double fx = 0.0;
  for (int i = 0; i < mesh.node_count(); ++i)
    if (std::abs(mesh.nodes[i].x() - 0.3) < 1e-12) fx += row(3 * i);
  EXPECT_NEAR(fx, 0.2 * 0.1, 1e-12);
}

TEST(PressureRow, ArmCavitiesHaveZeroWrenchWhenDeformed) {
  const ArmModel arm = generate_arm(ArmParams{});
  const VecX q = arm.body.positions() + random_vector(3 * arm.body.node_count(), 1e-3, 4);
  const double p = 65.0e3;
  for (const auto& cavity : arm.cavities) {
    const VecX f = p * pressure_row(cavity, q);
    Vec3 center = Vec3::Zero();
    const auto verts = cavity.vertex_nodes();
    for (int v : verts) center += q.segment<3>(3 * v);
    center /= static_cast<double>(verts.size());
    const auto [force, torque] = wrench(f, q, center);
    const double scale = p * cavity.area(q);
    EXPECT_LE(force.norm(), 1e-9 * scale);
    EXPECT_LE(torque.norm(), 1e-9 * scale);
  }
}

TEST(PressureRow, IsTheVolumeGradient) {
  const ArmModel arm = generate_arm(ArmParams{});
  const SurfaceMesh& cavity = arm.cavities[1];
  const VecX q = arm.body.positions() + random_vector(3 * arm.body.node_count(), 5e-4, 6);
  const VecX row = pressure_row(cavity, q);
  const double h = 1e-7;
  for (unsigned k = 0; k < 5; ++k) {
    const VecX d = random_vector(static_cast<int>(q.size()), 1.0, 50 + k);
    const double fd = (cavity.enclosed_volume(q + h * d) - cavity.enclosed_volume(q - h * d)) / (2.0 * h);
    EXPECT_NEAR(row.dot(d), fd, 1e-6 * std::abs(fd));
  }
}

TEST(PressureRow, LoadStiffnessMatchesDifferences) {
  const ArmModel arm = generate_arm(ArmParams{});
  const SurfaceMesh& cavity = arm.cavities[3];
  const int n = 3 * arm.body.node_count();
  const VecX q = arm.body.positions() + random_vector(n, 5e-4, 8);
  const double p = 3.0e4;
  std::vector<Triplet> trip;
  add_pressure_stiffness(cavity, q, p, trip);
  const SpMat k = to_matrix(trip, n);
  EXPECT_LT((MatX(k) - MatX(k).transpose()).norm(), 1e-12 * k.norm());
  const double h = 1e-7;
  for (unsigned s = 0; s < 5; ++s) {
    const VecX d = random_vector(n, 1.0, 60 + s);
    const VecX fd = -p * (pressure_row(cavity, q + h * d) - pressure_row(cavity, q - h * d)) / (2.0 * h);
    const VecX kd = k * d;
    EXPECT_LT((kd - fd).norm(), 1e-6 * kd.norm());
  }
}

TEST(PressureRow, ScalesLinearlyWithPressure) {
  const ArmModel arm = generate_arm(ArmParams{});
  const VecX q = arm.body.positions();
  const VecX row = pressure_row(arm.cavities[0], q);
  EXPECT_EQ(VecX(0.0 * row), VecX::Zero(row.size()));
  EXPECT_LT((2.5 * (4.0 * row) - 10.0 * row).norm(), 1e-15 * row.norm());
}

class ForceRowTest : public ::testing::Test {
 protected:
  TetMesh mesh = generate_box(1.0, 1.0, 1.0, 2, 2, 2);
};

TEST_F(ForceRowTest, PointAtNode) {
  const int node = 13;
  const auto e = embed_points(mesh, {mesh.nodes[node]});
  const ForceActuator a = ForceActuator::make(e.points[0], Vec3::UnitX(), -1, 5.0, "fx");
  const VecX row = force_row(a, mesh, Mat3::Identity());
  VecX expected = VecX::Zero(row.size());
  expected(3 * node) = 1.0;
  EXPECT_LT((row - expected).norm(), 1e-12);
}

TEST_F(ForceRowTest, PointAtCentroidSplitsEvenly) {
  const auto& t = mesh.tets[5];
  const Vec3 c = 0.25 * (mesh.nodes[t[0]] + mesh.nodes[t[1]] + mesh.nodes[t[2]] + mesh.nodes[t[3]]);
  const auto e = embed_points(mesh, {c});
  const ForceActuator a = ForceActuator::make(e.points[0], Vec3(0, 0, 2), -1, 5.0, "fz");
  const VecX row = force_row(a, mesh, Mat3::Identity());
  for (int v : t) EXPECT_NEAR(row(3 * v + 2), 0.25, 1e-12);
  EXPECT_NEAR(row.sum(), 1.0, 1e-12);
}

TEST_F(ForceRowTest, DirectionFollowsFrame) {
  const auto e = embed_points(mesh, {Vec3(0.3, 0.6, 0.2)});
  const ForceActuator a = ForceActuator::make(e.points[0], Vec3::UnitX(), 0, 5.0, "fx");
  const VecX row = force_row(a, mesh, exp_map(Vec3(0, 0, std::numbers::pi / 2)));
  Vec3 net = Vec3::Zero();
  for (int i = 0; i < mesh.node_count(); ++i) net += row.segment<3>(3 * i);
  EXPECT_LT((net - Vec3::UnitY()).norm(), 1e-12);
}

TEST_F(ForceRowTest, ZeroDirectionIsRejected) {
  const auto e = embed_points(mesh, {Vec3(0.5, 0.5, 0.5)});
  EXPECT_THROW(ForceActuator::make(e.points[0], Vec3::Zero(), -1, 5.0, "bad"), InputError);
  const ForceActuator a = ForceActuator::make(e.points[0], Vec3(3, 4, 0), -1, 5.0, "ok");
  EXPECT_NEAR(a.direction.norm(), 1.0, 1e-12);
}

class SpringTest : public ::testing::Test {
 protected:
  void SetUp() override {
    mesh = generate_box(0.1, 0.1, 0.1, 2, 2, 2);
    const auto e = embed_points(mesh, {Vec3(0.02, 0.03, 0.04), Vec3(0.07, 0.05, 0.06), Vec3(0.05, 0.09, 0.01)});
    Spring s1{{e.points[0]}, {e.points[1]}, 0.0, 1.0e4, false};
    s1.rest_length = (Vec3(0.07, 0.05, 0.06) - Vec3(0.02, 0.03, 0.04)).norm();
    Spring s2{{e.points[1]}, {e.points[2]}, 0.0, 2.0e3, false};
    s2.rest_length = 0.9 * (Vec3(0.05, 0.09, 0.01) - Vec3(0.07, 0.05, 0.06)).norm();
    Spring s3{{e.points[2]}, {Embedding{}, true, Vec3(0.2, 0.0, 0.0)}, 0.05, 5.0e2, true};
    springs = {s1, s2, s3};
  }
  TetMesh mesh;
  std::vector<Spring> springs;
};

TEST_F(SpringTest, StretchedByOneMillimetrePullsTenNewtons) {
  const auto e = embed_points(mesh, {mesh.nodes[26]});
  const Vec3 x = mesh.nodes[26];
  Spring s{{e.points[0]}, {Embedding{}, true, x + Vec3(0.021, 0, 0)}, 0.02, 1.0e4, false};
  EXPECT_NEAR(spring_tension(s, mesh, mesh.positions()), 10.0, 1e-9);
  VecX f = VecX::Zero(3 * mesh.node_count());
  add_spring_loads({s}, mesh, mesh.positions(), f, nullptr);
  EXPECT_NEAR(f(3 * 26), 10.0, 1e-9);
}

TEST_F(SpringTest, RestLengthIsForceFree) {
  const VecX q = mesh.positions();
  FiberReinforcement fibers = FiberReinforcement::from_loops(
      mesh, {{Vec3(0.02, 0.02, 0.05), Vec3(0.08, 0.02, 0.05), Vec3(0.08, 0.08, 0.05), Vec3(0.02, 0.08, 0.05)}},
      1.0e4);
  EXPECT_EQ(fibers.springs.size(), 4u);
  VecX f = VecX::Zero(q.size());
  fiber_contribution(fibers, mesh, q, f, nullptr);
  EXPECT_LT(f.norm(), 1e-12);
}

TEST_F(SpringTest, ForcesAreEnergyGradient) {
  const int n = 3 * mesh.node_count();
  const VecX q = mesh.positions() + random_vector(n, 2e-3, 21);
  VecX f = VecX::Zero(n);
  add_spring_loads(springs, mesh, q, f, nullptr);
  const double h = 1e-7;
  for (unsigned k = 0; k < 10; ++k) {
    const VecX d = random_vector(n, 1.0, 30 + k);
    const double fd = -(spring_energy(springs, mesh, q + h * d) - spring_energy(springs, mesh, q - h * d)) / (2.0 * h);
    EXPECT_NEAR(f.dot(d), fd, 1e-6 * std::abs(fd));
  }
}

TEST_F(SpringTest, StiffnessMatchesForceDifferences) {
  const int n = 3 * mesh.node_count();
  const VecX q = mesh.positions() + random_vector(n, 2e-3, 22);
  VecX f = VecX::Zero(n);
  std::vector<Triplet> trip;
  add_spring_loads(springs, mesh, q, f, &trip);
  const SpMat k = to_matrix(trip, n);
  const double h = 1e-7;
  for (unsigned s = 0; s < 10; ++s) {
    const VecX d = random_vector(n, 1.0, 40 + s);
    VecX fp = VecX::Zero(n), fm = VecX::Zero(n);
    add_spring_loads(springs, mesh, q + h * d, fp, nullptr);
    add_spring_loads(springs, mesh, q - h * d, fm, nullptr);
    const VecX fd = -(fp - fm) / (2.0 * h);
    const VecX kd = k * d;
    EXPECT_LT((kd - fd).norm(), 1e-6 * kd.norm());
  }
}

TEST_F(SpringTest, UnilateralSpringGoesSlack) {
  Spring cord = springs[2];
  cord.rest_length = 1.0;
  EXPECT_EQ(spring_tension(cord, mesh, mesh.positions()), 0.0);
  VecX f = VecX::Zero(3 * mesh.node_count());
  std::vector<Triplet> trip;
  add_spring_loads({cord}, mesh, mesh.positions(), f, &trip);
  EXPECT_EQ(f.norm(), 0.0);
  EXPECT_LT(to_matrix(trip, static_cast<int>(f.size())).norm(), 1e-300);
}

TEST_F(SpringTest, CoincidentEndpointsAreSkipped) {
  const auto e = embed_points(mesh, {Vec3(0.05, 0.05, 0.05)});
  Spring s{{e.points[0]}, {e.points[0]}, 0.01, 1.0e4, false};
  VecX f = VecX::Zero(3 * mesh.node_count());
  EXPECT_EQ(add_spring_loads({s}, mesh, mesh.positions(), f, nullptr).skipped, 1);
  EXPECT_EQ(f.norm(), 0.0);
}

// Largest change of distance to the z axis over the outer surface nodes.
double max_radial_displacement(const Scene& scene) {
  double worst = 0.0;
  const VecX& q = scene.state().q;
  for (int v : scene.layout().outer_surface.vertex_nodes()) {
    const double r0 = scene.state().q_rest.segment<2>(3 * v).norm();
    const double r1 = q.segment<2>(3 * v).norm();
    worst = std::max(worst, std::abs(r1 - r0));
  }
  return worst;
}

TEST(FiberReinforcement, SuppressesRadialBulging) {
  SceneConfig config;
  config.arm.segment_count = 1;
  config.forces.clear();
  config.gravity.setZero();
  double bulge[2];
  for (int with = 0; with < 2; ++with) {
    config.fibers = with == 1;
    Scene scene(config);
    scene.set_pressures(VecX::Constant(scene.chamber_count(), 30.0e3));
    const auto report = scene.solve_equilibrium();
    ASSERT_TRUE(report.converged);
    bulge[with] = max_radial_displacement(scene);
  }
  EXPECT_GT(bulge[0], 0.0);
  EXPECT_LT(bulge[1], 0.5 * bulge[0]) << bulge[1] << " vs " << bulge[0];
}

}  // namespace
}  // namespace softarm
