#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "softarm/observer.hpp"

namespace softarm {
namespace {

constexpr double kPi = std::numbers::pi;

Mat3 rz(double angle) { return exp_map(Vec3(0, 0, angle)); }

class EffectorTest : public ::testing::Test {
 protected:
  void SetUp() override {
    mesh = generate_box(0.04, 0.04, 0.02, 2, 2, 1);
    std::vector<int> nodes(mesh.node_count());
    for (int i = 0; i < mesh.node_count(); ++i) nodes[i] = i;
    effector = OrientationEffector::make(mesh, nodes, kAllAxes);
    q_rest = mesh.positions();
  }

  VecX moved(const Mat3& r, const Vec3& t) const {
    VecX q = q_rest;
    for (int i = 0; i < mesh.node_count(); ++i) q.segment<3>(3 * i) = r * q_rest.segment<3>(3 * i) + t;
    return q;
  }

  TetMesh mesh;
  OrientationEffector effector;
  VecX q_rest;
};

TEST_F(EffectorTest, RestIsIdentity) {
  EXPECT_LT((frame_orientation(q_rest, effector) - Mat3::Identity()).norm(), 1e-12);
}

TEST_F(EffectorTest, QuarterTurnAboutZ) {
  const VecX q = moved(rz(kPi / 2), Vec3(0.1, -0.3, 0.2));
  EXPECT_LT((frame_orientation(q, effector) - rz(kPi / 2)).norm(), 1e-12);
}

TEST_F(EffectorTest, NoisyRotationStaysWithinATenthOfADegree) {
  const Mat3 r = exp_map(Vec3(0.4, -0.2, 0.9));
  VecX q = moved(r, Vec3(0.01, 0.02, 0.03));
  std::mt19937 rng(17);
  std::normal_distribution<double> g(0.0, 1e-4);
  for (auto& x : q) x += g(rng);
  const Mat3 estimate = frame_orientation(q, effector);
  EXPECT_NEAR(estimate.determinant(), 1.0, 1e-12);
  EXPECT_LT(geodesic_angle(estimate, r) * 180.0 / kPi, 0.1);
}

TEST_F(EffectorTest, EquivariantUnderRigidMotion) {
  std::mt19937 rng(5);
  std::normal_distribution<double> g(0.0, 2e-3);
  VecX q = q_rest;
  for (auto& x : q) x += g(rng);
  const Mat3 base = frame_orientation(q, effector);
  const Mat3 r = exp_map(Vec3(-1.0, 0.3, 0.5));
  VecX q2 = q;
  for (int i = 0; i < mesh.node_count(); ++i) q2.segment<3>(3 * i) = r * q.segment<3>(3 * i) + Vec3(1, 2, 3);
  EXPECT_LT((frame_orientation(q2, effector) - r * base).norm(), 1e-9);
}

TEST_F(EffectorTest, JacobianMatchesFiniteDifferences) {
  std::mt19937 rng(7);
  std::normal_distribution<double> g(0.0, 1.0);
  const VecX q = moved(exp_map(Vec3(0.3, 0.7, -0.4)), Vec3::Zero()) + 1e-3 * VecX::NullaryExpr(q_rest.size(), [&] { return g(rng); });
  const Eigen::Matrix3Xd j = orientation_jacobian(q, effector);
  const double h = 1e-7;
  for (int k = 0; k < 10; ++k) {
    const VecX d = VecX::NullaryExpr(q.size(), [&] { return g(rng); });
    const Mat3 plus = frame_orientation(q + h * d, effector);
    const Mat3 minus = frame_orientation(q - h * d, effector);
    const Vec3 fd = log_map(Mat3(plus * minus.transpose())) / (2.0 * h);
    const Vec3 analytic = j * d;
    EXPECT_LT((analytic - fd).norm(), 1e-4 * analytic.norm());
  }
}

TEST_F(EffectorTest, JacobianOfRigidVelocityIsOmega) {
  const VecX q = moved(exp_map(Vec3(0.2, -0.5, 1.1)), Vec3(0.05, 0, 0));
  const Vec3 c = frame_centroid(q, effector);
  const Vec3 omega(0.3, -1.2, 0.8);
  VecX v(q.size());
  for (int i = 0; i < mesh.node_count(); ++i) v.segment<3>(3 * i) = omega.cross(q.segment<3>(3 * i) - c);
  EXPECT_LT((orientation_jacobian(q, effector) * v - omega).norm(), 1e-6 * omega.norm());
}

TEST_F(EffectorTest, TranslationIsInTheNullSpace) {
  const VecX q = moved(exp_map(Vec3(0.2, -0.5, 1.1)), Vec3::Zero());
  VecX v(q.size());
  for (int i = 0; i < mesh.node_count(); ++i) v.segment<3>(3 * i) = Vec3(0.3, -0.4, 2.0);
  EXPECT_LT((orientation_jacobian(q, effector) * v).norm(), 1e-10);
}

TEST_F(EffectorTest, InvalidNodeSetsAreRejected) {
  EXPECT_THROW(OrientationEffector::make(mesh, {0, 1}), InputError);
  EXPECT_THROW(OrientationEffector::make(mesh, {0, 1, 2}), InputError);  // one row along x
  EXPECT_THROW(OrientationEffector::make(mesh, {0, 1, 3}, AxisMask{false, false, false}), InputError);
  EXPECT_NO_THROW(OrientationEffector::make(mesh, {0, 1, 3}));
}

TEST(DeltaRotation, Examples) {
  const Mat3 r = exp_map(Vec3(0.1, 0.2, 0.3));
  EXPECT_LT(delta_rotation(r, r, kAllAxes).norm(), 1e-15);
  EXPECT_LT((delta_rotation(rz(0.3), Mat3::Identity(), kAllAxes) - Vec3(0, 0, 0.3)).norm(), 1e-15);
  EXPECT_LT(delta_rotation(rz(0.3), Mat3::Identity(), kBendingAxes).norm(), 1e-15);
}

TEST(DeltaRotation, AntisymmetricForSmallAngles) {
  std::mt19937 rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int k = 0; k < 20; ++k) {
    const Mat3 a = exp_map(Vec3(g(rng), g(rng), g(rng)));
    const Mat3 b = exp_map(Vec3(1e-3 * Vec3(g(rng), g(rng), g(rng)))) * a;
    const Vec3 ab = delta_rotation(a, b, kAllAxes), ba = delta_rotation(b, a, kAllAxes);
    EXPECT_LE((ab + ba).norm(), 1e-6 * ab.squaredNorm() + 1e-15);
  }
}

TEST(DeltaRotation, HalfTurnHasNormPi) {
  EXPECT_NEAR(delta_rotation(exp_map(Vec3(kPi, 0, 0)), Mat3::Identity(), kAllAxes).norm(), kPi, 1e-9);
}

TEST(LocalResidual, IsExpressedInTheSimulatedFrame) {
  const Mat3 sim = rz(kPi / 2);
  const Mat3 real = sim * exp_map(Vec3(0.01, 0, 0));
  EXPECT_LT((local_residual(real, sim, kBendingAxes) - Vec3(0.01, 0, 0)).norm(), 1e-14);
  // The world-frame difference of the same pair points along y.
  EXPECT_LT((delta_rotation(real, sim, kAllAxes) - Vec3(0, 0.01, 0)).norm(), 1e-14);
}

PoseTransform pose(const Mat3& r, const Vec3& t) {
  PoseTransform p;
  p.rotation = Eigen::Quaterniond(r);
  p.translation = t;
  return p;
}

TEST(PoseTransform, InverseAndAssociativity) {
  const PoseTransform a = pose(exp_map(Vec3(0.3, 0.1, -0.2)), Vec3(1, 2, 3));
  const PoseTransform b = pose(exp_map(Vec3(-0.7, 0.4, 0.2)), Vec3(-1, 0, 0.5));
  const PoseTransform c = pose(exp_map(Vec3(0.0, 1.4, 0.9)), Vec3(0.2, 0.2, -0.1));
  const PoseTransform id = a * a.inverse();
  EXPECT_NEAR(id.rotation.angularDistance(Eigen::Quaterniond::Identity()), 0.0, 1e-9);
  EXPECT_LT(id.translation.norm(), 1e-9);
  const PoseTransform l = (a * b) * c, r = a * (b * c);
  EXPECT_LT(l.rotation.angularDistance(r.rotation), 1e-9);
  EXPECT_LT((l.translation - r.translation).norm(), 1e-9);
  EXPECT_NEAR((a * b).rotation.norm(), 1.0, 1e-12);
}

TEST(Rectification, IdentityWhenMeasurementMatches) {
  const PoseTransform nominal = pose(exp_map(Vec3(0.1, 0.2, 0.0)), Vec3(0, 0, -0.15));
  const PoseTransform delta = rectification(nominal, nominal);
  EXPECT_LT(delta.rotation.angularDistance(Eigen::Quaterniond::Identity()), 1e-12);
  const PoseTransform other = pose(exp_map(Vec3(0.3, 0.0, 0.1)), Vec3(0.01, 0, -0.14));
  const PoseTransform out = apply_rectification(delta, other);
  EXPECT_LT(out.rotation.angularDistance(other.rotation), 1e-12);
  EXPECT_LT((out.translation - other.translation).norm(), 1e-12);
}

TEST(Rectification, RecoversNominalAtTheZeroPose) {
  const PoseTransform nominal = pose(exp_map(Vec3(0.1, 0.2, 0.0)), Vec3(0, 0, -0.15));
  const PoseTransform measured = nominal * pose(rz(2.0 * kPi / 180.0), Vec3::Zero());
  const PoseTransform delta = rectification(nominal, measured);
  const PoseTransform rectified = apply_rectification(delta, measured);
  EXPECT_LT(rectified.rotation.angularDistance(nominal.rotation), 1e-9);
  EXPECT_LT((rectified.translation - nominal.translation).norm(), 1e-9);
  // Recomputing the correction on rectified data gives the identity.
  const PoseTransform again = rectification(nominal, rectified);
  EXPECT_LT(again.rotation.angularDistance(Eigen::Quaterniond::Identity()), 1e-9);
  EXPECT_LT(again.translation.norm(), 1e-9);
}

}  // namespace
}  // namespace softarm
