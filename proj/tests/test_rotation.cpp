#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "softarm/rotation.hpp"

namespace softarm {
namespace {

using Mat3d = Matrix3<double>;
using Vec3d = Vector3<double>;

Mat3d rot(const Vec3d& axis, double angle) { return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix(); }

TEST(LogMap, InvertsExpAcrossAngles) {
  std::mt19937 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  for (double angle : {0.0, 1e-9, 1e-5, 0.3, 1.5, 3.0, 3.14159}) {
    const Vec3d axis = Vec3d(n(rng), n(rng), n(rng)).normalized();
    const Vec3d v = axis * angle;
    EXPECT_LT((log_map<double>(exp_map<double>(v)) - v).norm(), 1e-12 * std::max(1.0, angle)) << angle;
  }
}

TEST(LogMap, AnalyticZRotation) {
  const Vec3d v = log_map<double>(rot(Vec3d::UnitZ(), 0.3));
  EXPECT_NEAR(v.x(), 0.0, 1e-15);
  EXPECT_NEAR(v.y(), 0.0, 1e-15);
  EXPECT_NEAR(v.z(), 0.3, 1e-15);
}

TEST(LogMap, HalfTurnHasNormPi) {
  EXPECT_NEAR(log_map<double>(rot(Vec3d(1, 2, 3), std::numbers::pi)).norm(), std::numbers::pi, 1e-9);
}

TEST(GeodesicAngle, MatchesTraceFormula) {
  const Mat3d a = rot(Vec3d(1, 0, 1), 0.7), b = rot(Vec3d(0, 1, 2), -0.4);
  const double reference = std::acos(std::clamp(((a * b.transpose()).trace() - 1.0) / 2.0, -1.0, 1.0));
  EXPECT_NEAR(geodesic_angle<double>(a, b), reference, 1e-12);
}

TEST(PolarDecomposition, ReconstructsAndIsProper) {
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    Mat3d m;
    for (int i = 0; i < 9; ++i) m(i) = u(rng);
    const auto pd = polar_decomposition<double>(m);
    EXPECT_NEAR(pd.rotation.determinant(), 1.0, 1e-12);
    EXPECT_LT((pd.rotation * pd.rotation.transpose() - Mat3d::Identity()).norm(), 1e-12);
    EXPECT_LT((pd.rotation * pd.stretch - m).norm(), 1e-12);
    EXPECT_LT((pd.stretch - pd.stretch.transpose()).norm(), 1e-12);
  }
}

TEST(PolarDifferential, MatchesFiniteDifferenceOfRotation) {
  Mat3d m;
  m << 1.2, 0.1, -0.3, 0.2, 0.9, 0.05, 0.1, -0.2, 1.1;
  const Mat3d dm = (Mat3d() << 0.3, -0.1, 0.2, 0.5, 0.1, -0.4, 0.0, 0.2, 0.3).finished();
  const auto pd = polar_decomposition<double>(m);
  Mat3d g_inverse;
  ASSERT_TRUE(polar_differential_operator<double>(pd.stretch, g_inverse));
  const Vec3d w = g_inverse * axial_of_difference(pd.rotation.transpose() * dm);
  const Mat3d analytic = pd.rotation * skew<double>(w);
  const double h = 1e-6;
  const Mat3d fd = (polar_decomposition<double>(m + h * dm).rotation - polar_decomposition<double>(m - h * dm).rotation) /
                   (2 * h);
  EXPECT_LT((analytic - fd).norm(), 1e-7 * analytic.norm());
}

TEST(Kabsch, RecoversRotationOfPointCloud) {
  Eigen::Matrix<double, 3, Eigen::Dynamic> rest(3, 5);
  rest << 1, -1, 0, 0, 0.2,  //
      0, 0, 1, -1, 0.3,      //
      0.1, -0.1, 0.2, -0.2, 0;
  const Mat3d r = rot(Vec3d(0.3, -0.2, 1.0), 1.1);
  const auto fit = kabsch<double>(r * rest, rest);
  EXPECT_LT((fit.rotation - r).norm(), 1e-12);
}

}  // namespace
}  // namespace softarm
