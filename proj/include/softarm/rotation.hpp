#pragma once

// SO(3) helpers shared by the FEM kernel and the orientation observer.
// Everything here is templated on the scalar so the kernels can be
// instantiated in long double for reference checks.

#include <cmath>

#include <Eigen/Dense>
#include <Eigen/Geometry>

namespace softarm {

template <typename Scalar>
using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;

template <typename Scalar>
Matrix3<Scalar> skew(const Vector3<Scalar>& v) {
  Matrix3<Scalar> m;
  m << Scalar(0), -v.z(), v.y(),  //
      v.z(), Scalar(0), -v.x(),   //
      -v.y(), v.x(), Scalar(0);
  return m;
}

// Axial vector of the skew part of `a` scaled by two: axial(a - a^T).
template <typename Derived>
Vector3<typename Derived::Scalar> axial_of_difference(const Eigen::MatrixBase<Derived>& a) {
  using Scalar = typename Derived::Scalar;
  return Vector3<Scalar>(a(2, 1) - a(1, 2), a(0, 2) - a(2, 0), a(1, 0) - a(0, 1));
}

template <typename Scalar>
Matrix3<Scalar> exp_map(const Vector3<Scalar>& rotation_vector) {
  const Scalar angle = rotation_vector.norm();
  if (angle == Scalar(0)) return Matrix3<Scalar>::Identity();
  return Eigen::AngleAxis<Scalar>(angle, rotation_vector / angle).toRotationMatrix();
}

// Rotation vector (axis * angle, angle in [0, pi]) of a proper rotation.
// Goes through the quaternion so it stays accurate near 0 and near pi.
template <typename Scalar>
Vector3<Scalar> log_map(const Matrix3<Scalar>& rotation) {
  Eigen::Quaternion<Scalar> q(rotation);
  q.normalize();
  if (q.w() < Scalar(0)) q.coeffs() = -q.coeffs();
  const Vector3<Scalar> v = q.vec();
  const Scalar n = v.norm();
  if (n < Scalar(1e-7)) {
    // atan2(n, w) / n expanded around n = 0
    const Scalar w = q.w();
    return v * (Scalar(2) / w) * (Scalar(1) - n * n / (Scalar(3) * w * w));
  }
  return v * (Scalar(2) * std::atan2(n, q.w()) / n);
}

// Angle of R_a * R_b^T.
template <typename Scalar>
Scalar geodesic_angle(const Matrix3<Scalar>& a, const Matrix3<Scalar>& b) {
  return log_map<Scalar>(a * b.transpose()).norm();
}

// Polar decomposition M = R * S with R a proper rotation and S symmetric.
// When det(M) < 0 the smallest singular direction is flipped so R stays
// proper; S then carries the negative eigenvalue.
template <typename Scalar>
struct PolarDecomposition {
  Matrix3<Scalar> rotation;
  Matrix3<Scalar> stretch;
};

template <typename Scalar>
PolarDecomposition<Scalar> polar_decomposition(const Matrix3<Scalar>& m) {
  Eigen::JacobiSVD<Matrix3<Scalar>> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Matrix3<Scalar> u = svd.matrixU();
  const Matrix3<Scalar> v = svd.matrixV();
  Vector3<Scalar> sigma = svd.singularValues();
  if ((u * v.transpose()).determinant() < Scalar(0)) {
    u.col(2) = -u.col(2);
    sigma(2) = -sigma(2);
  }
  PolarDecomposition<Scalar> out;
  out.rotation = u * v.transpose();
  out.stretch = v * sigma.asDiagonal() * v.transpose();
  return out;
}

// Given M = R S, returns the inverse of G = tr(S) I - S. The differential of
// the rotation factor is dR = R [w_b]x with w_b = G^-1 axial(R^T dM - dM^T R).
// Returns false when G is singular (rank <= 1 input).
template <typename Scalar>
bool polar_differential_operator(const Matrix3<Scalar>& stretch, Matrix3<Scalar>& g_inverse,
                                 Scalar relative_tolerance = Scalar(1e-12)) {
  const Matrix3<Scalar> g = stretch.trace() * Matrix3<Scalar>::Identity() - stretch;
  const Scalar det = g.determinant();
  const Scalar scale = g.norm();
  if (!(std::abs(det) > relative_tolerance * scale * scale * scale)) return false;
  g_inverse = g.inverse();
  return true;
}

// Optimal proper rotation mapping centered rest offsets onto centered current
// offsets (both 3 x n), in the least-squares sense.
template <typename Scalar>
PolarDecomposition<Scalar> kabsch(const Eigen::Matrix<Scalar, 3, Eigen::Dynamic>& current,
                                  const Eigen::Matrix<Scalar, 3, Eigen::Dynamic>& rest) {
  const Matrix3<Scalar> m = current * rest.transpose();
  return polar_decomposition<Scalar>(m);
}

}  // namespace softarm
