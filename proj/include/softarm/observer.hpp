#pragma once

#include <array>
#include <vector>

#include <Eigen/Geometry>

#include "softarm/mesh.hpp"
#include "softarm/rotation.hpp"
#include "softarm/types.hpp"

namespace softarm {

// Observable rotation components in the effector's local frame.
using AxisMask = std::array<bool, 3>;
inline constexpr AxisMask kBendingAxes{true, true, false};
inline constexpr AxisMask kAllAxes{true, true, true};

int mask_count(const AxisMask& mask);

// A node set on a rigid section whose best-fit rotation is the section's
// orientation.
struct OrientationEffector {
  std::vector<int> nodes;
  Eigen::Matrix3Xd rest_offsets;  // rest positions minus their centroid
  Vec3 rest_centroid = Vec3::Zero();
  AxisMask mask = kBendingAxes;

  // Throws InputError for fewer than 3 nodes, collinear nodes or an empty mask.
  static OrientationEffector make(const TetMesh& mesh, std::vector<int> nodes, AxisMask mask = kBendingAxes);
};

// Proper rotation R minimizing sum |(x_j - c) - R (X_j - C)|^2 over the node
// set. Throws SolverError when the current nodes are (nearly) collinear.
Mat3 frame_orientation(const VecX& q, const OrientationEffector& effector);
Vec3 frame_centroid(const VecX& q, const OrientationEffector& effector);

// 3 x 3n matrix mapping node velocities of the set (in `nodes` order) to the
// angular velocity w of the frame, expressed in world axes (dR = [w]x R).
// At R = I this is the derivative of the rotation vector of R.
Eigen::Matrix3Xd orientation_jacobian(const VecX& q, const OrientationEffector& effector);

// log(R_a R_b^T) with components outside the mask zeroed (world axes).
Vec3 delta_rotation(const Mat3& a, const Mat3& b, const AxisMask& mask);

// Residual of a simulated frame against a measured one, in the simulated
// frame's local axes: mask(log(R_sim^T R_real)).
Vec3 local_residual(const Mat3& real, const Mat3& sim, const AxisMask& mask);

template <typename Scalar>
struct Pose {
  Eigen::Quaternion<Scalar> rotation = Eigen::Quaternion<Scalar>::Identity();
  Vector3<Scalar> translation = Vector3<Scalar>::Zero();

  static Pose identity() { return Pose(); }

  Pose operator*(const Pose& other) const {
    Pose out;
    out.rotation = (rotation * other.rotation).normalized();
    out.translation = translation + rotation * other.translation;
    return out;
  }

  Pose inverse() const {
    Pose out;
    out.rotation = rotation.conjugate();
    out.translation = -(out.rotation * translation);
    return out;
  }

  Vector3<Scalar> apply(const Vector3<Scalar>& point) const { return rotation * point + translation; }
};

using PoseTransform = Pose<double>;

// Zero-pressure correction: delta = nominal^-1 * measured.
PoseTransform rectification(const PoseTransform& nominal_zero, const PoseTransform& measured_zero);
// measured * delta^-1; maps the zero-pressure measurement back onto nominal.
PoseTransform apply_rectification(const PoseTransform& delta, const PoseTransform& measured);

}  // namespace softarm
