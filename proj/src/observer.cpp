#include "softarm/observer.hpp"

#include <Eigen/Eigenvalues>

namespace softarm {

int mask_count(const AxisMask& mask) { return int(mask[0]) + int(mask[1]) + int(mask[2]); }

namespace {

Eigen::Matrix3Xd gather(const VecX& q, const std::vector<int>& nodes) {
  Eigen::Matrix3Xd x(3, nodes.size());
  for (std::size_t j = 0; j < nodes.size(); ++j) x.col(j) = node_position(q, nodes[j]);
  return x;
}

// Ratio of the second covariance eigenvalue to the largest; zero for a
// collinear point set.
double planarity(const Eigen::Matrix3Xd& centered) {
  const Mat3 cov = centered * centered.transpose();
  const Vec3 ev = Eigen::SelfAdjointEigenSolver<Mat3>(cov, Eigen::EigenvaluesOnly).eigenvalues();
  return ev(2) > 0.0 ? ev(1) / ev(2) : 0.0;
}

}  // namespace

OrientationEffector OrientationEffector::make(const TetMesh& mesh, std::vector<int> nodes, AxisMask mask) {
  if (nodes.size() < 3) throw InputError("orientation effector needs at least 3 nodes");
  if (mask_count(mask) == 0) throw InputError("orientation effector axis mask is empty");
  for (int v : nodes)
    if (v < 0 || v >= mesh.node_count()) throw InputError("effector node " + std::to_string(v) + " out of range");
  OrientationEffector e;
  e.nodes = std::move(nodes);
  e.mask = mask;
  const Eigen::Matrix3Xd x = gather(mesh.positions(), e.nodes);
  e.rest_centroid = x.rowwise().mean();
  e.rest_offsets = x.colwise() - e.rest_centroid;
  if (planarity(e.rest_offsets) < 1e-10) throw InputError("orientation effector nodes are collinear");
  return e;
}

Vec3 frame_centroid(const VecX& q, const OrientationEffector& effector) {
  return gather(q, effector.nodes).rowwise().mean();
}

namespace {

PolarDecomposition<double> fit(const VecX& q, const OrientationEffector& effector) {
  Eigen::Matrix3Xd x = gather(q, effector.nodes);
  x.colwise() -= Vec3(x.rowwise().mean());
  if (planarity(x) < 1e-10) throw SolverError("orientation effector nodes became collinear");
  return kabsch<double>(x, effector.rest_offsets);
}

}  // namespace

Mat3 frame_orientation(const VecX& q, const OrientationEffector& effector) { return fit(q, effector).rotation; }

Eigen::Matrix3Xd orientation_jacobian(const VecX& q, const OrientationEffector& effector) {
  // M = sum y_j X_j^T, M = R S; dR = R [G^-1 sum X_j x (R^T dx_j)]x with
  // G = tr(S) I - S. Centering drops out because the X_j sum to zero.
  const auto pd = fit(q, effector);
  Mat3 g_inverse;
  if (!polar_differential_operator<double>(pd.stretch, g_inverse))
    throw SolverError("orientation jacobian is singular for this node configuration");
  const Mat3 left = pd.rotation * g_inverse;
  const Mat3 rt = pd.rotation.transpose();
  Eigen::Matrix3Xd jac(3, 3 * effector.nodes.size());
  for (std::size_t j = 0; j < effector.nodes.size(); ++j)
    jac.block<3, 3>(0, 3 * j) = left * skew<double>(effector.rest_offsets.col(j)) * rt;
  return jac;
}

Vec3 delta_rotation(const Mat3& a, const Mat3& b, const AxisMask& mask) {
  Vec3 d = log_map<double>(a * b.transpose());
  for (int i = 0; i < 3; ++i)
    if (!mask[i]) d(i) = 0.0;
  return d;
}

Vec3 local_residual(const Mat3& real, const Mat3& sim, const AxisMask& mask) {
  Vec3 d = log_map<double>(Mat3(sim.transpose() * real));
  for (int i = 0; i < 3; ++i)
    if (!mask[i]) d(i) = 0.0;
  return d;
}

PoseTransform rectification(const PoseTransform& nominal_zero, const PoseTransform& measured_zero) {
  return nominal_zero.inverse() * measured_zero;
}

PoseTransform apply_rectification(const PoseTransform& delta, const PoseTransform& measured) {
  return measured * delta.inverse();
}

}  // namespace softarm
