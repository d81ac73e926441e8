#pragma once

// Linear tetrahedron in a corotated frame. Forces are the exact gradient of
//   V * (mu |S - I|^2 + lambda/2 tr(S - I)^2),   F = R S (polar),
// and the stiffness includes the rotation derivative, so it is the exact
// Hessian of that energy wherever the element is not inverted.

#include <array>

#include "softarm/rotation.hpp"

namespace softarm {

template <typename Scalar>
struct TetKinematics {
  std::array<Vector3<Scalar>, 4> grads;  // shape function gradients (rest)
  Matrix3<Scalar> deformation_gradient;
};

template <typename Scalar>
TetKinematics<Scalar> tet_kinematics(const Matrix3<Scalar>& rest_inverse,
                                     const std::array<Vector3<Scalar>, 4>& x) {
  TetKinematics<Scalar> k;
  for (int a = 1; a < 4; ++a) k.grads[a] = rest_inverse.row(a - 1).transpose();
  k.grads[0] = -(k.grads[1] + k.grads[2] + k.grads[3]);
  Matrix3<Scalar> ds;
  ds << x[1] - x[0], x[2] - x[0], x[3] - x[0];
  k.deformation_gradient = ds * rest_inverse;
  return k;
}

template <typename Scalar>
struct CorotationalElement {
  Scalar volume;
  Scalar mu;
  Scalar lambda;
  Matrix3<Scalar> rest_inverse;

  // `rotation` is read as the fallback frame and overwritten with the polar
  // rotation when the element is not inverted. Returns true if inverted.
  bool evaluate(const std::array<Vector3<Scalar>, 4>& x, Matrix3<Scalar>& rotation,
                Eigen::Matrix<Scalar, 12, 1>* force, Eigen::Matrix<Scalar, 12, 12>* stiffness,
                Scalar* energy = nullptr) const {
    const TetKinematics<Scalar> kin = tet_kinematics<Scalar>(rest_inverse, x);
    const Matrix3<Scalar>& f = kin.deformation_gradient;
    const Matrix3<Scalar> eye = Matrix3<Scalar>::Identity();

    Matrix3<Scalar> g_inverse;
    bool inverted = !(f.determinant() > Scalar(0));
    Matrix3<Scalar> stretch;
    if (!inverted) {
      const auto pd = polar_decomposition<Scalar>(f);
      stretch = pd.stretch;
      if (polar_differential_operator<Scalar>(stretch, g_inverse)) {
        rotation = pd.rotation;
      } else {
        inverted = true;
      }
    }
    const Matrix3<Scalar>& r = rotation;

    Matrix3<Scalar> p;
    if (!inverted) {
      const Scalar tr = stretch.trace() - Scalar(3);
      p = Scalar(2) * mu * (f - r) + lambda * tr * r;
      if (energy) *energy = volume * (mu * (stretch - eye).squaredNorm() + Scalar(0.5) * lambda * tr * tr);
    } else {
      // Linear response in the last valid frame.
      const Matrix3<Scalar> rtf = r.transpose() * f;
      const Matrix3<Scalar> strain = Scalar(0.5) * (rtf + rtf.transpose()) - eye;
      p = r * (Scalar(2) * mu * strain + lambda * strain.trace() * eye);
      if (energy)
        *energy = volume * (mu * strain.squaredNorm() + Scalar(0.5) * lambda * strain.trace() * strain.trace());
    }

    if (force)
      for (int a = 0; a < 4; ++a) force->template segment<3>(3 * a) = -volume * (p * kin.grads[a]);

    if (stiffness) {
      const Scalar tr = inverted ? Scalar(0) : stretch.trace() - Scalar(3);
      for (int b = 0; b < 4; ++b)
        for (int k = 0; k < 3; ++k) {
          Matrix3<Scalar> df = Matrix3<Scalar>::Zero();
          df.row(k) = kin.grads[b].transpose();
          const Matrix3<Scalar> rtdf = r.transpose() * df;
          Matrix3<Scalar> dp;
          if (!inverted) {
            const Vector3<Scalar> w = g_inverse * axial_of_difference(rtdf);
            const Matrix3<Scalar> dr = r * skew<Scalar>(w);
            dp = Scalar(2) * mu * (df - dr) + lambda * rtdf.trace() * r + lambda * tr * dr;
          } else {
            const Matrix3<Scalar> sym = Scalar(0.5) * (rtdf + rtdf.transpose());
            dp = r * (Scalar(2) * mu * sym + lambda * sym.trace() * eye);
          }
          for (int a = 0; a < 4; ++a)
            stiffness->template block<3, 1>(3 * a, 3 * b + k) = volume * (dp * kin.grads[a]);
        }
    }
    return inverted;
  }
};

}  // namespace softarm
