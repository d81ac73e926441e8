#include <numbers>

#include <gtest/gtest.h>

#include "softarm/inverse.hpp"

namespace softarm {
namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// Stacked masked local rotation from `before` to the scene's current frames.
VecX observed_change(const Scene& scene, const std::vector<Mat3>& before) {
  return orientation_residual(scene, before) * -1.0;
}

class InverseTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { base_ = new Scene(SceneConfig{}); base_->solve_equilibrium(); }
  static void TearDownTestSuite() { delete base_; }
  static Scene* base_;
};
Scene* InverseTest::base_ = nullptr;

TEST_F(InverseTest, SensitivityColumnsMatchNonlinearSteps) {
  Scene scene(*base_);
  VecX p = VecX::Zero(6);
  p(1) = 10e3;
  p(3) = 5e3;
  scene.set_pressures(p);
  scene.solve_equilibrium();
  const SensitivityMatrix s = sensitivity(scene);
  ASSERT_EQ(s.W.rows(), 4);
  ASSERT_EQ(s.W.cols(), 10);
  const std::vector<Mat3> before = scene.orientations();
  for (int j = 0; j < scene.effort_count(); ++j) {
    Scene probe(scene);
    const double h = j < 6 ? 200.0 : 0.01;
    VecX e = probe.efforts();
    e(j) += h;
    probe.set_efforts(e);
    probe.solve_equilibrium();
    // orientation_residual measures log(R_sim^T R_target); with the perturbed
    // scene as "sim" and the base frames as target this is minus the change.
    const VecX fd = observed_change(probe, before) / h;
    EXPECT_LT((fd - s.W.col(j)).norm(), 0.05 * s.W.col(j).norm()) << "effort " << j;
  }
}

TEST_F(InverseTest, DuplicateAndEmptyColumns) {
  Scene scene(*base_);
  const TangentSystem& k = scene.tangent();
  const MatX h = scene.dofs().restrict_rows(scene.effort_matrix());
  const MatX o = observation_matrix(scene);
  MatX dup(h.rows(), 3);
  dup << h.col(0), h.col(0), h.col(7);
  const MatX w = assemble_W(k, scene.stamp(), dup, o);
  EXPECT_EQ(w.col(0), w.col(1));
  EXPECT_EQ(assemble_W(k, scene.stamp(), MatX(h.rows(), 0), o).cols(), 0);
  EXPECT_THROW(assemble_W(k, scene.stamp() + 1, dup, o), SolverError);
}

TEST_F(InverseTest, CurrentOrientationsAreAFixedPoint) {
  Scene scene(*base_);
  VecX p = VecX::Zero(6);
  p(2) = 12e3;
  scene.set_pressures(p);
  scene.solve_equilibrium();
  const VecX start = scene.efforts();
  const InverseResult r = inverse_iterate(scene, scene.orientations());
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.iterations, 0);
  EXPECT_LE((r.efforts - start).norm(), 1e-6 * scene.effort_upper().norm());
}

TEST_F(InverseTest, TwinRecoversTwoChamberPressures) {
  Scene truth(*base_);
  VecX p_star = VecX::Zero(6);
  p_star(0) = 30e3;
  p_star(4) = 18e3;
  truth.set_pressures(p_star);
  truth.solve_equilibrium();

  Scene scene(*base_);
  InverseOptions options;
  options.free.assign(scene.effort_count(), 0);
  options.free[0] = options.free[4] = 1;
  options.tolerance_deg = 1e-3;
  const InverseResult r = inverse_iterate(scene, truth.orientations(), options);
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.efforts(0), p_star(0), 0.01 * p_star(0));
  EXPECT_NEAR(r.efforts(4), p_star(4), 0.01 * p_star(4));
  for (std::size_t i = 1; i < r.history_deg.size(); ++i)
    EXPECT_LE(r.history_deg[i], r.history_deg[i - 1] * (1.0 + 1e-9));
  EXPECT_LT(r.residual_deg, 1e-3);
}

TEST_F(InverseTest, UnreachableTargetSaturates) {
  Scene scene(*base_);
  // 80 degrees of bend at both sections is far outside the pressure workspace.
  const std::vector<Mat3> targets = {exp_map(Vec3(0, -80 * kDeg, 0)), exp_map(Vec3(0, -80 * kDeg, 0))};
  InverseOptions options;
  options.free = pressure_only_mask(scene);
  InverseResult r;
  ASSERT_NO_THROW(r = inverse_iterate(scene, targets, options));
  EXPECT_FALSE(r.converged);
  EXPECT_TRUE(r.saturated);
  EXPECT_GT(r.residual_deg, 1.0);
  const VecX upper = scene.effort_upper();
  bool at_bound = false;
  for (int i = 0; i < 6; ++i) {
    EXPECT_GE(r.efforts(i), 0.0);
    EXPECT_LE(r.efforts(i), upper(i));
    at_bound = at_bound || r.efforts(i) == upper(i);
  }
  EXPECT_TRUE(at_bound);
}

TEST_F(InverseTest, PinnedPressuresPassThroughExactly) {
  Scene truth(*base_);
  VecX e = VecX::Zero(10);
  e(1) = 21e3 + 1.0 / 3.0;
  e(8) = 0.3;
  e(9) = -0.2;
  truth.set_efforts(e);
  truth.solve_equilibrium();

  Scene scene(*base_);
  InverseOptions options;
  for (int i = 0; i < 6; ++i) options.pins.emplace_back(i, e(i));
  options.tolerance_deg = 1e-3;
  const InverseResult r = inverse_iterate(scene, truth.orientations(), options);
  for (int i = 0; i < 6; ++i) EXPECT_EQ(r.efforts(i), e(i));
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.efforts(8), 0.3, 0.01);
  EXPECT_NEAR(r.efforts(9), -0.2, 0.01);
  EXPECT_EQ(r.efforts(6), 0.0);  // inactive e1 forces stay put
}

TEST_F(InverseTest, InvalidOptionsAreRejected) {
  Scene scene(*base_);
  const std::vector<Mat3> targets = scene.orientations();
  InverseOptions options;
  options.pins = {{0, -5.0}};
  EXPECT_THROW(inverse_iterate(scene, targets, options), InputError);
  options.pins = {{42, 0.0}};
  EXPECT_THROW(inverse_iterate(scene, targets, options), InputError);
  options.pins.clear();
  options.free = {1, 0};
  EXPECT_THROW(inverse_iterate(scene, targets, options), InputError);
  EXPECT_THROW(inverse_iterate(scene, {Mat3::Identity()}), InputError);
}

}  // namespace
}  // namespace softarm
